#include "icm/diffusion.hpp"

#include <Eigen/Sparse>
#include <cmath>

#include "icm/errors.hpp"

namespace icm {

namespace {

// Consistent mass of a linear triangle: w/12 * [[2,1,1],[1,2,1],[1,1,2]].
double mass_entry(double w, int i, int j) { return w / 12.0 * (i == j ? 2.0 : 1.0); }

Eigen::Vector2d concentration_gradient(const Mesh& mesh, const std::vector<double>& c,
                                       int e) {
    const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    for (int v = 0; v < 3; ++v)
        g += c[static_cast<std::size_t>(t[static_cast<std::size_t>(v)])] *
             mesh.shape_grad[static_cast<std::size_t>(e)][static_cast<std::size_t>(v)];
    return g;
}

double centroid_concentration(const Mesh& mesh, const std::vector<double>& c, int e) {
    const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
    return (c[static_cast<std::size_t>(t[0])] + c[static_cast<std::size_t>(t[1])] +
            c[static_cast<std::size_t>(t[2])]) /
           3.0;
}

// Nodal balance residual of the backward-Euler step and its RMS term scale.
struct DiffResidual {
    Eigen::VectorXd r;
    double term_rms = 0.0;
};

DiffResidual residual(const Mesh& mesh, const DiffusivityModel& D,
                      const std::vector<double>& c, const std::vector<double>& c_prev,
                      double dt, const std::vector<int>& free_index, int n_free) {
    DiffResidual out;
    out.r = Eigen::VectorXd::Zero(n_free);
    double sum2 = 0.0;
    std::size_t terms = 0;
    for (int e = 0; e < mesh.element_count(); ++e) {
        const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
        const double w = mesh.area[static_cast<std::size_t>(e)];
        const Eigen::Vector2d gc = concentration_gradient(mesh, c, e);
        const Eigen::Matrix2d Dm = D.at(centroid_concentration(mesh, c, e));
        const Eigen::Vector2d flux = Dm * gc;
        for (int a = 0; a < 3; ++a) {
            const int n = t[static_cast<std::size_t>(a)];
            const int row = free_index[static_cast<std::size_t>(n)];
            double transient = 0.0;
            for (int b = 0; b < 3; ++b) {
                const int q = t[static_cast<std::size_t>(b)];
                transient += mass_entry(w, a, b) *
                             (c[static_cast<std::size_t>(q)] -
                              c_prev[static_cast<std::size_t>(q)]) /
                             dt;
            }
            const double diffusive =
                w * mesh.shape_grad[static_cast<std::size_t>(e)]
                        [static_cast<std::size_t>(a)]
                            .dot(flux);
            if (row >= 0) out.r[row] += transient + diffusive;
            sum2 += diffusive * diffusive;
            ++terms;
        }
    }
    out.term_rms = terms > 0 ? std::sqrt(sum2 / static_cast<double>(terms)) : 0.0;
    return out;
}

}  // namespace

std::vector<double> diffusion_step(const Mesh& mesh, const DiffusivityModel& D,
                                   const std::vector<double>& c_prev,
                                   const std::map<int, double>& dirichlet, double dt,
                                   const DiffusionOptions& opts) {
    if (dt <= 0) throw Error("diffusion_step needs dt > 0");
    if (c_prev.size() != mesh.nodes.size())
        throw Error("concentration/mesh size mismatch");
    for (int n = 0; n < mesh.node_count(); ++n)
        if (mesh.is_boundary[static_cast<std::size_t>(n)] && !dirichlet.count(n))
            throw Error("diffusion needs Dirichlet data on the entire boundary");

    std::vector<int> free_index(mesh.nodes.size(), -1);
    std::vector<int> free_nodes;
    for (int n = 0; n < mesh.node_count(); ++n) {
        if (dirichlet.count(n)) continue;
        free_index[static_cast<std::size_t>(n)] = static_cast<int>(free_nodes.size());
        free_nodes.push_back(n);
    }
    const int n_free = static_cast<int>(free_nodes.size());

    std::vector<double> c = c_prev;
    for (const auto& [n, v] : dirichlet) c[static_cast<std::size_t>(n)] = v;

    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        const DiffResidual res = residual(mesh, D, c, c_prev, dt, free_index, n_free);
        const double tol = opts.rel_tol * std::max(res.term_rms, 1e-300);
        if (res.r.lpNorm<Eigen::Infinity>() <= tol) return c;

        // Jacobian: M/dt + K + dK/dc (centroid chain, 1/3 per vertex).
        std::vector<Eigen::Triplet<double>> trip;
        for (int e = 0; e < mesh.element_count(); ++e) {
            const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
            const double w = mesh.area[static_cast<std::size_t>(e)];
            const double ce = centroid_concentration(mesh, c, e);
            const Eigen::Vector2d gc = concentration_gradient(mesh, c, e);
            const Eigen::Matrix2d Dm = D.at(ce);
            const Eigen::Matrix2d Dp = D.deriv(ce);
            for (int a = 0; a < 3; ++a) {
                const int row = free_index[static_cast<std::size_t>(
                    t[static_cast<std::size_t>(a)])];
                if (row < 0) continue;
                const Eigen::Vector2d ga =
                    mesh.shape_grad[static_cast<std::size_t>(e)][static_cast<std::size_t>(a)];
                for (int b = 0; b < 3; ++b) {
                    const int col = free_index[static_cast<std::size_t>(
                        t[static_cast<std::size_t>(b)])];
                    if (col < 0) continue;
                    const Eigen::Vector2d gb =
                        mesh.shape_grad[static_cast<std::size_t>(e)]
                                       [static_cast<std::size_t>(b)];
                    double v = mass_entry(w, a, b) / dt;
                    v += w * ga.dot(Dm * gb);
                    v += w * ga.dot(Dp * gc) / 3.0;
                    trip.emplace_back(row, col, v);
                }
            }
        }
        Eigen::SparseMatrix<double> J(n_free, n_free);
        J.setFromTriplets(trip.begin(), trip.end());
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(J);
        if (lu.info() != Eigen::Success)
            throw NonConvergence("diffusion Jacobian factorization failed");
        const Eigen::VectorXd delta = lu.solve(-res.r);
        for (int i = 0; i < n_free; ++i)
            c[static_cast<std::size_t>(free_nodes[static_cast<std::size_t>(i)])] +=
                delta[i];
    }
    throw NonConvergence("diffusion step did not converge");
}

DiffusionSeries simulate_diffusion(const Mesh& mesh, const DiffusivityModel& D,
                                   const std::vector<double>& c0,
                                   const std::map<int, double>& dirichlet, double dt,
                                   int steps, const DiffusionOptions& opts) {
    DiffusionSeries series;
    std::vector<double> c = c0;
    for (const auto& [n, v] : dirichlet) c[static_cast<std::size_t>(n)] = v;
    series.concentration.push_back(c);
    for (int m = 0; m < steps; ++m) {
        c = diffusion_step(mesh, D, c, dirichlet, dt, opts);
        series.concentration.push_back(c);
        series.dt.push_back(dt);
    }
    return series;
}

std::vector<DiffusionToken> tokenize_diffusion(const Mesh& mesh,
                                               const DiffusionSeries& series) {
    if (series.concentration.size() < 2)
        throw Error("diffusion tokenization needs at least two time levels");
    std::vector<DiffusionToken> out;
    for (std::size_t m = 1; m < series.concentration.size(); ++m) {
        const auto& cm = series.concentration[m];
        const auto& cp = series.concentration[m - 1];
        const double dt = series.dt[m - 1];
        for (int n : mesh.interior_nodes) {
            DiffusionToken tok;
            tok.node = n;
            tok.step = static_cast<int>(m);
            double b = 0.0;
            for (int e : mesh.node_elements[static_cast<std::size_t>(n)]) {
                const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
                const double w = mesh.area[static_cast<std::size_t>(e)];
                int a = 0;
                while (t[static_cast<std::size_t>(a)] != n) ++a;
                DiffusionSubtoken sub;
                sub.element = e;
                const Eigen::Vector2d gN =
                    mesh.shape_grad[static_cast<std::size_t>(e)]
                                   [static_cast<std::size_t>(a)];
                const Eigen::Vector2d gc = concentration_gradient(mesh, cm, e);
                sub.A = w * gN * gc.transpose();
                sub.c_elem = centroid_concentration(mesh, cm, e);
                tok.subs.push_back(sub);
                for (int q = 0; q < 3; ++q)
                    b -= mass_entry(w, a, q) *
                         (cm[static_cast<std::size_t>(t[static_cast<std::size_t>(q)])] -
                          cp[static_cast<std::size_t>(t[static_cast<std::size_t>(q)])]) /
                         dt;
            }
            tok.b = b;
            out.push_back(std::move(tok));
        }
    }
    return out;
}

std::vector<double> diffusion_token_residuals(std::span<const DiffusionToken> tokens,
                                              const DiffusivityModel& D) {
    std::map<int, std::pair<double, std::pair<double, std::size_t>>> per_step;
    for (const auto& tok : tokens) {
        double lhs = 0.0;
        auto& [max_res, rms_acc] = per_step[tok.step];
        for (const auto& sub : tok.subs) {
            const double term = (sub.A.cwiseProduct(D.at(sub.c_elem))).sum();
            lhs += term;
            rms_acc.first += term * term;
            rms_acc.second += 1;
        }
        max_res = std::max(max_res, std::fabs(lhs - tok.b));
    }
    std::vector<double> out;
    for (const auto& [step, acc] : per_step) {
        const double rms =
            std::sqrt(acc.second.first / static_cast<double>(acc.second.second));
        out.push_back(acc.first / std::max(rms, 1e-300));
    }
    return out;
}

}  // namespace icm
