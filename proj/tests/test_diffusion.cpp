#include <doctest.h>

#include <cmath>

#include "icm/affine_residual.hpp"
#include "icm/diffusion.hpp"
#include "icm/solver.hpp"
#include "icm/tokenizer.hpp"
#include "test_util.hpp"

using namespace icm;

namespace {

Mesh unit_square(double h) {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = h;
    return generate_plate_mesh(geom);
}

DiffusivityModel nonlinear_model() {
    DiffusivityModel D;
    D.c0 << 1.0, 0.1, 0.1, 0.8;
    D.c1 << 0.2, 0.0, 0.0, 0.3;
    D.c2 << 0.4, 0.05, 0.05, 0.2;
    return D;
}

std::map<int, double> boundary_values(const Mesh& mesh, double value) {
    std::map<int, double> d;
    for (int n = 0; n < mesh.node_count(); ++n)
        if (mesh.is_boundary[static_cast<std::size_t>(n)]) d[n] = value;
    return d;
}

}  // namespace

TEST_CASE("constant state is a fixed point of the step") {
    const Mesh mesh = unit_square(0.25);
    const DiffusivityModel D = nonlinear_model();
    std::vector<double> c(mesh.nodes.size(), 0.7);
    const auto next = diffusion_step(mesh, D, c, boundary_values(mesh, 0.7), 0.05);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(next[i] == doctest::Approx(0.7));
}

TEST_CASE("linear diffusion converges at the expected rates") {
    // c(x, t) = sin(pi x) exp(-pi^2 t) with unit scalar diffusivity; Dirichlet
    // on the whole boundary from the exact solution.
    DiffusivityModel D;  // identity
    const double pi = 3.14159265358979323846;
    auto exact = [&](const Eigen::Vector2d& X, double t) {
        return std::sin(pi * X.x()) * std::exp(-pi * pi * t);
    };
    auto solve_error = [&](double h, double dt, double T) {
        const Mesh mesh = unit_square(h);
        std::vector<double> c(mesh.nodes.size());
        for (int n = 0; n < mesh.node_count(); ++n)
            c[static_cast<std::size_t>(n)] =
                exact(mesh.nodes[static_cast<std::size_t>(n)], 0.0);
        double t = 0.0;
        while (t < T - 1e-12) {
            std::map<int, double> bc;
            for (int n = 0; n < mesh.node_count(); ++n)
                if (mesh.is_boundary[static_cast<std::size_t>(n)])
                    bc[n] = exact(mesh.nodes[static_cast<std::size_t>(n)], t + dt);
            c = diffusion_step(mesh, D, c, bc, dt);
            t += dt;
        }
        double err = 0.0;
        for (int n = 0; n < mesh.node_count(); ++n)
            err = std::max(err, std::fabs(c[static_cast<std::size_t>(n)] -
                                          exact(mesh.nodes[static_cast<std::size_t>(n)], t)));
        return err;
    };

    // Spatial order ~2 (tiny dt so the h error dominates).
    const double e_h = solve_error(0.2, 1e-4, 2e-3);
    const double e_h2 = solve_error(0.1, 1e-4, 2e-3);
    CHECK(e_h / e_h2 > 2.5);
    CHECK(e_h / e_h2 < 7.0);

    // Temporal order ~1 (fine mesh so the dt error dominates).
    const double e_t = solve_error(0.05, 0.02, 0.08);
    const double e_t2 = solve_error(0.05, 0.01, 0.08);
    CHECK(e_t / e_t2 > 1.5);
    CHECK(e_t / e_t2 < 2.9);
}

TEST_CASE("discrete mass balance: content change equals boundary flux") {
    const Mesh mesh = unit_square(0.125);
    const DiffusivityModel D = nonlinear_model();
    std::vector<double> c0(mesh.nodes.size());
    for (int n = 0; n < mesh.node_count(); ++n) {
        const auto& X = mesh.nodes[static_cast<std::size_t>(n)];
        c0[static_cast<std::size_t>(n)] =
            std::sin(3.14159265358979 * X.x()) * std::sin(3.14159265358979 * X.y());
    }
    const auto bc = boundary_values(mesh, 0.0);
    const double dt = 0.01;
    const auto c1 = diffusion_step(mesh, D, c0, bc, dt);

    // Content change via the consistent mass matrix.
    double dQ = 0.0;
    for (int e = 0; e < mesh.element_count(); ++e) {
        const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
        const double w = mesh.area[static_cast<std::size_t>(e)];
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                dQ += w / 12.0 * (a == b ? 2.0 : 1.0) *
                      (c1[static_cast<std::size_t>(t[static_cast<std::size_t>(b)])] -
                       c0[static_cast<std::size_t>(t[static_cast<std::size_t>(b)])]);
    }

    // Boundary flux = residual of the balance at the Dirichlet nodes.
    double flux = 0.0;
    for (int e = 0; e < mesh.element_count(); ++e) {
        const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
        const double w = mesh.area[static_cast<std::size_t>(e)];
        Eigen::Vector2d gc = Eigen::Vector2d::Zero();
        double ce = 0.0;
        for (int v = 0; v < 3; ++v) {
            gc += c1[static_cast<std::size_t>(t[static_cast<std::size_t>(v)])] *
                  mesh.shape_grad[static_cast<std::size_t>(e)][static_cast<std::size_t>(v)];
            ce += c1[static_cast<std::size_t>(t[static_cast<std::size_t>(v)])] / 3.0;
        }
        const Eigen::Vector2d fluxv = D.at(ce) * gc;
        for (int a = 0; a < 3; ++a) {
            const int n = t[static_cast<std::size_t>(a)];
            if (!mesh.is_boundary[static_cast<std::size_t>(n)]) continue;
            double transient = 0.0;
            for (int b = 0; b < 3; ++b)
                transient += w / 12.0 * (a == b ? 2.0 : 1.0) *
                             (c1[static_cast<std::size_t>(t[static_cast<std::size_t>(b)])] -
                              c0[static_cast<std::size_t>(t[static_cast<std::size_t>(b)])]) /
                             dt;
            flux += transient +
                    w * mesh.shape_grad[static_cast<std::size_t>(e)]
                            [static_cast<std::size_t>(a)]
                                .dot(fluxv);
        }
    }
    CHECK(std::fabs(dQ / dt - flux) <= 1e-8 * std::max(std::fabs(flux), 1e-12));
}

TEST_CASE("tokens satisfy the affine constraint for the true diffusivity") {
    const Mesh mesh = unit_square(0.125);
    const DiffusivityModel D = nonlinear_model();
    std::vector<double> c0(mesh.nodes.size());
    for (int n = 0; n < mesh.node_count(); ++n) {
        const auto& X = mesh.nodes[static_cast<std::size_t>(n)];
        c0[static_cast<std::size_t>(n)] =
            0.5 + 0.5 * std::sin(3.14159 * X.x()) * std::sin(3.14159 * X.y());
    }
    const auto series =
        simulate_diffusion(mesh, D, c0, boundary_values(mesh, 0.5), 0.02, 5);
    const auto tokens = tokenize_diffusion(mesh, series);
    CHECK(tokens.size() == mesh.interior_nodes.size() * 5);

    for (double r : diffusion_token_residuals(tokens, D)) CHECK(r <= 1e-8);

    // Scaling D by s and time by 1/s preserves the constraint.
    const double s = 7.5;
    DiffusivityModel Ds;
    Ds.c0 = s * D.c0;
    Ds.c1 = s * D.c1;
    Ds.c2 = s * D.c2;
    DiffusionSeries scaled = series;
    for (auto& dt : scaled.dt) dt /= s;
    const auto tokens_s = tokenize_diffusion(mesh, scaled);
    for (double r : diffusion_token_residuals(tokens_s, Ds)) CHECK(r <= 1e-8);
}

TEST_CASE("constant-in-space fields tokenize to zero coefficients") {
    const Mesh mesh = unit_square(0.25);
    DiffusionSeries series;
    series.concentration.assign(2, std::vector<double>(mesh.nodes.size(), 0.4));
    series.dt = {0.1};
    const auto tokens = tokenize_diffusion(mesh, series);
    for (const auto& tok : tokens) {
        CHECK(std::fabs(tok.b) < 1e-14);
        for (const auto& sub : tok.subs) CHECK(sub.A.norm() < 1e-14);
    }
}

TEST_CASE("shared affine evaluator reproduces both disciplines") {
    // Hyperelastic side: tokens of a converged field with the true gradient.
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.095;
    geom.holes.push_back({HoleSpec::Shape::Circle, {0.5, 0.5}, 0.25, 0.25});
    const Mesh mesh = generate_plate_mesh(geom);
    Rng rng(3);
    const auto material = normalize_polynomial_coefficients(
        sample_material(Family::Polynomial, SubsetRule::PolyA, rng), 5);
    const MaterialGradientProvider provider(material);
    LoadProgram program;
    program.mode = LoadMode::Uniaxial;
    program.u1 = 0.2;
    program.steps = 1;
    const auto solved = run_load_program(mesh, provider, program);
    const auto tokens = tokenize_field(mesh, solved[0].field);

    AffineResidualInput hyper;
    hyper.out_dim = 2;
    hyper.in_dim = 2;
    hyper.eq_offset.push_back(0);
    double local_max = 0.0, local_sum2 = 0.0;
    std::size_t local_terms = 0;
    for (const auto& tok : tokens) {
        Eigen::Vector2d acc = Eigen::Vector2d::Zero();
        for (const auto& sub : tok.subs) {
            const Eigen::Vector2d g = grad_energy(material, sub.inv);
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) hyper.coeffs.push_back(sub.A(i, j));
            hyper.values.push_back(g[0]);
            hyper.values.push_back(g[1]);
            const Eigen::Vector2d term = sub.A * g;
            acc += term;
            local_sum2 += term.squaredNorm();
            ++local_terms;
        }
        local_max = std::max(local_max, acc.norm());
        hyper.rhs.push_back(0.0);
        hyper.rhs.push_back(0.0);
        hyper.eq_offset.push_back(static_cast<int>(hyper.values.size() / 2));
    }
    const AffineResidualStats hs = evaluate_affine_residual(hyper);
    const double local_rel =
        local_max / std::sqrt(local_sum2 / static_cast<double>(local_terms));
    CHECK(hs.max_relative == doctest::Approx(local_rel).epsilon(1e-12));
    CHECK(hs.max_relative <= 1e-8);

    // Diffusion side.
    const Mesh dmesh = unit_square(0.2);
    const DiffusivityModel D = nonlinear_model();
    std::vector<double> c0(dmesh.nodes.size());
    for (int n = 0; n < dmesh.node_count(); ++n)
        c0[static_cast<std::size_t>(n)] =
            0.3 * dmesh.nodes[static_cast<std::size_t>(n)].x();
    std::map<int, double> bc;
    for (int n = 0; n < dmesh.node_count(); ++n)
        if (dmesh.is_boundary[static_cast<std::size_t>(n)])
            bc[n] = c0[static_cast<std::size_t>(n)];
    const auto series = simulate_diffusion(dmesh, D, c0, bc, 0.05, 3);
    const auto dtokens = tokenize_diffusion(dmesh, series);

    AffineResidualInput diff;
    diff.out_dim = 1;
    diff.in_dim = 4;
    diff.eq_offset.push_back(0);
    for (const auto& tok : dtokens) {
        for (const auto& sub : tok.subs) {
            const Eigen::Matrix2d Dm = D.at(sub.c_elem);
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) {
                    diff.coeffs.push_back(sub.A(i, j));
                }
            diff.values.push_back(Dm(0, 0));
            diff.values.push_back(Dm(0, 1));
            diff.values.push_back(Dm(1, 0));
            diff.values.push_back(Dm(1, 1));
        }
        diff.rhs.push_back(tok.b);
        diff.eq_offset.push_back(static_cast<int>(diff.values.size() / 4));
    }
    const AffineResidualStats ds = evaluate_affine_residual(diff);
    const auto module_res = diffusion_token_residuals(dtokens, D);
    double worst = 0.0;
    for (double r : module_res) worst = std::max(worst, r);
    CHECK(ds.max_relative == doctest::Approx(worst).epsilon(1e-12));
    CHECK(ds.max_relative <= 1e-8);
}
