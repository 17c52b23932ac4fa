#include "icm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>

#include "icm/assembly.hpp"
#include "icm/errors.hpp"

namespace icm {

NetworkPredictor::NetworkPredictor(const ParameterSet& params, const NetworkConfig& config,
                                   const Context& ctx)
    : params_(params), config_(config), ctx_(&ctx) {
    const ContextBatch batch = make_context_batch(ctx);
    cache_ = build_context_cache(params_, config_, batch);
}

Mat NetworkPredictor::predict(std::span<const Invariants2D> states) const {
    Mat q(static_cast<int>(states.size()), 2);
    for (std::size_t i = 0; i < states.size(); ++i) {
        const auto hat = ctx_->normalize_query(states[i]);
        q(static_cast<int>(i), 0) = hat[0];
        q(static_cast<int>(i), 1) = hat[1];
    }
    return query_forward_cached(params_, config_, cache_, q);
}

Mat OraclePredictor::predict(std::span<const Invariants2D> states) const {
    std::vector<Eigen::Vector2d> g(states.size());
    provider_.eval(states, g);
    Mat out(static_cast<int>(states.size()), 2);
    for (std::size_t i = 0; i < states.size(); ++i) {
        out(static_cast<int>(i), 0) = scale_ * g[i][0];
        out(static_cast<int>(i), 1) = scale_ * g[i][1];
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct BoundaryAssembly {
    std::vector<Invariants2D> states;            // unique element states
    std::vector<int> elem_to_state;              // per mesh element or -1
};

// Unique invariant states of the elements adjacent to any recorded boundary
// set of the field.
BoundaryAssembly boundary_states(const FieldRef& f, const FieldKinematics& kin) {
    BoundaryAssembly out;
    out.elem_to_state.assign(static_cast<std::size_t>(f.mesh->element_count()), -1);
    for (const auto& bc : f.field->bcs) {
        for (int n : f.mesh->boundary_set(bc.set)) {
            for (int e : f.mesh->node_elements[static_cast<std::size_t>(n)]) {
                if (out.elem_to_state[static_cast<std::size_t>(e)] >= 0) continue;
                out.elem_to_state[static_cast<std::size_t>(e)] =
                    static_cast<int>(out.states.size());
                out.states.push_back(kin.inv[static_cast<std::size_t>(e)]);
            }
        }
    }
    return out;
}

}  // namespace

ScalingReport post_scale(const Predictor& pred, std::span<const FieldRef> fields,
                         bool geometric_mean_flag) {
    ScalingReport report;
    std::vector<double> alphas;

    for (std::size_t k = 0; k < fields.size(); ++k) {
        const FieldRef& f = fields[k];
        if (f.field->bcs.empty()) continue;
        const FieldKinematics kin = compute_field_kinematics(*f.mesh, *f.field);
        const BoundaryAssembly ba = boundary_states(f, kin);
        const Mat g = pred.predict(ba.states);

        for (std::size_t j = 0; j < f.field->bcs.size(); ++j) {
            const auto& bc = f.field->bcs[j];
            if (std::fabs(bc.force) < 1e-300)
                throw ZeroTrueForce("boundary condition '" + bc.set +
                                    "' has zero measured force");
            Eigen::Vector2d resultant = Eigen::Vector2d::Zero();
            for (int n : f.mesh->boundary_set(bc.set)) {
                for (int e : f.mesh->node_elements[static_cast<std::size_t>(n)]) {
                    const auto& t = f.mesh->triangles[static_cast<std::size_t>(e)];
                    int v = 0;
                    while (t[static_cast<std::size_t>(v)] != n) ++v;
                    const Eigen::Matrix2d A =
                        coefficient_matrix(kin.elems[static_cast<std::size_t>(e)], v);
                    const int s = ba.elem_to_state[static_cast<std::size_t>(e)];
                    resultant += A * Eigen::Vector2d(g(s, 0), g(s, 1));
                }
            }
            const double f_hat = resultant.dot(bc.direction);
            const double a = f_hat / bc.force;
            alphas.push_back(a);
            report.per_bc.push_back({static_cast<int>(j), static_cast<int>(k), a});
        }
    }
    if (alphas.empty()) throw ZeroTrueForce("no boundary conditions to scale against");

    double mean = 0.0;
    for (double a : alphas) mean += a;
    mean /= static_cast<double>(alphas.size());
    if (geometric_mean_flag) {
        double lg = 0.0;
        for (double a : alphas) lg += std::log(std::fabs(a));
        const double sign = mean >= 0 ? 1.0 : -1.0;
        report.alpha = sign * std::exp(lg / static_cast<double>(alphas.size()));
    } else {
        report.alpha = mean;
    }
    double var = 0.0;
    for (double a : alphas) var += (a - mean) * (a - mean);
    var /= static_cast<double>(alphas.size());
    report.cov = std::sqrt(var) / mean;
    if (std::fabs(report.alpha) < 1e-12)
        throw ZeroAlpha("post-scaling collapsed: alpha = " +
                        std::to_string(report.alpha));
    return report;
}

Eigen::Matrix2d predict_stress(const Predictor& pred, double alpha,
                               const Eigen::Matrix2d& F) {
    const Invariants2D inv = invariants_from_F(F);
    const Mat g = pred.predict({&inv, 1});
    return stress_from_gradient(F, Eigen::Vector2d(g(0, 0), g(0, 1)) / alpha);
}

FieldStresses predict_field_stresses(const Predictor& pred, double alpha,
                                     const FieldRef& field) {
    const FieldKinematics kin = compute_field_kinematics(*field.mesh, *field.field);
    const Mat g = pred.predict(kin.inv);
    FieldStresses out;
    out.S.resize(kin.inv.size());
    out.P.resize(kin.inv.size());
    for (std::size_t e = 0; e < kin.inv.size(); ++e) {
        const Eigen::Vector2d ge(g(static_cast<int>(e), 0) / alpha,
                                 g(static_cast<int>(e), 1) / alpha);
        out.S[e] = stress_from_gradient(kin.elems[e].F, ge);
        out.P[e] = kin.elems[e].F * out.S[e];
    }
    return out;
}

FieldStresses true_field_stresses(const MaterialModel& m, const FieldRef& field) {
    const FieldKinematics kin = compute_field_kinematics(*field.mesh, *field.field);
    FieldStresses out;
    out.S.resize(kin.inv.size());
    out.P.resize(kin.inv.size());
    for (std::size_t e = 0; e < kin.inv.size(); ++e) {
        out.S[e] = stress_from_gradient(kin.elems[e].F, grad_energy(m, kin.inv[e]));
        out.P[e] = kin.elems[e].F * out.S[e];
    }
    return out;
}

double stress_error(std::span<const Eigen::Matrix2d> predicted,
                    std::span<const Eigen::Matrix2d> truth) {
    if (predicted.size() != truth.size() || truth.empty())
        throw ShapeMismatch("stress_error needs matching nonempty element lists");

    double range[2][2];
    bool skip[2][2] = {{false, false}, {false, false}};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double lo = 1e308, hi = -1e308;
            for (const auto& s : truth) {
                lo = std::min(lo, s(i, j));
                hi = std::max(hi, s(i, j));
            }
            range[i][j] = hi - lo;
            if (range[i][j] < 1e-14) {
                skip[i][j] = true;
                std::cerr << "[metrics] warning: stress component (" << i << "," << j
                          << ") has a degenerate range; skipped\n";
            }
        }

    double acc = 0.0;
    for (std::size_t e = 0; e < truth.size(); ++e) {
        double sq = 0.0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                if (skip[i][j]) continue;
                const double r = (predicted[e](i, j) - truth[e](i, j)) / range[i][j];
                sq += r * r;
            }
        acc += std::sqrt(sq);
    }
    return acc / static_cast<double>(truth.size());
}

double uniaxial_nominal_stress(const GradientProvider& provider, double lambda) {
    auto p_of = [&](double l2) {
        Eigen::Matrix2d F = Eigen::Matrix2d::Zero();
        F(0, 0) = lambda;
        F(1, 1) = l2;
        const Eigen::Vector2d g = provider.eval_one(invariants_from_F(F));
        const Eigen::Matrix2d P = F * stress_from_gradient(F, g);
        return std::make_pair(P(0, 0), P(1, 1));
    };
    // Solve P22(l2) = 0 by bisection; bracket around the isochoric guess.
    double lo = std::max(0.2, 0.3 / lambda), hi = std::min(4.0, 3.5 / std::sqrt(lambda));
    double flo = p_of(lo).second, fhi = p_of(hi).second;
    int guard = 0;
    while (flo * fhi > 0 && guard++ < 20) {
        lo *= 0.9;
        hi *= 1.1;
        flo = p_of(lo).second;
        fhi = p_of(hi).second;
    }
    if (flo * fhi > 0)
        throw NonConvergence("uniaxial response: lateral stretch not bracketed");
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = p_of(mid).second;
        if (std::fabs(fm) < 1e-12 || hi - lo < 1e-14) break;
        if (flo * fm <= 0) {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    return p_of(0.5 * (lo + hi)).first;
}

std::vector<CurvePoint> context_scaling_curve(
    const ParameterSet& params, const NetworkConfig& config,
    std::span<const CurveSource> ordered_fields, const FieldRef& eval_field,
    const MaterialModel& truth, std::span<const int> prefix_sizes, int resamplings,
    std::uint64_t seed) {
    if (ordered_fields.size() < 2)
        throw Error("context scaling needs at least two fields");

    const FieldStresses truth_stresses = true_field_stresses(truth, eval_field);
    Rng rng(seed);
    std::vector<CurvePoint> out;

    for (int size : prefix_sizes) {
        if (size < 1 || size > static_cast<int>(ordered_fields.size())) continue;
        CurvePoint pt;
        pt.prefix_fields = size;

        // Nested prefix supplies the token-count axis.
        {
            long tokens = 0;
            for (int i = 0; i < size; ++i)
                tokens += static_cast<long>(ordered_fields[static_cast<std::size_t>(i)]
                                                .view.tokens->size());
            pt.token_count = tokens;
        }

        for (int r = 0; r < resamplings; ++r) {
            std::vector<std::uint64_t> sel;
            if (r == 0) {
                for (int i = 0; i < size; ++i) sel.push_back(static_cast<std::uint64_t>(i));
            } else {
                rng.sample_without_replacement(ordered_fields.size(),
                                               static_cast<std::uint64_t>(size),
                                               std::back_inserter(sel));
            }
            std::vector<FieldTokensView> views;
            std::vector<FieldRef> refs;
            for (auto i : sel) {
                views.push_back(ordered_fields[static_cast<std::size_t>(i)].view);
                refs.push_back(ordered_fields[static_cast<std::size_t>(i)].ref);
            }
            const Context ctx = full_context(views);
            const NetworkPredictor pred(params, config, ctx);
            const ScalingReport scaling = post_scale(pred, refs);
            const FieldStresses ps = predict_field_stresses(pred, scaling.alpha, eval_field);
            pt.samples.push_back(stress_error(ps.P, truth_stresses.P));
        }
        pt.geo_mean = geometric_mean(pt.samples);
        pt.q25 = quantile(pt.samples, 0.25);
        pt.q75 = quantile(pt.samples, 0.75);
        out.push_back(std::move(pt));
    }
    return out;
}

PredictorGradientProvider::PredictorGradientProvider(
    const Predictor& pred, double alpha, std::span<const Invariants2D> context_states)
    : pred_(pred), inv_alpha_(1.0 / alpha) {
    i1_lo_ = 1e308;
    i1_hi_ = -1e308;
    i3_lo_ = 1e308;
    i3_hi_ = -1e308;
    for (const auto& s : context_states) {
        i1_lo_ = std::min(i1_lo_, s.i1);
        i1_hi_ = std::max(i1_hi_, s.i1);
        i3_lo_ = std::min(i3_lo_, s.i3);
        i3_hi_ = std::max(i3_hi_, s.i3);
    }
    const double m1 = 0.1 * std::max(1e-6, i1_hi_ - i1_lo_);
    const double m3 = 0.1 * std::max(1e-6, i3_hi_ - i3_lo_);
    i1_lo_ -= m1;
    i1_hi_ += m1;
    i3_lo_ -= m3;
    i3_hi_ += m3;
}

void PredictorGradientProvider::eval(std::span<const Invariants2D> inv,
                                     std::span<Eigen::Vector2d> out) const {
    const Mat g = pred_.predict(inv);
    for (std::size_t i = 0; i < inv.size(); ++i) {
        out[i] = inv_alpha_ * Eigen::Vector2d(g(static_cast<int>(i), 0),
                                              g(static_cast<int>(i), 1));
        if (inv[i].i1 < i1_lo_ || inv[i].i1 > i1_hi_ || inv[i].i3 < i3_lo_ ||
            inv[i].i3 > i3_hi_)
            ++extrapolations_;
    }
}

void PredictorGradientProvider::hess(std::span<const Invariants2D> inv,
                                     std::span<Eigen::Matrix2d> out) const {
    GradientProvider::hess(inv, out);
    for (auto& H : out) {
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(H);
        Eigen::Vector2d ev = es.eigenvalues();
        const double floor =
            1e-3 * (std::fabs(ev[0]) + std::fabs(ev[1])) + 1e-12;
        ev[0] = std::max(ev[0], floor);
        ev[1] = std::max(ev[1], floor);
        H = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    }
}

FemDemoResult icm_driven_fem(const Predictor& pred, double alpha, const Mesh& mesh,
                             const LoadProgram& program,
                             std::span<const Invariants2D> context_states,
                             const SolveOptions& opts) {
    PredictorGradientProvider provider(pred, alpha, context_states);
    FemDemoResult result;
    result.steps = run_load_program(mesh, provider, program, opts);
    result.extrapolations = provider.extrapolation_count();
    return result;
}

double geometric_mean(std::span<const double> xs) {
    double acc = 0.0;
    int n = 0;
    for (double x : xs) {
        if (!(x > 0.0) || !std::isfinite(x)) continue;
        acc += std::log(x);
        ++n;
    }
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    return std::exp(acc / n);
}

double quantile(std::vector<double> xs, double q) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(xs.begin(), xs.end());
    const double pos = q * static_cast<double>(xs.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

namespace {

std::vector<double> ranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman_rank_correlation(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw Error("spearman needs two equal-length series");
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(rx.size());
    my /= static_cast<double>(ry.size());
    double num = 0, dx = 0, dy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    return num / std::sqrt(dx * dy);
}

}  // namespace icm
