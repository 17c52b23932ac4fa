#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icm/constitutive.hpp"
#include "icm/network.hpp"
#include "icm/solver.hpp"
#include "icm/tokenizer.hpp"
#include "icm/training.hpp"

namespace icm {

// Unscaled gradient predictor over raw invariant states. The network variant
// normalizes queries with the context scale and reuses the cached context
// stream across calls.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual Mat predict(std::span<const Invariants2D> states) const = 0;
};

class NetworkPredictor final : public Predictor {
public:
    NetworkPredictor(const ParameterSet& params, const NetworkConfig& config,
                     const Context& ctx);
    Mat predict(std::span<const Invariants2D> states) const override;
    const Context& context() const { return *ctx_; }

private:
    const ParameterSet& params_;
    NetworkConfig config_;
    const Context* ctx_;
    ContextCache cache_;
};

// True-material gradient, optionally scaled; the --oracle plumbing path.
class OraclePredictor final : public Predictor {
public:
    explicit OraclePredictor(const GradientProvider& provider, double scale = 1.0)
        : provider_(provider), scale_(scale) {}
    Mat predict(std::span<const Invariants2D> states) const override;

private:
    const GradientProvider& provider_;
    double scale_;
};

// Predictor with every output multiplied by a constant (loss-invariance and
// post-scaling tests).
class ScaledPredictor final : public Predictor {
public:
    ScaledPredictor(const Predictor& base, double scale) : base_(base), scale_(scale) {}
    Mat predict(std::span<const Invariants2D> states) const override {
        Mat out = base_.predict(states);
        scale_inplace(out, scale_);
        return out;
    }

private:
    const Predictor& base_;
    double scale_;
};

struct FieldRef {
    const Mesh* mesh = nullptr;
    const StrainField* field = nullptr;
};

// --- Post-scaling ------------------------------------------------------------

struct ScalingReport {
    double alpha = 0.0;
    double cov = 0.0;  // std(alpha_jk) / mean(alpha_jk)
    struct PerBc {
        int bc_index = 0;     // j
        int field_index = 0;  // k
        double alpha = 0.0;
    };
    std::vector<PerBc> per_bc;
};

// alpha_jk = (predicted boundary resultant . direction) / measured magnitude,
// averaged over all boundary conditions of all fields.
ScalingReport post_scale(const Predictor& pred, std::span<const FieldRef> fields,
                         bool geometric_mean = false);

// --- Stress recovery and metrics ---------------------------------------------

Eigen::Matrix2d predict_stress(const Predictor& pred, double alpha,
                               const Eigen::Matrix2d& F);

// Per-element second-PK and first-PK stresses of a whole field in one
// predictor call.
struct FieldStresses {
    std::vector<Eigen::Matrix2d> S;
    std::vector<Eigen::Matrix2d> P;
};
FieldStresses predict_field_stresses(const Predictor& pred, double alpha,
                                     const FieldRef& field);
FieldStresses true_field_stresses(const MaterialModel& m, const FieldRef& field);

// Range-normalized componentwise relative error, averaged over elements.
// Components whose true range is below 1e-14 are skipped with a warning.
double stress_error(std::span<const Eigen::Matrix2d> predicted,
                    std::span<const Eigen::Matrix2d> truth);

// --- Uniaxial response --------------------------------------------------------

// Nominal stress P11 at stretch lambda with the lateral stretch solved from
// P22 = 0 (plane-strain uniaxial response of the provider).
double uniaxial_nominal_stress(const GradientProvider& provider, double lambda);

// --- Test-time context scaling -------------------------------------------------

struct CurvePoint {
    int prefix_fields = 0;
    long token_count = 0;
    double geo_mean = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
    std::vector<double> samples;
};

struct CurveSource {
    FieldTokensView view;
    FieldRef ref;
};

// P_err on the evaluation field for growing context sizes; at each size the
// statistics run over `resamplings` random field subsets.
std::vector<CurvePoint> context_scaling_curve(
    const ParameterSet& params, const NetworkConfig& config,
    std::span<const CurveSource> ordered_fields, const FieldRef& eval_field,
    const MaterialModel& truth, std::span<const int> prefix_sizes, int resamplings,
    std::uint64_t seed);

// --- Network-driven forward simulation -----------------------------------------

class PredictorGradientProvider final : public GradientProvider {
public:
    PredictorGradientProvider(const Predictor& pred, double alpha,
                              std::span<const Invariants2D> context_states);

    void eval(std::span<const Invariants2D> inv,
              std::span<Eigen::Vector2d> out) const override;

    // Finite-difference curvature projected onto the positive-definite cone.
    // A learned gradient field need not be integrable or stable pointwise;
    // the projection only steers the Newton direction, never the residual.
    void hess(std::span<const Invariants2D> inv,
              std::span<Eigen::Matrix2d> out) const override;

    long extrapolation_count() const { return extrapolations_; }

private:
    const Predictor& pred_;
    double inv_alpha_;
    double i1_lo_, i1_hi_, i3_lo_, i3_hi_;
    mutable long extrapolations_ = 0;
};

struct FemDemoResult {
    std::vector<LoadStepResult> steps;
    long extrapolations = 0;
};

// Solver settings for learned constitutive laws: the projected
// finite-difference tangent converges linearly rather than quadratically,
// so the iteration budget is larger and the tolerance sits at the level the
// demo accuracy checks need.
inline SolveOptions learned_law_solve_options() {
    SolveOptions opts;
    opts.rel_tol = 1e-8;
    opts.max_iterations = 250;
    return opts;
}

// run_load_program driven by the (post-scaled) predictor instead of a
// material model; out-of-range queries are counted, not fatal.
FemDemoResult icm_driven_fem(const Predictor& pred, double alpha, const Mesh& mesh,
                             const LoadProgram& program,
                             std::span<const Invariants2D> context_states,
                             const SolveOptions& opts = learned_law_solve_options());

// --- Small statistics helpers ---------------------------------------------------

double geometric_mean(std::span<const double> xs);  // positive entries only
double quantile(std::vector<double> xs, double q);
double spearman_rank_correlation(std::span<const double> x, std::span<const double> y);

}  // namespace icm
