#pragma once

#include <functional>
#include <string>
#include <vector>

#include "icm/la.hpp"
#include "icm/network.hpp"
#include "icm/tokenizer.hpp"

namespace icm {

// Dimensionless equilibrium loss: mean squared predicted nodal force over
// mean squared predicted element contribution. predictions is (M x 2), one
// row per context query state.
struct LossBreakdown {
    double numerator = 0.0;
    double denominator = 0.0;
    double value = 0.0;
};

LossBreakdown equilibrium_loss(const Context& ctx, const Mat& predictions);

// dLoss/dpredictions for the breakdown above.
Mat equilibrium_loss_cotangent(const Context& ctx, const Mat& predictions,
                               const LossBreakdown& loss);

// --- Schedule --------------------------------------------------------------

struct ScheduleConfig {
    int total_steps = 1000;
    double warmup_fraction = 0.10;
    double peak_lr = 5e-4;
    double floor_fraction = 0.10;  // final lr = floor_fraction * peak
};

// Linear 0 -> peak over the warmup, cosine peak -> floor afterwards.
double learning_rate(const ScheduleConfig& sched, int step);

// --- Optimizers -------------------------------------------------------------

// Approximates the orthogonal polar factor via the convergent quintic
// iteration x <- (15x - 10x^3 + 3x^5)/8 after Frobenius pre-scaling.
Mat newton_schulz_orthogonalize(const Mat& m, int iterations);

enum class OptimizerKind { AdamW, Muon };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Muon;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double momentum = 0.95;  // Muon
    bool nesterov = true;    // Muon: orthogonalize g + momentum*buffer
    int ns_iterations = 5;   // Muon
};

// AdamW on every tensor; in Muon mode genuine 2D matrices take
// momentum + Newton-Schulz steps instead, with AdamW as the fallback for
// biases and normalization parameters.
class Optimizer {
public:
    // muon_mask (optional) marks the tensors that take Muon steps in Muon
    // mode; by default every genuine 2D matrix does. Input/output projections
    // are usually better served by AdamW.
    Optimizer(const ParameterSet& params, OptimizerConfig config,
              std::vector<bool> muon_mask = {});

    void step(ParameterSet& params, const ParameterSet& grads, double lr);
    int step_count() const { return t_; }

private:
    OptimizerConfig cfg_;
    std::vector<Mat> m_, v_;    // AdamW moments
    std::vector<Mat> buf_;      // Muon momentum
    std::vector<bool> use_muon_;
    int t_ = 0;
};

// --- Training loop -----------------------------------------------------------

struct TrainingSample {
    std::string id;
    std::vector<FieldTokensView> fields;
};

struct TrainConfig {
    NetworkConfig net;
    ScheduleConfig sched;
    OptimizerConfig opt;
    SamplingBounds bounds;
    int steps = 1000;
    std::uint64_t seed = 1;
    int checkpoint_every = 0;  // 0 -> max(1, steps/20)
};

struct LossCurveRow {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double numerator = 0.0;
    double denominator = 0.0;
};

struct TrainResult {
    ParameterSet params;
    std::vector<LossCurveRow> curve;
};

// Per step: uniform material draw, sampled training context, loss, backward,
// optimizer step. checkpoint_hook (optional) fires on the checkpoint cadence
// and at the final step.
TrainResult train(std::span<const TrainingSample> samples, const TrainConfig& config,
                  const std::function<void(int, const ParameterSet&)>& checkpoint_hook = {});

}  // namespace icm
