#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "icm/constitutive.hpp"
#include "icm/field.hpp"
#include "icm/mesh.hpp"

namespace icm {

// Per-material equilibrium-trained energy MLP: psi(I1, I3) with tanh hidden
// layers; the input gradient is propagated analytically through the net.
struct EnnConfig {
    int hidden_layers = 2;
    int hidden = 32;                 // Tiny 2x32; Small 2x256, Medium 8x768, Large 8x1024
    double boundary_weight = 0.1;    // w_b
    double lr0 = 1e-3;               // Adam with StepLR
    double lr_decay = 0.95;
    int lr_step = 100;
    std::uint64_t init_seed = 1;
};

struct EnnModel {
    EnnConfig cfg;
    std::vector<double> params;
    Eigen::Vector2d in_mean{2.0, 1.0};
    Eigen::Vector2d in_std{1.0, 1.0};
    double force_scale = 1.0;  // s_f
};

std::size_t enn_parameter_count(const EnnConfig& cfg);
EnnModel enn_init(const EnnConfig& cfg);

// psi and its exact gradient w.r.t. the raw invariants.
void enn_forward(const EnnModel& m, double i1, double i3, double& psi,
                 Eigen::Vector2d& grad);

// Piecewise Huber: quadratic inside |x-y| < 1, linear outside.
double huber(double x, double y);

// Interior Huber equilibrium loss plus weighted boundary-resultant loss,
// force quantities divided by the model's force scale.
double enn_loss(const EnnModel& m, const Mesh& mesh, std::span<const StrainField> fields);

struct EnnCurveRow {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct EnnTrainResult {
    EnnModel model;
    std::vector<EnnCurveRow> curve;
};

EnnTrainResult enn_train(const Mesh& mesh, std::span<const StrainField> fields,
                         const EnnConfig& cfg, int steps, std::uint64_t seed);

// Gradient provider backed by the trained model, so stress reconstruction
// shares the material module's formula.
class EnnGradientProvider final : public GradientProvider {
public:
    explicit EnnGradientProvider(EnnModel model) : model_(std::move(model)) {}
    void eval(std::span<const Invariants2D> inv,
              std::span<Eigen::Vector2d> out) const override;
    const EnnModel& model() const { return model_; }

private:
    EnnModel model_;
};

}  // namespace icm
