#pragma once

#include <Eigen/Dense>
#include <span>

#include "icm/materials.hpp"

namespace icm {

// Batched energy-gradient provider: the solver and metrics consume
// grad psi(i1, i3) through this interface, whether it comes from an analytic
// material model, a scaled oracle, or the trained network.
class GradientProvider {
public:
    virtual ~GradientProvider() = default;

    virtual void eval(std::span<const Invariants2D> inv,
                      std::span<Eigen::Vector2d> out) const = 0;

    // Hessian of psi w.r.t. (i1, i3). Default: symmetrized central
    // differences of eval(); used for providers without analytic curvature.
    virtual void hess(std::span<const Invariants2D> inv,
                      std::span<Eigen::Matrix2d> out) const;

    Eigen::Vector2d eval_one(Invariants2D inv) const {
        Eigen::Vector2d g;
        eval({&inv, 1}, {&g, 1});
        return g;
    }
};

class MaterialGradientProvider final : public GradientProvider {
public:
    explicit MaterialGradientProvider(MaterialModel m) : model_(std::move(m)) {}

    void eval(std::span<const Invariants2D> inv,
              std::span<Eigen::Vector2d> out) const override;
    void hess(std::span<const Invariants2D> inv,
              std::span<Eigen::Matrix2d> out) const override;

    const MaterialModel& model() const { return model_; }

private:
    MaterialModel model_;
};

// base provider scaled by a constant factor.
class ScaledGradientProvider final : public GradientProvider {
public:
    ScaledGradientProvider(const GradientProvider& base, double scale)
        : base_(base), scale_(scale) {}

    void eval(std::span<const Invariants2D> inv,
              std::span<Eigen::Vector2d> out) const override {
        base_.eval(inv, out);
        for (auto& g : out) g *= scale_;
    }
    void hess(std::span<const Invariants2D> inv,
              std::span<Eigen::Matrix2d> out) const override {
        base_.hess(inv, out);
        for (auto& h : out) h *= scale_;
    }

private:
    const GradientProvider& base_;
    double scale_;
};

}  // namespace icm
