#pragma once

#include <Eigen/Dense>
#include <map>
#include <span>
#include <vector>

#include "icm/mesh.hpp"

namespace icm {

// Symmetric 2x2 diffusivity tensor with quadratic dependence on the
// concentration: D(c) = C0 + C1 c + C2 c^2.
struct DiffusivityModel {
    Eigen::Matrix2d c0 = Eigen::Matrix2d::Identity();
    Eigen::Matrix2d c1 = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d c2 = Eigen::Matrix2d::Zero();

    Eigen::Matrix2d at(double c) const { return c0 + c * c1 + c * c * c2; }
    Eigen::Matrix2d deriv(double c) const { return c1 + 2.0 * c * c2; }
};

struct DiffusionOptions {
    double rel_tol = 1e-10;
    int max_iterations = 30;
};

// One backward-Euler step with Dirichlet data on the whole boundary; Newton
// solve of the nonlinear balance with a consistent mass matrix.
std::vector<double> diffusion_step(const Mesh& mesh, const DiffusivityModel& D,
                                   const std::vector<double>& c_prev,
                                   const std::map<int, double>& dirichlet, double dt,
                                   const DiffusionOptions& opts = {});

struct DiffusionSeries {
    std::vector<std::vector<double>> concentration;  // [0] = initial condition
    std::vector<double> dt;                          // per transition
};

DiffusionSeries simulate_diffusion(const Mesh& mesh, const DiffusivityModel& D,
                                   const std::vector<double>& c0,
                                   const std::map<int, double>& dirichlet, double dt,
                                   int steps, const DiffusionOptions& opts = {});

// Token of the affine constraint sum_e A^{n,e,m} : D(c^{e,m}) = b^{n,m}.
struct DiffusionSubtoken {
    int element = 0;
    Eigen::Matrix2d A;
    double c_elem = 0.0;  // centroid concentration
};

struct DiffusionToken {
    int node = 0;
    int step = 1;  // m >= 1
    std::vector<DiffusionSubtoken> subs;
    double b = 0.0;
};

std::vector<DiffusionToken> tokenize_diffusion(const Mesh& mesh,
                                               const DiffusionSeries& series);

// max_n |sum_e A : D - b| / RMS_{n,e} |A : D| per time step.
std::vector<double> diffusion_token_residuals(std::span<const DiffusionToken> tokens,
                                              const DiffusivityModel& D);

}  // namespace icm
