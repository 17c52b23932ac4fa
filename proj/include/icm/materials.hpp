#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <variant>

#include "icm/dual2.hpp"
#include "icm/rng.hpp"

namespace icm {

// In-plane strain invariants of C = F^T F: i1 = tr C, i3 = det C.
// The second invariant is dependent in 2D and omitted.
struct Invariants2D {
    double i1 = 2.0;
    double i3 = 1.0;
};

enum class Family { Polynomial, Ogden, PucciSaccomandi, ExpLn, VanDerWaals };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// Polynomial model: sum_{k=1..6} sum_{i+j=k} C_ij (Ib1-3)^i (Ib2-3)^j
//                   + sum_{m=1..4} D_m (J-1)^{2m}
// 27 deviatoric coefficients packed by cij_index(i, j), 4 volumetric ones.
struct PolynomialParams {
    std::array<double, 27> c{};
    std::array<double, 4> d{};
};
int cij_index(int i, int j);
void cij_from_index(int idx, int& i, int& j);

// Six-term Ogden model in isochoric principal stretches plus the same
// volumetric series as the polynomial model.
struct OgdenParams {
    std::array<double, 6> mu{};
    std::array<double, 6> alpha{};
    std::array<double, 4> d{};
};

struct PucciSaccomandiParams {
    double mu = 0, Jm = 0, C2 = 0, D = 0;
};

struct ExpLnParams {
    double mu = 0, a = 0, b = 0, D = 0;
};

struct VanDerWaalsParams {
    double mu = 0, lambda_m = 0, a = 0, beta = 0, D = 0;
};

struct MaterialModel {
    std::variant<PolynomialParams, OgdenParams, PucciSaccomandiParams, ExpLnParams,
                 VanDerWaalsParams>
        params;

    Family family() const;
};

// --- Kinematics ---------------------------------------------------------

// Throws NonPositiveJacobian if det F <= 0.
Invariants2D invariants_from_F(const Eigen::Matrix2d& F);

// --- Energy and derivatives ---------------------------------------------
//
// Plane-strain embedding with unit out-of-plane stretch:
//   I1_3d = i1 + 1,  I2_3d = i3 + i1,  J = sqrt(i3),
// chained to the 2D invariant pair so grad/hess are taken w.r.t. (i1, i3).

// Full second-order evaluation; throws DomainViolation outside the family's
// admissible set (PS locking, VdW eta >= 1, nonpositive J).
Dual2 energy_dual(const MaterialModel& m, const Dual2& i1, const Dual2& i3);

double energy(const MaterialModel& m, Invariants2D inv);
Eigen::Vector2d grad_energy(const MaterialModel& m, Invariants2D inv);
Eigen::Matrix2d hess_energy(const MaterialModel& m, Invariants2D inv);

// --- Stress --------------------------------------------------------------

// S = 2 (g1 * I + g3 * det(C) * C^{-1}) for any gradient provider value g.
Eigen::Matrix2d stress_from_gradient(const Eigen::Matrix2d& F, const Eigen::Vector2d& g);

Eigen::Matrix2d second_pk_stress(const MaterialModel& m, const Eigen::Matrix2d& F);
Eigen::Matrix2d first_pk_stress(const MaterialModel& m, const Eigen::Matrix2d& F);

// Material tangent dP/dF (2x2x2x2, [i][r][j][s] with P_ir, F_js) from the
// gradient and Hessian of the energy at F.
using Tangent4 = std::array<std::array<std::array<std::array<double, 2>, 2>, 2>, 2>;
Tangent4 material_tangent(const Eigen::Matrix2d& F, const Eigen::Vector2d& g,
                          const Eigen::Matrix2d& H);

// --- Dataset sampling -----------------------------------------------------

enum class SubsetRule { Default, PolyA, PolyB, PolyC, OgdenLow, OgdenHigh };
std::string subset_rule_name(SubsetRule r);
SubsetRule subset_rule_from_name(const std::string& name);

MaterialModel sample_material(Family family, SubsetRule rule, Rng& rng);

// Two-step coefficient normalization for polynomial models: per-basis stress
// std over random deformation gradients, then division by the effective
// tangent stiffness dP11/dF11 estimated between F11 = 0.9 and F11 = 1.1.
MaterialModel normalize_polynomial_coefficients(const MaterialModel& m,
                                                std::uint64_t mc_seed);

// The Monte-Carlo basis deviation used by step 1, exposed for the test oracle.
double polynomial_basis_std(int basis_index /*0..26 = C, 27..30 = D*/,
                            std::uint64_t mc_seed, int samples = 1000);

// Random deformation gradient used by the normalization: identity plus
// uniform [-0.5, 0.5] entries, resampled until det F > 0.2.
Eigen::Matrix2d random_deformation_gradient(Rng& rng);

double tangent_stiffness_estimate(const MaterialModel& m);

}  // namespace icm
