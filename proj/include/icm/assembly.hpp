#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "icm/constitutive.hpp"
#include "icm/field.hpp"
#include "icm/materials.hpp"
#include "icm/mesh.hpp"

namespace icm {

struct ElementKinematics {
    Eigen::Matrix2d F;
    std::array<Eigen::Vector2d, 3> grad;  // dN/dX per vertex
    double area = 0.0;
};

ElementKinematics element_kinematics(const Mesh& mesh, const StrainField& field, int e);

// Per-element deformation state of a whole field, computed in one pass.
struct FieldKinematics {
    std::vector<ElementKinematics> elems;
    std::vector<Invariants2D> inv;
};
FieldKinematics compute_field_kinematics(const Mesh& mesh, const StrainField& field);

// Coefficient matrix A^{n,e}: rows = force direction, cols = invariant index
// (i1, i3). A_im = 2 w F_il dI_m/dC_lr dN/dX_r.
Eigen::Matrix2d coefficient_matrix(const ElementKinematics& kin, int vertex);
Eigen::Matrix2d coefficient_matrix(const Mesh& mesh, const StrainField& field, int node,
                                   int e);  // throws NodeNotInElement

// f^n = sum_{e in E(n)} A^{n,e} grad psi(I^e)   (coefficient-matrix path)
Eigen::Vector2d nodal_force(const Mesh& mesh, const StrainField& field,
                            const GradientProvider& provider, int node);
std::vector<Eigen::Vector2d> all_nodal_forces(const Mesh& mesh, const StrainField& field,
                                              const GradientProvider& provider);

// f^n = sum_e w^e P^e : grad N^n   (direct quadrature path; assembly oracle)
std::vector<Eigen::Vector2d> all_nodal_forces_quadrature(const Mesh& mesh,
                                                         const StrainField& field,
                                                         const GradientProvider& provider);

Eigen::Vector2d boundary_resultant(const Mesh& mesh, const StrainField& field,
                                   const GradientProvider& provider,
                                   const std::string& set_name);

// mean and RMS of ||A^{n,e} g(I^e)|| over all node-element pairs; the solver
// tolerance and the equilibrium oracle are expressed against these.
struct ForceScale {
    double mean = 0.0;
    double rms = 0.0;
};
ForceScale contribution_force_scale(const Mesh& mesh, const FieldKinematics& kin,
                                    std::span<const Eigen::Vector2d> grads);

}  // namespace icm
