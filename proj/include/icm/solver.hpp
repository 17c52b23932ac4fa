#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "icm/assembly.hpp"
#include "icm/constitutive.hpp"
#include "icm/field.hpp"
#include "icm/mesh.hpp"

namespace icm {

struct DirichletDof {
    int node = 0;
    int comp = 0;  // 0 = x, 1 = y
    double value = 0.0;
};

struct SolveOptions {
    double rel_tol = 1e-10;
    int max_iterations = 50;
    int max_line_search = 20;
    bool fd_tangent = false;  // residual-differencing tangent, verification only
};

struct SolveReport {
    bool converged = false;
    int iterations = 0;
    std::vector<double> residual_history;  // max nodal residual / characteristic force
};

// Displacement-controlled equilibrium solve: drives the free-dof nodal forces
// to zero. field carries the initial guess in and the solution out; Dirichlet
// dofs are overwritten with their prescribed values.
SolveReport solve_step(const Mesh& mesh, const GradientProvider& provider,
                       const std::vector<DirichletDof>& dirichlet, StrainField& field,
                       const SolveOptions& opts = {});

enum class LoadMode { Uniaxial, Biaxial, Shear, ProportionalBiaxial, EqualBiaxial };
std::string load_mode_name(LoadMode m);
LoadMode load_mode_from_name(const std::string& name);

// Displacement-controlled program in final edge-displacement ratios u/L,
// ramped linearly over `steps` increments.
struct LoadProgram {
    LoadMode mode = LoadMode::Uniaxial;
    double u1 = 0.3;  // ubar1 / L at the final step
    double u2 = 0.0;  // ubar2 / L at the final step
    int steps = 10;
};

// Dirichlet realization of a program at a given fraction of the full load.
std::vector<DirichletDof> dirichlet_for(const Mesh& mesh, const LoadProgram& program,
                                        double fraction);

// Nominal affine displacement of the program at `fraction`, used as the
// Newton warm start.
Eigen::Vector2d affine_displacement(const LoadProgram& program, double L,
                                    double fraction, const Eigen::Vector2d& X);

// (boundary set, loading direction) pairs whose resultants are recorded as
// measured boundary conditions for the mode.
std::vector<std::pair<std::string, Eigen::Vector2d>> recorded_bcs(const LoadProgram&);

struct LoadStepResult {
    StrainField field;
    SolveReport report;
};

// One converged field per program step, warm-started from the previous one,
// with automatic bisection of increments on non-convergence. Boundary
// resultants are recorded on each emitted field.
std::vector<LoadStepResult> run_load_program(const Mesh& mesh,
                                             const GradientProvider& provider,
                                             const LoadProgram& program,
                                             const SolveOptions& opts = {});

}  // namespace icm
