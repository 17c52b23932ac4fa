#include "icm/solver.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>

#include "icm/errors.hpp"
#include "icm/parallel.hpp"

namespace icm {

namespace {

struct DofMap {
    std::vector<int> free_index;  // 2*node+comp -> equation index or -1
    std::vector<int> free_dofs;   // equation index -> 2*node+comp
};

DofMap build_dof_map(int node_count, const std::vector<DirichletDof>& dirichlet) {
    DofMap map;
    map.free_index.assign(static_cast<std::size_t>(2 * node_count), 0);
    for (const auto& d : dirichlet)
        map.free_index[static_cast<std::size_t>(2 * d.node + d.comp)] = -1;
    for (int i = 0; i < 2 * node_count; ++i) {
        if (map.free_index[static_cast<std::size_t>(i)] == 0) {
            map.free_index[static_cast<std::size_t>(i)] =
                static_cast<int>(map.free_dofs.size());
            map.free_dofs.push_back(i);
        } else {
            map.free_index[static_cast<std::size_t>(i)] = -1;
        }
    }
    return map;
}

struct ResidualEval {
    Eigen::VectorXd r;        // residual at free dofs
    double max_node_norm;     // max over nodes of the free-component force norm
    double characteristic;    // mean ||A g|| over node-element pairs
    FieldKinematics kin;
    std::vector<Eigen::Vector2d> grads;
};

ResidualEval evaluate_residual(const Mesh& mesh, const StrainField& field,
                               const GradientProvider& provider, const DofMap& map) {
    ResidualEval out;
    out.kin = compute_field_kinematics(mesh, field);
    out.grads.resize(static_cast<std::size_t>(mesh.element_count()));
    provider.eval(out.kin.inv, out.grads);

    const auto forces = [&] {
        std::vector<Eigen::Vector2d> f(static_cast<std::size_t>(mesh.node_count()),
                                       Eigen::Vector2d::Zero());
        par::for_index(mesh.node_count(), [&](std::int64_t n) {
            Eigen::Vector2d acc = Eigen::Vector2d::Zero();
            for (int e : mesh.node_elements[static_cast<std::size_t>(n)]) {
                const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
                int v = 0;
                while (t[static_cast<std::size_t>(v)] != static_cast<int>(n)) ++v;
                acc += coefficient_matrix(out.kin.elems[static_cast<std::size_t>(e)], v) *
                       out.grads[static_cast<std::size_t>(e)];
            }
            f[static_cast<std::size_t>(n)] = acc;
        });
        return f;
    }();

    out.r.resize(static_cast<Eigen::Index>(map.free_dofs.size()));
    for (std::size_t i = 0; i < map.free_dofs.size(); ++i) {
        const int dof = map.free_dofs[i];
        out.r[static_cast<Eigen::Index>(i)] =
            forces[static_cast<std::size_t>(dof / 2)][dof % 2];
    }

    out.max_node_norm = 0.0;
    for (int n = 0; n < mesh.node_count(); ++n) {
        Eigen::Vector2d fn = Eigen::Vector2d::Zero();
        bool any = false;
        for (int c = 0; c < 2; ++c) {
            if (map.free_index[static_cast<std::size_t>(2 * n + c)] >= 0) {
                fn[c] = forces[static_cast<std::size_t>(n)][c];
                any = true;
            }
        }
        if (any) out.max_node_norm = std::max(out.max_node_norm, fn.norm());
    }

    out.characteristic = contribution_force_scale(mesh, out.kin, out.grads).mean;
    return out;
}

using Sparse = Eigen::SparseMatrix<double>;

Sparse assemble_tangent(const Mesh& mesh, const ResidualEval& eval,
                        const GradientProvider& provider, const DofMap& map) {
    std::vector<Eigen::Matrix2d> hess(static_cast<std::size_t>(mesh.element_count()));
    provider.hess(eval.kin.inv, hess);

    const int ne = mesh.element_count();
    std::vector<std::array<double, 36>> blocks(static_cast<std::size_t>(ne));
    par::for_index(ne, [&](std::int64_t e) {
        const auto& kin = eval.kin.elems[static_cast<std::size_t>(e)];
        const Tangent4 dPdF = material_tangent(kin.F, eval.grads[static_cast<std::size_t>(e)],
                                               hess[static_cast<std::size_t>(e)]);
        auto& blk = blocks[static_cast<std::size_t>(e)];
        int idx = 0;
        for (int a = 0; a < 3; ++a)
            for (int i = 0; i < 2; ++i)
                for (int b = 0; b < 3; ++b)
                    for (int j = 0; j < 2; ++j) {
                        double v = 0.0;
                        for (int r = 0; r < 2; ++r)
                            for (int s = 0; s < 2; ++s)
                                v += dPdF[static_cast<std::size_t>(i)][static_cast<std::size_t>(r)]
                                         [static_cast<std::size_t>(j)][static_cast<std::size_t>(s)] *
                                     kin.grad[static_cast<std::size_t>(b)][s] *
                                     kin.grad[static_cast<std::size_t>(a)][r];
                        blk[static_cast<std::size_t>(idx++)] = kin.area * v;
                    }
    });

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(ne) * 36);
    for (int e = 0; e < ne; ++e) {
        const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
        const auto& blk = blocks[static_cast<std::size_t>(e)];
        int idx = 0;
        for (int a = 0; a < 3; ++a)
            for (int i = 0; i < 2; ++i)
                for (int b = 0; b < 3; ++b)
                    for (int j = 0; j < 2; ++j) {
                        const double v = blk[static_cast<std::size_t>(idx++)];
                        const int row = map.free_index[static_cast<std::size_t>(
                            2 * t[static_cast<std::size_t>(a)] + i)];
                        const int col = map.free_index[static_cast<std::size_t>(
                            2 * t[static_cast<std::size_t>(b)] + j)];
                        if (row >= 0 && col >= 0) trip.emplace_back(row, col, v);
                    }
    }
    Sparse K(static_cast<Eigen::Index>(map.free_dofs.size()),
             static_cast<Eigen::Index>(map.free_dofs.size()));
    K.setFromTriplets(trip.begin(), trip.end());
    return K;
}

Sparse assemble_tangent_fd(const Mesh& mesh, StrainField field,
                           const GradientProvider& provider, const DofMap& map) {
    // Column-wise residual differencing; small systems only.
    const auto base = evaluate_residual(mesh, field, provider, map);
    const double h = 1e-7 * std::max(1.0, mesh.length_scale);
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t c = 0; c < map.free_dofs.size(); ++c) {
        const int dof = map.free_dofs[c];
        double& u = field.displacements[static_cast<std::size_t>(dof / 2)][dof % 2];
        const double saved = u;
        u = saved + h;
        const auto plus = evaluate_residual(mesh, field, provider, map);
        u = saved - h;
        const auto minus = evaluate_residual(mesh, field, provider, map);
        u = saved;
        const Eigen::VectorXd col = (plus.r - minus.r) / (2.0 * h);
        for (Eigen::Index r = 0; r < col.size(); ++r)
            if (col[r] != 0.0)
                trip.emplace_back(static_cast<int>(r), static_cast<int>(c), col[r]);
    }
    Sparse K(static_cast<Eigen::Index>(map.free_dofs.size()),
             static_cast<Eigen::Index>(map.free_dofs.size()));
    K.setFromTriplets(trip.begin(), trip.end());
    return K;
}

}  // namespace

SolveReport solve_step(const Mesh& mesh, const GradientProvider& provider,
                       const std::vector<DirichletDof>& dirichlet, StrainField& field,
                       const SolveOptions& opts) {
    if (field.displacements.size() != mesh.nodes.size())
        field.displacements.assign(mesh.nodes.size(), Eigen::Vector2d::Zero());
    for (const auto& d : dirichlet)
        field.displacements[static_cast<std::size_t>(d.node)][d.comp] = d.value;

    const DofMap map = build_dof_map(mesh.node_count(), dirichlet);
    SolveReport report;

    ResidualEval eval = evaluate_residual(mesh, field, provider, map);
    auto tolerance = [&](const ResidualEval& ev) {
        return opts.rel_tol * ev.characteristic;
    };
    report.residual_history.push_back(
        eval.characteristic > 0 ? eval.max_node_norm / eval.characteristic : 0.0);

    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        if (eval.max_node_norm <= tolerance(eval) ||
            (eval.characteristic == 0.0 && eval.max_node_norm == 0.0)) {
            report.converged = true;
            report.iterations = iter;
            return report;
        }

        const Sparse K = opts.fd_tangent
                             ? assemble_tangent_fd(mesh, field, provider, map)
                             : assemble_tangent(mesh, eval, provider, map);

        const double r0 = eval.r.norm();
        bool accepted = false;
        // Backtracking line search on the Newton direction; if the tangent
        // fails to produce any descent (learned constitutive laws can be
        // locally unstable), retry with increasing diagonal damping.
        double damping = 0.0;
        for (int attempt = 0; attempt < 5 && !accepted; ++attempt) {
            Sparse Kd = K;
            if (attempt > 0) {
                damping = damping == 0.0 ? 1e-4 : damping * 100.0;
                double diag_scale = 0.0;
                for (Eigen::Index i = 0; i < K.rows(); ++i)
                    diag_scale = std::max(diag_scale, std::fabs(K.coeff(i, i)));
                Sparse I(K.rows(), K.cols());
                I.setIdentity();
                Kd = K + damping * std::max(diag_scale, 1e-30) * I;
            }
            Eigen::SparseLU<Sparse> lu;
            lu.compute(Kd);
            if (lu.info() != Eigen::Success) continue;
            const Eigen::VectorXd delta = lu.solve(-eval.r);

            double step = 1.0;
            StrainField trial = field;
            for (int ls = 0; ls < opts.max_line_search; ++ls) {
                trial = field;
                for (std::size_t i = 0; i < map.free_dofs.size(); ++i) {
                    const int dof = map.free_dofs[i];
                    trial.displacements[static_cast<std::size_t>(dof / 2)][dof % 2] +=
                        step * delta[static_cast<Eigen::Index>(i)];
                }
                try {
                    ResidualEval trial_eval =
                        evaluate_residual(mesh, trial, provider, map);
                    if (trial_eval.r.norm() < (1.0 - 1e-4 * step) * r0 || r0 == 0.0) {
                        field = trial;
                        eval = std::move(trial_eval);
                        accepted = true;
                        break;
                    }
                } catch (const DomainViolation&) {
                    // trial state left the admissible set; shorten the step
                } catch (const NonPositiveJacobian&) {
                }
                step *= 0.5;
            }
        }
        if (!accepted)
            throw LineSearchFailure("line search exhausted at iteration " +
                                    std::to_string(iter));
        report.residual_history.push_back(
            eval.characteristic > 0 ? eval.max_node_norm / eval.characteristic : 0.0);
    }

    if (eval.max_node_norm <= tolerance(eval)) {
        report.converged = true;
        report.iterations = opts.max_iterations;
        return report;
    }
    std::string hist;
    for (std::size_t i = report.residual_history.size() > 8
                             ? report.residual_history.size() - 8
                             : 0;
         i < report.residual_history.size(); ++i)
        hist += " " + std::to_string(report.residual_history[i]);
    throw NonConvergence("Newton did not converge within " +
                         std::to_string(opts.max_iterations) +
                         " iterations; trailing relative residuals:" + hist);
}

std::string load_mode_name(LoadMode m) {
    switch (m) {
        case LoadMode::Uniaxial: return "uniaxial";
        case LoadMode::Biaxial: return "biaxial";
        case LoadMode::Shear: return "shear";
        case LoadMode::ProportionalBiaxial: return "proportional_biaxial";
        case LoadMode::EqualBiaxial: return "equal_biaxial";
    }
    throw Error("bad load mode enum");
}

LoadMode load_mode_from_name(const std::string& name) {
    if (name == "uniaxial") return LoadMode::Uniaxial;
    if (name == "biaxial") return LoadMode::Biaxial;
    if (name == "shear") return LoadMode::Shear;
    if (name == "proportional_biaxial") return LoadMode::ProportionalBiaxial;
    if (name == "equal_biaxial") return LoadMode::EqualBiaxial;
    throw Error("unknown load mode: " + name);
}

namespace {

double plate_length(const Mesh& mesh) {
    double L = 0.0;
    for (const auto& X : mesh.nodes) L = std::max({L, X.x(), X.y()});
    return L;
}

}  // namespace

std::vector<DirichletDof> dirichlet_for(const Mesh& mesh, const LoadProgram& program,
                                        double fraction) {
    const double L = plate_length(mesh);
    const double a1 = program.u1 * L * fraction;
    const double a2 = program.u2 * L * fraction;
    std::vector<DirichletDof> out;
    auto pin_set = [&](const std::string& name, int comp, double value) {
        for (int n : mesh.boundary_set(name)) out.push_back({n, comp, value});
    };

    switch (program.mode) {
        case LoadMode::Uniaxial: {
            pin_set("left", 0, 0.0);
            pin_set("right", 0, a1);
            // bottom-left corner pins the remaining rigid mode
            const auto& left = mesh.boundary_set("left");
            int corner = left.front();
            for (int n : left)
                if (mesh.nodes[static_cast<std::size_t>(n)].y() <
                    mesh.nodes[static_cast<std::size_t>(corner)].y())
                    corner = n;
            out.push_back({corner, 1, 0.0});
            break;
        }
        case LoadMode::Biaxial:
        case LoadMode::ProportionalBiaxial:
        case LoadMode::EqualBiaxial: {
            pin_set("left", 0, 0.0);
            pin_set("right", 0, a1);
            pin_set("bottom", 1, 0.0);
            pin_set("top", 1, a2);
            break;
        }
        case LoadMode::Shear: {
            pin_set("bottom", 0, 0.0);
            pin_set("bottom", 1, 0.0);
            pin_set("top", 0, a2);  // tangential drag of the top edge
            pin_set("top", 1, 0.0);
            break;
        }
    }
    // Deduplicate (corner nodes may be pinned twice with equal values).
    std::sort(out.begin(), out.end(), [](const DirichletDof& a, const DirichletDof& b) {
        return std::tie(a.node, a.comp) < std::tie(b.node, b.comp);
    });
    out.erase(std::unique(out.begin(), out.end(),
                          [](const DirichletDof& a, const DirichletDof& b) {
                              return a.node == b.node && a.comp == b.comp;
                          }),
              out.end());
    return out;
}

Eigen::Vector2d affine_displacement(const LoadProgram& program, double L, double fraction,
                                    const Eigen::Vector2d& X) {
    const double a1 = program.u1 * fraction;
    const double a2 = program.u2 * fraction;
    switch (program.mode) {
        case LoadMode::Uniaxial:
            return {a1 * X.x(), 0.0};
        case LoadMode::Biaxial:
        case LoadMode::ProportionalBiaxial:
        case LoadMode::EqualBiaxial:
            return {a1 * X.x(), a2 * X.y()};
        case LoadMode::Shear:
            return {a2 * X.y(), 0.0};
    }
    (void)L;
    throw Error("bad load mode enum");
}

std::vector<std::pair<std::string, Eigen::Vector2d>> recorded_bcs(
    const LoadProgram& program) {
    switch (program.mode) {
        case LoadMode::Uniaxial:
            return {{"right", {1, 0}}, {"left", {-1, 0}}};
        case LoadMode::Biaxial:
        case LoadMode::ProportionalBiaxial:
        case LoadMode::EqualBiaxial:
            return {{"right", {1, 0}}, {"left", {-1, 0}}, {"top", {0, 1}}};
        case LoadMode::Shear:
            return {{"top", {1, 0}}, {"bottom", {-1, 0}}};
    }
    throw Error("bad load mode enum");
}

namespace {

void record_resultants(const Mesh& mesh, const GradientProvider& provider,
                       const LoadProgram& program, StrainField& field) {
    field.bcs.clear();
    const auto f = all_nodal_forces(mesh, field, provider);
    for (const auto& [set, dir] : recorded_bcs(program)) {
        Eigen::Vector2d acc = Eigen::Vector2d::Zero();
        for (int n : mesh.boundary_set(set)) acc += f[static_cast<std::size_t>(n)];
        field.bcs.push_back({set, dir, acc.dot(dir)});
    }
}

// Solve toward `target` fraction, bisecting the increment when Newton fails.
void advance(const Mesh& mesh, const GradientProvider& provider,
             const LoadProgram& program, StrainField& field, double from, double target,
             const SolveOptions& opts, SolveReport& last_report, int depth) {
    const double L = plate_length(mesh);
    StrainField attempt = field;
    for (std::size_t n = 0; n < mesh.nodes.size(); ++n)
        attempt.displacements[n] +=
            affine_displacement(program, L, target, mesh.nodes[static_cast<std::size_t>(n)]) -
            affine_displacement(program, L, from, mesh.nodes[static_cast<std::size_t>(n)]);
    try {
        last_report = solve_step(mesh, provider, dirichlet_for(mesh, program, target),
                                 attempt, opts);
        field = attempt;
    } catch (const Error&) {
        if (depth >= 6) throw;
        const double mid = 0.5 * (from + target);
        advance(mesh, provider, program, field, from, mid, opts, last_report, depth + 1);
        advance(mesh, provider, program, field, mid, target, opts, last_report, depth + 1);
    }
}

}  // namespace

std::vector<LoadStepResult> run_load_program(const Mesh& mesh,
                                             const GradientProvider& provider,
                                             const LoadProgram& program,
                                             const SolveOptions& opts) {
    if (program.steps < 1) throw Error("load program needs at least one step");
    std::vector<LoadStepResult> out;
    StrainField current;
    current.displacements.assign(mesh.nodes.size(), Eigen::Vector2d::Zero());
    double fraction = 0.0;
    for (int s = 1; s <= program.steps; ++s) {
        const double target = static_cast<double>(s) / program.steps;
        SolveReport report;
        try {
            advance(mesh, provider, program, current, fraction, target, opts, report, 0);
        } catch (const Error& e) {
            throw NonConvergence("load step " + std::to_string(s) + "/" +
                                 std::to_string(program.steps) + " failed: " + e.what());
        }
        fraction = target;
        LoadStepResult step;
        step.field = current;
        step.report = report;
        record_resultants(mesh, provider, program, step.field);
        out.push_back(std::move(step));
    }
    return out;
}

}  // namespace icm
