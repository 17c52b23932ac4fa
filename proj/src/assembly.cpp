#include "icm/assembly.hpp"

#include <cmath>

#include "icm/errors.hpp"
#include "icm/parallel.hpp"

namespace icm {

ElementKinematics element_kinematics(const Mesh& mesh, const StrainField& field, int e) {
    ElementKinematics kin;
    const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
    kin.grad = mesh.shape_grad[static_cast<std::size_t>(e)];
    kin.area = mesh.area[static_cast<std::size_t>(e)];
    Eigen::Matrix2d F = Eigen::Matrix2d::Identity();
    for (int v = 0; v < 3; ++v)
        F += field.displacements[static_cast<std::size_t>(t[static_cast<std::size_t>(v)])] *
             kin.grad[static_cast<std::size_t>(v)].transpose();
    kin.F = F;
    return kin;
}

FieldKinematics compute_field_kinematics(const Mesh& mesh, const StrainField& field) {
    if (field.displacements.size() != mesh.nodes.size())
        throw Error("field/mesh node count mismatch");
    FieldKinematics out;
    const int ne = mesh.element_count();
    out.elems.resize(static_cast<std::size_t>(ne));
    out.inv.resize(static_cast<std::size_t>(ne));
    par::for_index(ne, [&](std::int64_t e) {
        auto& kin = out.elems[static_cast<std::size_t>(e)];
        kin = element_kinematics(mesh, field, static_cast<int>(e));
        out.inv[static_cast<std::size_t>(e)] = invariants_from_F(kin.F);
    });
    return out;
}

Eigen::Matrix2d coefficient_matrix(const ElementKinematics& kin, int vertex) {
    const Eigen::Matrix2d C = kin.F.transpose() * kin.F;
    const double detC = C.determinant();
    const Eigen::Matrix2d Ci = C.inverse();
    const Eigen::Vector2d& gN = kin.grad[static_cast<std::size_t>(vertex)];
    Eigen::Matrix2d A;
    // column m=1: dI1/dC = identity; column m=3: dI3/dC = det(C) C^{-1}
    A.col(0) = 2.0 * kin.area * kin.F * gN;
    A.col(1) = 2.0 * kin.area * kin.F * (detC * Ci * gN);
    return A;
}

Eigen::Matrix2d coefficient_matrix(const Mesh& mesh, const StrainField& field, int node,
                                   int e) {
    const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
    int vertex = -1;
    for (int v = 0; v < 3; ++v)
        if (t[static_cast<std::size_t>(v)] == node) vertex = v;
    if (vertex < 0)
        throw NodeNotInElement("node " + std::to_string(node) + " not in element " +
                               std::to_string(e));
    return coefficient_matrix(element_kinematics(mesh, field, e), vertex);
}

namespace {

std::vector<Eigen::Vector2d> element_gradients(const Mesh& mesh,
                                               const FieldKinematics& kin,
                                               const GradientProvider& provider) {
    std::vector<Eigen::Vector2d> g(static_cast<std::size_t>(mesh.element_count()));
    provider.eval(kin.inv, g);
    return g;
}

int vertex_of(const Mesh& mesh, int e, int node) {
    const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
    for (int v = 0; v < 3; ++v)
        if (t[static_cast<std::size_t>(v)] == node) return v;
    throw NodeNotInElement("adjacency cache inconsistent");
}

}  // namespace

std::vector<Eigen::Vector2d> all_nodal_forces(const Mesh& mesh, const StrainField& field,
                                              const GradientProvider& provider) {
    const FieldKinematics kin = compute_field_kinematics(mesh, field);
    const auto g = element_gradients(mesh, kin, provider);
    std::vector<Eigen::Vector2d> f(static_cast<std::size_t>(mesh.node_count()),
                                   Eigen::Vector2d::Zero());
    par::for_index(mesh.node_count(), [&](std::int64_t n) {
        Eigen::Vector2d acc = Eigen::Vector2d::Zero();
        for (int e : mesh.node_elements[static_cast<std::size_t>(n)]) {
            const Eigen::Matrix2d A = coefficient_matrix(
                kin.elems[static_cast<std::size_t>(e)], vertex_of(mesh, e, static_cast<int>(n)));
            acc += A * g[static_cast<std::size_t>(e)];
        }
        f[static_cast<std::size_t>(n)] = acc;
    });
    return f;
}

std::vector<Eigen::Vector2d> all_nodal_forces_quadrature(const Mesh& mesh,
                                                         const StrainField& field,
                                                         const GradientProvider& provider) {
    const FieldKinematics kin = compute_field_kinematics(mesh, field);
    const auto g = element_gradients(mesh, kin, provider);
    std::vector<Eigen::Matrix2d> P(static_cast<std::size_t>(mesh.element_count()));
    par::for_index(mesh.element_count(), [&](std::int64_t e) {
        const auto& k = kin.elems[static_cast<std::size_t>(e)];
        P[static_cast<std::size_t>(e)] =
            k.F * stress_from_gradient(k.F, g[static_cast<std::size_t>(e)]);
    });
    std::vector<Eigen::Vector2d> f(static_cast<std::size_t>(mesh.node_count()),
                                   Eigen::Vector2d::Zero());
    par::for_index(mesh.node_count(), [&](std::int64_t n) {
        Eigen::Vector2d acc = Eigen::Vector2d::Zero();
        for (int e : mesh.node_elements[static_cast<std::size_t>(n)]) {
            const auto& k = kin.elems[static_cast<std::size_t>(e)];
            const Eigen::Vector2d gN =
                k.grad[static_cast<std::size_t>(vertex_of(mesh, e, static_cast<int>(n)))];
            acc += k.area * P[static_cast<std::size_t>(e)] * gN;
        }
        f[static_cast<std::size_t>(n)] = acc;
    });
    return f;
}

Eigen::Vector2d nodal_force(const Mesh& mesh, const StrainField& field,
                            const GradientProvider& provider, int node) {
    const auto& elems = mesh.node_elements[static_cast<std::size_t>(node)];
    std::vector<Invariants2D> inv(elems.size());
    std::vector<ElementKinematics> kin(elems.size());
    for (std::size_t i = 0; i < elems.size(); ++i) {
        kin[i] = element_kinematics(mesh, field, elems[i]);
        inv[i] = invariants_from_F(kin[i].F);
    }
    std::vector<Eigen::Vector2d> g(elems.size());
    provider.eval(inv, g);
    Eigen::Vector2d acc = Eigen::Vector2d::Zero();
    for (std::size_t i = 0; i < elems.size(); ++i)
        acc += coefficient_matrix(kin[i], vertex_of(mesh, elems[i], node)) * g[i];
    return acc;
}

Eigen::Vector2d boundary_resultant(const Mesh& mesh, const StrainField& field,
                                   const GradientProvider& provider,
                                   const std::string& set_name) {
    const auto& set = mesh.boundary_set(set_name);
    const auto f = all_nodal_forces(mesh, field, provider);
    Eigen::Vector2d acc = Eigen::Vector2d::Zero();
    for (int n : set) acc += f[static_cast<std::size_t>(n)];
    return acc;
}

ForceScale contribution_force_scale(const Mesh& mesh, const FieldKinematics& kin,
                                    std::span<const Eigen::Vector2d> grads) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t count = 0;
    for (int n = 0; n < mesh.node_count(); ++n) {
        for (int e : mesh.node_elements[static_cast<std::size_t>(n)]) {
            const Eigen::Matrix2d A =
                coefficient_matrix(kin.elems[static_cast<std::size_t>(e)],
                                   vertex_of(mesh, e, n));
            const double norm = (A * grads[static_cast<std::size_t>(e)]).norm();
            sum += norm;
            sum2 += norm * norm;
            ++count;
        }
    }
    if (count == 0) return {};
    return {sum / static_cast<double>(count),
            std::sqrt(sum2 / static_cast<double>(count))};
}

}  // namespace icm
