#include <doctest.h>

#include <cmath>

#include "icm/assembly.hpp"
#include "icm/errors.hpp"
#include "icm/mesh.hpp"
#include "test_util.hpp"

using namespace icm;
using icm::test::random_field;
using icm::test::random_material;

namespace {

Mesh reference_triangle_mesh() {
    Mesh m;
    m.nodes = {{0, 0}, {1, 0}, {0, 1}};
    m.triangles = {{0, 1, 2}};
    m.finalize();
    return m;
}

StrainField zero_field(const Mesh& mesh) {
    StrainField f;
    f.displacements.assign(mesh.nodes.size(), Eigen::Vector2d::Zero());
    return f;
}

}  // namespace

TEST_CASE("structured fallback mesh counts") {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.5;
    const Mesh mesh = generate_plate_mesh(geom);
    CHECK(mesh.node_count() == 9);
    CHECK(mesh.element_count() == 8);
    CHECK(mesh.boundary_set("left").size() == 3);
    CHECK(mesh.boundary_set("right").size() == 3);
    CHECK(mesh.interior_nodes.size() == 1);
}

TEST_CASE("plate with centered circular hole meshes cleanly") {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.07;
    geom.holes.push_back({HoleSpec::Shape::Circle, {0.5, 0.5}, 0.2, 0.2});
    const Mesh mesh = generate_plate_mesh(geom);
    for (double w : mesh.area) CHECK(w > 0.0);
    CHECK(mesh_min_angle_deg(mesh) > 15.0);
    CHECK(mesh.interior_nodes.size() > 50);
}

TEST_CASE("square and ellipse holes are accepted") {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.07;
    geom.holes.push_back({HoleSpec::Shape::Square, {0.5, 0.5}, 0.15, 0.15});
    CHECK_NOTHROW(generate_plate_mesh(geom));
    geom.holes.clear();
    geom.holes.push_back({HoleSpec::Shape::Ellipse, {0.5, 0.5}, 0.25, 0.15});
    CHECK_NOTHROW(generate_plate_mesh(geom));
}

TEST_CASE("bad hole layouts are rejected") {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.05;
    geom.holes.push_back({HoleSpec::Shape::Circle, {0.5, 0.5}, 0.2, 0.2});
    geom.holes.push_back({HoleSpec::Shape::Circle, {0.62, 0.5}, 0.2, 0.2});
    CHECK_THROWS_AS(generate_plate_mesh(geom), MeshGenerationFailure);

    geom.holes.clear();
    geom.holes.push_back({HoleSpec::Shape::Circle, {0.1, 0.5}, 0.12, 0.12});
    CHECK_THROWS_AS(generate_plate_mesh(geom), MeshGenerationFailure);
}

TEST_CASE("reference right triangle shape gradients") {
    const Mesh mesh = reference_triangle_mesh();
    CHECK(mesh.area[0] == doctest::Approx(0.5));
    const Eigen::Vector2d g0 = mesh.shape_grad[0][0];
    CHECK(g0.x() == doctest::Approx(-1.0));
    CHECK(g0.y() == doctest::Approx(-1.0));
}

TEST_CASE("element kinematics reproduce affine fields exactly") {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.25;
    const Mesh mesh = generate_plate_mesh(geom);

    StrainField zero = zero_field(mesh);
    for (int e = 0; e < mesh.element_count(); ++e) {
        const auto kin = element_kinematics(mesh, zero, e);
        CHECK((kin.F - Eigen::Matrix2d::Identity()).norm() < 1e-15);
    }

    Eigen::Matrix2d G;
    G << 1.13, 0.21, -0.05, 0.94;
    StrainField affine = zero;
    for (std::size_t n = 0; n < mesh.nodes.size(); ++n)
        affine.displacements[n] = (G - Eigen::Matrix2d::Identity()) * mesh.nodes[n];
    for (int e = 0; e < mesh.element_count(); ++e) {
        const auto kin = element_kinematics(mesh, affine, e);
        CHECK((kin.F - G).norm() < 1e-13);
    }
}

TEST_CASE("coefficient matrix of the undeformed reference triangle") {
    const Mesh mesh = reference_triangle_mesh();
    const StrainField f = zero_field(mesh);
    const Eigen::Matrix2d A = coefficient_matrix(mesh, f, 0, 0);
    CHECK(A(0, 0) == doctest::Approx(-1.0));
    CHECK(A(0, 1) == doctest::Approx(-1.0));
    CHECK(A(1, 0) == doctest::Approx(-1.0));
    CHECK(A(1, 1) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(coefficient_matrix(mesh, f, 7, 0), NodeNotInElement);
}

TEST_CASE("first column of A equals 2 w F gradN") {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.2;
    const Mesh mesh = generate_plate_mesh(geom);
    Rng rng(5);
    const StrainField field = random_field(mesh, rng);
    for (int e = 0; e < mesh.element_count(); e += 3) {
        const auto kin = element_kinematics(mesh, field, e);
        for (int v = 0; v < 3; ++v) {
            const Eigen::Matrix2d A = coefficient_matrix(kin, v);
            const Eigen::Vector2d want =
                2.0 * kin.area * kin.F * kin.grad[static_cast<std::size_t>(v)];
            CHECK((A.col(0) - want).norm() < 1e-14 * std::max(1.0, want.norm()));
        }
    }
}

TEST_CASE("dual-path assembly identity") {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.085;
    geom.holes.push_back({HoleSpec::Shape::Circle, {0.5, 0.5}, 0.22, 0.22});
    const Mesh mesh = generate_plate_mesh(geom);
    Rng rng(17);
    const Family fams[] = {Family::Polynomial, Family::Ogden, Family::PucciSaccomandi,
                           Family::ExpLn, Family::VanDerWaals};
    for (int trial = 0; trial < 10; ++trial) {
        const auto m = random_material(fams[trial % 5], rng);
        const MaterialGradientProvider provider(m);
        const StrainField field = random_field(mesh, rng);
        const auto fa = all_nodal_forces(mesh, field, provider);
        const auto fq = all_nodal_forces_quadrature(mesh, field, provider);
        double scale = 0.0;
        for (const auto& f : fa) scale = std::max(scale, f.norm());
        for (std::size_t n = 0; n < fa.size(); ++n)
            CHECK((fa[n] - fq[n]).norm() <= 1e-12 * std::max(scale, 1e-300));
    }
}

TEST_CASE("nodal forces self-equilibrate over the whole mesh") {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.15;
    const Mesh mesh = generate_plate_mesh(geom);
    Rng rng(19);
    for (int trial = 0; trial < 5; ++trial) {
        const auto m = random_material(Family::Polynomial, rng);
        const MaterialGradientProvider provider(m);
        const StrainField field = random_field(mesh, rng);
        const auto f = all_nodal_forces(mesh, field, provider);
        Eigen::Vector2d total = Eigen::Vector2d::Zero();
        double scale = 0.0;
        for (const auto& fn : f) {
            total += fn;
            scale += fn.norm();
        }
        CHECK(total.norm() <= 1e-10 * std::max(scale, 1e-300));
    }
}

TEST_CASE("zero displacement gives zero force for polynomial materials") {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.25;
    const Mesh mesh = generate_plate_mesh(geom);
    Rng rng(23);
    const auto m = random_material(Family::Polynomial, rng);
    const MaterialGradientProvider provider(m);
    const StrainField field = zero_field(mesh);
    const auto f = all_nodal_forces(mesh, field, provider);
    for (const auto& fn : f) CHECK(fn.norm() < 1e-10);
    const Eigen::Vector2d r = boundary_resultant(mesh, field, provider, "left");
    CHECK(r.norm() < 1e-10);
    CHECK_THROWS_AS(boundary_resultant(mesh, field, provider, "nope"),
                    UnknownBoundarySet);
}

TEST_CASE("rigid translation leaves A and forces unchanged") {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.2;
    const Mesh mesh = generate_plate_mesh(geom);
    Rng rng(29);
    const auto m = random_material(Family::Polynomial, rng);
    const MaterialGradientProvider provider(m);
    StrainField field = random_field(mesh, rng);
    const auto f0 = all_nodal_forces(mesh, field, provider);
    const Eigen::Matrix2d A0 = coefficient_matrix(mesh, field, mesh.triangles[0][0], 0);
    for (auto& u : field.displacements) u += Eigen::Vector2d(0.37, -0.81);
    const auto f1 = all_nodal_forces(mesh, field, provider);
    const Eigen::Matrix2d A1 = coefficient_matrix(mesh, field, mesh.triangles[0][0], 0);
    CHECK((A0 - A1).norm() < 1e-12 * std::max(1.0, A0.norm()));
    for (std::size_t n = 0; n < f0.size(); ++n)
        CHECK((f0[n] - f1[n]).norm() < 1e-10 * std::max(1.0, f0[n].norm()));
}

TEST_CASE("uniform refinement preserves assembled forces of affine fields") {
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.5;
    const Mesh coarse = generate_plate_mesh(geom);
    const Mesh fine = refine_uniform(coarse);
    CHECK(fine.element_count() == 4 * coarse.element_count());

    Eigen::Matrix2d G;
    G << 1.08, 0.12, -0.03, 0.95;
    auto affine_on = [&](const Mesh& mesh) {
        StrainField f;
        for (const auto& X : mesh.nodes)
            f.displacements.push_back((G - Eigen::Matrix2d::Identity()) * X);
        return f;
    };
    Rng rng(31);
    const auto m = random_material(Family::Polynomial, rng);
    const MaterialGradientProvider provider(m);
    const auto fc = all_nodal_forces(coarse, affine_on(coarse), provider);
    const auto ff = all_nodal_forces(fine, affine_on(fine), provider);
    // Original nodes keep their ids in refine_uniform. Interior nodal forces
    // of a constant-stress field vanish by partition of unity, on both meshes.
    double scale = 0.0;
    for (const auto& f : fc) scale = std::max(scale, f.norm());
    for (int n : coarse.interior_nodes) {
        CHECK(fc[static_cast<std::size_t>(n)].norm() <= 1e-12 * std::max(scale, 1.0));
        CHECK(ff[static_cast<std::size_t>(n)].norm() <= 1e-12 * std::max(scale, 1.0));
    }
}
