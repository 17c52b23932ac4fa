#include <doctest.h>

#include <cmath>

#include "icm/enn.hpp"
#include "icm/solver.hpp"
#include "icm/tape.hpp"
#include "test_util.hpp"

using namespace icm;

namespace {

EnnConfig tiny() {
    EnnConfig c;
    c.hidden_layers = 2;
    c.hidden = 32;
    return c;
}

}  // namespace

TEST_CASE("tape backward matches hand derivatives") {
    Tape tp;
    const int x = tp.constant(0.7);
    const int y = tp.constant(-1.3);
    // f = tanh(x*y) + x^2 / y
    const int f = tp.add(tp.tanh_node(tp.mul(x, y)), tp.div(tp.square(x), y));
    std::vector<double> adj;
    tp.backward(f, adj);
    const double t = std::tanh(0.7 * -1.3);
    const double df_dx = (1 - t * t) * -1.3 + 2 * 0.7 / -1.3;
    const double df_dy = (1 - t * t) * 0.7 - 0.7 * 0.7 / (1.3 * 1.3);
    CHECK(adj[static_cast<std::size_t>(x)] == doctest::Approx(df_dx).epsilon(1e-12));
    CHECK(adj[static_cast<std::size_t>(y)] == doctest::Approx(df_dy).epsilon(1e-12));
}

TEST_CASE("huber values") {
    CHECK(huber(0.0, 0.0) == 0.0);
    CHECK(huber(0.5, 0.0) == doctest::Approx(0.125));
    CHECK(huber(2.0, 0.0) == doctest::Approx(1.5));
    CHECK(huber(-2.0, 0.0) == doctest::Approx(1.5));
    CHECK(huber(0.3, 0.3) == 0.0);
}

TEST_CASE("enn input gradient matches finite differences") {
    EnnModel m = enn_init(tiny());
    m.in_mean = {2.1, 0.95};
    m.in_std = {0.2, 0.15};
    Rng rng(5);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const double i1 = 2.0 + rng.uniform(-0.3, 0.3);
        const double i3 = 1.0 + rng.uniform(-0.2, 0.2);
        double psi;
        Eigen::Vector2d g;
        enn_forward(m, i1, i3, psi, g);
        const double h = 1e-6;
        double pp, pm;
        Eigen::Vector2d dummy;
        enn_forward(m, i1 + h, i3, pp, dummy);
        enn_forward(m, i1 - h, i3, pm, dummy);
        const double fd1 = (pp - pm) / (2 * h);
        enn_forward(m, i1, i3 + h, pp, dummy);
        enn_forward(m, i1, i3 - h, pm, dummy);
        const double fd3 = (pp - pm) / (2 * h);
        const double scale = std::max({std::fabs(fd1), std::fabs(fd3), 1e-6});
        worst = std::max(worst, std::fabs(g[0] - fd1) / scale);
        worst = std::max(worst, std::fabs(g[1] - fd3) / scale);
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("constant-output network has zero gradient") {
    EnnModel m = enn_init(tiny());
    const std::size_t P = m.params.size();
    // Zero the output weights, set the output bias.
    for (std::size_t i = P - 1 - m.cfg.hidden; i + 1 < P; ++i) m.params[i] = 0.0;
    m.params[P - 1] = 3.25;
    double psi;
    Eigen::Vector2d g;
    enn_forward(m, 2.3, 1.1, psi, g);
    CHECK(psi == doctest::Approx(3.25));
    CHECK(g.norm() == 0.0);
}

TEST_CASE("input normalization round-trips") {
    EnnModel m = enn_init(tiny());
    m.in_mean = {2.17, 0.93};
    m.in_std = {0.31, 0.07};
    const double raw1 = 2.412, raw3 = 1.052;
    const double n1 = (raw1 - m.in_mean[0]) / m.in_std[0];
    const double n3 = (raw3 - m.in_mean[1]) / m.in_std[1];
    CHECK(n1 * m.in_std[0] + m.in_mean[0] == doctest::Approx(raw1).epsilon(1e-12));
    CHECK(n3 * m.in_std[1] + m.in_mean[1] == doctest::Approx(raw3).epsilon(1e-12));
}

namespace {

struct EnnSetup {
    Mesh mesh;
    MaterialModel material;
    std::vector<StrainField> fields;
};

EnnSetup enn_setup(unsigned seed, int steps) {
    EnnSetup s;
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.095;
    geom.holes.push_back({HoleSpec::Shape::Circle, {0.5, 0.5}, 0.25, 0.25});
    s.mesh = generate_plate_mesh(geom);
    Rng rng(seed);
    s.material = normalize_polynomial_coefficients(
        sample_material(Family::Polynomial, SubsetRule::PolyA, rng), 77);
    const MaterialGradientProvider provider(s.material);
    LoadProgram program;
    program.mode = LoadMode::Uniaxial;
    program.u1 = 0.25;
    program.steps = steps;
    for (auto& st : run_load_program(s.mesh, provider, program))
        s.fields.push_back(std::move(st.field));
    return s;
}

}  // namespace

TEST_CASE("enn loss is affine in the boundary weight and sensitive to s_f") {
    const EnnSetup s = enn_setup(11, 1);
    EnnModel m = enn_init(tiny());
    m.force_scale = 0.5;
    Rng rng(7);
    for (auto& p : m.params) p += 0.01 * rng.normal();

    auto loss_with = [&](double wb, double sf) {
        EnnModel mm = m;
        mm.cfg.boundary_weight = wb;
        mm.force_scale = sf;
        return enn_loss(mm, s.mesh, s.fields);
    };
    const double l0 = loss_with(0.0, 0.5);
    const double l1 = loss_with(0.1, 0.5);
    const double l2 = loss_with(0.2, 0.5);
    CHECK(l2 - l0 == doctest::Approx(2.0 * (l1 - l0)).epsilon(1e-9));
    CHECK(l1 > l0);  // boundary mismatch contributes

    // The loss is deliberately NOT invariant to the force scale.
    CHECK(loss_with(0.1, 1.0) != doctest::Approx(l1).epsilon(1e-6));
}

TEST_CASE("enn training fits one field and follows the StepLR schedule") {
    const EnnSetup s = enn_setup(13, 2);
    const EnnTrainResult r = enn_train(s.mesh, s.fields, tiny(), 300, 3);
    REQUIRE(static_cast<int>(r.curve.size()) == 300);
    CHECK(r.curve[249].lr == doctest::Approx(1e-3 * 0.95 * 0.95).epsilon(1e-12));
    for (const auto& row : r.curve) CHECK(row.loss >= 0.0);
    CHECK(r.curve.back().loss < 0.5 * r.curve.front().loss);

    // Determinism under the seed.
    const EnnTrainResult r2 = enn_train(s.mesh, s.fields, tiny(), 300, 3);
    for (std::size_t i = 0; i < r.curve.size(); ++i)
        CHECK(r.curve[i].loss == r2.curve[i].loss);
}
