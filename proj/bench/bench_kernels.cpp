// Serial-vs-parallel comparison of the hot kernels. Every parallel loop in
// the library writes disjoint output slots with fixed-order reductions, so
// the two paths must agree bitwise; this harness asserts that and reports
// the speedup per kernel.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "icm/assembly.hpp"
#include "icm/inference.hpp"
#include "icm/network.hpp"
#include "icm/parallel.hpp"
#include "icm/solver.hpp"
#include "icm/tokenizer.hpp"
#include "icm/training.hpp"

using namespace icm;

namespace {

struct Timing {
    double serial_ms = 0.0;
    double parallel_ms = 0.0;
    bool identical = false;
};

template <class F>
double time_ms(F&& fn, int repeats) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < repeats; ++r) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

int failures = 0;

void report(const char* name, const Timing& t) {
    std::printf("%-28s serial %8.2f ms   parallel %8.2f ms   speedup %5.2fx   %s\n",
                name, t.serial_ms, t.parallel_ms,
                t.parallel_ms > 0 ? t.serial_ms / t.parallel_ms : 0.0,
                t.identical ? "bitwise-equal" : "MISMATCH");
    if (!t.identical) ++failures;
}

}  // namespace

int main(int argc, char** argv) {
    const bool smoke = argc > 1 && std::string(argv[1]) == "--smoke";
    const int repeats = smoke ? 1 : 3;
    const double h = smoke ? 0.12 : 0.05;

    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = h;
    geom.holes.push_back({HoleSpec::Shape::Circle, {0.5, 0.5}, 0.25, 0.25});
    const Mesh mesh = generate_plate_mesh(geom);
    Rng rng(11);
    const MaterialModel material = normalize_polynomial_coefficients(
        sample_material(Family::Polynomial, SubsetRule::PolyB, rng), 7);
    const MaterialGradientProvider provider(material);
    LoadProgram program;
    program.mode = LoadMode::Uniaxial;
    program.u1 = 0.25;
    program.steps = 1;
    const auto solved = run_load_program(mesh, provider, program);
    const StrainField& field = solved[0].field;
    std::printf("mesh: %d nodes, %d elements\n\n", mesh.node_count(),
                mesh.element_count());

    // Nodal force assembly.
    {
        Timing t;
        std::vector<Eigen::Vector2d> out_s, out_p;
        par::set_thread_count(1);
        t.serial_ms = time_ms([&] { out_s = all_nodal_forces(mesh, field, provider); },
                              repeats);
        par::set_thread_count(0);
        t.parallel_ms = time_ms([&] { out_p = all_nodal_forces(mesh, field, provider); },
                                repeats);
        std::vector<double> fs, fp;
        for (const auto& v : out_s) {
            fs.push_back(v.x());
            fs.push_back(v.y());
        }
        for (const auto& v : out_p) {
            fp.push_back(v.x());
            fp.push_back(v.y());
        }
        t.identical = bits_equal(fs, fp);
        report("nodal force assembly", t);
    }

    // Tokenization.
    std::vector<RawToken> tokens;
    {
        Timing t;
        std::vector<RawToken> tok_s;
        par::set_thread_count(1);
        t.serial_ms = time_ms([&] { tok_s = tokenize_field(mesh, field); }, repeats);
        par::set_thread_count(0);
        t.parallel_ms = time_ms([&] { tokens = tokenize_field(mesh, field); }, repeats);
        std::vector<double> as, ap;
        for (const auto& tok : tok_s)
            for (const auto& sub : tok.subs)
                for (int k = 0; k < 4; ++k) as.push_back(sub.A(k / 2, k % 2));
        for (const auto& tok : tokens)
            for (const auto& sub : tok.subs)
                for (int k = 0; k < 4; ++k) ap.push_back(sub.A(k / 2, k % 2));
        t.identical = bits_equal(as, ap);
        report("field tokenization", t);
    }

    // Network forward / backward / loss on a full context.
    std::vector<FieldTokensView> views{{0, 0, 0, 1, &tokens}};
    const Context ctx = full_context(views);
    NetworkConfig cfg;
    cfg.init_seed = 3;
    const ParameterSet params = init_parameters(cfg);
    const ContextBatch batch = make_context_batch(ctx);
    const Mat queries = make_query_matrix(ctx);
    std::printf("context: %d tokens, %d queries\n", ctx.token_count(),
                ctx.query_count());

    Mat pred_serial, pred_parallel;
    {
        Timing t;
        par::set_thread_count(1);
        t.serial_ms = time_ms(
            [&] { pred_serial = network_forward(params, cfg, batch, queries); }, repeats);
        par::set_thread_count(0);
        t.parallel_ms = time_ms(
            [&] { pred_parallel = network_forward(params, cfg, batch, queries); },
            repeats);
        t.identical = bits_equal(pred_serial.a, pred_parallel.a);
        report("network forward", t);
    }

    {
        Timing t;
        const LossBreakdown loss = equilibrium_loss(ctx, pred_parallel);
        const Mat cot = equilibrium_loss_cotangent(ctx, pred_parallel, loss);
        ParameterSet gs = zero_like(params), gp = zero_like(params);
        par::set_thread_count(1);
        t.serial_ms = time_ms(
            [&] {
                TracePtr trace;
                network_forward_trace(params, cfg, batch, queries, trace);
                for (auto& g : gs.tensors) g.zero();
                network_backward(params, cfg, *trace, cot, gs);
            },
            repeats);
        par::set_thread_count(0);
        t.parallel_ms = time_ms(
            [&] {
                TracePtr trace;
                network_forward_trace(params, cfg, batch, queries, trace);
                for (auto& g : gp.tensors) g.zero();
                network_backward(params, cfg, *trace, cot, gp);
            },
            repeats);
        t.identical = true;
        for (std::size_t i = 0; i < gs.tensors.size(); ++i)
            t.identical = t.identical && bits_equal(gs.tensors[i].a, gp.tensors[i].a);
        report("network forward+backward", t);
    }

    {
        Timing t;
        LossBreakdown ls{}, lp{};
        par::set_thread_count(1);
        t.serial_ms =
            time_ms([&] { ls = equilibrium_loss(ctx, pred_serial); }, repeats);
        par::set_thread_count(0);
        t.parallel_ms =
            time_ms([&] { lp = equilibrium_loss(ctx, pred_parallel); }, repeats);
        t.identical = std::memcmp(&ls.value, &lp.value, sizeof(double)) == 0;
        report("equilibrium loss", t);
    }

    par::set_thread_count(0);
    std::printf("\n%s\n", failures == 0 ? "all kernels bitwise-equal across thread counts"
                                        : "BITWISE MISMATCH DETECTED");
    return failures == 0 ? 0 : 1;
}
