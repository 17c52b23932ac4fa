#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "icm/dataset.hpp"
#include "icm/diffusion.hpp"
#include "icm/enn.hpp"
#include "icm/errors.hpp"
#include "icm/inference.hpp"
#include "icm/io.hpp"
#include "icm/parallel.hpp"
#include "icm/solver.hpp"
#include "icm/training.hpp"

namespace fs = std::filesystem;
using namespace icm;

namespace {

// Wall-clock data lives in a sidecar so primary artifacts stay byte-identical
// across reruns.
struct Sidecar {
    json j = json::object();
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void finish(const fs::path& out_dir, const std::string& command) {
        j["command"] = command;
        j["wall_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        j["written_at_unix"] =
            std::chrono::duration_cast<std::chrono::seconds>(
                std::chrono::system_clock::now().time_since_epoch())
                .count();
        fs::create_directories(out_dir);
        save_json_file(out_dir / "sidecar.json", j);
    }
};

DatagenConfig datagen_config_from_json(const json& j) {
    DatagenConfig cfg;
    cfg.seed = j.value("seed", 1);
    cfg.normalization_seed = j.value("normalization_seed", 1234);
    for (const auto& g : j.at("geometries")) {
        GeometryConfig gc;
        gc.L = g.value("L", 1.0);
        gc.h = g.value("h", 0.09);
        for (const auto& h : g.value("holes", json::array())) {
            HoleSpec hole;
            const std::string shape = h.value("shape", "circle");
            hole.shape = shape == "circle"    ? HoleSpec::Shape::Circle
                         : shape == "ellipse" ? HoleSpec::Shape::Ellipse
                                              : HoleSpec::Shape::Square;
            hole.center = {h.at("center").at(0).get<double>(),
                           h.at("center").at(1).get<double>()};
            hole.a = h.at("a");
            hole.b = h.value("b", hole.a);
            gc.holes.push_back(hole);
        }
        cfg.geometries.push_back(gc);
    }
    for (const auto& m : j.at("modes")) {
        ModeConfig mc;
        mc.mode = load_mode_from_name(m.at("mode"));
        mc.u1 = m.value("u1", 0.0);
        mc.u2 = m.value("u2", 0.0);
        mc.steps = m.value("steps", 5);
        cfg.modes.push_back(mc);
    }
    for (const auto& m : j.at("materials")) {
        MaterialGroupConfig gc;
        gc.family = family_from_name(m.at("family"));
        gc.subset = subset_rule_from_name(m.value("subset", "default"));
        gc.count = m.value("count", 1);
        gc.normalize = m.value("normalize", false);
        cfg.materials.push_back(gc);
    }
    return cfg;
}

struct LoadedModel {
    NetworkConfig config;
    ParameterSet params;
};

LoadedModel require_checkpoint(const std::string& path) {
    if (path.empty()) throw MissingArtifact("expected --checkpoint <file>");
    Checkpoint ckpt = load_checkpoint(path);
    return {ckpt.config, std::move(ckpt.params)};
}

std::vector<FieldRef> refs_of(const Dataset& ds, const DatasetSample& sample) {
    std::vector<FieldRef> refs;
    for (const auto& f : sample.fields) refs.push_back({&ds.mesh_of(f), &f.field});
    return refs;
}

struct SampleEval {
    double s_err_geo = 0.0;
    double p_err_geo = 0.0;
    double s_err_max = 0.0;
    double p_err_max = 0.0;
    double alpha = 0.0;
    double cov = 0.0;
    int finite_fields = 0;
    int total_fields = 0;
};

SampleEval evaluate_sample(const Dataset& ds, const DatasetSample& sample,
                           const LoadedModel* model, bool oracle,
                           const std::string& scope) {
    SampleEval out;
    const auto refs = refs_of(ds, sample);
    const MaterialGradientProvider truth(sample.material);

    std::vector<double> s_errs, p_errs;
    auto eval_with = [&](const Predictor& pred, std::span<const FieldRef> ctx_refs,
                         std::span<const FieldRef> eval_refs) {
        const ScalingReport scaling = post_scale(pred, ctx_refs);
        out.alpha = scaling.alpha;
        out.cov = scaling.cov;
        for (const auto& ref : eval_refs) {
            ++out.total_fields;
            const FieldStresses ps = predict_field_stresses(pred, scaling.alpha, ref);
            const FieldStresses ts = true_field_stresses(sample.material, ref);
            const double se = stress_error(ps.S, ts.S);
            const double pe = stress_error(ps.P, ts.P);
            if (std::isfinite(se) && std::isfinite(pe)) {
                ++out.finite_fields;
                s_errs.push_back(se);
                p_errs.push_back(pe);
                out.s_err_max = std::max(out.s_err_max, se);
                out.p_err_max = std::max(out.p_err_max, pe);
            }
        }
    };

    if (oracle) {
        const OraclePredictor pred(truth);
        eval_with(pred, refs, refs);
    } else if (scope == "field") {
        for (std::size_t f = 0; f < sample.fields.size(); ++f) {
            const auto views = ds.views_of(
                static_cast<std::size_t>(&sample - ds.samples.data()));
            const std::vector<FieldTokensView> one{views[f]};
            const Context ctx = full_context(one);
            const NetworkPredictor pred(model->params, model->config, ctx);
            const std::vector<FieldRef> fref{refs[f]};
            eval_with(pred, fref, fref);
        }
    } else {
        const auto views =
            ds.views_of(static_cast<std::size_t>(&sample - ds.samples.data()));
        const Context ctx = full_context(views);
        const NetworkPredictor pred(model->params, model->config, ctx);
        eval_with(pred, refs, refs);
    }
    out.s_err_geo = geometric_mean(s_errs);
    out.p_err_geo = geometric_mean(p_errs);
    return out;
}

int cmd_datagen(const std::string& config_path, const fs::path& out_dir) {
    Sidecar sidecar;
    const DatagenConfig cfg = datagen_config_from_json(load_json_file(config_path));
    const DatagenSummary summary = generate_dataset(cfg, out_dir);
    std::cout << "datagen: " << summary.attempted_solves - summary.failed_solves << "/"
              << summary.attempted_solves << " load programs succeeded\n"
              << "manifest: " << summary.manifest_path.string() << "\n";
    sidecar.j["attempted"] = summary.attempted_solves;
    sidecar.j["failed"] = summary.failed_solves;
    sidecar.finish(out_dir, "datagen");
    if (summary.attempted_solves > 0 &&
        summary.failed_solves * 5 > summary.attempted_solves)
        return 3;
    return 0;
}

int cmd_train(const std::string& config_path, const fs::path& out_dir) {
    Sidecar sidecar;
    const json j = load_json_file(config_path);
    const Dataset ds = load_dataset(fs::path(j.at("manifest").get<std::string>()));
    if (ds.samples.empty()) throw MissingArtifact("dataset has no samples");

    TrainConfig cfg;
    if (j.contains("net")) cfg.net = network_config_from_json(j.at("net"));
    cfg.steps = j.value("steps", 1000);
    cfg.seed = j.value("seed", 1);
    cfg.sched.total_steps = cfg.steps;
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        cfg.sched.peak_lr = s.value("peak_lr", cfg.sched.peak_lr);
        cfg.sched.warmup_fraction = s.value("warmup_fraction", cfg.sched.warmup_fraction);
        cfg.sched.floor_fraction = s.value("floor_fraction", cfg.sched.floor_fraction);
    }
    cfg.opt.kind = j.value("optimizer", std::string("muon")) == "adamw"
                       ? OptimizerKind::AdamW
                       : OptimizerKind::Muon;
    if (j.contains("bounds")) {
        const json& b = j.at("bounds");
        cfg.bounds.min_fields = b.value("min_fields", cfg.bounds.min_fields);
        cfg.bounds.max_fields = b.value("max_fields", cfg.bounds.max_fields);
        cfg.bounds.min_tokens = b.value("min_tokens", cfg.bounds.min_tokens);
        cfg.bounds.max_tokens = b.value("max_tokens", cfg.bounds.max_tokens);
    }

    std::vector<TrainingSample> samples;
    std::vector<std::vector<FieldTokensView>> view_storage;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        view_storage.push_back(ds.views_of(i));
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        samples.push_back({ds.samples[i].id, view_storage[i]});

    fs::create_directories(out_dir / "checkpoints");
    const TrainResult result =
        train(samples, cfg, [&](int step, const ParameterSet& params) {
            save_checkpoint(out_dir / "checkpoints" /
                                ("step" + std::to_string(step) + ".icmckpt"),
                            cfg.net, params);
        });
    save_checkpoint(out_dir / "checkpoint.icmckpt", cfg.net, result.params);
    write_loss_curve_csv(out_dir / "loss.csv", result.curve);
    std::cout << "train: " << cfg.steps << " steps, final loss "
              << (result.curve.empty() ? 0.0 : result.curve.back().loss) << "\n"
              << "checkpoint: " << (out_dir / "checkpoint.icmckpt").string() << "\n";
    sidecar.finish(out_dir, "train");
    return 0;
}

int cmd_eval(const std::string& manifest, const std::string& checkpoint,
             const fs::path& out_dir, bool oracle, const std::string& scope,
             const std::string& set_name) {
    Sidecar sidecar;
    const Dataset ds = load_dataset(manifest);
    LoadedModel model;
    if (!oracle) model = require_checkpoint(checkpoint);

    json per_material = json::object();
    std::vector<double> s_geo, p_geo, covs;
    double s_max = 0.0, p_max = 0.0, alpha_dev = 0.0, cov_max = 0.0;
    int finite = 0, total = 0;
    for (const auto& sample : ds.samples) {
        SampleEval ev;
        try {
            ev = evaluate_sample(ds, sample, oracle ? nullptr : &model, oracle, scope);
        } catch (const Error& e) {
            std::cerr << "[eval] sample " << sample.id << " failed: " << e.what() << "\n";
            per_material[sample.id] = {{"error", e.what()}};
            total += static_cast<int>(sample.fields.size());
            continue;
        }
        per_material[sample.id] = {{"S_err", ev.s_err_geo},
                                   {"P_err", ev.p_err_geo},
                                   {"S_err_max", ev.s_err_max},
                                   {"P_err_max", ev.p_err_max},
                                   {"alpha", ev.alpha},
                                   {"CoV", ev.cov},
                                   {"finite_fields", ev.finite_fields},
                                   {"total_fields", ev.total_fields}};
        if (std::isfinite(ev.s_err_geo)) s_geo.push_back(ev.s_err_geo);
        if (std::isfinite(ev.p_err_geo)) p_geo.push_back(ev.p_err_geo);
        s_max = std::max(s_max, ev.s_err_max);
        p_max = std::max(p_max, ev.p_err_max);
        alpha_dev = std::max(alpha_dev, std::fabs(ev.alpha - 1.0));
        cov_max = std::max(cov_max, std::fabs(ev.cov));
        covs.push_back(ev.cov);
        finite += ev.finite_fields;
        total += ev.total_fields;
    }
    json report;
    report["set"] = set_name;
    report["scope"] = oracle ? "oracle" : scope;
    report["per_material"] = per_material;
    double cov_acc = 0.0;
    for (double c : covs) cov_acc += std::fabs(c);
    report["aggregates"] = {
        {"S_err_geomean", geometric_mean(s_geo)},
        {"P_err_geomean", geometric_mean(p_geo)},
        {"S_err_max", s_max},
        {"P_err_max", p_max},
        {"max_abs_alpha_minus_one", alpha_dev},
        {"max_abs_CoV", cov_max},
        {"mean_abs_CoV", covs.empty() ? 0.0 : cov_acc / static_cast<double>(covs.size())},
        {"finite_fraction",
         total > 0 ? static_cast<double>(finite) / static_cast<double>(total) : 0.0}};
    fs::create_directories(out_dir);
    save_json_file(out_dir / ("eval_" + set_name + ".json"), report);
    std::cout << "eval[" << set_name
              << "]: S_err geomean = " << report["aggregates"]["S_err_geomean"]
              << ", finite fraction = " << report["aggregates"]["finite_fraction"]
              << "\n";
    sidecar.finish(out_dir, "eval");
    return 0;
}

int cmd_infer(const std::string& manifest, const std::string& checkpoint,
              const std::string& sample_id, const fs::path& out_dir, bool oracle) {
    Sidecar sidecar;
    const Dataset ds = load_dataset(manifest);
    const DatasetSample* sample = nullptr;
    std::size_t index = 0;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].id == sample_id) {
            sample = &ds.samples[i];
            index = i;
        }
    if (!sample) throw MissingArtifact("sample '" + sample_id + "' not in manifest");

    const MaterialGradientProvider truth(sample->material);
    const auto refs = refs_of(ds, *sample);
    const auto views = ds.views_of(index);
    const Context ctx = full_context(views);

    std::unique_ptr<Predictor> pred;
    LoadedModel model;
    if (oracle) {
        pred = std::make_unique<OraclePredictor>(truth);
    } else {
        model = require_checkpoint(checkpoint);
        pred = std::make_unique<NetworkPredictor>(model.params, model.config, ctx);
    }
    const ScalingReport scaling = post_scale(*pred, refs);

    // Stretch range covered by the context states.
    double lo = 1e300, hi = -1e300;
    for (const auto& ref : refs) {
        const FieldKinematics kin = compute_field_kinematics(*ref.mesh, *ref.field);
        for (const auto& e : kin.elems) {
            const Eigen::Matrix2d C = e.F.transpose() * e.F;
            const double tr = C.trace(), det = C.determinant();
            const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
            const double l1 = std::sqrt(tr / 2.0 + disc);
            lo = std::min(lo, l1);
            hi = std::max(hi, l1);
        }
    }
    lo = std::max(lo, 1.0);

    std::ofstream csv(out_dir / "p_lambda.csv");
    fs::create_directories(out_dir);
    csv.open(out_dir / "p_lambda.csv");
    csv << "lambda,lateral,P11_true,P11_pred\n";
    csv.precision(17);
    for (int k = 0; k <= 24; ++k) {
        const double lam = lo + (hi - lo) * k / 24.0;
        // Lateral stretch from the true material's uniaxial path.
        double l2lo = 0.4, l2hi = 2.5;
        auto p22 = [&](double l2) {
            Eigen::Matrix2d F = Eigen::Matrix2d::Zero();
            F(0, 0) = lam;
            F(1, 1) = l2;
            return (F * stress_from_gradient(F, truth.eval_one(invariants_from_F(F))))(1, 1);
        };
        double flo = p22(l2lo);
        for (int it = 0; it < 100; ++it) {
            const double mid = 0.5 * (l2lo + l2hi);
            const double fm = p22(mid);
            if (flo * fm <= 0) {
                l2hi = mid;
            } else {
                l2lo = mid;
                flo = fm;
            }
        }
        const double l2 = 0.5 * (l2lo + l2hi);
        Eigen::Matrix2d F = Eigen::Matrix2d::Zero();
        F(0, 0) = lam;
        F(1, 1) = l2;
        const Invariants2D inv = invariants_from_F(F);
        const double p_true =
            (F * stress_from_gradient(F, truth.eval_one(inv)))(0, 0);
        const Mat g = pred->predict({&inv, 1});
        const double p_pred =
            (F * stress_from_gradient(
                     F, Eigen::Vector2d(g(0, 0), g(0, 1)) / scaling.alpha))(0, 0);
        csv << lam << "," << l2 << "," << p_true << "," << p_pred << "\n";
    }
    json report{{"alpha", scaling.alpha}, {"CoV", scaling.cov}, {"sample", sample_id}};
    save_json_file(out_dir / "infer_report.json", report);
    std::cout << "infer: alpha = " << scaling.alpha << ", CoV = " << scaling.cov << "\n";
    sidecar.finish(out_dir, "infer");
    return 0;
}

int cmd_fem_demo(const std::string& manifest, const std::string& checkpoint,
                 const std::string& sample_id, const std::string& demo_config,
                 const fs::path& out_dir, bool oracle) {
    Sidecar sidecar;
    const Dataset ds = load_dataset(manifest);
    const DatasetSample* sample = nullptr;
    std::size_t index = 0;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].id == sample_id) {
            sample = &ds.samples[i];
            index = i;
        }
    if (!sample) throw MissingArtifact("sample '" + sample_id + "' not in manifest");

    // Target problem: held-out geometry and program from the demo config.
    const json dj = load_json_file(demo_config);
    PlateGeometry geom;
    geom.L = dj.value("L", 1.0);
    geom.h = dj.value("h", 0.09);
    for (const auto& h : dj.value("holes", json::array())) {
        HoleSpec hole;
        const std::string shape = h.value("shape", "circle");
        hole.shape = shape == "circle"    ? HoleSpec::Shape::Circle
                     : shape == "ellipse" ? HoleSpec::Shape::Ellipse
                                          : HoleSpec::Shape::Square;
        hole.center = {h.at("center").at(0).get<double>(),
                       h.at("center").at(1).get<double>()};
        hole.a = h.at("a");
        hole.b = h.value("b", hole.a);
        geom.holes.push_back(hole);
    }
    const Mesh target = generate_plate_mesh(geom);
    LoadProgram program;
    program.mode = load_mode_from_name(dj.value("mode", "uniaxial"));
    program.u1 = dj.value("u1", 0.2);
    program.u2 = dj.value("u2", 0.0);
    program.steps = dj.value("steps", 5);

    const MaterialGradientProvider truth(sample->material);
    const auto truth_steps = run_load_program(target, truth, program);

    const auto refs = refs_of(ds, *sample);
    const auto views = ds.views_of(index);
    const Context ctx = full_context(views);
    std::unique_ptr<Predictor> pred;
    LoadedModel model;
    if (oracle) {
        pred = std::make_unique<OraclePredictor>(truth);
    } else {
        model = require_checkpoint(checkpoint);
        pred = std::make_unique<NetworkPredictor>(model.params, model.config, ctx);
    }
    const ScalingReport scaling = post_scale(*pred, refs);

    std::vector<Invariants2D> ctx_states;
    for (const auto& ref : refs) {
        const FieldKinematics kin = compute_field_kinematics(*ref.mesh, *ref.field);
        ctx_states.insert(ctx_states.end(), kin.inv.begin(), kin.inv.end());
    }
    const FemDemoResult demo =
        icm_driven_fem(*pred, scaling.alpha, target, program, ctx_states);

    double umax = 0.0, du = 0.0;
    const auto& ut = truth_steps.back().field.displacements;
    const auto& up = demo.steps.back().field.displacements;
    for (std::size_t n = 0; n < ut.size(); ++n) {
        umax = std::max(umax, ut[n].norm());
        du = std::max(du, (up[n] - ut[n]).norm());
    }
    fs::create_directories(out_dir);
    {
        std::ofstream csv(out_dir / "displacements.csv");
        csv << "node,x,y,ux_icm,uy_icm,ux_true,uy_true\n";
        csv.precision(17);
        for (std::size_t n = 0; n < ut.size(); ++n)
            csv << n << "," << target.nodes[n].x() << "," << target.nodes[n].y() << ","
                << up[n].x() << "," << up[n].y() << "," << ut[n].x() << ","
                << ut[n].y() << "\n";
    }
    {
        const FieldRef icm_ref{&target, &demo.steps.back().field};
        const FieldRef true_ref{&target, &truth_steps.back().field};
        const FieldStresses ps = predict_field_stresses(*pred, scaling.alpha, icm_ref);
        const FieldStresses ts = true_field_stresses(sample->material, true_ref);
        std::ofstream csv(out_dir / "stress.csv");
        csv << "element,S11_icm,S12_icm,S22_icm,S11_true,S12_true,S22_true\n";
        csv.precision(17);
        for (std::size_t e = 0; e < ps.S.size(); ++e)
            csv << e << "," << ps.S[e](0, 0) << "," << ps.S[e](0, 1) << ","
                << ps.S[e](1, 1) << "," << ts.S[e](0, 0) << "," << ts.S[e](0, 1) << ","
                << ts.S[e](1, 1) << "\n";
    }
    const double rel = du / std::max(umax, 1e-300);
    json report{{"sample", sample_id},
                {"alpha", scaling.alpha},
                {"CoV", scaling.cov},
                {"max_displacement_rel_error", rel},
                {"extrapolated_queries", demo.extrapolations}};
    save_json_file(out_dir / "fem_demo_report.json", report);
    std::cout << "fem-demo: max displacement relative error = " << rel << "\n";
    sidecar.finish(out_dir, "fem-demo");
    return 0;
}

int cmd_diffusion_demo(const std::string& config_path, const fs::path& out_dir) {
    Sidecar sidecar;
    PlateGeometry geom;
    geom.L = 1.0;
    geom.h = 0.125;
    double dt = 0.02;
    int steps = 5;
    DiffusivityModel D;
    D.c0 << 1.0, 0.1, 0.1, 0.8;
    D.c1 << 0.2, 0.0, 0.0, 0.3;
    D.c2 << 0.4, 0.05, 0.05, 0.2;
    if (!config_path.empty()) {
        const json j = load_json_file(config_path);
        geom.h = j.value("h", geom.h);
        dt = j.value("dt", dt);
        steps = j.value("steps", steps);
    }
    const Mesh mesh = generate_plate_mesh(geom);
    std::vector<double> c0(mesh.nodes.size());
    for (int n = 0; n < mesh.node_count(); ++n) {
        const auto& X = mesh.nodes[static_cast<std::size_t>(n)];
        c0[static_cast<std::size_t>(n)] =
            0.5 + 0.5 * std::sin(3.14159265358979 * X.x()) *
                      std::sin(3.14159265358979 * X.y());
    }
    std::map<int, double> bc;
    for (int n = 0; n < mesh.node_count(); ++n)
        if (mesh.is_boundary[static_cast<std::size_t>(n)]) bc[n] = 0.5;
    const DiffusionSeries series = simulate_diffusion(mesh, D, c0, bc, dt, steps);
    const auto tokens = tokenize_diffusion(mesh, series);
    const auto residuals = diffusion_token_residuals(tokens, D);
    double worst = 0.0;
    for (double r : residuals) worst = std::max(worst, r);

    fs::create_directories(out_dir);
    write_concentration_series(out_dir / "series.bin", series, "demo");
    write_diffusion_dump(out_dir / "tokens.dift", tokens);
    json report{{"steps", steps},
                {"dt", dt},
                {"token_count", tokens.size()},
                {"max_relative_residual", worst},
                {"per_step_residuals", residuals}};
    save_json_file(out_dir / "diffusion_report.json", report);
    std::cout << "diffusion-demo: max relative token residual = " << worst << "\n";
    sidecar.finish(out_dir, "diffusion-demo");
    return 0;
}

int cmd_dump_tokens(const std::string& manifest, const std::string& sample_id,
                    const fs::path& out_dir) {
    Sidecar sidecar;
    const Dataset ds = load_dataset(manifest);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        if (ds.samples[i].id != sample_id) continue;
        const auto views = ds.views_of(i);
        const Context ctx = full_context(views);
        fs::create_directories(out_dir);
        write_token_dump(out_dir / (sample_id + ".icmt"), ctx);
        std::cout << "dump-tokens: " << ctx.token_count() << " tokens -> "
                  << (out_dir / (sample_id + ".icmt")).string() << "\n";
        sidecar.finish(out_dir, "dump-tokens");
        return 0;
    }
    throw MissingArtifact("sample '" + sample_id + "' not in manifest");
}

int cmd_dump_embeddings(const std::string& manifest, const std::string& checkpoint,
                        const std::string& sample_id, const fs::path& out_dir) {
    Sidecar sidecar;
    const Dataset ds = load_dataset(manifest);
    const LoadedModel model = require_checkpoint(checkpoint);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        if (ds.samples[i].id != sample_id) continue;
        const auto views = ds.views_of(i);
        fs::create_directories(out_dir);
        std::ofstream csv(out_dir / (sample_id + "_embeddings.csv"));
        csv << "field,kind,row";
        for (int d = 0; d < model.config.embed_dim; ++d) csv << ",d" << d;
        csv << "\n";
        csv.precision(17);
        for (std::size_t f = 0; f < views.size(); ++f) {
            const std::vector<FieldTokensView> one{views[f]};
            const Context ctx = full_context(one);
            const EmbeddingBatch emb =
                embed_contexts(model.params, model.config, make_context_batch(ctx));
            for (int t = 0; t < emb.token_embeddings.rows; ++t) {
                csv << f << ",token," << t;
                for (int d = 0; d < emb.token_embeddings.cols; ++d)
                    csv << "," << emb.token_embeddings(t, d);
                csv << "\n";
            }
            csv << f << ",mean,0";
            for (int d = 0; d < emb.field_embedding.cols; ++d)
                csv << "," << emb.field_embedding.a[static_cast<std::size_t>(d)];
            csv << "\n";
        }
        std::cout << "dump-embeddings: " << views.size() << " fields\n";
        sidecar.finish(out_dir, "dump-embeddings");
        return 0;
    }
    throw MissingArtifact("sample '" + sample_id + "' not in manifest");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"In-context constitutive identification pipeline"};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    std::string config, out = "out", checkpoint, manifest, sample = "m0", set_name = "set";
    std::string scope = "material", demo_config;
    int threads = 0;
    bool oracle = false;

    app.add_option("--seed", seed, "global random seed");
    app.add_option("--threads", threads, "worker threads (0 = runtime default)");

    auto add_common = [&](CLI::App* cmd, bool needs_out = true) {
        if (needs_out) cmd->add_option("--out", out, "output directory");
    };

    auto* datagen = app.add_subcommand("datagen", "generate a synthetic dataset");
    datagen->add_option("--config", config, "datagen config JSON")->required();
    add_common(datagen);

    auto* train = app.add_subcommand("train", "train the in-context network");
    train->add_option("--config", config, "training config JSON")->required();
    add_common(train);

    auto* eval = app.add_subcommand("eval", "evaluate stress recovery on a dataset");
    eval->add_option("--manifest", manifest, "dataset manifest")->required();
    eval->add_option("--checkpoint", checkpoint, "trained checkpoint");
    eval->add_option("--name", set_name, "report label");
    eval->add_option("--context-scope", scope, "material|field context aggregation");
    eval->add_flag("--oracle", oracle, "use the true gradient instead of the network");
    add_common(eval);

    auto* infer = app.add_subcommand("infer", "uniaxial stress curve from a context");
    infer->add_option("--manifest", manifest)->required();
    infer->add_option("--checkpoint", checkpoint);
    infer->add_option("--sample", sample, "context sample id");
    infer->add_flag("--oracle", oracle);
    add_common(infer);

    auto* fem = app.add_subcommand("fem-demo",
                                   "forward simulation driven by the inferred law");
    fem->add_option("--manifest", manifest)->required();
    fem->add_option("--checkpoint", checkpoint);
    fem->add_option("--sample", sample, "context sample id");
    fem->add_option("--demo-config", demo_config, "target geometry/program JSON")
        ->required();
    fem->add_flag("--oracle", oracle);
    add_common(fem);

    auto* diff = app.add_subcommand("diffusion-demo",
                                    "nonlinear diffusion tokenization demo");
    diff->add_option("--config", config, "optional demo config JSON");
    add_common(diff);

    auto* dumpt = app.add_subcommand("dump-tokens", "write a binary token dump");
    dumpt->add_option("--manifest", manifest)->required();
    dumpt->add_option("--sample", sample);
    add_common(dumpt);

    auto* dumpe = app.add_subcommand("dump-embeddings", "write context embeddings");
    dumpe->add_option("--manifest", manifest)->required();
    dumpe->add_option("--checkpoint", checkpoint)->required();
    dumpe->add_option("--sample", sample);
    add_common(dumpe);

    CLI11_PARSE(app, argc, argv);
    par::set_thread_count(threads);

    try {
        if (app.got_subcommand(datagen)) return cmd_datagen(config, out);
        if (app.got_subcommand(train)) return cmd_train(config, out);
        if (app.got_subcommand(eval))
            return cmd_eval(manifest, checkpoint, out, oracle, scope, set_name);
        if (app.got_subcommand(infer))
            return cmd_infer(manifest, checkpoint, sample, out, oracle);
        if (app.got_subcommand(fem))
            return cmd_fem_demo(manifest, checkpoint, sample, demo_config, out, oracle);
        if (app.got_subcommand(diff)) return cmd_diffusion_demo(config, out);
        if (app.got_subcommand(dumpt)) return cmd_dump_tokens(manifest, sample, out);
        if (app.got_subcommand(dumpe))
            return cmd_dump_embeddings(manifest, checkpoint, sample, out);
    } catch (const MissingArtifact& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
