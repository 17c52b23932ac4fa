#include "icm/training.hpp"

#include <cmath>
#include <iostream>

#include "icm/errors.hpp"
#include "icm/parallel.hpp"
#include "icm/rng.hpp"

namespace icm {

LossBreakdown equilibrium_loss(const Context& ctx, const Mat& predictions) {
    if (predictions.rows != ctx.query_count() || predictions.cols != 2)
        throw ShapeMismatch("predictions do not match context queries");
    const std::size_t n_tok = ctx.tokens.size();
    const std::size_t n_sub = ctx.subs.size();
    if (n_tok == 0 || n_sub == 0) throw DegeneratePrediction("empty context");

    // Per-token and per-subtoken contributions; fixed order sums.
    std::vector<double> node_sq(n_tok, 0.0), elem_sq(n_tok, 0.0);
    par::for_index(static_cast<std::int64_t>(n_tok), [&](std::int64_t t) {
        const auto& tok = ctx.tokens[static_cast<std::size_t>(t)];
        double fx = 0.0, fy = 0.0, contrib = 0.0;
        for (int s = tok.first; s < tok.first + tok.count; ++s) {
            const auto& sub = ctx.subs[static_cast<std::size_t>(s)];
            const double g1 = predictions(sub.query, 0);
            const double g3 = predictions(sub.query, 1);
            const double ex = sub.A_raw[0] * g1 + sub.A_raw[1] * g3;
            const double ey = sub.A_raw[2] * g1 + sub.A_raw[3] * g3;
            fx += ex;
            fy += ey;
            contrib += ex * ex + ey * ey;
        }
        node_sq[static_cast<std::size_t>(t)] = fx * fx + fy * fy;
        elem_sq[static_cast<std::size_t>(t)] = contrib;
    });

    LossBreakdown out;
    for (double x : node_sq) out.numerator += x;
    for (double x : elem_sq) out.denominator += x;
    out.numerator /= static_cast<double>(n_tok);
    out.denominator /= static_cast<double>(n_sub);
    if (out.denominator < 1e-300)
        throw DegeneratePrediction("element force contributions collapsed to zero");
    out.value = out.numerator / out.denominator;
    return out;
}

Mat equilibrium_loss_cotangent(const Context& ctx, const Mat& predictions,
                               const LossBreakdown& loss) {
    const double n_tok = static_cast<double>(ctx.tokens.size());
    const double n_sub = static_cast<double>(ctx.subs.size());
    Mat d(predictions.rows, predictions.cols);
    // Serial over tokens: multiple tokens may reference the same query row.
    for (const auto& tok : ctx.tokens) {
        double fx = 0.0, fy = 0.0;
        for (int s = tok.first; s < tok.first + tok.count; ++s) {
            const auto& sub = ctx.subs[static_cast<std::size_t>(s)];
            fx += sub.A_raw[0] * predictions(sub.query, 0) +
                  sub.A_raw[1] * predictions(sub.query, 1);
            fy += sub.A_raw[2] * predictions(sub.query, 0) +
                  sub.A_raw[3] * predictions(sub.query, 1);
        }
        for (int s = tok.first; s < tok.first + tok.count; ++s) {
            const auto& sub = ctx.subs[static_cast<std::size_t>(s)];
            const double ex = sub.A_raw[0] * predictions(sub.query, 0) +
                              sub.A_raw[1] * predictions(sub.query, 1);
            const double ey = sub.A_raw[2] * predictions(sub.query, 0) +
                              sub.A_raw[3] * predictions(sub.query, 1);
            // dL/dF_elem = 2 F_node / (N den) - 2 L F_elem / (K den)
            const double cN = 2.0 / (n_tok * loss.denominator);
            const double cK = 2.0 * loss.value / (n_sub * loss.denominator);
            const double dfx = cN * fx - cK * ex;
            const double dfy = cN * fy - cK * ey;
            d(sub.query, 0) += sub.A_raw[0] * dfx + sub.A_raw[2] * dfy;
            d(sub.query, 1) += sub.A_raw[1] * dfx + sub.A_raw[3] * dfy;
        }
    }
    return d;
}

double learning_rate(const ScheduleConfig& s, int step) {
    const double T = static_cast<double>(s.total_steps);
    const double warm = s.warmup_fraction * T;
    const double floor = s.floor_fraction * s.peak_lr;
    if (step <= 0) return 0.0;
    if (static_cast<double>(step) <= warm)
        return s.peak_lr * static_cast<double>(step) / warm;
    const double progress = (static_cast<double>(step) - warm) / (T - warm);
    return floor + (s.peak_lr - floor) *
                       0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

Mat newton_schulz_orthogonalize(const Mat& m, int iterations) {
    const double norm = frobenius_norm(m);
    if (norm < 1e-300) throw NonFinite("newton_schulz on a zero matrix");
    const bool tall = m.rows > m.cols;

    // Work on the wide orientation so the Gram matrix is the smaller one.
    Mat x = m;
    if (tall) {
        Mat t(m.cols, m.rows);
        for (int i = 0; i < m.rows; ++i)
            for (int j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
        x = std::move(t);
    }
    scale_inplace(x, 1.0 / norm);

    for (int it = 0; it < iterations; ++it) {
        const Mat g = matmul_nt(x, x);        // x x^T (r x r)
        const Mat gx = matmul(g, x);          // (x x^T) x
        const Mat ggx = matmul(g, gx);        // (x x^T)^2 x
        Mat next(x.rows, x.cols);
        for (std::size_t i = 0; i < x.size(); ++i)
            next.a[i] = (15.0 * x.a[i] - 10.0 * gx.a[i] + 3.0 * ggx.a[i]) / 8.0;
        x = std::move(next);
        if (!all_finite(x)) throw NonFinite("newton_schulz overflow");
    }

    if (tall) {
        Mat t(m.rows, m.cols);
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j) t(j, i) = x(i, j);
        return t;
    }
    return x;
}

Optimizer::Optimizer(const ParameterSet& params, OptimizerConfig config,
                     std::vector<bool> muon_mask)
    : cfg_(config) {
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        const Mat& t = params.tensors[i];
        m_.emplace_back(t.rows, t.cols);
        v_.emplace_back(t.rows, t.cols);
        buf_.emplace_back(t.rows, t.cols);
        const bool eligible = t.rows > 1 && t.cols > 1;
        const bool masked = muon_mask.empty() ? true : muon_mask[i];
        use_muon_.push_back(cfg_.kind == OptimizerKind::Muon && eligible && masked);
    }
}

void Optimizer::step(ParameterSet& params, const ParameterSet& grads, double lr) {
    if (params.tensors.size() != grads.tensors.size() ||
        params.tensors.size() != m_.size())
        throw ShapeMismatch("optimizer state does not match parameters");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);

    for (std::size_t p = 0; p < params.tensors.size(); ++p) {
        Mat& w = params.tensors[p];
        const Mat& g = grads.tensors[p];
        if (!w.same_shape(g)) throw ShapeMismatch("gradient shape mismatch");

        if (use_muon_[p]) {
            Mat& buf = buf_[p];
            for (std::size_t i = 0; i < w.size(); ++i)
                buf.a[i] = cfg_.momentum * buf.a[i] + g.a[i];
            Mat step_dir = buf;
            if (cfg_.nesterov)
                for (std::size_t i = 0; i < w.size(); ++i)
                    step_dir.a[i] = g.a[i] + cfg_.momentum * buf.a[i];
            if (frobenius_norm(step_dir) > 1e-300) {
                const Mat dir = newton_schulz_orthogonalize(step_dir, cfg_.ns_iterations);
                // Shape factor keeps update RMS comparable across matrix sizes.
                const double shape = std::sqrt(
                    std::max(1.0, static_cast<double>(w.rows) /
                                      static_cast<double>(w.cols)));
                for (std::size_t i = 0; i < w.size(); ++i)
                    w.a[i] -= lr * (shape * dir.a[i] + cfg_.weight_decay * w.a[i]);
            }
        } else {
            Mat& m = m_[p];
            Mat& v = v_[p];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m.a[i] = cfg_.beta1 * m.a[i] + (1.0 - cfg_.beta1) * g.a[i];
                v.a[i] = cfg_.beta2 * v.a[i] + (1.0 - cfg_.beta2) * g.a[i] * g.a[i];
                const double mh = m.a[i] / bc1;
                const double vh = v.a[i] / bc2;
                w.a[i] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) +
                                cfg_.weight_decay * w.a[i]);
            }
        }
    }
}

TrainResult train(std::span<const TrainingSample> samples, const TrainConfig& config,
                  const std::function<void(int, const ParameterSet&)>& checkpoint_hook) {
    if (samples.empty()) throw Error("training needs a nonempty dataset");

    TrainResult result;
    result.params = init_parameters(config.net);
    // Muon drives the internal attention/FF matrices; projections in and out
    // of the latent space and all 1D tensors take AdamW steps.
    std::vector<bool> muon_mask;
    for (const auto& e : make_layout(config.net).entries)
        muon_mask.push_back(e.name.find(".attn.w") != std::string::npos ||
                            e.name.find(".ff.w") != std::string::npos);
    Optimizer opt(result.params, config.opt, muon_mask);
    Rng rng(config.seed);
    const int ckpt_every =
        config.checkpoint_every > 0 ? config.checkpoint_every
                                    : std::max(1, config.steps / 20);

    int bad_streak = 0;
    for (int step = 1; step <= config.steps; ++step) {
        const std::size_t mi = rng.uniform_index(samples.size());
        Rng ctx_rng = rng.fork(0x1c0ffee, static_cast<std::uint64_t>(step));
        Context ctx =
            sample_training_context(samples[mi].fields, config.bounds, ctx_rng);

        const double lr = learning_rate(config.sched, step);
        try {
            const ContextBatch batch = make_context_batch(ctx);
            const Mat queries = make_query_matrix(ctx);
            TracePtr trace;
            const Mat pred = network_forward_trace(result.params, config.net, batch,
                                                   queries, trace);
            const LossBreakdown loss = equilibrium_loss(ctx, pred);
            const Mat cot = equilibrium_loss_cotangent(ctx, pred, loss);
            ParameterSet grads = zero_like(result.params);
            network_backward(result.params, config.net, *trace, cot, grads);
            free_trace(trace);
            opt.step(result.params, grads, lr);
            result.curve.push_back({step, lr, loss.value, loss.numerator,
                                    loss.denominator});
            bad_streak = 0;
        } catch (const NonFiniteActivation& e) {
            ++bad_streak;
            std::cerr << "[train] step " << step << ": " << e.what() << "\n";
            if (bad_streak > 10)
                throw NonFiniteActivation("training aborted: " +
                                          std::to_string(bad_streak) +
                                          " consecutive non-finite steps");
        } catch (const DegeneratePrediction& e) {
            ++bad_streak;
            std::cerr << "[train] step " << step << ": " << e.what() << "\n";
            if (bad_streak > 10)
                throw DegeneratePrediction("training aborted: " +
                                           std::to_string(bad_streak) +
                                           " consecutive degenerate steps");
        }

        if (checkpoint_hook && (step % ckpt_every == 0 || step == config.steps))
            checkpoint_hook(step, result.params);
    }
    return result;
}

}  // namespace icm
