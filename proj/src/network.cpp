#include "icm/network.hpp"

#include <cassert>
#include <cmath>

#include "icm/errors.hpp"
#include "icm/parallel.hpp"
#include "icm/rng.hpp"

namespace icm {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
           x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

}  // namespace

ParamLayout make_layout(const NetworkConfig& c) {
    if (c.embed_dim <= 0 || c.head_count <= 0 || c.embed_dim % c.head_count != 0)
        throw ShapeMismatch("embed_dim must be a positive multiple of head_count");
    if (c.subtoken_blocks < 1 || c.main_blocks < 1 || c.ffn_hidden < 1)
        throw ShapeMismatch("block counts and ffn width must be >= 1");

    ParamLayout L;
    auto add = [&](const std::string& name, int rows, int cols) {
        L.entries.push_back({name, rows, cols});
        return static_cast<int>(L.entries.size()) - 1;
    };
    auto add_attn = [&](const std::string& prefix) {
        ParamLayout::Attn a;
        a.wq = add(prefix + ".attn.wq", c.embed_dim, c.embed_dim);
        a.wk = add(prefix + ".attn.wk", c.embed_dim, c.embed_dim);
        a.wv = add(prefix + ".attn.wv", c.embed_dim, c.embed_dim);
        a.wo = add(prefix + ".attn.wo", c.embed_dim, c.embed_dim);
        a.bq = add(prefix + ".attn.bq", 1, c.embed_dim);
        a.bk = add(prefix + ".attn.bk", 1, c.embed_dim);
        a.bv = add(prefix + ".attn.bv", 1, c.embed_dim);
        a.bo = add(prefix + ".attn.bo", 1, c.embed_dim);
        return a;
    };

    L.sub_proj_w = add("subtoken_proj.weight", c.embed_dim, 6);
    L.sub_proj_b = add("subtoken_proj.bias", 1, c.embed_dim);
    for (int b = 0; b < c.subtoken_blocks; ++b) {
        const std::string p = "sub" + std::to_string(b);
        ParamLayout::SubBlock blk;
        blk.ln_g = add(p + ".ln.gain", 1, c.embed_dim);
        blk.ln_b = add(p + ".ln.bias", 1, c.embed_dim);
        blk.attn = add_attn(p);
        L.sub.push_back(blk);
    }
    L.query_w = add("query_proj.weight", c.embed_dim, 2);
    L.query_b = add("query_proj.bias", 1, c.embed_dim);
    for (int b = 0; b < c.main_blocks; ++b) {
        const std::string p = "main" + std::to_string(b);
        ParamLayout::MainBlock blk;
        blk.ln1_g = add(p + ".ln1.gain", 1, c.embed_dim);
        blk.ln1_b = add(p + ".ln1.bias", 1, c.embed_dim);
        blk.attn = add_attn(p);
        blk.ln2_g = add(p + ".ln2.gain", 1, c.embed_dim);
        blk.ln2_b = add(p + ".ln2.bias", 1, c.embed_dim);
        blk.ff_w1 = add(p + ".ff.w1", c.ffn_hidden, c.embed_dim);
        blk.ff_b1 = add(p + ".ff.b1", 1, c.ffn_hidden);
        blk.ff_w2 = add(p + ".ff.w2", c.embed_dim, c.ffn_hidden);
        blk.ff_b2 = add(p + ".ff.b2", 1, c.embed_dim);
        L.main.push_back(blk);
    }
    L.final_g = add("final_ln.gain", 1, c.embed_dim);
    L.final_b = add("final_ln.bias", 1, c.embed_dim);
    L.out_w = add("out.weight", 2, c.embed_dim);
    L.out_b = add("out.bias", 1, 2);
    return L;
}

ParameterSet init_parameters(const NetworkConfig& config) {
    const ParamLayout L = make_layout(config);
    ParameterSet P;
    Rng rng(config.init_seed);
    for (const auto& e : L.entries) {
        Mat m(e.rows, e.cols);
        if (e.name.find(".gain") != std::string::npos) {
            std::fill(m.a.begin(), m.a.end(), 1.0);
        } else if (e.rows > 1) {  // weight matrices: uniform fan-in
            const double s = 1.0 / std::sqrt(static_cast<double>(e.cols));
            for (auto& x : m.a) x = rng.uniform(-s, s);
        }
        P.tensors.push_back(std::move(m));
    }
    return P;
}

ParameterSet zero_like(const ParameterSet& params) {
    ParameterSet z;
    for (const auto& t : params.tensors) z.tensors.emplace_back(t.rows, t.cols);
    return z;
}

std::size_t parameter_count(const ParameterSet& params) {
    std::size_t n = 0;
    for (const auto& t : params.tensors) n += t.size();
    return n;
}

void validate_shapes(const ParameterSet& params, const NetworkConfig& config) {
    const ParamLayout L = make_layout(config);
    if (params.tensors.size() != L.entries.size())
        throw ShapeMismatch("parameter count does not match config layout");
    for (std::size_t i = 0; i < L.entries.size(); ++i)
        if (params.tensors[i].rows != L.entries[i].rows ||
            params.tensors[i].cols != L.entries[i].cols)
            throw ShapeMismatch("tensor " + L.entries[i].name + " has wrong shape");
}

ContextBatch make_context_batch(const Context& ctx) {
    ContextBatch batch;
    batch.sub_features = Mat(static_cast<int>(ctx.subs.size()), 6);
    for (std::size_t s = 0; s < ctx.subs.size(); ++s) {
        const auto& sub = ctx.subs[s];
        double* row = batch.sub_features.row(static_cast<int>(s));
        for (int k = 0; k < 4; ++k) row[k] = sub.A_bar[static_cast<std::size_t>(k)];
        row[4] = ctx.query_hat[static_cast<std::size_t>(sub.query)][0];
        row[5] = ctx.query_hat[static_cast<std::size_t>(sub.query)][1];
    }
    for (const auto& t : ctx.tokens) batch.token_ranges.emplace_back(t.first, t.count);
    return batch;
}

Mat make_query_matrix(const Context& ctx) {
    Mat q(ctx.query_count(), 2);
    for (int i = 0; i < ctx.query_count(); ++i) {
        q(i, 0) = ctx.query_hat[static_cast<std::size_t>(i)][0];
        q(i, 1) = ctx.query_hat[static_cast<std::size_t>(i)][1];
    }
    return q;
}

// ---------------------------------------------------------------------------
// layers

namespace {

struct LnTrace {
    Mat xhat;
    std::vector<double> rstd;
};

Mat layernorm_forward(const Mat& x, const Mat& gain, const Mat& bias, LnTrace* tr) {
    Mat y(x.rows, x.cols);
    if (tr) {
        tr->xhat = Mat(x.rows, x.cols);
        tr->rstd.assign(static_cast<std::size_t>(x.rows), 0.0);
    }
    const int D = x.cols;
    par::for_index(x.rows, [&](std::int64_t i) {
        const double* r = x.row(static_cast<int>(i));
        double mean = 0.0;
        for (int j = 0; j < D; ++j) mean += r[j];
        mean /= D;
        double var = 0.0;
        for (int j = 0; j < D; ++j) var += (r[j] - mean) * (r[j] - mean);
        var /= D;
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        double* yr = y.row(static_cast<int>(i));
        for (int j = 0; j < D; ++j) {
            const double xh = (r[j] - mean) * rstd;
            if (tr) tr->xhat(static_cast<int>(i), j) = xh;
            yr[j] = gain.a[static_cast<std::size_t>(j)] * xh +
                    bias.a[static_cast<std::size_t>(j)];
        }
        if (tr) tr->rstd[static_cast<std::size_t>(i)] = rstd;
    });
    return y;
}

// Returns dx; accumulates dgain/dbias.
Mat layernorm_backward(const Mat& dy, const Mat& gain, const LnTrace& tr, Mat& dgain,
                       Mat& dbias) {
    const int D = dy.cols;
    Mat dx(dy.rows, dy.cols);
    par::for_index(dy.rows, [&](std::int64_t i) {
        const double* dyr = dy.row(static_cast<int>(i));
        const double* xh = tr.xhat.row(static_cast<int>(i));
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < D; ++j) {
            const double dxh = dyr[j] * gain.a[static_cast<std::size_t>(j)];
            m1 += dxh;
            m2 += dxh * xh[j];
        }
        m1 /= D;
        m2 /= D;
        double* dxr = dx.row(static_cast<int>(i));
        const double rstd = tr.rstd[static_cast<std::size_t>(i)];
        for (int j = 0; j < D; ++j) {
            const double dxh = dyr[j] * gain.a[static_cast<std::size_t>(j)];
            dxr[j] = rstd * (dxh - m1 - xh[j] * m2);
        }
    });
    // Column reductions in fixed row order.
    par::for_index(D, [&](std::int64_t j) {
        double dg = 0.0, db = 0.0;
        for (int i = 0; i < dy.rows; ++i) {
            dg += dy(i, static_cast<int>(j)) * tr.xhat(i, static_cast<int>(j));
            db += dy(i, static_cast<int>(j));
        }
        dgain.a[static_cast<std::size_t>(j)] += dg;
        dbias.a[static_cast<std::size_t>(j)] += db;
    });
    return dx;
}

Mat linear_forward(const Mat& x, const Mat& w, const Mat& b) {
    Mat y = matmul_nt(x, w);
    add_row_vector(y, b);
    return y;
}

// Returns dx; accumulates dw/db.
Mat linear_backward(const Mat& dy, const Mat& x, const Mat& w, Mat& dw, Mat& db) {
    Mat dwl = matmul_tn(dy, x);
    add_inplace(dw, dwl);
    Mat dbl = column_sum(dy);
    add_inplace(db, dbl);
    return matmul(dy, w);
}

struct AttnTrace {
    Mat q, k, v;                // post-projection
    std::vector<Mat> probs;     // per head (Nq x Nk)
    Mat concat;                 // pre output projection
};

// Scaled-dot-product core; per-head softmax weights are materialized only
// when a probs sink is supplied (training), otherwise rows stream with
// O(Nk) scratch (large-context evaluation).
Mat attention_core(const Mat& q, const Mat& k, const Mat& v, int heads,
                   std::vector<Mat>* probs) {
    const int D = q.cols;
    const int dh = D / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int Nq = q.rows, Nk = k.rows;
    Mat concat(Nq, D);
    if (probs) {
        probs->assign(static_cast<std::size_t>(heads), Mat());
        for (int h = 0; h < heads; ++h)
            (*probs)[static_cast<std::size_t>(h)] = Mat(Nq, Nk);
    }
    par::for_index(Nq, [&](std::int64_t ii) {
        const int i = static_cast<int>(ii);
        std::vector<double> w(static_cast<std::size_t>(Nk));
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            const double* qr = q.row(i) + off;
            double mx = -1e308;
            for (int j = 0; j < Nk; ++j) {
                const double* kr = k.row(j) + off;
                double s = 0.0;
                for (int d = 0; d < dh; ++d) s += qr[d] * kr[d];
                s *= scale;
                w[static_cast<std::size_t>(j)] = s;
                mx = std::max(mx, s);
            }
            double z = 0.0;
            for (int j = 0; j < Nk; ++j) {
                const double e = std::exp(w[static_cast<std::size_t>(j)] - mx);
                w[static_cast<std::size_t>(j)] = e;
                z += e;
            }
            const double iz = 1.0 / z;
            double* out = concat.row(i) + off;
            for (int d = 0; d < dh; ++d) out[d] = 0.0;
            for (int j = 0; j < Nk; ++j) {
                const double p = w[static_cast<std::size_t>(j)] * iz;
                if (probs) (*probs)[static_cast<std::size_t>(h)](i, j) = p;
                const double* vr = v.row(j) + off;
                for (int d = 0; d < dh; ++d) out[d] += p * vr[d];
            }
        }
    });
    return concat;
}

// Multi-head attention; queries from q_in, keys/values from kv_in.
Mat attention_forward(const ParameterSet& P, const ParamLayout::Attn& a,
                      const Mat& q_in, const Mat& kv_in, int heads, AttnTrace* tr) {
    Mat q = linear_forward(q_in, P.tensors[static_cast<std::size_t>(a.wq)],
                           P.tensors[static_cast<std::size_t>(a.bq)]);
    Mat k = linear_forward(kv_in, P.tensors[static_cast<std::size_t>(a.wk)],
                           P.tensors[static_cast<std::size_t>(a.bk)]);
    Mat v = linear_forward(kv_in, P.tensors[static_cast<std::size_t>(a.wv)],
                           P.tensors[static_cast<std::size_t>(a.bv)]);
    Mat concat = attention_core(q, k, v, heads, tr ? &tr->probs : nullptr);
    Mat out = linear_forward(concat, P.tensors[static_cast<std::size_t>(a.wo)],
                             P.tensors[static_cast<std::size_t>(a.bo)]);
    if (tr) {
        tr->q = std::move(q);
        tr->k = std::move(k);
        tr->v = std::move(v);
        tr->concat = std::move(concat);
    }
    return out;
}

// Returns (d_q_in, d_kv_in); accumulates parameter gradients.
std::pair<Mat, Mat> attention_backward(const ParameterSet& P, const ParamLayout::Attn& a,
                                       const Mat& q_in, const Mat& kv_in, int heads,
                                       const AttnTrace& tr, const Mat& d_out,
                                       ParameterSet& G) {
    const int D = q_in.cols;
    const int dh = D / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int Nq = tr.q.rows, Nk = tr.k.rows;

    Mat dconcat = linear_backward(d_out, tr.concat,
                                  P.tensors[static_cast<std::size_t>(a.wo)],
                                  G.tensors[static_cast<std::size_t>(a.wo)],
                                  G.tensors[static_cast<std::size_t>(a.bo)]);

    Mat dq(Nq, D), dk(Nk, D), dv(Nk, D);
    // dq rows are independent; dk/dv accumulate over queries, so they are
    // filled per (key, head) with a fixed query order.
    std::vector<Mat> dS(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) dS[static_cast<std::size_t>(h)] = Mat(Nq, Nk);

    par::for_index(Nq, [&](std::int64_t ii) {
        const int i = static_cast<int>(ii);
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            const Mat& W = tr.probs[static_cast<std::size_t>(h)];
            const double* dor = dconcat.row(i) + off;
            // dW_ij = dO_i . V_j ; dS = W o (dW - sum_j W_ij dW_ij)
            double dot = 0.0;
            std::vector<double> dwrow(static_cast<std::size_t>(Nk));
            for (int j = 0; j < Nk; ++j) {
                const double* vr = tr.v.row(j) + off;
                double s = 0.0;
                for (int d = 0; d < dh; ++d) s += dor[d] * vr[d];
                dwrow[static_cast<std::size_t>(j)] = s;
                dot += W(i, j) * s;
            }
            double* dsr = dS[static_cast<std::size_t>(h)].row(i);
            for (int j = 0; j < Nk; ++j)
                dsr[j] = W(i, j) * (dwrow[static_cast<std::size_t>(j)] - dot);
            // dQ_i = sum_j dS_ij K_j * scale
            double* dqr = dq.row(i) + off;
            for (int d = 0; d < dh; ++d) dqr[d] = 0.0;
            for (int j = 0; j < Nk; ++j) {
                const double* kr = tr.k.row(j) + off;
                const double s = dsr[j] * scale;
                for (int d = 0; d < dh; ++d) dqr[d] += s * kr[d];
            }
        }
    });

    par::for_index(Nk, [&](std::int64_t jj) {
        const int j = static_cast<int>(jj);
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            const Mat& W = tr.probs[static_cast<std::size_t>(h)];
            const Mat& dSh = dS[static_cast<std::size_t>(h)];
            double* dkr = dk.row(j) + off;
            double* dvr = dv.row(j) + off;
            for (int d = 0; d < dh; ++d) {
                dkr[d] = 0.0;
                dvr[d] = 0.0;
            }
            for (int i = 0; i < Nq; ++i) {
                const double s = dSh(i, j) * scale;
                const double* qr = tr.q.row(i) + off;
                const double p = W(i, j);
                const double* dor = dconcat.row(i) + off;
                for (int d = 0; d < dh; ++d) {
                    dkr[d] += s * qr[d];
                    dvr[d] += p * dor[d];
                }
            }
        }
    });

    Mat d_q_in = linear_backward(dq, q_in, P.tensors[static_cast<std::size_t>(a.wq)],
                                 G.tensors[static_cast<std::size_t>(a.wq)],
                                 G.tensors[static_cast<std::size_t>(a.bq)]);
    Mat d_kv = linear_backward(dk, kv_in, P.tensors[static_cast<std::size_t>(a.wk)],
                               G.tensors[static_cast<std::size_t>(a.wk)],
                               G.tensors[static_cast<std::size_t>(a.bk)]);
    Mat d_kv2 = linear_backward(dv, kv_in, P.tensors[static_cast<std::size_t>(a.wv)],
                                G.tensors[static_cast<std::size_t>(a.wv)],
                                G.tensors[static_cast<std::size_t>(a.bv)]);
    add_inplace(d_kv, d_kv2);
    return {std::move(d_q_in), std::move(d_kv)};
}

// Self-attention restricted to each token's subtoken range.
struct RaggedAttnTrace {
    Mat q, k, v;
    std::vector<double> probs;       // per token, per head, count x count
    std::vector<int> prob_offset;    // per token
    Mat concat;
};

Mat ragged_attention_forward(const ParameterSet& P, const ParamLayout::Attn& a,
                             const Mat& x, const std::vector<std::pair<int, int>>& ranges,
                             int heads, RaggedAttnTrace* tr) {
    const int D = x.cols;
    const int dh = D / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat q = linear_forward(x, P.tensors[static_cast<std::size_t>(a.wq)],
                           P.tensors[static_cast<std::size_t>(a.bq)]);
    Mat k = linear_forward(x, P.tensors[static_cast<std::size_t>(a.wk)],
                           P.tensors[static_cast<std::size_t>(a.bk)]);
    Mat v = linear_forward(x, P.tensors[static_cast<std::size_t>(a.wv)],
                           P.tensors[static_cast<std::size_t>(a.bv)]);

    Mat concat(x.rows, D);
    if (tr) {
        tr->prob_offset.assign(ranges.size() + 1, 0);
        int total = 0;
        for (std::size_t t = 0; t < ranges.size(); ++t) {
            tr->prob_offset[t] = total;
            total += heads * ranges[t].second * ranges[t].second;
        }
        tr->prob_offset[ranges.size()] = total;
        tr->probs.assign(static_cast<std::size_t>(total), 0.0);
    }

    par::for_index(static_cast<std::int64_t>(ranges.size()), [&](std::int64_t tt) {
        const auto [first, count] = ranges[static_cast<std::size_t>(tt)];
        std::vector<double> w(static_cast<std::size_t>(count));
        double* probs = tr ? tr->probs.data() + tr->prob_offset[static_cast<std::size_t>(tt)]
                           : nullptr;
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            for (int i = 0; i < count; ++i) {
                const double* qr = q.row(first + i) + off;
                double mx = -1e308;
                for (int j = 0; j < count; ++j) {
                    const double* kr = k.row(first + j) + off;
                    double s = 0.0;
                    for (int d = 0; d < dh; ++d) s += qr[d] * kr[d];
                    s *= scale;
                    w[static_cast<std::size_t>(j)] = s;
                    mx = std::max(mx, s);
                }
                double z = 0.0;
                for (int j = 0; j < count; ++j) {
                    const double e = std::exp(w[static_cast<std::size_t>(j)] - mx);
                    w[static_cast<std::size_t>(j)] = e;
                    z += e;
                }
                const double iz = 1.0 / z;
                double* out = concat.row(first + i) + off;
                for (int d = 0; d < dh; ++d) out[d] = 0.0;
                for (int j = 0; j < count; ++j) {
                    const double p = w[static_cast<std::size_t>(j)] * iz;
                    if (probs) probs[(h * count + i) * count + j] = p;
                    const double* vr = v.row(first + j) + off;
                    for (int d = 0; d < dh; ++d) out[d] += p * vr[d];
                }
            }
        }
    });

    Mat out = linear_forward(concat, P.tensors[static_cast<std::size_t>(a.wo)],
                             P.tensors[static_cast<std::size_t>(a.bo)]);
    if (tr) {
        tr->q = std::move(q);
        tr->k = std::move(k);
        tr->v = std::move(v);
        tr->concat = std::move(concat);
    }
    return out;
}

Mat ragged_attention_backward(const ParameterSet& P, const ParamLayout::Attn& a,
                              const Mat& x, const std::vector<std::pair<int, int>>& ranges,
                              int heads, const RaggedAttnTrace& tr, const Mat& d_out,
                              ParameterSet& G) {
    const int D = x.cols;
    const int dh = D / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat dconcat = linear_backward(d_out, tr.concat,
                                  P.tensors[static_cast<std::size_t>(a.wo)],
                                  G.tensors[static_cast<std::size_t>(a.wo)],
                                  G.tensors[static_cast<std::size_t>(a.bo)]);

    Mat dq(x.rows, D), dk(x.rows, D), dv(x.rows, D);
    par::for_index(static_cast<std::int64_t>(ranges.size()), [&](std::int64_t tt) {
        const auto [first, count] = ranges[static_cast<std::size_t>(tt)];
        const double* probs =
            tr.probs.data() + tr.prob_offset[static_cast<std::size_t>(tt)];
        std::vector<double> dwrow(static_cast<std::size_t>(count));
        std::vector<double> ds(static_cast<std::size_t>(count) *
                               static_cast<std::size_t>(count));
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            for (int i = 0; i < count; ++i) {
                const double* dor = dconcat.row(first + i) + off;
                double dot = 0.0;
                for (int j = 0; j < count; ++j) {
                    const double* vr = tr.v.row(first + j) + off;
                    double s = 0.0;
                    for (int d = 0; d < dh; ++d) s += dor[d] * vr[d];
                    dwrow[static_cast<std::size_t>(j)] = s;
                    dot += probs[(h * count + i) * count + j] * s;
                }
                for (int j = 0; j < count; ++j)
                    ds[static_cast<std::size_t>(i * count + j)] =
                        probs[(h * count + i) * count + j] *
                        (dwrow[static_cast<std::size_t>(j)] - dot);
            }
            for (int i = 0; i < count; ++i) {
                double* dqr = dq.row(first + i) + off;
                for (int j = 0; j < count; ++j) {
                    const double s = ds[static_cast<std::size_t>(i * count + j)] * scale;
                    const double* kr = tr.k.row(first + j) + off;
                    for (int d = 0; d < dh; ++d) dqr[d] += s * kr[d];
                }
            }
            for (int j = 0; j < count; ++j) {
                double* dkr = dk.row(first + j) + off;
                double* dvr = dv.row(first + j) + off;
                for (int i = 0; i < count; ++i) {
                    const double s = ds[static_cast<std::size_t>(i * count + j)] * scale;
                    const double p = probs[(h * count + i) * count + j];
                    const double* qr = tr.q.row(first + i) + off;
                    const double* dor = dconcat.row(first + i) + off;
                    for (int d = 0; d < dh; ++d) {
                        dkr[d] += s * qr[d];
                        dvr[d] += p * dor[d];
                    }
                }
            }
        }
    });

    Mat dx = linear_backward(dq, x, P.tensors[static_cast<std::size_t>(a.wq)],
                             G.tensors[static_cast<std::size_t>(a.wq)],
                             G.tensors[static_cast<std::size_t>(a.bq)]);
    Mat dxk = linear_backward(dk, x, P.tensors[static_cast<std::size_t>(a.wk)],
                              G.tensors[static_cast<std::size_t>(a.wk)],
                              G.tensors[static_cast<std::size_t>(a.bk)]);
    Mat dxv = linear_backward(dv, x, P.tensors[static_cast<std::size_t>(a.wv)],
                              G.tensors[static_cast<std::size_t>(a.wv)],
                              G.tensors[static_cast<std::size_t>(a.bv)]);
    add_inplace(dx, dxk);
    add_inplace(dx, dxv);
    return dx;
}

Mat pool_tokens(const Mat& x, const std::vector<std::pair<int, int>>& ranges) {
    Mat pooled(static_cast<int>(ranges.size()), x.cols);
    par::for_index(static_cast<std::int64_t>(ranges.size()), [&](std::int64_t t) {
        const auto [first, count] = ranges[static_cast<std::size_t>(t)];
        double* out = pooled.row(static_cast<int>(t));
        for (int i = 0; i < count; ++i) {
            const double* r = x.row(first + i);
            for (int j = 0; j < x.cols; ++j) out[j] += r[j];
        }
        const double inv = 1.0 / count;
        for (int j = 0; j < x.cols; ++j) out[j] *= inv;
    });
    return pooled;
}

Mat pool_backward(const Mat& dpooled, const std::vector<std::pair<int, int>>& ranges,
                  int rows) {
    Mat dx(rows, dpooled.cols);
    par::for_index(static_cast<std::int64_t>(ranges.size()), [&](std::int64_t t) {
        const auto [first, count] = ranges[static_cast<std::size_t>(t)];
        const double* dp = dpooled.row(static_cast<int>(t));
        const double inv = 1.0 / count;
        for (int i = 0; i < count; ++i) {
            double* r = dx.row(first + i);
            for (int j = 0; j < dpooled.cols; ++j) r[j] = dp[j] * inv;
        }
    });
    return dx;
}

struct FfTrace {
    Mat input;  // LN2 output
    Mat pre;    // pre-activation hidden
    Mat act;    // gelu(pre)
};

Mat ff_forward(const ParameterSet& P, const ParamLayout::MainBlock& blk, const Mat& x,
               FfTrace* tr) {
    Mat pre = linear_forward(x, P.tensors[static_cast<std::size_t>(blk.ff_w1)],
                             P.tensors[static_cast<std::size_t>(blk.ff_b1)]);
    Mat act(pre.rows, pre.cols);
    par::for_index(pre.rows, [&](std::int64_t i) {
        const double* p = pre.row(static_cast<int>(i));
        double* o = act.row(static_cast<int>(i));
        for (int j = 0; j < pre.cols; ++j) o[j] = gelu(p[j]);
    });
    Mat out = linear_forward(act, P.tensors[static_cast<std::size_t>(blk.ff_w2)],
                             P.tensors[static_cast<std::size_t>(blk.ff_b2)]);
    if (tr) {
        tr->input = x;
        tr->pre = std::move(pre);
        tr->act = std::move(act);
    }
    return out;
}

Mat ff_backward(const ParameterSet& P, const ParamLayout::MainBlock& blk,
                const FfTrace& tr, const Mat& d_out, ParameterSet& G) {
    Mat dact = linear_backward(d_out, tr.act,
                               P.tensors[static_cast<std::size_t>(blk.ff_w2)],
                               G.tensors[static_cast<std::size_t>(blk.ff_w2)],
                               G.tensors[static_cast<std::size_t>(blk.ff_b2)]);
    par::for_index(dact.rows, [&](std::int64_t i) {
        double* d = dact.row(static_cast<int>(i));
        const double* p = tr.pre.row(static_cast<int>(i));
        for (int j = 0; j < dact.cols; ++j) d[j] *= gelu_grad(p[j]);
    });
    return linear_backward(dact, tr.input,
                           P.tensors[static_cast<std::size_t>(blk.ff_w1)],
                           G.tensors[static_cast<std::size_t>(blk.ff_w1)],
                           G.tensors[static_cast<std::size_t>(blk.ff_b1)]);
}

}  // namespace

// ---------------------------------------------------------------------------
// whole-network forward/backward

struct NetworkTrace {
    ParamLayout layout;
    ContextBatch batch;  // owned copy of the inputs
    Mat queries;

    Mat sub_embedded;  // after input projection
    struct SubBlockTrace {
        Mat input;
        LnTrace ln;
        Mat h;
        RaggedAttnTrace attn;
    };
    std::vector<SubBlockTrace> sub_blocks;
    Mat sub_final;  // input to pooling

    Mat q_embedded;
    struct MainBlockTrace {
        Mat c_in, q_in;
        LnTrace ln1_c, ln1_q;
        Mat h_c, h_q;
        AttnTrace self_attn, cross_attn;
        Mat c_mid, q_mid;  // after attention residual
        LnTrace ln2_c, ln2_q;
        FfTrace ff_c, ff_q;
    };
    std::vector<MainBlockTrace> main_blocks;
    Mat c_final, q_final;  // main-stack outputs
    LnTrace final_ln_q;
    Mat q_normed;  // LNf(q)
};

namespace {

Mat forward_impl(const ParameterSet& P, const NetworkConfig& cfg,
                 const ContextBatch& batch, const Mat& queries, NetworkTrace* tr) {
    validate_shapes(P, cfg);
    if (batch.sub_features.cols != 6 || queries.cols != 2)
        throw ShapeMismatch("bad input feature widths");
    if (batch.token_ranges.empty())
        throw ShapeMismatch("context must contain at least one token");
    const ParamLayout L = tr ? tr->layout : make_layout(cfg);
    auto check = [&](const Mat& m, const char* where) {
        if (cfg.check_finite) require_finite(m, where);
    };

    // Subtoken encoder.
    Mat x = linear_forward(batch.sub_features, P.tensors[static_cast<std::size_t>(L.sub_proj_w)],
                           P.tensors[static_cast<std::size_t>(L.sub_proj_b)]);
    check(x, "subtoken projection");
    if (tr) tr->sub_embedded = x;
    for (std::size_t b = 0; b < L.sub.size(); ++b) {
        NetworkTrace::SubBlockTrace* bt = nullptr;
        if (tr) {
            tr->sub_blocks.emplace_back();
            bt = &tr->sub_blocks.back();
            bt->input = x;
        }
        Mat h = layernorm_forward(x, P.tensors[static_cast<std::size_t>(L.sub[b].ln_g)],
                                  P.tensors[static_cast<std::size_t>(L.sub[b].ln_b)],
                                  bt ? &bt->ln : nullptr);
        Mat attn = ragged_attention_forward(P, L.sub[b].attn, h, batch.token_ranges,
                                            cfg.head_count, bt ? &bt->attn : nullptr);
        add_inplace(x, attn);
        check(x, "subtoken block");
        if (bt) bt->h = std::move(h);
    }
    if (tr) tr->sub_final = x;

    Mat c = pool_tokens(x, batch.token_ranges);
    Mat q = linear_forward(queries, P.tensors[static_cast<std::size_t>(L.query_w)],
                           P.tensors[static_cast<std::size_t>(L.query_b)]);
    check(q, "query projection");
    if (tr) tr->q_embedded = q;

    for (std::size_t b = 0; b < L.main.size(); ++b) {
        NetworkTrace::MainBlockTrace* bt = nullptr;
        if (tr) {
            tr->main_blocks.emplace_back();
            bt = &tr->main_blocks.back();
            bt->c_in = c;
            bt->q_in = q;
        }
        const auto& blk = L.main[b];
        Mat h_c = layernorm_forward(c, P.tensors[static_cast<std::size_t>(blk.ln1_g)],
                                    P.tensors[static_cast<std::size_t>(blk.ln1_b)],
                                    bt ? &bt->ln1_c : nullptr);
        Mat h_q = layernorm_forward(q, P.tensors[static_cast<std::size_t>(blk.ln1_g)],
                                    P.tensors[static_cast<std::size_t>(blk.ln1_b)],
                                    bt ? &bt->ln1_q : nullptr);
        Mat self = attention_forward(P, blk.attn, h_c, h_c, cfg.head_count,
                                     bt ? &bt->self_attn : nullptr);
        Mat cross = attention_forward(P, blk.attn, h_q, h_c, cfg.head_count,
                                      bt ? &bt->cross_attn : nullptr);
        add_inplace(c, self);
        add_inplace(q, cross);
        check(c, "main block attention (context)");
        check(q, "main block attention (query)");
        if (bt) {
            bt->h_c = std::move(h_c);
            bt->h_q = std::move(h_q);
            bt->c_mid = c;
            bt->q_mid = q;
        }
        Mat h2_c = layernorm_forward(c, P.tensors[static_cast<std::size_t>(blk.ln2_g)],
                                     P.tensors[static_cast<std::size_t>(blk.ln2_b)],
                                     bt ? &bt->ln2_c : nullptr);
        Mat h2_q = layernorm_forward(q, P.tensors[static_cast<std::size_t>(blk.ln2_g)],
                                     P.tensors[static_cast<std::size_t>(blk.ln2_b)],
                                     bt ? &bt->ln2_q : nullptr);
        Mat ff_c = ff_forward(P, blk, h2_c, bt ? &bt->ff_c : nullptr);
        Mat ff_q = ff_forward(P, blk, h2_q, bt ? &bt->ff_q : nullptr);
        add_inplace(c, ff_c);
        add_inplace(q, ff_q);
        check(c, "main block ff (context)");
        check(q, "main block ff (query)");
    }
    if (tr) {
        tr->c_final = c;
        tr->q_final = q;
    }

    Mat qn = layernorm_forward(q, P.tensors[static_cast<std::size_t>(L.final_g)],
                               P.tensors[static_cast<std::size_t>(L.final_b)],
                               tr ? &tr->final_ln_q : nullptr);
    if (tr) tr->q_normed = qn;
    Mat out = linear_forward(qn, P.tensors[static_cast<std::size_t>(L.out_w)],
                             P.tensors[static_cast<std::size_t>(L.out_b)]);
    check(out, "output projection");
    return out;
}

}  // namespace

Mat network_forward(const ParameterSet& P, const NetworkConfig& cfg,
                    const ContextBatch& batch, const Mat& queries) {
    return forward_impl(P, cfg, batch, queries, nullptr);
}

void NetworkTraceDeleter::operator()(NetworkTrace* t) const { delete t; }

Mat network_forward_trace(const ParameterSet& P, const NetworkConfig& cfg,
                          const ContextBatch& batch, const Mat& queries, TracePtr& trace) {
    trace = TracePtr(new NetworkTrace());
    trace->layout = make_layout(cfg);
    trace->batch = batch;
    trace->queries = queries;
    return forward_impl(P, cfg, batch, queries, trace.get());
}

void free_trace(TracePtr& trace) { trace.reset(); }

void network_backward(const ParameterSet& P, const NetworkConfig& cfg,
                      const NetworkTrace& tr, const Mat& d_out, ParameterSet& G) {
    const ParamLayout& L = tr.layout;

    Mat dqn = linear_backward(d_out, tr.q_normed,
                              P.tensors[static_cast<std::size_t>(L.out_w)],
                              G.tensors[static_cast<std::size_t>(L.out_w)],
                              G.tensors[static_cast<std::size_t>(L.out_b)]);
    Mat dq = layernorm_backward(dqn, P.tensors[static_cast<std::size_t>(L.final_g)],
                                tr.final_ln_q,
                                G.tensors[static_cast<std::size_t>(L.final_g)],
                                G.tensors[static_cast<std::size_t>(L.final_b)]);
    Mat dc(tr.c_final.rows, tr.c_final.cols);

    for (int b = static_cast<int>(L.main.size()) - 1; b >= 0; --b) {
        const auto& blk = L.main[static_cast<std::size_t>(b)];
        const auto& bt = tr.main_blocks[static_cast<std::size_t>(b)];

        // FF residual.
        Mat dh2_q = ff_backward(P, blk, bt.ff_q, dq, G);
        Mat dh2_c = ff_backward(P, blk, bt.ff_c, dc, G);
        Mat dq_mid = layernorm_backward(dh2_q,
                                        P.tensors[static_cast<std::size_t>(blk.ln2_g)],
                                        bt.ln2_q,
                                        G.tensors[static_cast<std::size_t>(blk.ln2_g)],
                                        G.tensors[static_cast<std::size_t>(blk.ln2_b)]);
        Mat dc_mid = layernorm_backward(dh2_c,
                                        P.tensors[static_cast<std::size_t>(blk.ln2_g)],
                                        bt.ln2_c,
                                        G.tensors[static_cast<std::size_t>(blk.ln2_g)],
                                        G.tensors[static_cast<std::size_t>(blk.ln2_b)]);
        add_inplace(dq_mid, dq);
        add_inplace(dc_mid, dc);

        // Attention residual: cross (queries) and self (context), shared
        // parameters and shared kv source h_c.
        auto [dh_q, dh_c_from_cross] = attention_backward(
            P, blk.attn, bt.h_q, bt.h_c, cfg.head_count, bt.cross_attn, dq_mid, G);
        auto [dh_c_self, dh_c_from_self_kv] = attention_backward(
            P, blk.attn, bt.h_c, bt.h_c, cfg.head_count, bt.self_attn, dc_mid, G);
        add_inplace(dh_c_self, dh_c_from_self_kv);
        add_inplace(dh_c_self, dh_c_from_cross);

        Mat dq_in = layernorm_backward(dh_q,
                                       P.tensors[static_cast<std::size_t>(blk.ln1_g)],
                                       bt.ln1_q,
                                       G.tensors[static_cast<std::size_t>(blk.ln1_g)],
                                       G.tensors[static_cast<std::size_t>(blk.ln1_b)]);
        Mat dc_in = layernorm_backward(dh_c_self,
                                       P.tensors[static_cast<std::size_t>(blk.ln1_g)],
                                       bt.ln1_c,
                                       G.tensors[static_cast<std::size_t>(blk.ln1_g)],
                                       G.tensors[static_cast<std::size_t>(blk.ln1_b)]);
        add_inplace(dq_in, dq_mid);
        add_inplace(dc_in, dc_mid);
        dq = std::move(dq_in);
        dc = std::move(dc_in);
    }

    // Query projection.
    {
        Mat dq_feat = linear_backward(dq, tr.queries,
                                      P.tensors[static_cast<std::size_t>(L.query_w)],
                                      G.tensors[static_cast<std::size_t>(L.query_w)],
                                      G.tensors[static_cast<std::size_t>(L.query_b)]);
        (void)dq_feat;  // inputs are data, not parameters
    }

    // Pooling back into the subtoken stream.
    Mat dx = pool_backward(dc, tr.batch.token_ranges, tr.sub_final.rows);

    for (int b = static_cast<int>(L.sub.size()) - 1; b >= 0; --b) {
        const auto& blk = L.sub[static_cast<std::size_t>(b)];
        const auto& bt = tr.sub_blocks[static_cast<std::size_t>(b)];
        Mat dh = ragged_attention_backward(P, blk.attn, bt.h, tr.batch.token_ranges,
                                           cfg.head_count, bt.attn, dx, G);
        Mat dx_in = layernorm_backward(dh, P.tensors[static_cast<std::size_t>(blk.ln_g)],
                                       bt.ln,
                                       G.tensors[static_cast<std::size_t>(blk.ln_g)],
                                       G.tensors[static_cast<std::size_t>(blk.ln_b)]);
        add_inplace(dx, dx_in);
    }

    Mat dfeat = linear_backward(dx, tr.batch.sub_features,
                                P.tensors[static_cast<std::size_t>(L.sub_proj_w)],
                                G.tensors[static_cast<std::size_t>(L.sub_proj_w)],
                                G.tensors[static_cast<std::size_t>(L.sub_proj_b)]);
    (void)dfeat;
}

ContextCache build_context_cache(const ParameterSet& P, const NetworkConfig& cfg,
                                 const ContextBatch& batch) {
    validate_shapes(P, cfg);
    const ParamLayout L = make_layout(cfg);
    ContextCache cache;

    Mat x = linear_forward(batch.sub_features,
                           P.tensors[static_cast<std::size_t>(L.sub_proj_w)],
                           P.tensors[static_cast<std::size_t>(L.sub_proj_b)]);
    for (std::size_t b = 0; b < L.sub.size(); ++b) {
        Mat h = layernorm_forward(x, P.tensors[static_cast<std::size_t>(L.sub[b].ln_g)],
                                  P.tensors[static_cast<std::size_t>(L.sub[b].ln_b)],
                                  nullptr);
        Mat attn = ragged_attention_forward(P, L.sub[b].attn, h, batch.token_ranges,
                                            cfg.head_count, nullptr);
        add_inplace(x, attn);
    }
    Mat c = pool_tokens(x, batch.token_ranges);
    for (std::size_t b = 0; b < L.main.size(); ++b) {
        const auto& blk = L.main[b];
        Mat h_c = layernorm_forward(c, P.tensors[static_cast<std::size_t>(blk.ln1_g)],
                                    P.tensors[static_cast<std::size_t>(blk.ln1_b)], nullptr);
        Mat k = linear_forward(h_c, P.tensors[static_cast<std::size_t>(blk.attn.wk)],
                               P.tensors[static_cast<std::size_t>(blk.attn.bk)]);
        Mat v = linear_forward(h_c, P.tensors[static_cast<std::size_t>(blk.attn.wv)],
                               P.tensors[static_cast<std::size_t>(blk.attn.bv)]);
        Mat q = linear_forward(h_c, P.tensors[static_cast<std::size_t>(blk.attn.wq)],
                               P.tensors[static_cast<std::size_t>(blk.attn.bq)]);
        Mat concat = attention_core(q, k, v, cfg.head_count, nullptr);
        Mat self = linear_forward(concat, P.tensors[static_cast<std::size_t>(blk.attn.wo)],
                                  P.tensors[static_cast<std::size_t>(blk.attn.bo)]);
        add_inplace(c, self);
        Mat h2 = layernorm_forward(c, P.tensors[static_cast<std::size_t>(blk.ln2_g)],
                                   P.tensors[static_cast<std::size_t>(blk.ln2_b)], nullptr);
        Mat ff = ff_forward(P, blk, h2, nullptr);
        add_inplace(c, ff);
        cache.keys.push_back(std::move(k));
        cache.values.push_back(std::move(v));
    }
    return cache;
}

Mat query_forward_cached(const ParameterSet& P, const NetworkConfig& cfg,
                         const ContextCache& cache, const Mat& queries) {
    const ParamLayout L = make_layout(cfg);
    if (cache.keys.size() != L.main.size())
        throw ShapeMismatch("context cache does not match the configured depth");

    Mat q = linear_forward(queries, P.tensors[static_cast<std::size_t>(L.query_w)],
                           P.tensors[static_cast<std::size_t>(L.query_b)]);
    for (std::size_t b = 0; b < L.main.size(); ++b) {
        const auto& blk = L.main[b];
        Mat h_q = layernorm_forward(q, P.tensors[static_cast<std::size_t>(blk.ln1_g)],
                                    P.tensors[static_cast<std::size_t>(blk.ln1_b)], nullptr);
        Mat qp = linear_forward(h_q, P.tensors[static_cast<std::size_t>(blk.attn.wq)],
                                P.tensors[static_cast<std::size_t>(blk.attn.bq)]);
        Mat concat = attention_core(qp, cache.keys[b], cache.values[b], cfg.head_count,
                                    nullptr);
        Mat cross = linear_forward(concat, P.tensors[static_cast<std::size_t>(blk.attn.wo)],
                                   P.tensors[static_cast<std::size_t>(blk.attn.bo)]);
        add_inplace(q, cross);
        Mat h2 = layernorm_forward(q, P.tensors[static_cast<std::size_t>(blk.ln2_g)],
                                   P.tensors[static_cast<std::size_t>(blk.ln2_b)], nullptr);
        Mat ff = ff_forward(P, blk, h2, nullptr);
        add_inplace(q, ff);
    }
    Mat qn = layernorm_forward(q, P.tensors[static_cast<std::size_t>(L.final_g)],
                               P.tensors[static_cast<std::size_t>(L.final_b)], nullptr);
    Mat out = linear_forward(qn, P.tensors[static_cast<std::size_t>(L.out_w)],
                             P.tensors[static_cast<std::size_t>(L.out_b)]);
    if (cfg.check_finite) require_finite(out, "output projection");
    return out;
}

EmbeddingBatch embed_contexts(const ParameterSet& P, const NetworkConfig& cfg,
                              const ContextBatch& batch) {
    validate_shapes(P, cfg);
    const ParamLayout L = make_layout(cfg);

    Mat x = linear_forward(batch.sub_features,
                           P.tensors[static_cast<std::size_t>(L.sub_proj_w)],
                           P.tensors[static_cast<std::size_t>(L.sub_proj_b)]);
    for (std::size_t b = 0; b < L.sub.size(); ++b) {
        Mat h = layernorm_forward(x, P.tensors[static_cast<std::size_t>(L.sub[b].ln_g)],
                                  P.tensors[static_cast<std::size_t>(L.sub[b].ln_b)],
                                  nullptr);
        Mat attn = ragged_attention_forward(P, L.sub[b].attn, h, batch.token_ranges,
                                            cfg.head_count, nullptr);
        add_inplace(x, attn);
    }
    Mat c = pool_tokens(x, batch.token_ranges);
    for (std::size_t b = 0; b < L.main.size(); ++b) {
        const auto& blk = L.main[b];
        Mat h_c = layernorm_forward(c, P.tensors[static_cast<std::size_t>(blk.ln1_g)],
                                    P.tensors[static_cast<std::size_t>(blk.ln1_b)], nullptr);
        Mat self = attention_forward(P, blk.attn, h_c, h_c, cfg.head_count, nullptr);
        add_inplace(c, self);
        Mat h2 = layernorm_forward(c, P.tensors[static_cast<std::size_t>(blk.ln2_g)],
                                   P.tensors[static_cast<std::size_t>(blk.ln2_b)], nullptr);
        Mat ff = ff_forward(P, blk, h2, nullptr);
        add_inplace(c, ff);
    }
    Mat cf = layernorm_forward(c, P.tensors[static_cast<std::size_t>(L.final_g)],
                               P.tensors[static_cast<std::size_t>(L.final_b)], nullptr);

    EmbeddingBatch out;
    out.field_embedding = Mat(1, cf.cols);
    for (int i = 0; i < cf.rows; ++i)
        for (int j = 0; j < cf.cols; ++j) out.field_embedding.a[static_cast<std::size_t>(j)] += cf(i, j);
    for (int j = 0; j < cf.cols; ++j)
        out.field_embedding.a[static_cast<std::size_t>(j)] /= cf.rows;
    out.token_embeddings = std::move(cf);
    return out;
}

}  // namespace icm
