#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "icm/la.hpp"
#include "icm/tokenizer.hpp"

namespace icm {

struct NetworkConfig {
    int embed_dim = 64;
    int head_count = 4;
    int subtoken_blocks = 1;  // attention-only blocks over a token's subtokens
    int main_blocks = 3;      // shared-parameter self/cross attention + FF
    int ffn_hidden = 128;
    std::uint64_t init_seed = 1;
    bool check_finite = true;
};

// Flat named-tensor parameter store; layout is a pure function of the config.
struct ParameterSet {
    std::vector<Mat> tensors;
};

struct ParamLayout {
    struct Entry {
        std::string name;
        int rows = 0, cols = 0;
    };
    struct Attn {
        int wq, wk, wv, wo, bq, bk, bv, bo;
    };
    struct SubBlock {
        int ln_g, ln_b;
        Attn attn;
    };
    struct MainBlock {
        int ln1_g, ln1_b;
        Attn attn;
        int ln2_g, ln2_b, ff_w1, ff_b1, ff_w2, ff_b2;
    };

    std::vector<Entry> entries;
    int sub_proj_w = 0, sub_proj_b = 0;
    std::vector<SubBlock> sub;
    int query_w = 0, query_b = 0;
    std::vector<MainBlock> main;
    int final_g = 0, final_b = 0;
    int out_w = 0, out_b = 0;
};

ParamLayout make_layout(const NetworkConfig& config);
ParameterSet init_parameters(const NetworkConfig& config);
ParameterSet zero_like(const ParameterSet& params);
std::size_t parameter_count(const ParameterSet& params);
void validate_shapes(const ParameterSet& params, const NetworkConfig& config);

// Network-ready views of a Context.
struct ContextBatch {
    Mat sub_features;  // (total subtokens x 6): A_bar row-major, then I_hat
    std::vector<std::pair<int, int>> token_ranges;
};
ContextBatch make_context_batch(const Context& ctx);
Mat make_query_matrix(const Context& ctx);  // (M x 2) normalized query states

// Opaque forward trace consumed by the backward pass.
struct NetworkTrace;
struct NetworkTraceDeleter {
    void operator()(NetworkTrace* t) const;
};
using TracePtr = std::unique_ptr<NetworkTrace, NetworkTraceDeleter>;

// Batched prediction of the scaled energy gradient at the query states.
// Without a trace the attention streams row-wise (large-context eval).
Mat network_forward(const ParameterSet& params, const NetworkConfig& config,
                    const ContextBatch& batch, const Mat& queries);
Mat network_forward_trace(const ParameterSet& params, const NetworkConfig& config,
                          const ContextBatch& batch, const Mat& queries, TracePtr& trace);
void network_backward(const ParameterSet& params, const NetworkConfig& config,
                      const NetworkTrace& trace, const Mat& d_out, ParameterSet& grads);
void free_trace(TracePtr& trace);

// Final-layer context-token embeddings plus their mean (one row appended).
struct EmbeddingBatch {
    Mat token_embeddings;  // (T x D)
    Mat field_embedding;   // (1 x D)
};
EmbeddingBatch embed_contexts(const ParameterSet& params, const NetworkConfig& config,
                              const ContextBatch& batch);

// The context stream does not depend on the queries, so repeated evaluation
// against one context reuses the per-block key/value matrices.
struct ContextCache {
    std::vector<Mat> keys;    // per main block
    std::vector<Mat> values;  // per main block
};
ContextCache build_context_cache(const ParameterSet& params, const NetworkConfig& config,
                                 const ContextBatch& batch);
Mat query_forward_cached(const ParameterSet& params, const NetworkConfig& config,
                         const ContextCache& cache, const Mat& queries);

}  // namespace icm
