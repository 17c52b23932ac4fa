#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "icm/field.hpp"
#include "icm/materials.hpp"
#include "icm/mesh.hpp"
#include "icm/rng.hpp"

namespace icm {

// Raw per-node equilibrium record: one (A^{n,e}, I^e) pair per adjacent
// element, before any normalization.
struct RawSubtoken {
    int element = 0;
    Eigen::Matrix2d A;
    Invariants2D inv;
};

struct RawToken {
    int node = 0;
    std::vector<RawSubtoken> subs;
};

// One token per interior node of the field.
std::vector<RawToken> tokenize_field(const Mesh& mesh, const StrainField& field);

// Row-wise root-sum-square normalization of a token's coefficient matrices.
// Throws ZeroRowNorm when a direction carries no signal.
struct NormalizedToken {
    std::vector<std::array<double, 4>> A_bar;  // row-major per subtoken
    std::array<double, 2> eta{};               // row norms
};
NormalizedToken normalize_A(const RawToken& token);

// RMS deviation of the invariant states from the undeformed reference
// I0 = (2, 1); degenerate collections fall back to 1.
double context_invariant_scale(std::span<const Invariants2D> states);

// Tokenized field plus the sampling keys used by hierarchical context
// assembly.
struct FieldTokensView {
    int field_id = 0;  // unique within the context source set
    int geometry = 0;
    int mode = 0;
    int step = 1;  // 1-based loading magnitude index
    const std::vector<RawToken>* tokens = nullptr;
};

struct SamplingBounds {
    int min_fields = 1;
    int max_fields = 5;
    int min_tokens = 100;
    int max_tokens = 400;
};

struct ContextSubtoken {
    std::array<double, 4> A_raw;  // row-major
    std::array<double, 4> A_bar;
    int query = 0;  // index into the deduplicated query state list
};

struct ContextToken {
    int field_id = 0;
    int node = 0;
    int first = 0;  // range into Context::subs
    int count = 0;
};

// Assembled physical context: normalized tokens plus the deduplicated
// element invariant states they reference (the training queries).
struct Context {
    std::vector<ContextToken> tokens;
    std::vector<ContextSubtoken> subs;
    std::vector<Invariants2D> query_raw;
    std::vector<std::array<double, 2>> query_hat;
    double inv_scale = 1.0;

    std::string material_id;
    std::vector<int> field_ids;
    std::uint64_t seed = 0;
    int dropped_tokens = 0;

    int token_count() const { return static_cast<int>(tokens.size()); }
    int query_count() const { return static_cast<int>(query_raw.size()); }

    // Normalize an arbitrary invariant state with this context's scale.
    std::array<double, 2> normalize_query(Invariants2D inv) const {
        return {(inv.i1 - 2.0) / inv_scale, (inv.i3 - 1.0) / inv_scale};
    }
};

// Every token of every field, no subsampling (test-time protocol).
Context full_context(std::span<const FieldTokensView> fields);

// Context from an explicit (field, token index) selection.
Context assemble_context(std::span<const FieldTokensView> fields,
                         std::span<const std::pair<int, int>> picks);

// Hierarchical training-context sampling: uniform number of geometries,
// loading modes and per-mode magnitude cap, then 1..max_fields fields from
// the pool, then a uniform token count from the selected fields.
Context sample_training_context(std::span<const FieldTokensView> fields,
                                const SamplingBounds& bounds, Rng& rng);

}  // namespace icm
