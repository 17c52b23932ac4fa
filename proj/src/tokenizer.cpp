#include "icm/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>

#include "icm/assembly.hpp"
#include "icm/errors.hpp"
#include "icm/parallel.hpp"

namespace icm {

std::vector<RawToken> tokenize_field(const Mesh& mesh, const StrainField& field) {
    const FieldKinematics kin = compute_field_kinematics(mesh, field);
    std::vector<RawToken> tokens(mesh.interior_nodes.size());
    par::for_index(static_cast<std::int64_t>(mesh.interior_nodes.size()),
                   [&](std::int64_t i) {
                       const int n = mesh.interior_nodes[static_cast<std::size_t>(i)];
                       RawToken tok;
                       tok.node = n;
                       for (int e : mesh.node_elements[static_cast<std::size_t>(n)]) {
                           const auto& t = mesh.triangles[static_cast<std::size_t>(e)];
                           int v = 0;
                           while (t[static_cast<std::size_t>(v)] != n) ++v;
                           RawSubtoken sub;
                           sub.element = e;
                           sub.A = coefficient_matrix(kin.elems[static_cast<std::size_t>(e)], v);
                           sub.inv = kin.inv[static_cast<std::size_t>(e)];
                           tok.subs.push_back(sub);
                       }
                       tokens[static_cast<std::size_t>(i)] = std::move(tok);
                   });
    return tokens;
}

NormalizedToken normalize_A(const RawToken& token) {
    NormalizedToken out;
    double s0 = 0.0, s1 = 0.0;
    for (const auto& sub : token.subs) {
        s0 += sub.A(0, 0) * sub.A(0, 0) + sub.A(0, 1) * sub.A(0, 1);
        s1 += sub.A(1, 0) * sub.A(1, 0) + sub.A(1, 1) * sub.A(1, 1);
    }
    out.eta = {std::sqrt(s0), std::sqrt(s1)};
    if (out.eta[0] <= 1e-300 || out.eta[1] <= 1e-300)
        throw ZeroRowNorm("token at node " + std::to_string(token.node) +
                          " has a zero force row");
    for (const auto& sub : token.subs)
        out.A_bar.push_back({sub.A(0, 0) / out.eta[0], sub.A(0, 1) / out.eta[0],
                             sub.A(1, 0) / out.eta[1], sub.A(1, 1) / out.eta[1]});
    return out;
}

double context_invariant_scale(std::span<const Invariants2D> states) {
    if (states.empty()) return 1.0;
    double acc = 0.0;
    for (const auto& s : states) {
        const double d1 = s.i1 - 2.0;
        const double d3 = s.i3 - 1.0;
        acc += d1 * d1 + d3 * d3;
    }
    const double rms = std::sqrt(acc / static_cast<double>(states.size()));
    return rms < 1e-12 ? 1.0 : rms;
}

Context assemble_context(std::span<const FieldTokensView> fields,
                         std::span<const std::pair<int, int>> picks) {
    Context ctx;
    std::set<int> used_fields;

    // Pass 1: collect invariant states of every kept subtoken for the scale.
    std::vector<Invariants2D> states;
    std::vector<NormalizedToken> norms;
    std::vector<bool> kept(picks.size(), true);
    norms.resize(picks.size());
    for (std::size_t p = 0; p < picks.size(); ++p) {
        const auto& view = fields[static_cast<std::size_t>(picks[p].first)];
        const RawToken& tok = (*view.tokens)[static_cast<std::size_t>(picks[p].second)];
        try {
            norms[p] = normalize_A(tok);
        } catch (const ZeroRowNorm&) {
            kept[p] = false;
            ++ctx.dropped_tokens;
            continue;
        }
        for (const auto& sub : tok.subs) states.push_back(sub.inv);
    }
    if (ctx.dropped_tokens > 0)
        std::cerr << "[tokenizer] warning: dropped " << ctx.dropped_tokens
                  << " token(s) with zero row norm\n";
    ctx.inv_scale = context_invariant_scale(states);

    // Pass 2: assemble tokens, deduplicating query states per (field, element).
    std::map<std::pair<int, int>, int> query_of;
    for (std::size_t p = 0; p < picks.size(); ++p) {
        if (!kept[p]) continue;
        const auto& view = fields[static_cast<std::size_t>(picks[p].first)];
        const RawToken& tok = (*view.tokens)[static_cast<std::size_t>(picks[p].second)];
        used_fields.insert(view.field_id);

        ContextToken ct;
        ct.field_id = view.field_id;
        ct.node = tok.node;
        ct.first = static_cast<int>(ctx.subs.size());
        ct.count = static_cast<int>(tok.subs.size());
        for (std::size_t s = 0; s < tok.subs.size(); ++s) {
            const auto& sub = tok.subs[s];
            const auto key = std::make_pair(view.field_id, sub.element);
            auto it = query_of.find(key);
            if (it == query_of.end()) {
                it = query_of.emplace(key, ctx.query_count()).first;
                ctx.query_raw.push_back(sub.inv);
                ctx.query_hat.push_back(ctx.normalize_query(sub.inv));
            }
            ContextSubtoken cs;
            cs.A_raw = {sub.A(0, 0), sub.A(0, 1), sub.A(1, 0), sub.A(1, 1)};
            cs.A_bar = norms[p].A_bar[s];
            cs.query = it->second;
            ctx.subs.push_back(cs);
        }
        ctx.tokens.push_back(ct);
    }
    ctx.field_ids.assign(used_fields.begin(), used_fields.end());
    return ctx;
}

Context full_context(std::span<const FieldTokensView> fields) {
    std::vector<std::pair<int, int>> picks;
    for (std::size_t f = 0; f < fields.size(); ++f)
        for (std::size_t t = 0; t < fields[f].tokens->size(); ++t)
            picks.emplace_back(static_cast<int>(f), static_cast<int>(t));
    return assemble_context(fields, picks);
}

Context sample_training_context(std::span<const FieldTokensView> fields,
                                const SamplingBounds& bounds, Rng& rng) {
    if (fields.empty()) throw InsufficientTokens("no fields to sample from");

    std::set<int> geom_keys, mode_keys;
    std::map<int, int> max_step;
    for (const auto& f : fields) {
        geom_keys.insert(f.geometry);
        mode_keys.insert(f.mode);
        max_step[f.mode] = std::max(max_step[f.mode], f.step);
    }
    const std::vector<int> geoms(geom_keys.begin(), geom_keys.end());
    const std::vector<int> modes(mode_keys.begin(), mode_keys.end());

    const int n_g = static_cast<int>(rng.uniform_int(1, static_cast<int>(geoms.size())));
    std::vector<std::uint64_t> gsel;
    rng.sample_without_replacement(geoms.size(), static_cast<std::uint64_t>(n_g),
                                   std::back_inserter(gsel));
    std::set<int> chosen_geoms;
    for (auto i : gsel) chosen_geoms.insert(geoms[static_cast<std::size_t>(i)]);

    const int n_m = static_cast<int>(rng.uniform_int(1, static_cast<int>(modes.size())));
    std::vector<std::uint64_t> msel;
    rng.sample_without_replacement(modes.size(), static_cast<std::uint64_t>(n_m),
                                   std::back_inserter(msel));
    std::map<int, int> step_cap;
    for (auto i : msel) {
        const int mode = modes[static_cast<std::size_t>(i)];
        step_cap[mode] = static_cast<int>(rng.uniform_int(1, max_step[mode]));
    }

    std::vector<int> pool;
    for (std::size_t f = 0; f < fields.size(); ++f) {
        const auto& v = fields[f];
        const auto it = step_cap.find(v.mode);
        if (chosen_geoms.count(v.geometry) && it != step_cap.end() && v.step <= it->second)
            pool.push_back(static_cast<int>(f));
    }
    if (pool.empty())
        for (std::size_t f = 0; f < fields.size(); ++f) pool.push_back(static_cast<int>(f));

    const int want_fields =
        static_cast<int>(rng.uniform_int(bounds.min_fields, bounds.max_fields));
    const int n_f = std::min<int>(want_fields, static_cast<int>(pool.size()));
    std::vector<std::uint64_t> fsel;
    rng.sample_without_replacement(pool.size(), static_cast<std::uint64_t>(n_f),
                                   std::back_inserter(fsel));

    std::vector<std::pair<int, int>> candidates;
    for (auto i : fsel) {
        const int f = pool[static_cast<std::size_t>(i)];
        for (std::size_t t = 0; t < fields[static_cast<std::size_t>(f)].tokens->size(); ++t)
            candidates.emplace_back(f, static_cast<int>(t));
    }

    int want_tokens =
        static_cast<int>(rng.uniform_int(bounds.min_tokens, bounds.max_tokens));
    if (static_cast<int>(candidates.size()) < bounds.min_tokens) {
        static bool warned = false;
        if (!warned) {
            std::cerr << "[tokenizer] warning: only " << candidates.size()
                      << " tokens available, below the lower sampling bound "
                      << bounds.min_tokens << "\n";
            warned = true;
        }
    }
    want_tokens = std::min<int>(want_tokens, static_cast<int>(candidates.size()));

    std::vector<std::uint64_t> tsel;
    rng.sample_without_replacement(candidates.size(),
                                   static_cast<std::uint64_t>(want_tokens),
                                   std::back_inserter(tsel));
    std::vector<std::pair<int, int>> picks;
    picks.reserve(tsel.size());
    for (auto i : tsel) picks.push_back(candidates[static_cast<std::size_t>(i)]);

    return assemble_context(fields, picks);
}

}  // namespace icm
