// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "meteor/digest.hpp"
#include "meteor/encoder.hpp"
#include "meteor/errors.hpp"
#include "meteor/linalg.hpp"
#include "meteor/trace.hpp"

namespace meteor {

inline constexpr const char* kCriterionMutualRedundancy = "mutual_redundancy";

/// Per-encoder two-layer MLP projector into the shared semantic space.
struct ProjectorSpec {
    std::string encoder_id;
    std::size_t in_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t out_dim = 0;
    std::uint64_t seed = 0;
};

struct ProjectorState {
    ProjectorSpec spec;
    FeatureMatrix w1;         // in_dim x hidden_dim
    std::vector<double> b1;   // hidden_dim
    FeatureMatrix w2;         // hidden_dim x out_dim
    std::vector<double> b2;   // out_dim
};

/// Concatenated post-projection tokens; `origin` maps every row back to its
/// (encoder, original token position) pair.
struct FusedTokens {
    FeatureMatrix features;
    std::vector<std::pair<std::string, std::size_t>> origin;
};

namespace detail {

enum ProjectorRole : std::uint64_t {
    kRoleProjW1 = 16,
    kRoleProjB1 = 17,
    kRoleProjW2 = 18,
    kRoleProjB2 = 19,
};

}  // namespace detail

inline ProjectorState build_projector(const ProjectorSpec& spec) {
    if (spec.in_dim == 0 || spec.hidden_dim == 0 || spec.out_dim == 0) {
        throw InvalidConfig("projector '" + spec.encoder_id + "': dims must be positive");
    }
    ProjectorState state;
    state.spec = spec;
    state.w1 = detail::seeded_weight(spec.seed, 0, detail::kRoleProjW1, spec.in_dim,
                                     spec.hidden_dim, spec.in_dim);
    state.w2 = detail::seeded_weight(spec.seed, 0, detail::kRoleProjW2, spec.hidden_dim,
                                     spec.out_dim, spec.hidden_dim);
    state.b1.resize(spec.hidden_dim);
    state.b2.resize(spec.out_dim);
    const double b1_scale = std::sqrt(3.0 / static_cast<double>(spec.in_dim));
    const double b2_scale = std::sqrt(3.0 / static_cast<double>(spec.hidden_dim));
    for (std::size_t i = 0; i < spec.hidden_dim; ++i) {
        state.b1[i] = b1_scale * uniform_symmetric(spec.seed, detail::kRoleProjB1, i);
    }
    for (std::size_t i = 0; i < spec.out_dim; ++i) {
        state.b2[i] = b2_scale * uniform_symmetric(spec.seed, detail::kRoleProjB2, i);
    }
    return state;
}

/// z = W2 * gelu(W1 * g + b1) + b2, applied row-wise.
inline FeatureMatrix project(const ProjectorState& projector, const FeatureMatrix& features) {
    if (features.cols != projector.spec.in_dim) {
        throw InvalidInput("project: feature dim does not match projector in_dim");
    }
    require_finite(features, "project");
    FeatureMatrix hidden = matmul(features, projector.w1);
    for (std::size_t i = 0; i < hidden.rows; ++i) {
        for (std::size_t j = 0; j < hidden.cols; ++j) {
            hidden.at(i, j) = detail::gelu(hidden.at(i, j) + projector.b1[j]);
        }
    }
    FeatureMatrix out = matmul(hidden, projector.w2);
    for (std::size_t i = 0; i < out.rows; ++i) {
        for (std::size_t j = 0; j < out.cols; ++j) {
            out.at(i, j) += projector.b2[j];
        }
    }
    return out;
}

/// Concatenates per-encoder projected tokens along the token axis, tagging
/// each row with its origin.
inline FusedTokens fuse_tokens(
    const std::vector<std::pair<std::string, FeatureMatrix>>& per_encoder,
    const std::vector<std::vector<std::size_t>>& original_indices) {
    if (per_encoder.empty()) {
        throw InvalidInput("fuse_tokens: at least one encoder required");
    }
    if (original_indices.size() != per_encoder.size()) {
        throw InvalidInput("fuse_tokens: one index list per encoder required");
    }
    const std::size_t dim = per_encoder.front().second.cols;
    std::size_t total = 0;
    for (std::size_t e = 0; e < per_encoder.size(); ++e) {
        if (per_encoder[e].second.cols != dim) {
            throw InvalidInput("fuse_tokens: projected dims disagree");
        }
        if (original_indices[e].size() != per_encoder[e].second.rows) {
            throw InvalidInput("fuse_tokens: index list length mismatch");
        }
        total += per_encoder[e].second.rows;
    }
    FusedTokens fused;
    fused.features = FeatureMatrix(total, dim);
    fused.origin.reserve(total);
    std::size_t row = 0;
    for (std::size_t e = 0; e < per_encoder.size(); ++e) {
        const auto& [encoder_id, mat] = per_encoder[e];
        for (std::size_t i = 0; i < mat.rows; ++i, ++row) {
            for (std::size_t j = 0; j < dim; ++j) {
                fused.features.at(row, j) = mat.at(i, j);
            }
            fused.origin.emplace_back(encoder_id, original_indices[e][i]);
        }
    }
    return fused;
}

/// Mutual redundancy per fused row: summed cosine similarity to every token
/// from every *other* encoder. Rows of a single-encoder fusion all score 0.
inline std::vector<double> mutual_redundancy(const FusedTokens& fused) {
    if (fused.origin.size() != fused.features.rows) {
        throw InvalidInput("mutual_redundancy: origin/feature row mismatch");
    }
    if (fused.features.rows == 0) {
        return {};
    }
    require_finite(fused.features, "mutual_redundancy");
    const std::size_t n = fused.features.rows;
    std::vector<double> scores(n, 0.0);
    // Pairwise pass over the upper triangle; S is symmetric so each cross
    // pair contributes to both endpoints.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (fused.origin[i].first == fused.origin[j].first) {
                continue;
            }
            const double s = cosine_similarity(fused.features.row(i), fused.features.row(j));
            scores[i] += s;
            scores[j] += s;
        }
    }
    return scores;
}

/// Keeps the k rows with the smallest mutual redundancy (ties toward the
/// lower row index), preserving row order and origins.
inline std::pair<FusedTokens, TraceEntry> cooperative_prune(const FusedTokens& fused,
                                                            std::size_t k) {
    if (k > fused.features.rows) {
        throw InvalidK("cooperative_prune: k exceeds fused token count");
    }
    const std::vector<double> redundancy = mutual_redundancy(fused);
    std::vector<double> negated(redundancy.size());
    for (std::size_t i = 0; i < redundancy.size(); ++i) {
        negated[i] = -redundancy[i];
    }
    const ScoredIndexList selection = top_k_indices(negated, k);
    const std::vector<std::size_t> keep = sorted_indices(selection);

    FusedTokens pruned;
    pruned.features = gather_rows(fused.features, keep);
    pruned.origin.reserve(keep.size());
    for (std::size_t idx : keep) {
        pruned.origin.push_back(fused.origin[idx]);
    }

    TraceEntry entry;
    entry.stage = 2;
    entry.criterion = kCriterionMutualRedundancy;
    entry.scores_digest = digest_hex(redundancy);
    entry.kept_indices = keep;
    entry.before = fused.features.rows;
    entry.after = keep.size();
    return {std::move(pruned), std::move(entry)};
}

/// Seeded baseline: keep k uniformly random rows.
inline FusedTokens random_prune(const FusedTokens& fused, std::size_t k, std::uint64_t seed) {
    if (k > fused.features.rows) {
        throw InvalidK("random_prune: k exceeds fused token count");
    }
    std::vector<std::size_t> idx(fused.features.rows);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
        const std::size_t j = i + mix_key(seed, 40, i) % (idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    FusedTokens pruned;
    pruned.features = gather_rows(fused.features, idx);
    for (std::size_t i : idx) {
        pruned.origin.push_back(fused.origin[i]);
    }
    return pruned;
}

/// Baseline that prunes within each encoder separately: per-encoder shares of
/// k proportional to token counts (largest remainder), lowest intra-encoder
/// redundancy kept. Cross-encoder overlap is invisible to this strategy.
inline FusedTokens separate_prune(const FusedTokens& fused, std::size_t k) {
    if (k > fused.features.rows) {
        throw InvalidK("separate_prune: k exceeds fused token count");
    }
    // Group rows per encoder in first-appearance order.
    std::vector<std::string> encoder_order;
    std::map<std::string, std::vector<std::size_t>> rows_of;
    for (std::size_t i = 0; i < fused.origin.size(); ++i) {
        const std::string& id = fused.origin[i].first;
        if (rows_of.find(id) == rows_of.end()) {
            encoder_order.push_back(id);
        }
        rows_of[id].push_back(i);
    }
    // Largest-remainder share of k per encoder.
    const double total = static_cast<double>(fused.features.rows);
    std::vector<double> raw(encoder_order.size());
    std::vector<std::size_t> share(encoder_order.size());
    std::size_t floor_sum = 0;
    for (std::size_t e = 0; e < encoder_order.size(); ++e) {
        raw[e] = static_cast<double>(k) *
                 static_cast<double>(rows_of[encoder_order[e]].size()) / total;
        share[e] = static_cast<std::size_t>(std::floor(raw[e]));
        floor_sum += share[e];
    }
    std::vector<std::size_t> order(encoder_order.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double fa = raw[a] - std::floor(raw[a]);
        const double fb = raw[b] - std::floor(raw[b]);
        if (fa != fb) {
            return fa > fb;
        }
        return a < b;
    });
    for (std::size_t i = 0; i < k - floor_sum; ++i) {
        ++share[order[i]];
    }

    std::vector<std::size_t> keep;
    for (std::size_t e = 0; e < encoder_order.size(); ++e) {
        const auto& rows = rows_of[encoder_order[e]];
        const std::size_t quota = std::min(share[e], rows.size());
        std::vector<double> intra(rows.size(), 0.0);
        for (std::size_t a = 0; a < rows.size(); ++a) {
            for (std::size_t b = a + 1; b < rows.size(); ++b) {
                const double s = cosine_similarity(fused.features.row(rows[a]),
                                                   fused.features.row(rows[b]));
                intra[a] += s;
                intra[b] += s;
            }
        }
        std::vector<double> negated(intra.size());
        for (std::size_t i = 0; i < intra.size(); ++i) {
            negated[i] = -intra[i];
        }
        for (std::size_t local : sorted_indices(top_k_indices(negated, quota))) {
            keep.push_back(rows[local]);
        }
    }
    std::sort(keep.begin(), keep.end());
    keep.resize(std::min(keep.size(), k));

    FusedTokens pruned;
    pruned.features = gather_rows(fused.features, keep);
    for (std::size_t i : keep) {
        pruned.origin.push_back(fused.origin[i]);
    }
    return pruned;
}

/// Nuclear-norm diversity of each retained variant.
struct DiversityRow {
    double nuclear = 0.0;
    std::size_t retained = 0;
};

inline std::map<std::string, DiversityRow> diversity_report(
    const FusedTokens& before, const std::map<std::string, FusedTokens>& after_variants) {
    if (after_variants.empty()) {
        throw InvalidInput("diversity_report: at least one variant required");
    }
    std::map<std::string, DiversityRow> table;
    table["unpruned"] = {nuclear_norm(before.features), before.features.rows};
    for (const auto& [label, variant] : after_variants) {
        table[label] = {nuclear_norm(variant.features), variant.features.rows};
    }
    return table;
}

}  // namespace meteor
