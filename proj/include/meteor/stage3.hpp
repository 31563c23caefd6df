// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "meteor/decoder.hpp"
#include "meteor/digest.hpp"
#include "meteor/errors.hpp"
#include "meteor/linalg.hpp"
#include "meteor/stage2.hpp"
#include "meteor/trace.hpp"

namespace meteor {

inline constexpr const char* kCriterionTextImportance = "text_importance";

/// Attention of the last instruction token onto the live visual tokens, one
/// column per head. Per-head mass over the *whole* context is 1, so each
/// column sums to at most 1.
struct CrossAttentionSnapshot {
    FeatureMatrix attn;  // N visual rows x H heads
    std::size_t layer_idx = 0;
    std::vector<double> visual_mass_per_head;
};

inline void validate(const CrossAttentionSnapshot& snapshot) {
    constexpr double kSlack = 1e-9;
    if (snapshot.visual_mass_per_head.size() != snapshot.attn.cols) {
        throw InvalidInput("CrossAttentionSnapshot: one mass entry per head required");
    }
    for (std::size_t h = 0; h < snapshot.attn.cols; ++h) {
        double sum = 0.0;
        for (std::size_t i = 0; i < snapshot.attn.rows; ++i) {
            const double a = snapshot.attn.at(i, h);
            if (!(a >= 0.0) || !std::isfinite(a)) {
                throw InvalidInput("CrossAttentionSnapshot: attention must be finite and >= 0");
            }
            sum += a;
        }
        if (sum > 1.0 + kSlack) {
            throw InvalidInput("CrossAttentionSnapshot: visual mass above 1 in a head");
        }
    }
}

/// Per-head Visual Attention Value: total attention mass the instruction
/// token places on visual tokens (column sums).
inline std::vector<double> visual_attention_value(const CrossAttentionSnapshot& snapshot) {
    validate(snapshot);
    std::vector<double> vav(snapshot.attn.cols, 0.0);
    for (std::size_t i = 0; i < snapshot.attn.rows; ++i) {
        for (std::size_t h = 0; h < snapshot.attn.cols; ++h) {
            vav[h] += snapshot.attn.at(i, h);
        }
    }
    return vav;
}

/// Indices of the k_heads largest VAVs, ordered by VAV descending with
/// ascending-index tie break.
inline std::vector<std::size_t> select_heads(const std::vector<double>& vav,
                                             std::size_t k_heads) {
    if (k_heads > vav.size()) {
        throw InvalidK("select_heads: k_heads exceeds head count");
    }
    std::vector<std::size_t> heads;
    heads.reserve(k_heads);
    for (const auto& entry : top_k_indices(vav, k_heads)) {
        heads.push_back(entry.index);
    }
    return heads;
}

/// Importance per visual token: attention summed over the selected heads only.
inline std::vector<double> importance_scores(const CrossAttentionSnapshot& snapshot,
                                             const std::vector<std::size_t>& selected_heads) {
    for (std::size_t h : selected_heads) {
        if (h >= snapshot.attn.cols) {
            throw InvalidInput("importance_scores: head index out of range");
        }
    }
    std::vector<double> importance(snapshot.attn.rows, 0.0);
    for (std::size_t i = 0; i < snapshot.attn.rows; ++i) {
        for (std::size_t h : selected_heads) {
            importance[i] += snapshot.attn.at(i, h);
        }
    }
    return importance;
}

/// Adaptive retained count: round-half-up of lambda times the selected-head
/// VAV sum, clamped to [min_keep, n_tokens].
inline std::size_t adaptive_retained_count(const std::vector<double>& vav,
                                           const std::vector<std::size_t>& selected_heads,
                                           double lambda, std::size_t n_tokens,
                                           std::size_t min_keep) {
    if (!(lambda > 0.0)) {
        throw InvalidConfig("adaptive_retained_count: lambda must be positive");
    }
    double contribution = 0.0;
    for (std::size_t h : selected_heads) {
        if (h >= vav.size()) {
            throw InvalidInput("adaptive_retained_count: head index out of range");
        }
        contribution += vav[h];
    }
    const double raw = lambda * contribution;
    auto k = static_cast<std::size_t>(std::floor(raw + 0.5));
    k = std::max(k, min_keep);
    k = std::min(k, n_tokens);
    return k;
}

/// Everything one prune event decides.
struct RetentionDecision {
    std::size_t layer_idx = 0;
    std::vector<double> vav;
    std::vector<std::size_t> selected_heads;
    std::vector<double> importance;
    double lambda = 0.0;
    std::size_t retained_count = 0;
    std::vector<std::size_t> kept_indices;  // into the snapshot's rows, ascending
    std::string warning;
};

enum class Stage3Mode { kFixed, kAdaptive };

/// Pure selection logic for one prune event; `fixed_count` is ignored in
/// adaptive mode and `lambda` in fixed mode.
inline RetentionDecision prune_step(const CrossAttentionSnapshot& snapshot, std::size_t k_heads,
                                    Stage3Mode mode, double lambda, std::size_t fixed_count,
                                    std::size_t min_keep) {
    RetentionDecision decision;
    decision.layer_idx = snapshot.layer_idx;
    decision.vav = visual_attention_value(snapshot);
    decision.selected_heads = select_heads(decision.vav, k_heads);
    decision.importance = importance_scores(snapshot, decision.selected_heads);
    decision.lambda = lambda;

    const std::size_t n = snapshot.attn.rows;
    if (mode == Stage3Mode::kAdaptive) {
        decision.retained_count =
            adaptive_retained_count(decision.vav, decision.selected_heads, lambda, n, min_keep);
    } else {
        decision.retained_count = fixed_count;
        if (decision.retained_count > n) {
            decision.warning = "fixed count " + std::to_string(fixed_count) + " exceeds " +
                               std::to_string(n) + " live tokens; clamped";
            decision.retained_count = n;
        }
    }
    decision.kept_indices = sorted_indices(top_k_indices(decision.importance,
                                                         decision.retained_count));
    return decision;
}

struct Stage3Options {
    std::vector<std::size_t> schedule;       // decoder layers, pruning before input
    std::size_t k_heads = 4;
    Stage3Mode mode = Stage3Mode::kAdaptive;
    std::vector<std::size_t> fixed_counts;   // one per schedule entry (fixed mode)
    std::vector<double> lambda_per_layer;    // one per schedule entry (adaptive mode)
    std::size_t min_keep = 16;
};

inline void validate(const Stage3Options& opts, const DecoderSpec& decoder) {
    if (opts.schedule.empty()) {
        throw InvalidConfig("stage3: schedule must be nonempty");
    }
    for (std::size_t i = 0; i < opts.schedule.size(); ++i) {
        if (opts.schedule[i] >= decoder.num_layers) {
            throw InvalidConfig("stage3: schedule layer beyond decoder depth");
        }
        if (i > 0 && opts.schedule[i] <= opts.schedule[i - 1]) {
            throw InvalidConfig("stage3: schedule must be strictly increasing");
        }
    }
    if (opts.k_heads == 0 || opts.k_heads > decoder.num_heads) {
        throw InvalidConfig("stage3: k_heads must lie in [1, num_heads]");
    }
    if (opts.mode == Stage3Mode::kFixed) {
        if (opts.fixed_counts.size() != opts.schedule.size()) {
            throw InvalidConfig("stage3: one fixed count per scheduled layer required");
        }
        for (std::size_t i = 1; i < opts.fixed_counts.size(); ++i) {
            if (opts.fixed_counts[i] > opts.fixed_counts[i - 1]) {
                throw InvalidConfig("stage3: fixed counts must be non-increasing");
            }
        }
    } else {
        if (opts.lambda_per_layer.size() != opts.schedule.size()) {
            throw InvalidConfig("stage3: one lambda per scheduled layer required");
        }
        for (double l : opts.lambda_per_layer) {
            if (!(l > 0.0)) {
                throw InvalidConfig("stage3: lambda values must be positive");
            }
        }
    }
}

struct Stage3Result {
    FusedTokens final_tokens;
    std::vector<RetentionDecision> decisions;
    std::vector<TraceEntry> trace;
    std::vector<std::size_t> layer_visual_tokens;  // visual count at each layer input
    std::size_t text_tokens = 0;
    FeatureMatrix final_context;  // decoder output over [kept visual || text]
};

/// Progressive text-guided pruning through the toy decoder. At each scheduled
/// layer the layer's own attention is snapshotted on the current context,
/// low-importance visual tokens are dropped, and the layer then runs on the
/// pruned context. `run_to_layer` truncates the pass (used by calibration);
/// the default covers the whole decoder.
inline Stage3Result run_stage3(const FusedTokens& visual_tokens, const DecoderState& decoder,
                               const FeatureMatrix& text_embeddings, const Stage3Options& opts,
                               std::size_t run_to_layer = static_cast<std::size_t>(-1)) {
    validate(opts, decoder.spec);
    if (visual_tokens.features.cols != decoder.spec.dim ||
        text_embeddings.cols != decoder.spec.dim) {
        throw InvalidConfig("stage3: token dims do not match decoder dim");
    }
    if (text_embeddings.rows == 0) {
        throw InvalidConfig("stage3: at least one text token required");
    }

    const std::size_t layers = std::min(decoder.spec.num_layers, run_to_layer);
    const std::size_t n_text = text_embeddings.rows;

    // Context = [visual || text], visual rows first.
    std::size_t n_visual = visual_tokens.features.rows;
    FeatureMatrix context(n_visual + n_text, decoder.spec.dim);
    for (std::size_t i = 0; i < n_visual; ++i) {
        for (std::size_t j = 0; j < context.cols; ++j) {
            context.at(i, j) = visual_tokens.features.at(i, j);
        }
    }
    for (std::size_t i = 0; i < n_text; ++i) {
        for (std::size_t j = 0; j < context.cols; ++j) {
            context.at(n_visual + i, j) = text_embeddings.at(i, j);
        }
    }

    std::vector<std::size_t> alive(n_visual);  // -> rows of the input fused set
    std::iota(alive.begin(), alive.end(), 0);

    Stage3Result result;
    result.text_tokens = n_text;
    for (std::size_t layer = 0; layer < layers; ++layer) {
        auto sched_it = std::find(opts.schedule.begin(), opts.schedule.end(), layer);
        if (sched_it != opts.schedule.end()) {
            const std::size_t sched_pos =
                static_cast<std::size_t>(sched_it - opts.schedule.begin());

            const FeatureMatrix full_attn = last_token_attention(decoder, layer, context);
            CrossAttentionSnapshot snapshot;
            snapshot.layer_idx = layer;
            snapshot.attn = FeatureMatrix(n_visual, decoder.spec.num_heads);
            snapshot.visual_mass_per_head.assign(decoder.spec.num_heads, 0.0);
            for (std::size_t h = 0; h < decoder.spec.num_heads; ++h) {
                for (std::size_t i = 0; i < n_visual; ++i) {
                    snapshot.attn.at(i, h) = full_attn.at(h, i);
                    snapshot.visual_mass_per_head[h] += full_attn.at(h, i);
                }
            }

            const double lambda = (opts.mode == Stage3Mode::kAdaptive)
                                      ? opts.lambda_per_layer[sched_pos]
                                      : 1.0;
            const std::size_t fixed = (opts.mode == Stage3Mode::kFixed)
                                          ? opts.fixed_counts[sched_pos]
                                          : 0;
            RetentionDecision decision =
                prune_step(snapshot, opts.k_heads, opts.mode, lambda, fixed, opts.min_keep);

            // Rebuild the context with only the kept visual rows.
            const std::size_t kept = decision.kept_indices.size();
            FeatureMatrix next(kept + n_text, context.cols);
            for (std::size_t i = 0; i < kept; ++i) {
                const std::size_t src = decision.kept_indices[i];
                for (std::size_t j = 0; j < context.cols; ++j) {
                    next.at(i, j) = context.at(src, j);
                }
            }
            for (std::size_t i = 0; i < n_text; ++i) {
                for (std::size_t j = 0; j < context.cols; ++j) {
                    next.at(kept + i, j) = context.at(n_visual + i, j);
                }
            }
            context = std::move(next);

            std::vector<std::size_t> alive_next;
            alive_next.reserve(kept);
            for (std::size_t local : decision.kept_indices) {
                alive_next.push_back(alive[local]);
            }

            TraceEntry entry;
            entry.stage = 3;
            entry.block_idx = layer;
            entry.criterion = kCriterionTextImportance;
            entry.scores_digest = digest_hex(decision.importance);
            entry.kept_indices = alive_next;
            entry.before = n_visual;
            entry.after = kept;
            if (!decision.warning.empty()) {
                entry.warnings.push_back(decision.warning);
            }
            result.trace.push_back(std::move(entry));

            alive = std::move(alive_next);
            n_visual = kept;
            result.decisions.push_back(std::move(decision));
        }
        result.layer_visual_tokens.push_back(n_visual);
        context = forward_decoder_layer(decoder, layer, context);
    }

    result.final_tokens.features = gather_rows(visual_tokens.features, alive);
    for (std::size_t idx : alive) {
        result.final_tokens.origin.push_back(visual_tokens.origin[idx]);
    }
    result.final_context = std::move(context);
    return result;
}

/// Constructed snapshot with an exact per-head visual mass; the seeded family
/// behind the adaptive-selectivity analyses. `jitter` spreads per-head mass
/// around `visual_mass` while keeping the average exact.
inline CrossAttentionSnapshot make_snapshot(std::size_t n_visual, std::size_t n_heads,
                                            double visual_mass, std::uint64_t seed,
                                            std::size_t layer_idx = 0, double jitter = 0.0) {
    if (visual_mass < 0.0 || visual_mass > 1.0) {
        throw InvalidInput("make_snapshot: visual_mass must lie in [0, 1]");
    }
    CrossAttentionSnapshot snapshot;
    snapshot.layer_idx = layer_idx;
    snapshot.attn = FeatureMatrix(n_visual, n_heads);
    snapshot.visual_mass_per_head.assign(n_heads, 0.0);
    for (std::size_t h = 0; h < n_heads; ++h) {
        double mass = visual_mass;
        if (jitter > 0.0 && n_heads > 1) {
            // Symmetric pairing keeps the head average at visual_mass.
            const double offset = jitter * uniform_symmetric(seed, 400, h / 2);
            mass += (h % 2 == 0) ? offset : -offset;
            mass = std::clamp(mass, 0.0, 1.0);
        }
        double weight_sum = 0.0;
        std::vector<double> weights(n_visual);
        for (std::size_t i = 0; i < n_visual; ++i) {
            weights[i] = uniform01(seed, 401 + h, i) + 1e-3;
            weight_sum += weights[i];
        }
        for (std::size_t i = 0; i < n_visual; ++i) {
            snapshot.attn.at(i, h) = mass * weights[i] / weight_sum;
            snapshot.visual_mass_per_head[h] += snapshot.attn.at(i, h);
        }
    }
    return snapshot;
}

}  // namespace meteor
