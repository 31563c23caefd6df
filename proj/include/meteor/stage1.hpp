// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

#include "meteor/digest.hpp"
#include "meteor/encoder.hpp"
#include "meteor/errors.hpp"
#include "meteor/linalg.hpp"
#include "meteor/rank_probe.hpp"
#include "meteor/trace.hpp"

namespace meteor {

inline constexpr const char* kCriterionAvgSimilarity = "avg_similarity";
inline constexpr const char* kCriterionClsAttention = "cls_attention";

/// Three contiguous phases over the block range of one encoder, plus the
/// blocks after which pruning executes (one per phase by default).
struct PhaseSchedule {
    std::size_t num_blocks = 0;
    std::array<std::size_t, 2> boundaries = {0, 0};  // first block of phase 1 / phase 2
    std::vector<std::size_t> prune_blocks;
};

/// Default split: sizes ceil(B/3), ceil((B - first)/2), remainder; pruning at
/// the last block of each phase.
inline PhaseSchedule make_phase_schedule(std::size_t num_blocks) {
    if (num_blocks < 3) {
        throw InvalidConfig("make_phase_schedule: need at least 3 blocks");
    }
    const std::size_t first = (num_blocks + 2) / 3;
    const std::size_t second = (num_blocks - first + 1) / 2;
    PhaseSchedule s;
    s.num_blocks = num_blocks;
    s.boundaries = {first, first + second};
    s.prune_blocks = {first - 1, first + second - 1, num_blocks - 1};
    return s;
}

inline void validate(const PhaseSchedule& s) {
    if (s.boundaries[0] == 0 || s.boundaries[0] >= s.boundaries[1] ||
        s.boundaries[1] >= s.num_blocks) {
        throw InvalidConfig("PhaseSchedule: phases must be nonempty and partition the block range");
    }
    if (s.prune_blocks.empty()) {
        throw InvalidConfig("PhaseSchedule: at least one prune block required");
    }
    for (std::size_t i = 0; i < s.prune_blocks.size(); ++i) {
        if (s.prune_blocks[i] >= s.num_blocks) {
            throw InvalidConfig("PhaseSchedule: prune block beyond encoder depth");
        }
        if (i > 0 && s.prune_blocks[i] <= s.prune_blocks[i - 1]) {
            throw InvalidConfig("PhaseSchedule: prune blocks must be strictly increasing");
        }
    }
}

inline std::size_t phase_of(const PhaseSchedule& s, std::size_t block_idx) {
    if (block_idx < s.boundaries[0]) {
        return 0;
    }
    if (block_idx < s.boundaries[1]) {
        return 1;
    }
    return 2;
}

/// Shallow-phase criterion: keep the k tokens least similar to the average
/// token. Scores are negated cosine similarities to the mean of the current
/// set, so higher score = less redundant.
inline ScoredIndexList select_by_avg_similarity(const FeatureMatrix& features, std::size_t k) {
    if (k > features.rows) {
        throw InvalidK("select_by_avg_similarity: k exceeds token count");
    }
    require_finite(features, "select_by_avg_similarity");
    const std::vector<double> mean = mean_row(features);
    std::vector<double> scores(features.rows);
    for (std::size_t i = 0; i < features.rows; ++i) {
        scores[i] = -cosine_similarity(features.row(i), mean);
    }
    return top_k_indices(scores, k);
}

/// Deep-phase criterion: keep the k tokens with the largest cls-attention
/// mass. The query and keys are split into heads of `head_dim`; each head is
/// softmaxed over the visual keys and the head probabilities are averaged.
/// With head_dim equal to the full width this is exactly single-head
/// attention.
inline ScoredIndexList select_by_cls_attention(const std::vector<double>& cls_query,
                                               const FeatureMatrix& keys, std::size_t k,
                                               std::size_t head_dim) {
    if (cls_query.size() != keys.cols) {
        throw InvalidInput("select_by_cls_attention: query/key width mismatch");
    }
    if (head_dim == 0 || keys.cols % head_dim != 0) {
        throw InvalidInput("select_by_cls_attention: head_dim must divide the key width");
    }
    if (k > keys.rows) {
        throw InvalidK("select_by_cls_attention: k exceeds token count");
    }
    require_finite(keys, "select_by_cls_attention");
    if (!all_finite(cls_query)) {
        throw InvalidInput("select_by_cls_attention: non-finite query");
    }

    const std::size_t heads = keys.cols / head_dim;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<double> scores(keys.rows, 0.0);
    std::vector<double> logits(keys.rows);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * head_dim;
        for (std::size_t i = 0; i < keys.rows; ++i) {
            double s = 0.0;
            for (std::size_t c = 0; c < head_dim; ++c) {
                s += cls_query[off + c] * keys.at(i, off + c);
            }
            logits[i] = s * inv_sqrt_dk;
        }
        const std::vector<double> attn = softmax(logits);
        for (std::size_t i = 0; i < keys.rows; ++i) {
            scores[i] += attn[i];
        }
    }
    for (double& s : scores) {
        s /= static_cast<double>(heads);
    }
    return top_k_indices(scores, k);
}

/// Result of one encoder's stage-1 run.
struct Stage1Result {
    BlockOutput final_output;
    std::vector<TraceEntry> trace;
    std::vector<std::size_t> block_tokens;  // live count at every block input
};

namespace detail {

inline void apply_selection(BlockOutput& out, const ScoredIndexList& selection) {
    const std::vector<std::size_t> keep = sorted_indices(selection);
    out.features = gather_rows(out.features, keep);
    out.keys = gather_rows(out.keys, keep);
    std::vector<std::size_t> kept_global;
    kept_global.reserve(keep.size());
    for (std::size_t local : keep) {
        kept_global.push_back(out.kept_global_indices[local]);
    }
    out.kept_global_indices = std::move(kept_global);
}

}  // namespace detail

/// Progressive within-encoder pruning: forward all blocks, applying the
/// phase-appropriate criterion after each scheduled block under the budget
/// plan. Budgets above the live token count clamp with a trace warning.
inline Stage1Result run_stage1(const EncoderState& state, const FeatureMatrix& tokens,
                               const PhaseSchedule& schedule, const BudgetPlan& plan) {
    validate(schedule);
    if (schedule.num_blocks != state.spec.num_blocks) {
        throw InvalidConfig("run_stage1: schedule depth does not match encoder");
    }
    const std::string& id = state.spec.encoder_id;
    // Budgets keyed by prune block; the plan must cover every scheduled block.
    std::map<std::size_t, std::size_t> budget_at_block;
    for (const auto& point : plan.points) {
        auto it = point.per_encoder_block.find(id);
        if (it != point.per_encoder_block.end()) {
            budget_at_block[it->second] = point.per_encoder.at(id);
        }
    }
    for (std::size_t b : schedule.prune_blocks) {
        if (budget_at_block.find(b) == budget_at_block.end()) {
            throw InvalidConfig("run_stage1: plan does not cover prune block " +
                                std::to_string(b) + " of encoder '" + id + "'");
        }
    }

    Stage1Result result;
    BlockOutput current = embed_input(state, tokens);
    for (std::size_t b = 0; b < state.spec.num_blocks; ++b) {
        result.block_tokens.push_back(current.features.rows);
        current = forward_block(state, b, current);
        const bool is_prune_block = std::find(schedule.prune_blocks.begin(),
                                              schedule.prune_blocks.end(),
                                              b) != schedule.prune_blocks.end();
        if (!is_prune_block) {
            continue;
        }

        TraceEntry entry;
        entry.stage = 1;
        entry.encoder_id = id;
        entry.block_idx = b;
        entry.before = current.features.rows;

        std::size_t k = budget_at_block.at(b);
        if (k > current.features.rows) {
            entry.warnings.push_back("budget " + std::to_string(k) + " exceeds " +
                                     std::to_string(current.features.rows) +
                                     " live tokens; clamped");
            k = current.features.rows;
        }

        // Rank every live token once; the selection is the length-k prefix.
        ScoredIndexList full;
        if (phase_of(schedule, b) == 0) {
            entry.criterion = kCriterionAvgSimilarity;
            full = select_by_avg_similarity(current.features, current.features.rows);
        } else {
            entry.criterion = kCriterionClsAttention;
            full = select_by_cls_attention(current.cls_query, current.keys,
                                           current.features.rows, state.spec.head_dim());
        }
        std::vector<double> score_row(current.features.rows);
        for (const auto& e : full) {
            score_row[e.index] = e.score;
        }
        entry.scores_digest = digest_hex(score_row);

        const ScoredIndexList selection(full.begin(), full.begin() + static_cast<long>(k));
        detail::apply_selection(current, selection);
        entry.after = current.features.rows;
        entry.kept_indices = current.kept_global_indices;
        result.trace.push_back(std::move(entry));
    }
    result.final_output = std::move(current);
    return result;
}

}  // namespace meteor
