// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#include "meteor/stage1.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "test_support.hpp"

using namespace meteor;
using meteor::testing::random_matrix;
using meteor::testing::random_vector;

namespace {

// High-precision brute-force ranking for the cls-attention criterion.
std::vector<std::size_t> cls_attention_oracle(const std::vector<double>& q,
                                              const FeatureMatrix& keys, std::size_t k,
                                              std::size_t head_dim) {
    const std::size_t heads = keys.cols / head_dim;
    std::vector<long double> scores(keys.rows, 0.0L);
    for (std::size_t h = 0; h < heads; ++h) {
        std::vector<long double> logits(keys.rows, 0.0L);
        long double max_logit = -1e30L;
        for (std::size_t i = 0; i < keys.rows; ++i) {
            long double s = 0.0L;
            for (std::size_t c = 0; c < head_dim; ++c) {
                s += static_cast<long double>(q[h * head_dim + c]) *
                     static_cast<long double>(keys.at(i, h * head_dim + c));
            }
            logits[i] = s / sqrtl(static_cast<long double>(head_dim));
            max_logit = std::max(max_logit, logits[i]);
        }
        long double sum = 0.0L;
        for (auto& l : logits) {
            l = expl(l - max_logit);
            sum += l;
        }
        for (std::size_t i = 0; i < keys.rows; ++i) {
            scores[i] += logits[i] / sum;
        }
    }
    std::vector<std::size_t> order(keys.rows);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return a < b;
    });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

EncoderSpec stage1_spec(std::size_t blocks = 3, std::size_t tokens = 8) {
    EncoderSpec spec;
    spec.encoder_id = "s1";
    spec.num_blocks = blocks;
    spec.num_heads = 2;
    spec.token_count = tokens;
    spec.dim = 16;
    spec.mlp_hidden = 32;
    spec.seed = 555;
    return spec;
}

BudgetPlan single_encoder_plan(const std::string& id, const PhaseSchedule& schedule,
                               const std::vector<std::size_t>& ks) {
    BudgetPlan plan;
    for (std::size_t p = 0; p < schedule.prune_blocks.size(); ++p) {
        BudgetPlan::Point point;
        point.phase_idx = p;
        point.total = ks[p];
        point.per_encoder[id] = ks[p];
        point.per_encoder_block[id] = schedule.prune_blocks[p];
        plan.points.push_back(point);
    }
    return plan;
}

}  // namespace

// ---------------------------------------------------------------------------
// select_by_avg_similarity
// ---------------------------------------------------------------------------

TEST(AvgSimilarity, KeepAllIsIdentity) {
    FeatureMatrix f = random_matrix(6, 4, 31);
    auto r = select_by_avg_similarity(f, 6);
    EXPECT_EQ(sorted_indices(r), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
}

TEST(AvgSimilarity, KeepsLeastSimilarToMean) {
    FeatureMatrix f(3, 2, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
    auto r = select_by_avg_similarity(f, 1);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].index, 2u);
}

TEST(AvgSimilarity, FullTieBreaksByIndex) {
    FeatureMatrix f(5, 3);
    for (std::size_t i = 0; i < 5; ++i) {
        f.at(i, 0) = 1.0;
        f.at(i, 1) = 2.0;
        f.at(i, 2) = -1.0;
    }
    auto keep = sorted_indices(select_by_avg_similarity(f, 2));
    EXPECT_EQ(keep, (std::vector<std::size_t>{0, 1}));
}

TEST(AvgSimilarity, KTooLarge) {
    FeatureMatrix f = random_matrix(3, 2, 32);
    EXPECT_THROW(select_by_avg_similarity(f, 4), InvalidK);
}

// ---------------------------------------------------------------------------
// select_by_cls_attention
// ---------------------------------------------------------------------------

TEST(ClsAttention, OrthogonalQueryGivesUniformTieBreak) {
    FeatureMatrix keys(4, 2, {0.0, 1.0, 0.0, 2.0, 0.0, -1.0, 0.0, 0.5});
    std::vector<double> q = {1.0, 0.0};
    // q is orthogonal to every key: logits are all zero, attention uniform.
    auto keep = sorted_indices(select_by_cls_attention(q, keys, 2, 2));
    EXPECT_EQ(keep, (std::vector<std::size_t>{0, 1}));
}

TEST(ClsAttention, DominantLogitWins) {
    FeatureMatrix keys(2, 2, {10.0, 0.0, 0.0, 10.0});
    std::vector<double> q = {1.0, 0.0};
    auto r = select_by_cls_attention(q, keys, 1, 2);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].index, 0u);
}

TEST(ClsAttention, DimensionMismatch) {
    FeatureMatrix keys(2, 4, std::vector<double>(8, 0.0));
    std::vector<double> q = {1.0, 0.0};
    EXPECT_THROW(select_by_cls_attention(q, keys, 1, 2), InvalidInput);
}

TEST(ClsAttention, MatchesHighPrecisionOracle) {
    for (std::uint64_t trial = 0; trial < 1000; ++trial) {
        const std::size_t head_dim = 4;
        const std::size_t heads = 1 + trial % 3;
        const std::size_t cols = heads * head_dim;
        FeatureMatrix keys = random_matrix(16, cols, 7000 + trial, 2.0);
        auto q = random_vector(cols, 8000 + trial, 2.0);
        auto got = sorted_indices(select_by_cls_attention(q, keys, 6, head_dim));
        auto want = cls_attention_oracle(q, keys, 6, head_dim);
        EXPECT_EQ(got, want) << "trial " << trial;
    }
}

// ---------------------------------------------------------------------------
// run_stage1
// ---------------------------------------------------------------------------

TEST(RunStage1, NoOpPlanMatchesUnprunedForward) {
    auto spec = stage1_spec(4, 10);
    auto state = build_encoder(spec);
    auto schedule = make_phase_schedule(spec.num_blocks);
    auto plan = single_encoder_plan(spec.encoder_id, schedule, {10, 10, 10});
    auto tokens = make_input(spec, 1);

    auto result = run_stage1(state, tokens, schedule, plan);
    auto unpruned = forward_all_blocks(state, tokens);
    EXPECT_EQ(result.final_output.features.data, unpruned.back().features.data);
    EXPECT_EQ(result.final_output.kept_global_indices.size(), 10u);
}

TEST(RunStage1, ShapeContractOnThreeBlockEncoder) {
    auto spec = stage1_spec(3, 8);
    auto state = build_encoder(spec);
    auto schedule = make_phase_schedule(3);
    auto plan = single_encoder_plan(spec.encoder_id, schedule, {6, 4, 2});
    auto result = run_stage1(state, make_input(spec, 2), schedule, plan);

    EXPECT_EQ(result.final_output.features.rows, 2u);
    EXPECT_EQ(result.final_output.kept_global_indices.size(), 2u);
    for (std::size_t idx : result.final_output.kept_global_indices) {
        EXPECT_LT(idx, 8u);
    }
    EXPECT_EQ(result.block_tokens, (std::vector<std::size_t>{8, 6, 4}));
}

TEST(RunStage1, PhaseCriterionLaw) {
    auto spec = stage1_spec(6, 12);
    auto state = build_encoder(spec);
    auto schedule = make_phase_schedule(6);
    auto plan = single_encoder_plan(spec.encoder_id, schedule, {10, 8, 6});
    auto result = run_stage1(state, make_input(spec, 3), schedule, plan);

    ASSERT_EQ(result.trace.size(), 3u);
    for (const auto& entry : result.trace) {
        const std::size_t phase = phase_of(schedule, entry.block_idx);
        if (phase == 0) {
            EXPECT_EQ(entry.criterion, kCriterionAvgSimilarity);
        } else {
            EXPECT_EQ(entry.criterion, kCriterionClsAttention);
        }
    }
}

TEST(RunStage1, MonotoneCountsAndIndexSoundness) {
    auto spec = stage1_spec(5, 16);
    auto state = build_encoder(spec);
    auto schedule = make_phase_schedule(5);
    auto plan = single_encoder_plan(spec.encoder_id, schedule, {12, 9, 5});
    auto result = run_stage1(state, make_input(spec, 4), schedule, plan);

    for (const auto& entry : result.trace) {
        EXPECT_LE(entry.after, entry.before);
    }
    std::set<std::size_t> kept(result.final_output.kept_global_indices.begin(),
                               result.final_output.kept_global_indices.end());
    EXPECT_EQ(kept.size(), result.final_output.kept_global_indices.size());
    for (std::size_t idx : kept) {
        EXPECT_LT(idx, 16u);
    }
}

TEST(RunStage1, TraceReplayOracle) {
    // Replaying the recorded per-entry kept sets reproduces the final mapping.
    auto spec = stage1_spec(4, 12);
    auto state = build_encoder(spec);
    auto schedule = make_phase_schedule(4);
    auto plan = single_encoder_plan(spec.encoder_id, schedule, {9, 6, 3});
    auto result = run_stage1(state, make_input(spec, 5), schedule, plan);

    std::vector<std::size_t> live(12);
    std::iota(live.begin(), live.end(), 0);
    for (const auto& entry : result.trace) {
        EXPECT_EQ(entry.before, live.size());
        // Each recorded kept set must be a subset of the live set.
        for (std::size_t idx : entry.kept_indices) {
            EXPECT_TRUE(std::binary_search(live.begin(), live.end(), idx));
        }
        live = entry.kept_indices;
        EXPECT_EQ(entry.after, live.size());
    }
    EXPECT_EQ(live, result.final_output.kept_global_indices);
}

TEST(RunStage1, BudgetClampWarnsInsteadOfThrowing) {
    auto spec = stage1_spec(3, 6);
    auto state = build_encoder(spec);
    auto schedule = make_phase_schedule(3);
    // Second budget exceeds the 4 tokens that survive the first prune.
    auto plan = single_encoder_plan(spec.encoder_id, schedule, {4, 4, 2});
    plan.points[1].per_encoder[spec.encoder_id] = 5;
    auto result = run_stage1(state, make_input(spec, 6), schedule, plan);
    ASSERT_EQ(result.trace.size(), 3u);
    EXPECT_FALSE(result.trace[1].warnings.empty());
    EXPECT_EQ(result.trace[1].after, 4u);
    EXPECT_EQ(result.final_output.features.rows, 2u);
}

TEST(RunStage1, PermutationEquivariance) {
    auto spec = stage1_spec(3, 10);
    auto state = build_encoder(spec);
    auto schedule = make_phase_schedule(3);
    auto plan = single_encoder_plan(spec.encoder_id, schedule, {7, 5, 3});
    auto tokens = make_input(spec, 7);

    auto base = run_stage1(state, tokens, schedule, plan);

    // Deterministic permutation of the input rows.
    std::vector<std::size_t> perm(tokens.rows);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        std::swap(perm[i], perm[mix_key(99, 1, i) % perm.size()]);
    }
    FeatureMatrix permuted(tokens.rows, tokens.cols);
    for (std::size_t i = 0; i < tokens.rows; ++i) {
        for (std::size_t j = 0; j < tokens.cols; ++j) {
            permuted.at(i, j) = tokens.at(perm[i], j);
        }
    }
    auto shuffled = run_stage1(state, permuted, schedule, plan);

    // Map the permuted run's kept rows back to original labels and compare sets.
    std::set<std::size_t> base_set(base.final_output.kept_global_indices.begin(),
                                   base.final_output.kept_global_indices.end());
    std::set<std::size_t> mapped;
    for (std::size_t idx : shuffled.final_output.kept_global_indices) {
        mapped.insert(perm[idx]);
    }
    EXPECT_EQ(base_set, mapped);
}

TEST(RunStage1, PlanMustCoverPruneBlocks) {
    auto spec = stage1_spec(3, 6);
    auto state = build_encoder(spec);
    auto schedule = make_phase_schedule(3);
    BudgetPlan plan;  // empty
    EXPECT_THROW(run_stage1(state, make_input(spec, 1), schedule, plan), InvalidConfig);
}
