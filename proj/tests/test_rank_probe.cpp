// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#include "meteor/rank_probe.hpp"

#include <gtest/gtest.h>

#include <vector>

using namespace meteor;

namespace {

EncoderSpec probe_spec(const std::string& id, std::uint64_t seed,
                       std::optional<std::size_t> synthetic_rank = std::nullopt) {
    EncoderSpec spec;
    spec.encoder_id = id;
    spec.num_blocks = 4;
    spec.num_heads = 2;
    spec.token_count = 20;
    spec.dim = 16;
    spec.mlp_hidden = 32;
    spec.seed = seed;
    spec.synthetic_rank = synthetic_rank;
    return spec;
}

std::vector<std::vector<FeatureMatrix>> make_batch(const std::vector<EncoderState>& encoders,
                                                   std::size_t items, std::uint64_t seed0) {
    std::vector<std::vector<FeatureMatrix>> batch;
    for (std::size_t i = 0; i < items; ++i) {
        std::vector<FeatureMatrix> item;
        for (const auto& enc : encoders) {
            item.push_back(make_input(enc.spec, seed0 + i * 131 + enc.spec.seed));
        }
        batch.push_back(std::move(item));
    }
    return batch;
}

RankProfile profile_from_ranks(const std::string& id, const std::vector<double>& means) {
    RankProfile p;
    std::vector<RankProfile::Stats> stats;
    for (double m : means) {
        stats.push_back({m, 0.0});
    }
    p.per_encoder[id] = stats;
    p.batch_size = 1;
    return p;
}

// Single-point allocation helper for hand cases: one block per encoder.
std::vector<std::size_t> allocate_single(const std::vector<double>& ranks, std::size_t total,
                                         std::size_t min_tokens) {
    RankProfile profile;
    PrunePointSpec point;
    point.phase_idx = 0;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        // Zero-pad so map order equals construction order.
        std::string id = "enc" + std::string(i < 10 ? "0" : "") + std::to_string(i);
        ids.push_back(id);
        profile.per_encoder[id] = {{ranks[i], 0.0}};
        point.per_encoder_block[id] = 0;
    }
    profile.batch_size = 1;
    auto plan = allocate_budget(profile, {point}, {total}, min_tokens);
    std::vector<std::size_t> out;
    for (const auto& id : ids) {
        out.push_back(plan.points[0].per_encoder.at(id));
    }
    return out;
}

}  // namespace

TEST(ProbeRanks, SyntheticRankCapWithZeroStd) {
    std::vector<EncoderState> encoders = {build_encoder(probe_spec("capped", 11, 4))};
    auto profile = probe_ranks(encoders, make_batch(encoders, 8, 1000), 1e-6);
    for (const auto& stats : profile.per_encoder.at("capped")) {
        EXPECT_LE(stats.mean, 4.0);
        EXPECT_EQ(stats.stddev, 0.0);
    }
}

TEST(ProbeRanks, HigherCapNeverRanksLower) {
    std::vector<EncoderState> encoders = {build_encoder(probe_spec("rank4", 21, 4)),
                                          build_encoder(probe_spec("rank8", 22, 8))};
    auto profile = probe_ranks(encoders, make_batch(encoders, 4, 2000), 1e-6);
    const auto& low = profile.per_encoder.at("rank4");
    const auto& high = profile.per_encoder.at("rank8");
    for (std::size_t b = 0; b < low.size(); ++b) {
        EXPECT_GE(high[b].mean, low[b].mean);
    }
}

TEST(ProbeRanks, SingleItemBatchHasZeroStd) {
    std::vector<EncoderState> encoders = {build_encoder(probe_spec("plain", 31))};
    auto profile = probe_ranks(encoders, make_batch(encoders, 1, 3000), 1e-6);
    for (const auto& stats : profile.per_encoder.at("plain")) {
        EXPECT_EQ(stats.stddev, 0.0);
    }
}

TEST(ProbeRanks, InputValidation) {
    std::vector<EncoderState> encoders = {build_encoder(probe_spec("plain", 41))};
    EXPECT_THROW(probe_ranks(encoders, {}, 1e-6), InvalidInput);
    EXPECT_THROW(probe_ranks(encoders, make_batch(encoders, 1, 1), 0.0), InvalidConfig);
}

TEST(AllocateBudget, ExactProportionalSplit) {
    auto alloc = allocate_single({100.0, 50.0, 25.0, 25.0}, 576, 1);
    EXPECT_EQ(alloc, (std::vector<std::size_t>{288, 144, 72, 72}));
}

TEST(AllocateBudget, LargestRemainderWithIndexTieBreak) {
    auto alloc = allocate_single({1.0, 1.0, 1.0}, 10, 1);
    EXPECT_EQ(alloc, (std::vector<std::size_t>{4, 3, 3}));
}

TEST(AllocateBudget, FloorRuleKeepsNearZeroEncoderAlive) {
    auto alloc = allocate_single({5.0, 0.0001, 5.0}, 9, 1);
    EXPECT_EQ(alloc[1], 1u);
    EXPECT_EQ(alloc[0] + alloc[1] + alloc[2], 9u);
}

TEST(AllocateBudget, DegenerateAndInfeasible) {
    EXPECT_THROW(allocate_single({0.0, 0.0}, 4, 1), DegenerateRanks);
    EXPECT_THROW(allocate_single({1.0, 1.0}, 1, 1), InvalidConfig);
}

TEST(AllocateBudget, ConservationMonotonicityAndScaleInvariance) {
    for (std::uint64_t trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + mix_key(trial, 70, 0) % 6;
        std::vector<double> ranks(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Occasionally push a rank to zero to exercise the floor rule.
            const double r = uniform01(trial, 71, i);
            ranks[i] = (r < 0.1) ? 0.0001 : r * 64.0;
        }
        const std::size_t total = n + mix_key(trial, 72, 0) % 512;

        auto alloc = allocate_single(ranks, total, 1);

        std::size_t sum = 0;
        for (std::size_t a : alloc) {
            sum += a;
        }
        EXPECT_EQ(sum, total) << "trial " << trial;

        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_GE(alloc[i], 1u);
            for (std::size_t j = 0; j < n; ++j) {
                if (ranks[i] > ranks[j]) {
                    EXPECT_GE(alloc[i], alloc[j]) << "trial " << trial;
                }
            }
        }

        const double c = 0.25 + 4.0 * uniform01(trial, 73, 0);
        std::vector<double> scaled(ranks);
        for (double& r : scaled) {
            r *= c;
        }
        EXPECT_EQ(allocate_single(scaled, total, 1), alloc) << "trial " << trial;
    }
}

TEST(AllocateBudget, BudgetsNonIncreasingAcrossPoints) {
    RankProfile profile;
    profile.per_encoder["enc00"] = {{10.0, 0.0}, {10.0, 0.0}, {2.0, 0.0}};
    profile.per_encoder["enc01"] = {{10.0, 0.0}, {2.0, 0.0}, {10.0, 0.0}};
    profile.batch_size = 1;

    std::vector<PrunePointSpec> points(3);
    for (std::size_t p = 0; p < 3; ++p) {
        points[p].phase_idx = p;
        points[p].per_encoder_block = {{"enc00", p}, {"enc01", p}};
    }
    auto plan = allocate_budget(profile, points, {10, 8, 6}, 1);
    ASSERT_EQ(plan.points.size(), 3u);
    for (const auto& point : plan.points) {
        std::size_t sum = 0;
        for (const auto& [id, k] : point.per_encoder) {
            sum += k;
        }
        EXPECT_EQ(sum, point.total);
    }
    for (std::size_t p = 1; p < 3; ++p) {
        for (const auto& [id, k] : plan.points[p].per_encoder) {
            EXPECT_LE(k, plan.points[p - 1].per_encoder.at(id))
                << "encoder " << id << " grew at point " << p;
        }
    }
}

TEST(AllocateBudget, TotalsMustNotIncrease) {
    auto profile = profile_from_ranks("enc00", {4.0, 4.0});
    std::vector<PrunePointSpec> points(2);
    points[0].per_encoder_block = {{"enc00", 0}};
    points[1].per_encoder_block = {{"enc00", 1}};
    points[1].phase_idx = 1;
    EXPECT_THROW(allocate_budget(profile, points, {4, 6}, 1), InvalidConfig);
}

TEST(ProbeRanks, StableAcrossDisjointBatches) {
    // Finding-2 analog at unit scale: capped encoders repeat the same rank on
    // every batch; unconstrained toy encoders stay within a tight band.
    std::vector<EncoderState> capped = {build_encoder(probe_spec("capped", 51, 4))};
    std::vector<EncoderState> plain = {build_encoder(probe_spec("plain", 52))};

    std::vector<double> capped_means;
    std::vector<std::vector<double>> plain_means(plain[0].spec.num_blocks);
    for (std::uint64_t batch_idx = 0; batch_idx < 4; ++batch_idx) {
        auto pc = probe_ranks(capped, make_batch(capped, 4, 9000 + 100 * batch_idx), 1e-6);
        for (const auto& s : pc.per_encoder.at("capped")) {
            EXPECT_EQ(s.stddev, 0.0);
            capped_means.push_back(s.mean);
        }
        auto pp = probe_ranks(plain, make_batch(plain, 4, 9500 + 100 * batch_idx), 1e-6);
        const auto& stats = pp.per_encoder.at("plain");
        for (std::size_t b = 0; b < stats.size(); ++b) {
            plain_means[b].push_back(stats[b].mean);
        }
    }
    for (double m : capped_means) {
        EXPECT_EQ(m, capped_means.front());
    }
    for (const auto& means : plain_means) {
        const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
        EXPECT_LE(*hi - *lo, 2.0);
    }
}
