// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "meteor/encoder.hpp"
#include "meteor/errors.hpp"
#include "meteor/linalg.hpp"

namespace meteor {

/// Per-(encoder, block) rank statistics over a probe batch.
struct RankProfile {
    struct Stats {
        double mean = 0.0;
        double stddev = 0.0;  // population std across batch items
    };
    std::map<std::string, std::vector<Stats>> per_encoder;  // encoder_id -> per-block
    std::size_t batch_size = 0;

    const Stats& at(const std::string& encoder_id, std::size_t block_idx) const {
        auto it = per_encoder.find(encoder_id);
        if (it == per_encoder.end() || block_idx >= it->second.size()) {
            throw InvalidInput("RankProfile: no entry for encoder '" + encoder_id + "' block " +
                               std::to_string(block_idx));
        }
        return it->second[block_idx];
    }
};

/// Token budgets per prune point. Every point's per-encoder counts sum to the
/// point total exactly, respect the per-encoder minimum, and never grow from
/// one point to the next.
struct BudgetPlan {
    struct Point {
        std::size_t phase_idx = 0;
        std::size_t total = 0;                                // k_b
        std::map<std::string, std::size_t> per_encoder;        // k_b^l
        std::map<std::string, std::size_t> per_encoder_block;  // block pruned after
    };
    std::vector<Point> points;
    std::size_t min_tokens_per_encoder = 1;
};

/// Runs each encoder forward without pruning and collects the numerical rank
/// of every block's visual-token feature matrix, per batch item.
inline RankProfile probe_ranks(const std::vector<EncoderState>& encoders,
                               const std::vector<std::vector<FeatureMatrix>>& batch,
                               double rel_tol) {
    if (batch.empty()) {
        throw InvalidInput("probe_ranks: batch must be nonempty");
    }
    if (!(rel_tol > 0.0 && rel_tol < 1.0)) {
        throw InvalidConfig("probe_ranks: rel_tol must lie in (0, 1)");
    }
    for (const auto& item : batch) {
        if (item.size() != encoders.size()) {
            throw InvalidInput("probe_ranks: each batch item needs one input per encoder");
        }
    }

    RankProfile profile;
    profile.batch_size = batch.size();
    for (std::size_t e = 0; e < encoders.size(); ++e) {
        const EncoderState& state = encoders[e];
        const std::size_t blocks = state.spec.num_blocks;
        std::vector<std::vector<double>> ranks(blocks);
        for (const auto& item : batch) {
            BlockOutput current = embed_input(state, item[e]);
            for (std::size_t b = 0; b < blocks; ++b) {
                current = forward_block(state, b, current);
                ranks[b].push_back(
                    static_cast<double>(numerical_rank(current.features, rel_tol)));
            }
        }
        std::vector<RankProfile::Stats> stats(blocks);
        for (std::size_t b = 0; b < blocks; ++b) {
            double mean = 0.0;
            for (double r : ranks[b]) {
                mean += r;
            }
            mean /= static_cast<double>(ranks[b].size());
            double var = 0.0;
            for (double r : ranks[b]) {
                var += (r - mean) * (r - mean);
            }
            var /= static_cast<double>(ranks[b].size());
            stats[b].mean = mean;
            stats[b].stddev = std::sqrt(var);
        }
        profile.per_encoder[state.spec.encoder_id] = std::move(stats);
    }
    return profile;
}

namespace detail {

/// One prune point: largest-remainder split of `total` proportional to
/// `ranks`, floored at `min_tokens`, optionally capped by the previous
/// point's allocation. Returns counts aligned with `ranks`.
inline std::vector<std::size_t> allocate_point(const std::vector<double>& ranks, std::size_t total,
                                               std::size_t min_tokens,
                                               const std::vector<std::size_t>* caps) {
    const std::size_t count = ranks.size();
    double rank_sum = 0.0;
    for (double r : ranks) {
        if (r < 0.0) {
            throw InvalidInput("allocate_budget: negative rank");
        }
        rank_sum += r;
    }
    if (rank_sum <= 0.0) {
        throw DegenerateRanks("allocate_budget: all ranks are zero at a prune point");
    }
    if (total < count * min_tokens) {
        throw InvalidConfig("allocate_budget: total below the per-encoder minimum");
    }
    if (caps != nullptr) {
        std::size_t cap_sum = 0;
        for (std::size_t c : *caps) {
            cap_sum += c;
        }
        if (total > cap_sum) {
            throw InvalidConfig("allocate_budget: total exceeds the previous point's allocation");
        }
    }

    // Hamilton rounding: floors plus the largest fractional remainders.
    std::vector<double> raw(count);
    std::vector<std::size_t> alloc(count);
    std::size_t floor_sum = 0;
    for (std::size_t i = 0; i < count; ++i) {
        raw[i] = static_cast<double>(total) * ranks[i] / rank_sum;
        alloc[i] = static_cast<std::size_t>(std::floor(raw[i]));
        floor_sum += alloc[i];
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double fa = raw[a] - std::floor(raw[a]);
        const double fb = raw[b] - std::floor(raw[b]);
        if (fa != fb) {
            return fa > fb;
        }
        return a < b;
    });
    for (std::size_t i = 0; i < total - floor_sum; ++i) {
        ++alloc[order[i % count]];
    }

    // Raise anything under the floor; the deficit comes back out of the
    // largest allocations (ties resolved toward the smaller raw share so the
    // rank ordering of counts survives).
    auto overshoot = [&]() {
        std::size_t s = 0;
        for (std::size_t a : alloc) {
            s += a;
        }
        return s - total;
    };
    for (std::size_t i = 0; i < count; ++i) {
        alloc[i] = std::max(alloc[i], min_tokens);
        if (caps != nullptr) {
            alloc[i] = std::min(alloc[i], (*caps)[i]);
        }
    }
    std::size_t deficit_guard = 0;
    while (true) {
        std::size_t sum = 0;
        for (std::size_t a : alloc) {
            sum += a;
        }
        if (sum == total) {
            break;
        }
        if (++deficit_guard > total + count * (min_tokens + 1)) {
            throw InvalidConfig("allocate_budget: no feasible allocation under caps and minima");
        }
        if (sum > total) {
            std::size_t victim = count;
            for (std::size_t i = 0; i < count; ++i) {
                if (alloc[i] <= min_tokens) {
                    continue;
                }
                if (victim == count || alloc[i] > alloc[victim] ||
                    (alloc[i] == alloc[victim] && raw[i] < raw[victim]) ||
                    (alloc[i] == alloc[victim] && raw[i] == raw[victim] && i > victim)) {
                    victim = i;
                }
            }
            if (victim == count) {
                throw InvalidConfig("allocate_budget: minima make the total infeasible");
            }
            --alloc[victim];
        } else {
            // Under caps the rounded sum can fall short; top up the encoder
            // with headroom and the largest raw share.
            std::size_t target = count;
            for (std::size_t i = 0; i < count; ++i) {
                if (caps != nullptr && alloc[i] >= (*caps)[i]) {
                    continue;
                }
                if (target == count || raw[i] > raw[target] ||
                    (raw[i] == raw[target] && i < target)) {
                    target = i;
                }
            }
            if (target == count) {
                throw InvalidConfig("allocate_budget: caps make the total infeasible");
            }
            ++alloc[target];
        }
    }
    return alloc;
}

}  // namespace detail

/// Schedule input for allocate_budget: one entry per prune point in pipeline
/// order; block indices may differ per encoder (their depths differ).
struct PrunePointSpec {
    std::size_t phase_idx = 0;
    std::map<std::string, std::size_t> per_encoder_block;
};

/// Converts rank statistics into exact integer token budgets, proportional to
/// mean rank at the block feeding each prune point.
inline BudgetPlan allocate_budget(const RankProfile& profile,
                                  const std::vector<PrunePointSpec>& prune_points,
                                  const std::vector<std::size_t>& totals,
                                  std::size_t min_tokens_per_encoder = 1) {
    if (prune_points.size() != totals.size()) {
        throw InvalidConfig("allocate_budget: one total per prune point required");
    }
    for (std::size_t i = 1; i < totals.size(); ++i) {
        if (totals[i] > totals[i - 1]) {
            throw InvalidConfig("allocate_budget: totals must be non-increasing");
        }
    }

    BudgetPlan plan;
    plan.min_tokens_per_encoder = min_tokens_per_encoder;
    std::vector<std::size_t> previous;  // caps from the prior point
    for (std::size_t p = 0; p < prune_points.size(); ++p) {
        const PrunePointSpec& point = prune_points[p];
        std::vector<std::string> ids;
        std::vector<double> ranks;
        for (const auto& [encoder_id, block_idx] : point.per_encoder_block) {
            ids.push_back(encoder_id);
            ranks.push_back(profile.at(encoder_id, block_idx).mean);
        }
        const std::vector<std::size_t>* caps = previous.empty() ? nullptr : &previous;
        std::vector<std::size_t> alloc =
            detail::allocate_point(ranks, totals[p], min_tokens_per_encoder, caps);

        BudgetPlan::Point out;
        out.phase_idx = point.phase_idx;
        out.total = totals[p];
        for (std::size_t i = 0; i < ids.size(); ++i) {
            out.per_encoder[ids[i]] = alloc[i];
        }
        out.per_encoder_block = point.per_encoder_block;
        plan.points.push_back(std::move(out));
        previous = std::move(alloc);
    }
    return plan;
}

}  // namespace meteor
