// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "meteor/decoder.hpp"
#include "meteor/encoder.hpp"
#include "meteor/errors.hpp"
#include "meteor/stage2.hpp"
#include "meteor/trace.hpp"

namespace meteor {

/// Counting convention, echoed in every report so numbers stay comparable:
/// one multiply-accumulate = 2 FLOPs; softmax, normalization and nonlinearity
/// cost 5 FLOPs per element.
inline constexpr const char* kFlopConvention =
    "1 MAC = 2 FLOPs; softmax/norm/activation = 5 FLOPs per element";
inline constexpr std::uint64_t kMacFlops = 2;
inline constexpr std::uint64_t kElementwiseFlops = 5;

/// Analytic cost totals for one pipeline configuration.
struct CostReport {
    std::map<std::string, std::uint64_t> per_stage_flops;
    std::uint64_t total_flops = 0;
    std::uint64_t baseline_total = 0;
    double reduction_fraction = 0.0;
    double token_reduction = 0.0;  // 1 - mean decoder visual tokens / initial count
    std::string convention = kFlopConvention;
};

namespace detail {

/// One pre-norm transformer block over n tokens of width d with an
/// mlp_hidden-wide MLP and `heads` attention heads.
/// MACs: projections 4*n*d^2, scores + weighted values 2*n^2*d, MLP 2*n*d*f.
/// Elementwise: softmax heads*n^2, two norms 2*n*d, activation n*f.
inline std::uint64_t block_flops(std::uint64_t n, std::uint64_t d, std::uint64_t f,
                                 std::uint64_t heads) {
    const std::uint64_t macs = 4 * n * d * d + 2 * n * n * d + 2 * n * d * f;
    const std::uint64_t elementwise = heads * n * n + 2 * n * d + n * f;
    return kMacFlops * macs + kElementwiseFlops * elementwise;
}

}  // namespace detail

/// Encoder cost with a live token count per block.
inline std::uint64_t encoder_flops(const EncoderSpec& spec,
                                   const std::vector<std::size_t>& token_counts_per_block) {
    if (token_counts_per_block.size() != spec.num_blocks) {
        throw InvalidInput("encoder_flops: one token count per block required");
    }
    const std::uint64_t f = (spec.mlp_hidden == 0) ? 4 * spec.dim : spec.mlp_hidden;
    std::uint64_t total = 0;
    for (std::size_t n : token_counts_per_block) {
        total += detail::block_flops(n, spec.dim, f, spec.num_heads);
    }
    return total;
}

/// Two-layer projector over n tokens.
inline std::uint64_t projector_flops(std::size_t n, const ProjectorSpec& spec) {
    const std::uint64_t macs =
        static_cast<std::uint64_t>(n) * (spec.in_dim * spec.hidden_dim +
                                         spec.hidden_dim * spec.out_dim);
    const std::uint64_t elementwise = static_cast<std::uint64_t>(n) * spec.hidden_dim;
    return kMacFlops * macs + kElementwiseFlops * elementwise;
}

/// Decoder prefill at a constant context length (no pruning).
inline std::uint64_t prefill_flops(const DecoderSpec& spec, std::size_t visual_count,
                                   std::size_t text_count) {
    const std::uint64_t f = (spec.mlp_hidden == 0) ? 4 * spec.dim : spec.mlp_hidden;
    const std::uint64_t n = visual_count + text_count;
    std::uint64_t total = 0;
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
        total += detail::block_flops(n, spec.dim, f, spec.num_heads);
    }
    return total;
}

/// Decoder prefill with per-layer visual counts from a trace.
inline std::uint64_t decoder_flops_from_counts(const DecoderSpec& spec,
                                               const std::vector<std::size_t>& per_layer_visual,
                                               std::size_t text_count) {
    if (per_layer_visual.size() != spec.num_layers) {
        throw InvalidTrace("decoder_flops_from_counts: one visual count per layer required");
    }
    const std::uint64_t f = (spec.mlp_hidden == 0) ? 4 * spec.dim : spec.mlp_hidden;
    std::uint64_t total = 0;
    for (std::size_t v : per_layer_visual) {
        total += detail::block_flops(v + text_count, spec.dim, f, spec.num_heads);
    }
    return total;
}

/// Full pipeline cost from the *actual* live counts recorded in a trace; the
/// baseline runs the same shapes without any pruning.
inline CostReport pipeline_cost(const std::vector<EncoderSpec>& encoders,
                                const std::vector<ProjectorSpec>& projectors,
                                const DecoderSpec& decoder, const PruneTrace& trace) {
    if (encoders.size() != projectors.size()) {
        throw InvalidInput("pipeline_cost: one projector per encoder required");
    }
    if (trace.decoder_layer_visual.size() != decoder.num_layers) {
        throw InvalidTrace("pipeline_cost: trace does not cover every decoder layer");
    }
    if (trace.initial_visual_total == 0) {
        throw InvalidTrace("pipeline_cost: trace has no initial token count");
    }

    CostReport report;
    std::uint64_t encoding = 0;
    std::uint64_t encoding_baseline = 0;
    std::uint64_t fusion = 0;
    std::uint64_t fusion_baseline = 0;
    for (std::size_t e = 0; e < encoders.size(); ++e) {
        const EncoderSpec& spec = encoders[e];
        auto counts_it = trace.encoder_block_tokens.find(spec.encoder_id);
        auto final_it = trace.encoder_final_tokens.find(spec.encoder_id);
        if (counts_it == trace.encoder_block_tokens.end() ||
            final_it == trace.encoder_final_tokens.end()) {
            throw InvalidTrace("pipeline_cost: trace missing encoder '" + spec.encoder_id + "'");
        }
        encoding += encoder_flops(spec, counts_it->second);
        encoding_baseline += encoder_flops(
            spec, std::vector<std::size_t>(spec.num_blocks, spec.token_count));
        fusion += projector_flops(final_it->second, projectors[e]);
        fusion_baseline += projector_flops(spec.token_count, projectors[e]);
    }
    const std::uint64_t decoding =
        decoder_flops_from_counts(decoder, trace.decoder_layer_visual, trace.text_tokens);
    const std::uint64_t decoding_baseline =
        prefill_flops(decoder, trace.initial_visual_total, trace.text_tokens);

    report.per_stage_flops["encoding"] = encoding;
    report.per_stage_flops["fusion"] = fusion;
    report.per_stage_flops["decoding"] = decoding;
    report.total_flops = encoding + fusion + decoding;
    report.baseline_total = encoding_baseline + fusion_baseline + decoding_baseline;
    report.reduction_fraction =
        1.0 - static_cast<double>(report.total_flops) / static_cast<double>(report.baseline_total);

    double mean_visual = 0.0;
    for (std::size_t v : trace.decoder_layer_visual) {
        mean_visual += static_cast<double>(v);
    }
    mean_visual /= static_cast<double>(trace.decoder_layer_visual.size());
    report.token_reduction =
        1.0 - mean_visual / static_cast<double>(trace.initial_visual_total);
    return report;
}

}  // namespace meteor
