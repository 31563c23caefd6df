// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace meteor {

/// One selection decision. Every application of a pruning criterion appends
/// exactly one entry, so a run can be audited and replayed.
struct TraceEntry {
    int stage = 0;                      // 1, 2 or 3
    std::string encoder_id;             // stage 1 only
    std::size_t block_idx = 0;          // stage 1: encoder block; stage 3: decoder layer
    std::string criterion;              // avg_similarity | cls_attention | mutual_redundancy | text_importance
    std::string scores_digest;          // fingerprint of the full score vector
    std::vector<std::size_t> kept_indices;
    std::size_t before = 0;
    std::size_t after = 0;
    std::vector<std::string> warnings;
};

/// Ordered record of a pipeline run plus the live token counts the cost model
/// consumes. Counts are indexed by block/layer input position.
struct PruneTrace {
    std::vector<TraceEntry> entries;
    std::map<std::string, std::vector<std::size_t>> encoder_block_tokens;
    std::map<std::string, std::size_t> encoder_final_tokens;
    std::vector<std::size_t> decoder_layer_visual;
    std::size_t fused_before = 0;
    std::size_t fused_after = 0;
    std::size_t initial_visual_total = 0;
    std::size_t text_tokens = 0;
};

}  // namespace meteor
