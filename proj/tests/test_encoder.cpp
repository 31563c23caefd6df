// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#include "meteor/encoder.hpp"

#include <gtest/gtest.h>

#include "meteor/digest.hpp"
#include "meteor/linalg.hpp"

using namespace meteor;

namespace {

EncoderSpec small_spec() {
    EncoderSpec spec;
    spec.encoder_id = "enc_test";
    spec.num_blocks = 4;
    spec.num_heads = 2;
    spec.token_count = 12;
    spec.dim = 16;
    spec.mlp_hidden = 32;
    spec.seed = 1234;
    return spec;
}

std::uint64_t weight_checksum(const EncoderState& state) {
    std::uint64_t h = 0;
    for (const auto& b : state.blocks) {
        h ^= fnv1a_digest(b.wq.data) ^ fnv1a_digest(b.wk.data) ^ fnv1a_digest(b.wv.data) ^
             fnv1a_digest(b.wo.data) ^ fnv1a_digest(b.w1.data) ^ fnv1a_digest(b.w2.data);
    }
    h ^= fnv1a_digest(state.cls_embedding);
    return h;
}

}  // namespace

TEST(BuildEncoder, DeterministicWeights) {
    auto a = build_encoder(small_spec());
    auto b = build_encoder(small_spec());
    EXPECT_EQ(weight_checksum(a), weight_checksum(b));
}

TEST(BuildEncoder, SeedChangesWeights) {
    auto a = build_encoder(small_spec());
    auto spec = small_spec();
    spec.seed = 4321;
    auto b = build_encoder(spec);
    EXPECT_NE(weight_checksum(a), weight_checksum(b));
}

TEST(BuildEncoder, InvariantViolationsRejected) {
    auto spec = small_spec();
    spec.num_blocks = 2;
    EXPECT_THROW(build_encoder(spec), InvalidConfig);

    spec = small_spec();
    spec.dim = 15;  // not divisible by 2 heads
    EXPECT_THROW(build_encoder(spec), InvalidConfig);

    spec = small_spec();
    spec.token_count = 0;
    EXPECT_THROW(build_encoder(spec), InvalidConfig);

    spec = small_spec();
    spec.synthetic_rank = 17;  // above dim
    EXPECT_THROW(build_encoder(spec), InvalidConfig);
}

TEST(BuildEncoder, SyntheticRankCapsFeatureRank) {
    auto spec = small_spec();
    spec.synthetic_rank = 4;
    auto state = build_encoder(spec);
    auto outputs = forward_all_blocks(state, make_input(spec, 9));
    for (const auto& block : outputs) {
        EXPECT_LE(numerical_rank(block.features, 1e-6), 4u);
    }
}

TEST(ForwardBlock, PreservesTokenCount) {
    auto spec = small_spec();
    spec.token_count = 1;
    auto state = build_encoder(spec);
    auto out = forward_block(state, 0, embed_input(state, make_input(spec, 3)));
    EXPECT_EQ(out.features.rows, 1u);
    EXPECT_EQ(out.keys.rows, 1u);
    EXPECT_EQ(out.kept_global_indices.size(), 1u);
}

TEST(ForwardBlock, Deterministic) {
    auto state = build_encoder(small_spec());
    auto input = embed_input(state, make_input(state.spec, 5));
    auto a = forward_block(state, 1, input);
    auto b = forward_block(state, 1, input);
    EXPECT_EQ(a.features.data, b.features.data);
    EXPECT_EQ(a.cls_query, b.cls_query);
    EXPECT_EQ(a.keys.data, b.keys.data);
}

TEST(ForwardBlock, AttentionRowsSumToOne) {
    auto state = build_encoder(small_spec());
    auto input = embed_input(state, make_input(state.spec, 8));
    for (std::size_t b = 0; b < state.spec.num_blocks; ++b) {
        AttentionProbe probe;
        input = forward_block(state, b, input, &probe);
        ASSERT_EQ(probe.per_head.size(), state.spec.num_heads);
        for (const auto& head : probe.per_head) {
            for (std::size_t i = 0; i < head.rows; ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < head.cols; ++j) {
                    sum += head.at(i, j);
                }
                EXPECT_NEAR(sum, 1.0, 1e-9);
            }
        }
    }
}

TEST(ForwardBlock, FullForwardIsPureFunctionOfSpecAndInput) {
    auto spec = small_spec();
    auto s1 = build_encoder(spec);
    auto s2 = build_encoder(spec);
    auto out1 = forward_all_blocks(s1, make_input(spec, 77));
    auto out2 = forward_all_blocks(s2, make_input(spec, 77));
    ASSERT_EQ(out1.size(), out2.size());
    for (std::size_t b = 0; b < out1.size(); ++b) {
        EXPECT_EQ(out1[b].features.data, out2[b].features.data);
    }
}

TEST(ForwardBlock, KeepsIndicesAligned) {
    auto state = build_encoder(small_spec());
    auto outputs = forward_all_blocks(state, make_input(state.spec, 2));
    for (const auto& block : outputs) {
        EXPECT_EQ(block.keys.rows, block.features.rows);
        ASSERT_EQ(block.kept_global_indices.size(), block.features.rows);
        for (std::size_t i = 1; i < block.kept_global_indices.size(); ++i) {
            EXPECT_LT(block.kept_global_indices[i - 1], block.kept_global_indices[i]);
        }
        EXPECT_LT(block.kept_global_indices.back(), state.spec.token_count);
    }
}
