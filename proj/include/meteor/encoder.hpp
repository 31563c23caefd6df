// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "meteor/errors.hpp"
#include "meteor/linalg.hpp"
#include "meteor/matrix.hpp"
#include "meteor/rng.hpp"

namespace meteor {

/// Configuration of one deterministic toy vision encoder. Stands in for a
/// pretrained tower; all weights derive from the seed.
struct EncoderSpec {
    std::string encoder_id;
    std::size_t num_blocks = 0;
    std::size_t num_heads = 0;
    std::size_t token_count = 0;   // initial visual tokens, cls excluded
    std::size_t dim = 0;
    std::size_t mlp_hidden = 0;    // defaults to 4 * dim when left at 0
    std::uint64_t seed = 0;
    std::optional<std::size_t> synthetic_rank;  // caps feature-map rank when set

    std::size_t head_dim() const { return dim / num_heads; }
};

inline void validate(const EncoderSpec& spec) {
    if (spec.num_blocks < 3) {
        throw InvalidConfig("encoder '" + spec.encoder_id + "': num_blocks must be >= 3");
    }
    if (spec.num_heads == 0 || spec.dim == 0 || spec.dim % spec.num_heads != 0) {
        throw InvalidConfig("encoder '" + spec.encoder_id + "': dim must be divisible by num_heads");
    }
    if (spec.token_count < 1) {
        throw InvalidConfig("encoder '" + spec.encoder_id + "': token_count must be >= 1");
    }
    if (spec.synthetic_rank && (*spec.synthetic_rank == 0 || *spec.synthetic_rank > spec.dim)) {
        throw InvalidConfig("encoder '" + spec.encoder_id + "': synthetic_rank must be in [1, dim]");
    }
}

struct BlockWeights {
    FeatureMatrix wq, wk, wv, wo;  // dim x dim
    FeatureMatrix w1;              // dim x mlp_hidden
    FeatureMatrix w2;              // mlp_hidden x dim
    FeatureMatrix rank_f;          // dim x r (synthetic rank only)
    FeatureMatrix rank_g;          // r x dim
};

/// Immutable after build; forward passes never mutate it.
struct EncoderState {
    EncoderSpec spec;
    std::vector<BlockWeights> blocks;
    std::vector<double> cls_embedding;
};

/// State of the token stream between blocks. `features` holds visual tokens
/// only; the cls row rides along separately and is never a pruning candidate.
struct BlockOutput {
    FeatureMatrix features;                  // n x dim, visual tokens
    std::vector<double> cls_embedding;       // residual-stream cls row
    std::vector<double> cls_query;           // q_cls of the producing block
    FeatureMatrix keys;                      // key matrix of the visual tokens
    std::vector<std::size_t> kept_global_indices;  // rows -> original positions
};

/// Optional per-block capture for tests and diagnostics: full post-softmax
/// attention, one (n+1)x(n+1) matrix per head (row 0 = cls).
struct AttentionProbe {
    std::vector<FeatureMatrix> per_head;
};

namespace detail {

enum WeightRole : std::uint64_t {
    kRoleWq = 0,
    kRoleWk = 1,
    kRoleWv = 2,
    kRoleWo = 3,
    kRoleW1 = 4,
    kRoleW2 = 5,
    kRoleRankF = 6,
    kRoleRankG = 7,
    kRoleCls = 8,
    kRoleInput = 9,
};

inline FeatureMatrix seeded_weight(std::uint64_t seed, std::uint64_t layer, std::uint64_t role,
                                   std::size_t rows, std::size_t cols, std::size_t fan_in) {
    // Symmetric uniform with variance 1/fan_in keeps activations O(1).
    const double scale = std::sqrt(3.0 / static_cast<double>(fan_in));
    FeatureMatrix w(rows, cols);
    const std::uint64_t stream = stream_id(layer, role);
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        w.data[i] = scale * uniform_symmetric(seed, stream, i);
    }
    return w;
}

inline double gelu(double x) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + 0.044715 * x * x * x)));
}

}  // namespace detail

inline EncoderState build_encoder(const EncoderSpec& spec_in) {
    EncoderSpec spec = spec_in;
    if (spec.mlp_hidden == 0) {
        spec.mlp_hidden = 4 * spec.dim;
    }
    validate(spec);

    EncoderState state;
    state.spec = spec;
    state.blocks.reserve(spec.num_blocks);
    for (std::size_t b = 0; b < spec.num_blocks; ++b) {
        BlockWeights w;
        w.wq = detail::seeded_weight(spec.seed, b, detail::kRoleWq, spec.dim, spec.dim, spec.dim);
        w.wk = detail::seeded_weight(spec.seed, b, detail::kRoleWk, spec.dim, spec.dim, spec.dim);
        w.wv = detail::seeded_weight(spec.seed, b, detail::kRoleWv, spec.dim, spec.dim, spec.dim);
        w.wo = detail::seeded_weight(spec.seed, b, detail::kRoleWo, spec.dim, spec.dim, spec.dim);
        w.w1 = detail::seeded_weight(spec.seed, b, detail::kRoleW1, spec.dim, spec.mlp_hidden, spec.dim);
        w.w2 = detail::seeded_weight(spec.seed, b, detail::kRoleW2, spec.mlp_hidden, spec.dim,
                                     spec.mlp_hidden);
        if (spec.synthetic_rank) {
            const std::size_t r = *spec.synthetic_rank;
            w.rank_f = detail::seeded_weight(spec.seed, b, detail::kRoleRankF, spec.dim, r, r);
            w.rank_g = detail::seeded_weight(spec.seed, b, detail::kRoleRankG, r, spec.dim, spec.dim);
        }
        state.blocks.push_back(std::move(w));
    }
    state.cls_embedding.resize(spec.dim);
    const std::uint64_t cls_stream = stream_id(spec.num_blocks, detail::kRoleCls);
    for (std::size_t i = 0; i < spec.dim; ++i) {
        state.cls_embedding[i] = uniform_symmetric(spec.seed, cls_stream, i);
    }
    return state;
}

/// Seeded token grid standing in for a decoded image.
inline FeatureMatrix make_input(const EncoderSpec& spec, std::uint64_t image_seed) {
    FeatureMatrix a(spec.token_count, spec.dim);
    const std::uint64_t stream = stream_id(0, detail::kRoleInput);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        a.data[i] = uniform_symmetric(image_seed, stream, i);
    }
    return a;
}

/// Wraps raw input tokens into the stream state consumed by block 0.
inline BlockOutput embed_input(const EncoderState& state, const FeatureMatrix& tokens) {
    if (tokens.cols != state.spec.dim) {
        throw InvalidInput("embed_input: token dim does not match encoder dim");
    }
    require_finite(tokens, "embed_input");
    BlockOutput out;
    out.features = tokens;
    out.cls_embedding = state.cls_embedding;
    out.kept_global_indices.resize(tokens.rows);
    std::iota(out.kept_global_indices.begin(), out.kept_global_indices.end(), 0);
    return out;
}

/// Pre-norm attention + MLP block over [cls; visual]. Token count is
/// preserved; pruning lives outside the encoder.
inline BlockOutput forward_block(const EncoderState& state, std::size_t block_idx,
                                 const BlockOutput& input, AttentionProbe* probe = nullptr) {
    const EncoderSpec& spec = state.spec;
    if (block_idx >= spec.num_blocks) {
        throw InvalidConfig("forward_block: block index out of range");
    }
    require_finite(input.features, "forward_block");
    const BlockWeights& w = state.blocks[block_idx];

    const std::size_t n = input.features.rows;
    const std::size_t total = n + 1;
    const std::size_t d = spec.dim;
    const std::size_t heads = spec.num_heads;
    const std::size_t hd = spec.head_dim();

    FeatureMatrix x(total, d);
    for (std::size_t j = 0; j < d; ++j) {
        x.at(0, j) = input.cls_embedding[j];
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            x.at(i + 1, j) = input.features.at(i, j);
        }
    }

    const FeatureMatrix normed = layer_norm_rows(x);
    const FeatureMatrix q = matmul(normed, w.wq);
    const FeatureMatrix k = matmul(normed, w.wk);
    const FeatureMatrix v = matmul(normed, w.wv);

    if (probe != nullptr) {
        probe->per_head.assign(heads, FeatureMatrix(total, total));
    }

    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(hd));
    FeatureMatrix heads_out(total, d);
    std::vector<double> logits(total);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        for (std::size_t i = 0; i < total; ++i) {
            for (std::size_t j = 0; j < total; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) {
                    s += q.at(i, off + c) * k.at(j, off + c);
                }
                logits[j] = s * inv_sqrt_dk;
            }
            const std::vector<double> attn = softmax(logits);
            if (probe != nullptr) {
                for (std::size_t j = 0; j < total; ++j) {
                    probe->per_head[h].at(i, j) = attn[j];
                }
            }
            for (std::size_t c = 0; c < hd; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < total; ++j) {
                    acc += attn[j] * v.at(j, off + c);
                }
                heads_out.at(i, off + c) = acc;
            }
        }
    }

    const FeatureMatrix attn_out = matmul(heads_out, w.wo);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        x.data[i] += attn_out.data[i];
    }

    const FeatureMatrix normed2 = layer_norm_rows(x);
    FeatureMatrix hidden = matmul(normed2, w.w1);
    for (double& hval : hidden.data) {
        hval = detail::gelu(hval);
    }
    const FeatureMatrix mlp_out = matmul(hidden, w.w2);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        x.data[i] += mlp_out.data[i];
    }

    if (spec.synthetic_rank) {
        // Rank bottleneck on the whole block output caps the feature-map rank.
        x = matmul(matmul(x, w.rank_f), w.rank_g);
    }

    if (!all_finite(x.data)) {
        throw NumericalError("forward_block: non-finite activations in encoder '" +
                             spec.encoder_id + "' block " + std::to_string(block_idx));
    }

    BlockOutput out;
    out.features = FeatureMatrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out.features.at(i, j) = x.at(i + 1, j);
        }
    }
    out.cls_embedding.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        out.cls_embedding[j] = x.at(0, j);
    }
    out.cls_query.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        out.cls_query[j] = q.at(0, j);
    }
    out.keys = FeatureMatrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out.keys.at(i, j) = k.at(i + 1, j);
        }
    }
    out.kept_global_indices = input.kept_global_indices;
    return out;
}

/// Full unpruned forward; returns every block's output in order.
inline std::vector<BlockOutput> forward_all_blocks(const EncoderState& state,
                                                   const FeatureMatrix& tokens) {
    std::vector<BlockOutput> outputs;
    outputs.reserve(state.spec.num_blocks);
    BlockOutput current = embed_input(state, tokens);
    for (std::size_t b = 0; b < state.spec.num_blocks; ++b) {
        current = forward_block(state, b, current);
        outputs.push_back(current);
    }
    return outputs;
}

}  // namespace meteor
