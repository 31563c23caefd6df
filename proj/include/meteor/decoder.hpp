// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "meteor/encoder.hpp"
#include "meteor/errors.hpp"
#include "meteor/matrix.hpp"
#include "meteor/rng.hpp"

namespace meteor {

/// Deterministic toy decoder: causal pre-norm transformer over
/// [visual tokens || text tokens]. Stands in for the LLM prefill pass.
struct DecoderSpec {
    std::size_t num_layers = 0;
    std::size_t num_heads = 0;
    std::size_t dim = 0;
    std::size_t mlp_hidden = 0;  // defaults to 4 * dim when left at 0
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return dim / num_heads; }
};

inline void validate(const DecoderSpec& spec) {
    if (spec.num_layers == 0) {
        throw InvalidConfig("decoder: num_layers must be positive");
    }
    if (spec.num_heads == 0 || spec.dim == 0 || spec.dim % spec.num_heads != 0) {
        throw InvalidConfig("decoder: dim must be divisible by num_heads");
    }
}

struct DecoderState {
    DecoderSpec spec;
    std::vector<BlockWeights> layers;
};

inline DecoderState build_decoder(const DecoderSpec& spec_in) {
    DecoderSpec spec = spec_in;
    if (spec.mlp_hidden == 0) {
        spec.mlp_hidden = 4 * spec.dim;
    }
    validate(spec);
    DecoderState state;
    state.spec = spec;
    state.layers.reserve(spec.num_layers);
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
        BlockWeights w;
        w.wq = detail::seeded_weight(spec.seed, l, detail::kRoleWq, spec.dim, spec.dim, spec.dim);
        w.wk = detail::seeded_weight(spec.seed, l, detail::kRoleWk, spec.dim, spec.dim, spec.dim);
        w.wv = detail::seeded_weight(spec.seed, l, detail::kRoleWv, spec.dim, spec.dim, spec.dim);
        w.wo = detail::seeded_weight(spec.seed, l, detail::kRoleWo, spec.dim, spec.dim, spec.dim);
        w.w1 = detail::seeded_weight(spec.seed, l, detail::kRoleW1, spec.dim, spec.mlp_hidden,
                                     spec.dim);
        w.w2 = detail::seeded_weight(spec.seed, l, detail::kRoleW2, spec.mlp_hidden, spec.dim,
                                     spec.mlp_hidden);
        state.layers.push_back(std::move(w));
    }
    return state;
}

/// Seeded stand-in for an instruction prompt's token embeddings.
inline FeatureMatrix make_text_embeddings(const DecoderSpec& spec, std::size_t text_tokens,
                                          std::uint64_t prompt_seed) {
    constexpr std::uint64_t kRoleTextInput = 10;
    FeatureMatrix t(text_tokens, spec.dim);
    const std::uint64_t stream = stream_id(0, kRoleTextInput);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        t.data[i] = uniform_symmetric(prompt_seed, stream, i);
    }
    return t;
}

/// Per-head attention row of the last context position (the last instruction
/// token) over the whole current context. Each row sums to 1.
inline FeatureMatrix last_token_attention(const DecoderState& state, std::size_t layer_idx,
                                          const FeatureMatrix& context) {
    const DecoderSpec& spec = state.spec;
    if (layer_idx >= spec.num_layers) {
        throw InvalidConfig("last_token_attention: layer out of range");
    }
    if (context.rows == 0) {
        throw InvalidInput("last_token_attention: empty context");
    }
    const BlockWeights& w = state.layers[layer_idx];
    const FeatureMatrix normed = layer_norm_rows(context);
    const FeatureMatrix q = matmul(normed, w.wq);
    const FeatureMatrix k = matmul(normed, w.wk);

    const std::size_t heads = spec.num_heads;
    const std::size_t hd = spec.head_dim();
    const std::size_t last = context.rows - 1;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(hd));

    FeatureMatrix attn(heads, context.rows);
    std::vector<double> logits(context.rows);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        for (std::size_t j = 0; j < context.rows; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < hd; ++c) {
                s += q.at(last, off + c) * k.at(j, off + c);
            }
            logits[j] = s * inv_sqrt_dk;
        }
        const std::vector<double> p = softmax(logits);
        for (std::size_t j = 0; j < context.rows; ++j) {
            attn.at(h, j) = p[j];
        }
    }
    return attn;
}

/// One causal pre-norm layer: row i attends to rows 0..i.
inline FeatureMatrix forward_decoder_layer(const DecoderState& state, std::size_t layer_idx,
                                           const FeatureMatrix& context) {
    const DecoderSpec& spec = state.spec;
    if (layer_idx >= spec.num_layers) {
        throw InvalidConfig("forward_decoder_layer: layer out of range");
    }
    require_finite(context, "forward_decoder_layer");
    const BlockWeights& w = state.layers[layer_idx];
    const std::size_t n = context.rows;
    const std::size_t heads = spec.num_heads;
    const std::size_t hd = spec.head_dim();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(hd));

    FeatureMatrix x = context;
    const FeatureMatrix normed = layer_norm_rows(x);
    const FeatureMatrix q = matmul(normed, w.wq);
    const FeatureMatrix k = matmul(normed, w.wk);
    const FeatureMatrix v = matmul(normed, w.wv);

    FeatureMatrix heads_out(n, spec.dim);
    std::vector<double> logits;
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        for (std::size_t i = 0; i < n; ++i) {
            logits.assign(i + 1, 0.0);
            for (std::size_t j = 0; j <= i; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) {
                    s += q.at(i, off + c) * k.at(j, off + c);
                }
                logits[j] = s * inv_sqrt_dk;
            }
            const std::vector<double> attn = softmax(logits);
            for (std::size_t c = 0; c < hd; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
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
    if (!all_finite(x.data)) {
        throw NumericalError("forward_decoder_layer: non-finite activations at layer " +
                             std::to_string(layer_idx));
    }
    return x;
}

}  // namespace meteor
