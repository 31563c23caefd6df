// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace meteor {

// Counter-based deterministic generator. Every value is a pure function of
// (seed, stream, index), so weight generation is order-independent and
// bit-identical across platforms and across repeated builds of the same spec.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Mixes an arbitrary key tuple into a single 64-bit state.
inline std::uint64_t mix_key(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::uint64_t h = detail::splitmix64(seed);
    h = detail::splitmix64(h ^ (stream + 0x517cc1b727220a95ULL));
    h = detail::splitmix64(h ^ (index + 0x2545f4914f6cdd1dULL));
    return h;
}

/// Uniform double in [0, 1) from a counter key (53 mantissa bits).
inline double uniform01(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return static_cast<double>(mix_key(seed, stream, index) >> 11) * 0x1.0p-53;
}

/// Uniform double in [-1, 1).
inline double uniform_symmetric(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return 2.0 * uniform01(seed, stream, index) - 1.0;
}

/// Stream ids separate the roles a single seed fans out into (weights of one
/// layer, cls embedding, input grids, ...). Composing role and layer into one
/// stream keeps the (seed, layer, role) keying explicit at call sites.
inline std::uint64_t stream_id(std::uint64_t layer, std::uint64_t role) {
    return layer * 64 + role;
}

}  // namespace meteor
