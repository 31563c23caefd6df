// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>

namespace meteor {

/// FNV-1a over the raw bytes of a double sequence; stable fingerprint used in
/// trace entries and determinism tests.
inline std::uint64_t fnv1a_digest(std::span<const double> values) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int shift = 0; shift < 64; shift += 8) {
            h ^= (bits >> shift) & 0xffULL;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

inline std::string digest_hex(std::span<const double> values) {
    static const char* kHex = "0123456789abcdef";
    std::uint64_t h = fnv1a_digest(values);
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace meteor
