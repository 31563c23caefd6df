// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "meteor/errors.hpp"
#include "meteor/matrix.hpp"

namespace meteor {

// Binary tensor file, little-endian throughout:
//   magic   8 bytes  "METEORT1"
//   dtype   1 byte   0x01 = 32-bit float
//   ndim    1 byte   1..3
//   dims    ndim x 8 bytes, unsigned
//   payload 4 * prod(dims) bytes
// Storage is 32-bit; in-memory compute stays 64-bit.

inline constexpr char kTensorMagic[8] = {'M', 'E', 'T', 'E', 'O', 'R', 'T', '1'};
inline constexpr std::uint8_t kDtypeF32 = 0x01;
inline constexpr std::size_t kMaxTensorElements = std::size_t{1} << 31;

struct TensorData {
    std::vector<std::uint64_t> dims;
    std::vector<double> values;  // widened from the 32-bit payload
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | p[i];
    }
    return v;
}

}  // namespace detail

inline void write_tensor(const std::string& path, const TensorData& tensor) {
    if (tensor.dims.empty() || tensor.dims.size() > 3) {
        throw InvalidInput("write_tensor: ndim must be 1..3");
    }
    std::uint64_t count = 1;
    for (std::uint64_t d : tensor.dims) {
        if (d == 0 || d > kMaxTensorElements) {
            throw InvalidInput("write_tensor: dimensions must lie in [1, 2^31]");
        }
        count *= d;
    }
    if (count != tensor.values.size()) {
        throw InvalidInput("write_tensor: value count does not match dims");
    }

    std::string bytes;
    bytes.reserve(10 + 8 * tensor.dims.size() + 4 * tensor.values.size());
    bytes.append(kTensorMagic, sizeof(kTensorMagic));
    bytes.push_back(static_cast<char>(kDtypeF32));
    bytes.push_back(static_cast<char>(tensor.dims.size()));
    for (std::uint64_t d : tensor.dims) {
        detail::put_u64_le(bytes, d);
    }
    for (double v : tensor.values) {
        const auto f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof(bits));
        for (int i = 0; i < 4; ++i) {
            bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
        }
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) {
        throw IoError("write_tensor: cannot open '" + path + "'");
    }
    file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!file) {
        throw IoError("write_tensor: short write to '" + path + "'");
    }
}

inline TensorData read_tensor(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("read_tensor: cannot open '" + path + "'");
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(file)),
                                     std::istreambuf_iterator<char>());

    if (bytes.size() < 10) {
        throw CorruptFile("read_tensor: file shorter than the fixed header");
    }
    if (std::memcmp(bytes.data(), kTensorMagic, sizeof(kTensorMagic)) != 0) {
        throw UnsupportedFormat("read_tensor: bad magic in '" + path + "'");
    }
    if (bytes[8] != kDtypeF32) {
        throw UnsupportedFormat("read_tensor: unknown dtype code");
    }
    const std::size_t ndim = bytes[9];
    if (ndim < 1 || ndim > 3) {
        throw CorruptFile("read_tensor: ndim must be 1..3");
    }
    if (bytes.size() < 10 + 8 * ndim) {
        throw CorruptFile("read_tensor: truncated dimension table");
    }

    TensorData tensor;
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        const std::uint64_t d = detail::get_u64_le(bytes.data() + 10 + 8 * i);
        if (d == 0 || d > kMaxTensorElements || count > kMaxTensorElements / d) {
            throw CorruptFile("read_tensor: dimension overflow");
        }
        tensor.dims.push_back(d);
        count *= d;
    }
    const std::size_t payload_off = 10 + 8 * ndim;
    if (bytes.size() != payload_off + 4 * count) {
        throw CorruptFile("read_tensor: payload length mismatch");
    }

    tensor.values.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        const unsigned char* p = bytes.data() + payload_off + 4 * i;
        for (int b = 3; b >= 0; --b) {
            bits = (bits << 8) | p[b];
        }
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        tensor.values.push_back(static_cast<double>(f));
    }
    return tensor;
}

inline TensorData to_tensor(const FeatureMatrix& a) {
    return TensorData{{a.rows, a.cols}, a.data};
}

inline FeatureMatrix to_matrix(const TensorData& t) {
    if (t.dims.size() != 2) {
        throw InvalidInput("to_matrix: tensor is not 2-D");
    }
    return FeatureMatrix(t.dims[0], t.dims[1], t.values);
}

}  // namespace meteor
