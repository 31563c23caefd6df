// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "meteor/errors.hpp"

namespace meteor {

/// Dense row-major matrix of token embeddings (tokens x dim). The universal
/// currency of every pruning stage; values are kept in 64-bit precision.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, size rows * cols

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    FeatureMatrix(std::size_t r, std::size_t c, std::vector<double> values)
        : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != rows * cols) {
            throw InvalidInput("FeatureMatrix: data length does not match rows * cols");
        }
    }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool empty() const { return rows == 0; }

    bool operator==(const FeatureMatrix& other) const = default;
};

inline bool all_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

inline void require_finite(const FeatureMatrix& a, const std::string& who) {
    if (!all_finite(a.data)) {
        throw InvalidInput(who + ": matrix contains non-finite entries");
    }
}

/// c = a * b, plain triple loop in i-k-j order.
inline FeatureMatrix matmul(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (a.cols != b.rows) {
        throw InvalidInput("matmul: inner dimensions disagree");
    }
    FeatureMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* crow = c.data.data() + i * b.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) {
                continue;
            }
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return c;
}

inline FeatureMatrix transpose(const FeatureMatrix& a) {
    FeatureMatrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            t.at(j, i) = a.at(i, j);
        }
    }
    return t;
}

inline double frobenius_norm(const FeatureMatrix& a) {
    double s = 0.0;
    for (double v : a.data) {
        s += v * v;
    }
    return std::sqrt(s);
}

inline double dot(std::span<const double> u, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        s += u[i] * v[i];
    }
    return s;
}

inline double vector_norm(std::span<const double> u) {
    return std::sqrt(dot(u, u));
}

/// Mean over rows; requires at least one row.
inline std::vector<double> mean_row(const FeatureMatrix& a) {
    if (a.rows == 0) {
        throw InvalidInput("mean_row: empty matrix");
    }
    std::vector<double> m(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            m[j] += a.at(i, j);
        }
    }
    for (double& v : m) {
        v /= static_cast<double>(a.rows);
    }
    return m;
}

/// New matrix with the selected rows, in the order given.
inline FeatureMatrix gather_rows(const FeatureMatrix& a, std::span<const std::size_t> indices) {
    FeatureMatrix out(indices.size(), a.cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= a.rows) {
            throw InvalidInput("gather_rows: index out of range");
        }
        auto src = a.row(indices[i]);
        auto dst = out.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) {
            dst[j] = src[j];
        }
    }
    return out;
}

/// Row-wise layer norm without learned affine parameters.
inline FeatureMatrix layer_norm_rows(const FeatureMatrix& a) {
    constexpr double kEps = 1e-6;
    FeatureMatrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        auto src = a.row(i);
        double mean = 0.0;
        for (double v : src) {
            mean += v;
        }
        mean /= static_cast<double>(a.cols);
        double var = 0.0;
        for (double v : src) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(a.cols);
        const double inv = 1.0 / std::sqrt(var + kEps);
        auto dst = out.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) {
            dst[j] = (src[j] - mean) * inv;
        }
    }
    return out;
}

}  // namespace meteor
