// Copyright (C) 2026 The meteor-prune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <unordered_set>
#include <vector>

#include "meteor/errors.hpp"
#include "meteor/matrix.hpp"

namespace meteor {

/// Thin SVD A = U * diag(s) * V^T with singular values sorted descending.
/// U is rows x r and V is cols x r with orthonormal columns, r = min(rows, cols).
struct SvdResult {
    std::vector<double> singular_values;
    FeatureMatrix left_vectors;
    FeatureMatrix right_vectors;
};

/// Selection result: (index, score) entries sorted by score descending,
/// ties broken by ascending index. Indices are unique.
struct ScoredIndex {
    std::size_t index = 0;
    double score = 0.0;

    bool operator==(const ScoredIndex&) const = default;
};

using ScoredIndexList = std::vector<ScoredIndex>;

namespace detail {

// One-sided Jacobi on a tall matrix held column-major in `cols` (each entry is
// one column of length m). Rotations orthogonalize column pairs; V accumulates
// the right factor when requested.
inline void jacobi_sweeps(std::vector<std::vector<double>>& cols, FeatureMatrix* v_accum) {
    const std::size_t n = cols.size();
    if (n < 2) {
        return;
    }
    const std::size_t m = cols[0].size();
    constexpr double kTol = 1e-15;
    constexpr std::size_t kMaxSweeps = 64;

    for (std::size_t sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double dot_ij = 0.0;
                double dot_ii = 0.0;
                double dot_jj = 0.0;
                for (std::size_t k = 0; k < m; ++k) {
                    dot_ij += cols[i][k] * cols[j][k];
                    dot_ii += cols[i][k] * cols[i][k];
                    dot_jj += cols[j][k] * cols[j][k];
                }
                if (std::abs(dot_ij) <= kTol * std::sqrt(dot_ii * dot_jj) || dot_ij == 0.0) {
                    continue;
                }
                rotated = true;
                double c;
                double s;
                const double diff = dot_jj - dot_ii;
                if (std::abs(diff) < 1e-30 * (dot_ii + dot_jj)) {
                    c = 1.0 / std::sqrt(2.0);
                    s = (dot_ij > 0.0) ? c : -c;
                } else {
                    const double zeta = diff / (2.0 * dot_ij);
                    const double sgn = (zeta >= 0.0) ? 1.0 : -1.0;
                    const double t = sgn / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                    c = 1.0 / std::sqrt(1.0 + t * t);
                    s = c * t;
                }
                for (std::size_t k = 0; k < m; ++k) {
                    const double xi = cols[i][k];
                    const double xj = cols[j][k];
                    cols[i][k] = c * xi - s * xj;
                    cols[j][k] = s * xi + c * xj;
                }
                if (v_accum != nullptr) {
                    for (std::size_t k = 0; k < v_accum->rows; ++k) {
                        const double vi = v_accum->at(k, i);
                        const double vj = v_accum->at(k, j);
                        v_accum->at(k, i) = c * vi - s * vj;
                        v_accum->at(k, j) = s * vi + c * vj;
                    }
                }
            }
        }
        if (!rotated) {
            break;
        }
    }
}

// Completes zero columns of an orthonormal set with standard basis vectors
// orthogonalized against the existing columns (deterministic).
inline void complete_orthonormal(FeatureMatrix& u, const std::vector<std::size_t>& zero_cols) {
    const std::size_t m = u.rows;
    for (std::size_t zc : zero_cols) {
        for (std::size_t cand = 0; cand < m; ++cand) {
            std::vector<double> e(m, 0.0);
            e[cand] = 1.0;
            for (std::size_t c = 0; c < u.cols; ++c) {
                if (c == zc) {
                    continue;
                }
                double proj = 0.0;
                for (std::size_t k = 0; k < m; ++k) {
                    proj += e[k] * u.at(k, c);
                }
                for (std::size_t k = 0; k < m; ++k) {
                    e[k] -= proj * u.at(k, c);
                }
            }
            double norm = 0.0;
            for (double v : e) {
                norm += v * v;
            }
            norm = std::sqrt(norm);
            if (norm > 1e-8) {
                for (std::size_t k = 0; k < m; ++k) {
                    u.at(k, zc) = e[k] / norm;
                }
                break;
            }
        }
    }
}

// Singular values only, no U/V bookkeeping. Runs Jacobi on the thinner side.
inline std::vector<double> singular_values_only(const FeatureMatrix& a) {
    const bool tall = a.rows >= a.cols;
    const std::size_t m = tall ? a.rows : a.cols;
    const std::size_t n = tall ? a.cols : a.rows;
    std::vector<std::vector<double>> cols(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            if (tall) {
                cols[j][i] = a.at(i, j);
            } else {
                cols[i][j] = a.at(i, j);
            }
        }
    }
    jacobi_sweeps(cols, nullptr);
    std::vector<double> sigma(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (double v : cols[j]) {
            s += v * v;
        }
        sigma[j] = std::sqrt(s);
    }
    std::sort(sigma.begin(), sigma.end(), std::greater<>());
    return sigma;
}

}  // namespace detail

/// One-sided Jacobi SVD. Accurate for the small dense matrices this library
/// works with; the wide case is handled by factoring the transpose.
inline SvdResult svd(const FeatureMatrix& a) {
    require_finite(a, "svd");
    if (a.rows == 0) {
        throw InvalidInput("svd: matrix must have at least one row");
    }

    const bool tall = a.rows >= a.cols;
    const std::size_t m = tall ? a.rows : a.cols;
    const std::size_t n = tall ? a.cols : a.rows;

    std::vector<std::vector<double>> cols(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            if (tall) {
                cols[j][i] = a.at(i, j);
            } else {
                cols[i][j] = a.at(i, j);
            }
        }
    }

    FeatureMatrix v(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        v.at(i, i) = 1.0;
    }
    detail::jacobi_sweeps(cols, &v);

    std::vector<double> sigma(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (double val : cols[j]) {
            s += val * val;
        }
        sigma[j] = std::sqrt(s);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    FeatureMatrix u_sorted(m, n);
    FeatureMatrix v_sorted(n, n);
    std::vector<double> sigma_sorted(n, 0.0);
    std::vector<std::size_t> zero_cols;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        sigma_sorted[j] = sigma[src];
        if (sigma[src] > 0.0) {
            for (std::size_t k = 0; k < m; ++k) {
                u_sorted.at(k, j) = cols[src][k] / sigma[src];
            }
        } else {
            zero_cols.push_back(j);
        }
        for (std::size_t k = 0; k < n; ++k) {
            v_sorted.at(k, j) = v.at(k, src);
        }
    }
    detail::complete_orthonormal(u_sorted, zero_cols);

    SvdResult out;
    out.singular_values = std::move(sigma_sorted);
    if (tall) {
        out.left_vectors = std::move(u_sorted);
        out.right_vectors = std::move(v_sorted);
    } else {
        out.left_vectors = std::move(v_sorted);
        out.right_vectors = std::move(u_sorted);
    }
    return out;
}

/// Count of singular values above rel_tol * sigma_max. The zero matrix has rank 0.
inline std::size_t numerical_rank(const FeatureMatrix& a, double rel_tol) {
    if (!(rel_tol > 0.0 && rel_tol < 1.0)) {
        throw InvalidConfig("numerical_rank: rel_tol must lie in (0, 1)");
    }
    require_finite(a, "numerical_rank");
    if (a.rows == 0) {
        return 0;
    }
    const std::vector<double> sigma = detail::singular_values_only(a);
    const double sigma_max = sigma.empty() ? 0.0 : sigma.front();
    if (sigma_max == 0.0) {
        return 0;
    }
    const double threshold = rel_tol * sigma_max;
    std::size_t rank = 0;
    for (double s : sigma) {
        if (s > threshold) {
            ++rank;
        }
    }
    return rank;
}

/// Sum of singular values; the diversity measure of a token set.
inline double nuclear_norm(const FeatureMatrix& a) {
    require_finite(a, "nuclear_norm");
    if (a.rows == 0) {
        return 0.0;
    }
    const std::vector<double> sigma = detail::singular_values_only(a);
    return std::accumulate(sigma.begin(), sigma.end(), 0.0);
}

/// Cosine similarity; vectors with norm below 1e-12 compare as 0 so that
/// degenerate tokens never dominate a selection.
inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw InvalidInput("cosine_similarity: length mismatch");
    }
    if (!all_finite(u) || !all_finite(v)) {
        throw InvalidInput("cosine_similarity: non-finite input");
    }
    constexpr double kZeroNorm = 1e-12;
    const double nu = vector_norm(u);
    const double nv = vector_norm(v);
    if (nu < kZeroNorm || nv < kZeroNorm) {
        return 0.0;
    }
    const double c = dot(u, v) / (nu * nv);
    return std::clamp(c, -1.0, 1.0);
}

/// Numerically stable softmax (max subtraction).
inline std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) {
        throw InvalidInput("softmax: empty input");
    }
    if (!all_finite(logits)) {
        throw InvalidInput("softmax: non-finite input");
    }
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - max_logit);
        sum += out[i];
    }
    for (double& v : out) {
        v /= sum;
    }
    return out;
}

/// The k highest-scoring indices, ties broken by ascending index, result
/// sorted by (score desc, index asc). Deterministic by construction.
inline ScoredIndexList top_k_indices(std::span<const double> scores, std::size_t k) {
    if (k > scores.size()) {
        throw InvalidK("top_k_indices: k exceeds score count");
    }
    if (!all_finite(scores)) {
        throw InvalidInput("top_k_indices: non-finite scores");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return a < b;
    });
    ScoredIndexList out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back({order[i], scores[order[i]]});
    }
    return out;
}

/// Ascending index view of a selection (the gather order used by pruning).
inline std::vector<std::size_t> sorted_indices(const ScoredIndexList& list) {
    std::vector<std::size_t> idx;
    idx.reserve(list.size());
    for (const auto& e : list) {
        idx.push_back(e.index);
    }
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Shannon entropy in nats of a probability vector, with 0 * ln 0 := 0.
inline double shannon_entropy(std::span<const double> p) {
    if (p.empty()) {
        throw InvalidInput("shannon_entropy: empty input");
    }
    double sum = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v < 0.0) {
            throw InvalidInput("shannon_entropy: entries must be finite and non-negative");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw InvalidInput("shannon_entropy: probabilities must sum to 1");
    }
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) {
            h -= v * std::log(v);
        }
    }
    return std::max(h, 0.0);
}

/// Kendall rank correlation between two orderings of the same index set.
/// Permutations carry no ties, so tau = (concordant - discordant) / (n(n-1)/2).
inline double kendall_tau(std::span<const std::size_t> rank_a, std::span<const std::size_t> rank_b) {
    if (rank_a.size() != rank_b.size()) {
        throw InvalidInput("kendall_tau: length mismatch");
    }
    const std::size_t n = rank_a.size();
    std::unordered_set<std::size_t> set_a(rank_a.begin(), rank_a.end());
    if (set_a.size() != n) {
        throw InvalidInput("kendall_tau: first list has duplicate indices");
    }
    for (std::size_t v : rank_b) {
        if (set_a.count(v) == 0) {
            throw InvalidInput("kendall_tau: lists are not permutations of the same set");
        }
    }
    std::unordered_set<std::size_t> set_b(rank_b.begin(), rank_b.end());
    if (set_b.size() != n) {
        throw InvalidInput("kendall_tau: second list has duplicate indices");
    }
    if (n < 2) {
        return 1.0;
    }
    // position of each element in rank_b
    std::vector<std::pair<std::size_t, std::size_t>> pos_b;
    pos_b.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        pos_b.emplace_back(rank_b[i], i);
    }
    std::sort(pos_b.begin(), pos_b.end());
    auto lookup_b = [&](std::size_t value) {
        auto it = std::lower_bound(pos_b.begin(), pos_b.end(), std::make_pair(value, std::size_t{0}),
                                   [](const auto& lhs, const auto& rhs) { return lhs.first < rhs.first; });
        return it->second;
    };
    long long concordant = 0;
    long long discordant = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto bi = lookup_b(rank_a[i]);
            const auto bj = lookup_b(rank_a[j]);
            if (bi < bj) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
    return static_cast<double>(concordant - discordant) / pairs;
}

}  // namespace meteor
