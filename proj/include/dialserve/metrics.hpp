// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dialserve/compressor.hpp"
#include "dialserve/error.hpp"
#include "dialserve/sparsifier.hpp"
#include "dialserve/tensor.hpp"

namespace dialserve::metrics {

/// Token-bag F1: 2 * |pred ∩ ref| / (|pred| + |ref|) with multiset intersection.
template <class T>
double f1(std::span<const T> prediction, std::span<const T> reference) {
    require(!reference.empty(), ErrorCode::EmptyReference, "f1 needs a nonempty reference");
    std::map<T, std::size_t> counts;
    for (const auto& t : reference) {
        ++counts[t];
    }
    std::size_t common = 0;
    for (const auto& t : prediction) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) {
        return 0.0;
    }
    return static_cast<double>(2 * common) / static_cast<double>(prediction.size() + reference.size());
}

template <class T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// Recall-form Rouge-L: LCS(candidate, reference) / |reference|.
template <class T>
double rouge_l(std::span<const T> candidate, std::span<const T> reference) {
    require(!reference.empty(), ErrorCode::EmptyReference, "rouge_l needs a nonempty reference");
    return static_cast<double>(lcs_length(candidate, reference)) / static_cast<double>(reference.size());
}

template <class T>
double accuracy(std::span<const T> predictions, std::span<const T> references) {
    require(!references.empty(), ErrorCode::EmptyReference, "accuracy needs at least one reference label");
    require(predictions.size() == references.size(), ErrorCode::SizeMismatch, "one prediction per reference");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < references.size(); ++i) {
        correct += predictions[i] == references[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(references.size());
}

using Series = std::vector<std::pair<double, double>>;

/// Lines of a block pooled across kinds by descending weight (slash first on
/// equal weight, then smaller index).
inline std::vector<prefill::Line> pooled_lines(const AttentionBlock& block) {
    const auto sums = prefill::line_sums(block);
    std::vector<prefill::Line> all = sums.slashes;
    all.insert(all.end(), sums.verticals.begin(), sums.verticals.end());
    std::stable_sort(all.begin(), all.end(), [](const prefill::Line& a, const prefill::Line& b) {
        if (a.weight != b.weight) {
            return a.weight > b.weight;
        }
        if (a.kind != b.kind) {
            return a.kind == prefill::LineKind::Slash;
        }
        return a.index < b.index;
    });
    return all;
}

/// For each eta: exact mass fraction covered by the top floor(eta * 2n) lines,
/// averaged over blocks.
inline Series recovery_curve(const std::vector<AttentionBlock>& blocks, std::span<const double> etas) {
    require(!blocks.empty(), ErrorCode::EmptyBlock, "recovery curve needs at least one block");
    for (std::size_t i = 0; i < etas.size(); ++i) {
        require(etas[i] >= 0.0 && etas[i] <= 1.0, ErrorCode::InvalidArgument, "eta must lie in [0, 1]");
        require(i == 0 || etas[i] > etas[i - 1], ErrorCode::InvalidArgument, "eta grid must increase");
    }
    std::vector<std::vector<prefill::Line>> pooled;
    pooled.reserve(blocks.size());
    for (const auto& b : blocks) {
        pooled.push_back(pooled_lines(b));
    }
    Series out;
    for (double eta : etas) {
        double sum = 0.0;
        for (std::size_t h = 0; h < blocks.size(); ++h) {
            const auto budget = static_cast<std::size_t>(eta * 2.0 * static_cast<double>(blocks[h].n_total) + 1e-9);
            LineSelection sel;
            for (std::size_t i = 0; i < std::min(budget, pooled[h].size()); ++i) {
                const auto& l = pooled[h][i];
                (l.kind == prefill::LineKind::Slash ? sel.slashes : sel.verticals).push_back(l.index);
            }
            sum += sel.empty() ? 0.0 : prefill::coverage_ratio(blocks[h], sel);
        }
        out.emplace_back(eta, sum / static_cast<double>(blocks.size()));
    }
    return out;
}

namespace detail {

inline std::size_t intersection_size(std::vector<std::size_t> a, std::vector<std::size_t> b) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    std::vector<std::size_t> common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
    return common.size();
}

inline std::size_t distinct(std::vector<std::size_t> a) {
    std::sort(a.begin(), a.end());
    return static_cast<std::size_t>(std::unique(a.begin(), a.end()) - a.begin());
}

}  // namespace detail

/// (|S_i ∩ S_j| + |V_i ∩ V_j|) / (|S_i ∪ S_j| + |V_i ∪ V_j|); two empty plans score 1.
inline double line_overlap_ratio(const prefill::HeadPlan& a, const prefill::HeadPlan& b) {
    require(a.n_total == b.n_total, ErrorCode::DimensionMismatch, "plans cover blocks of different widths");
    const auto& x = a.lines;
    const auto& y = b.lines;
    const std::size_t inter =
        detail::intersection_size(x.slashes, y.slashes) + detail::intersection_size(x.verticals, y.verticals);
    const std::size_t uni = detail::distinct(x.slashes) + detail::distinct(y.slashes) + detail::distinct(x.verticals) +
                            detail::distinct(y.verticals) - inter;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Share of the lines of C2 that C1 also selected.
inline double segment_overlap(const prefill::HeadPlan& c1, const prefill::HeadPlan& c2) {
    require(c1.n_total == c2.n_total, ErrorCode::DimensionMismatch, "plans cover blocks of different widths");
    const std::size_t denom = detail::distinct(c2.lines.slashes) + detail::distinct(c2.lines.verticals);
    require(denom > 0, ErrorCode::EmptyPlan, "segment overlap needs lines in the second plan");
    const std::size_t inter = detail::intersection_size(c1.lines.slashes, c2.lines.slashes) +
                              detail::intersection_size(c1.lines.verticals, c2.lines.verticals);
    return static_cast<double>(inter) / static_cast<double>(denom);
}

/// Splits n_rows into n_blocks contiguous ranges [begin, end); the first
/// n_rows % n_blocks ranges get one extra row.
inline std::vector<std::pair<std::size_t, std::size_t>> equal_blocks(std::size_t n_rows, std::size_t n_blocks) {
    require(n_blocks >= 1 && n_blocks <= n_rows, ErrorCode::InvalidArgument, "need 1 <= n_blocks <= n_rows");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t begin = 0;
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const std::size_t len = n_rows / n_blocks + (b < n_rows % n_blocks ? 1 : 0);
        out.emplace_back(begin, begin + len);
        begin += len;
    }
    return out;
}

/// Pairwise overlap_rate of per-block selections; every selection holds B ids.
inline Matrix block_overlap_series(const std::vector<std::vector<std::size_t>>& selections, std::size_t budget) {
    Matrix out(selections.size(), selections.size());
    for (std::size_t i = 0; i < selections.size(); ++i) {
        for (std::size_t j = 0; j < selections.size(); ++j) {
            out(i, j) = kv::overlap_rate(selections[i], selections[j], budget);
        }
    }
    return out;
}

/// Mean overlap over block pairs at distance 1 and at distance >= 2.
struct DistanceSplit {
    double adjacent = 0.0;
    double distant = 0.0;
};

inline DistanceSplit split_by_distance(const Matrix& overlaps) {
    DistanceSplit s;
    std::size_t n_adj = 0;
    std::size_t n_far = 0;
    for (std::size_t i = 0; i < overlaps.rows(); ++i) {
        for (std::size_t j = i + 1; j < overlaps.cols(); ++j) {
            if (j - i == 1) {
                s.adjacent += overlaps(i, j);
                ++n_adj;
            } else {
                s.distant += overlaps(i, j);
                ++n_far;
            }
        }
    }
    s.adjacent = n_adj ? s.adjacent / static_cast<double>(n_adj) : 0.0;
    s.distant = n_far ? s.distant / static_cast<double>(n_far) : 0.0;
    return s;
}

struct MetricsRecord {
    std::string instance_id;
    std::vector<std::map<std::string, double>> turn_scores;
    std::map<std::string, Series> series;
    std::map<std::string, std::uint64_t> op_counts;
    std::vector<double> wall_ms;

    void validate() const {
        for (const auto& turn : turn_scores) {
            for (const auto& [name, v] : turn) {
                require(v >= 0.0 && v <= 1.0, ErrorCode::InvalidArgument, "score " + name + " outside [0, 1]");
            }
        }
        for (const auto& [name, points] : series) {
            for (std::size_t i = 1; i < points.size(); ++i) {
                require(points[i].first > points[i - 1].first, ErrorCode::InvalidArgument,
                        "series " + name + " x values must increase");
            }
        }
    }
};

}  // namespace dialserve::metrics
