// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dialserve/error.hpp"

namespace dialserve {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
        require(m_data.size() == rows * cols, ErrorCode::DimensionMismatch,
                "matrix data length " + std::to_string(m_data.size()) + " != " + std::to_string(rows) + "x" +
                    std::to_string(cols));
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t cols = rows.size() == 0 ? 0 : rows.begin()->size();
        Matrix m(rows.size(), cols);
        std::size_t r = 0;
        for (const auto& row : rows) {
            require(row.size() == cols, ErrorCode::DimensionMismatch, "ragged matrix literal");
            std::copy(row.begin(), row.end(), m.row(r).begin());
            ++r;
        }
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    std::size_t rows() const noexcept { return m_rows; }
    std::size_t cols() const noexcept { return m_cols; }
    bool empty() const noexcept { return m_data.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    std::span<double> row(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const double> row(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }

    const std::vector<double>& data() const noexcept { return m_data; }
    std::vector<double>& data() noexcept { return m_data; }

    void append_row(std::span<const double> values) {
        if (m_rows == 0 && m_cols == 0) {
            m_cols = values.size();
        }
        require(values.size() == m_cols, ErrorCode::DimensionMismatch, "append_row width mismatch");
        m_data.insert(m_data.end(), values.begin(), values.end());
        ++m_rows;
    }

    void truncate_rows(std::size_t n) {
        if (n < m_rows) {
            m_rows = n;
            m_data.resize(n * m_cols);
        }
    }

    Matrix select_rows(std::span<const std::size_t> indices) const {
        Matrix out(indices.size(), m_cols);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            require(indices[i] < m_rows, ErrorCode::DimensionMismatch, "row index out of range");
            std::copy_n(row(indices[i]).begin(), m_cols, out.row(i).begin());
        }
        return out;
    }

    bool all_finite() const {
        return std::all_of(m_data.begin(), m_data.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.m_rows == b.m_rows && a.m_cols == b.m_cols && a.m_data == b.m_data;
    }

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

/// Sum of products in ascending index order.
inline double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

/// C = A * B. Each output entry accumulates over the inner index in ascending order,
/// so a row of C depends only on the matching row of A (batch and single-row
/// evaluation agree bit for bit).
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), ErrorCode::DimensionMismatch,
            "matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out[j] += aik * brow[j];
            }
        }
    }
    return c;
}

inline double attention_score(std::span<const double> q, std::span<const double> k) {
    return dot(q, k) / std::sqrt(static_cast<double>(q.size()));
}

/// In-place stable softmax of one row. -inf marks a masked cell.
inline void softmax_inplace(std::span<double> row) {
    double max = kNegInf;
    for (double v : row) {
        require(!std::isnan(v) && v != std::numeric_limits<double>::infinity(), ErrorCode::NonFiniteInput,
                "softmax input contains NaN or +inf");
        max = std::max(max, v);
    }
    require(max != kNegInf, ErrorCode::AllMaskedRow, "softmax row has no unmasked cell");
    double sum = 0.0;
    for (double& v : row) {
        v = std::exp(v - max);
        sum += v;
    }
    for (double& v : row) {
        v /= sum;
    }
}

inline Matrix softmax_rows(Matrix logits) {
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        softmax_inplace(logits.row(r));
    }
    return logits;
}

/// Rows of attention weights for a set of query positions against n_total keys.
/// Full blocks have contiguous rows ending at n_total - 1; sampled blocks keep only
/// some of those rows but stay in global coordinates.
struct AttentionBlock {
    std::size_t n_total = 0;
    std::vector<std::size_t> row_positions;
    Matrix weights;

    std::size_t n_new() const noexcept { return row_positions.size(); }

    bool is_contiguous() const {
        for (std::size_t r = 1; r < row_positions.size(); ++r) {
            if (row_positions[r] != row_positions[r - 1] + 1) {
                return false;
            }
        }
        return true;
    }

    std::size_t row_offset() const { return row_positions.empty() ? n_total : row_positions.front(); }

    /// Local row index of a global position, or npos.
    std::size_t local_row(std::size_t global) const {
        auto it = std::lower_bound(row_positions.begin(), row_positions.end(), global);
        if (it == row_positions.end() || *it != global) {
            return npos;
        }
        return static_cast<std::size_t>(it - row_positions.begin());
    }

    double total_weight() const {
        double total = 0.0;
        for (double v : weights.data()) {
            total += v;
        }
        return total;
    }

    /// Block whose rows are the last n_new positions of an n_total sequence.
    static AttentionBlock contiguous(Matrix weights) {
        AttentionBlock block;
        block.n_total = weights.cols();
        require(weights.rows() <= weights.cols(), ErrorCode::DimensionMismatch, "block has more rows than columns");
        const std::size_t offset = weights.cols() - weights.rows();
        block.row_positions.resize(weights.rows());
        for (std::size_t r = 0; r < weights.rows(); ++r) {
            block.row_positions[r] = offset + r;
        }
        block.weights = std::move(weights);
        return block;
    }

    /// Throws unless rows are row-stochastic (1e-9), causal and finite.
    void validate() const {
        require(weights.rows() == row_positions.size() && weights.cols() == n_total, ErrorCode::DimensionMismatch,
                "attention block shape disagrees with its positions");
        require(n_new() <= n_total, ErrorCode::DimensionMismatch, "n_new > n_total");
        require(weights.all_finite(), ErrorCode::NonFiniteInput, "attention block has non-finite weights");
        for (std::size_t r = 0; r < n_new(); ++r) {
            require(row_positions[r] < n_total, ErrorCode::DimensionMismatch, "row position beyond n_total");
            require(r == 0 || row_positions[r] > row_positions[r - 1], ErrorCode::DimensionMismatch,
                    "row positions must be strictly increasing");
            double sum = 0.0;
            for (std::size_t c = 0; c < n_total; ++c) {
                const double w = weights(r, c);
                require(w >= 0.0, ErrorCode::InvalidArgument, "negative attention weight");
                require(c <= row_positions[r] || w == 0.0, ErrorCode::InvalidArgument, "non-causal attention weight");
                sum += w;
            }
            require(std::abs(sum - 1.0) <= 1e-9, ErrorCode::InvalidArgument,
                    "attention row " + std::to_string(r) + " sums to " + std::to_string(sum));
        }
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

/// Selected slash offsets (row - col) and vertical columns, both in global coordinates.
struct LineSelection {
    std::vector<std::size_t> slashes;
    std::vector<std::size_t> verticals;

    bool empty() const noexcept { return slashes.empty() && verticals.empty(); }

    void normalize() {
        std::sort(slashes.begin(), slashes.end());
        slashes.erase(std::unique(slashes.begin(), slashes.end()), slashes.end());
        std::sort(verticals.begin(), verticals.end());
        verticals.erase(std::unique(verticals.begin(), verticals.end()), verticals.end());
    }
};

/// Score computations performed by an attention routine. fallback_cells counts
/// diagonal cells added for rows that no selected line reached.
struct OpCounter {
    std::uint64_t score_cells = 0;
    std::uint64_t fallback_cells = 0;

    OpCounter& operator+=(const OpCounter& other) {
        score_cells += other.score_cells;
        fallback_cells += other.fallback_cells;
        return *this;
    }
};

/// Columns of global row `row` covered by a normalized selection, ascending.
inline void selected_columns(const LineSelection& sel, std::size_t row, std::vector<std::size_t>& out) {
    out.clear();
    auto v = sel.verticals.begin();
    const auto v_end = std::upper_bound(sel.verticals.begin(), sel.verticals.end(), row);
    // slash offset d maps to column row - d; walking offsets downward yields ascending columns
    auto s = std::upper_bound(sel.slashes.begin(), sel.slashes.end(), row);
    while (v != v_end || s != sel.slashes.begin()) {
        const std::size_t from_slash =
            s != sel.slashes.begin() ? row - *(s - 1) : std::numeric_limits<std::size_t>::max();
        const std::size_t from_vertical = v != v_end ? *v : std::numeric_limits<std::size_t>::max();
        const std::size_t col = std::min(from_slash, from_vertical);
        out.push_back(col);
        if (from_slash == col) {
            --s;
        }
        if (from_vertical == col) {
            ++v;
        }
    }
}

/// Softmax-weighted sum of the value rows listed in `key_rows` (ascending) for one
/// query. `weights` receives the normalized weights in the same order.
inline void gather_attention(std::span<const double> q, const Matrix& keys, const Matrix& values,
                             std::span<const std::size_t> key_rows, std::span<double> z, std::vector<double>& weights) {
    weights.resize(key_rows.size());
    for (std::size_t i = 0; i < key_rows.size(); ++i) {
        weights[i] = attention_score(q, keys.row(key_rows[i]));
    }
    softmax_inplace(weights);
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t i = 0; i < key_rows.size(); ++i) {
        const auto v = values.row(key_rows[i]);
        const double w = weights[i];
        for (std::size_t j = 0; j < z.size(); ++j) {
            z[j] += w * v[j];
        }
    }
}

struct AttentionResult {
    Matrix z;
    AttentionBlock attention;
};

namespace detail {

inline void check_qkv(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t row_offset) {
    require(q.cols() == k.cols(), ErrorCode::DimensionMismatch, "Q and K widths differ");
    require(v.rows() == k.rows(), ErrorCode::DimensionMismatch, "V and K row counts differ");
    require(k.rows() >= q.rows() && row_offset == k.rows() - q.rows(), ErrorCode::DimensionMismatch,
            "row_offset must equal K.rows - Q.rows");
}

inline Matrix weighted_values(const Matrix& a, const Matrix& v) { return matmul(a, v); }

}  // namespace detail

/// Dense causal attention: softmax(QK^T / sqrt(d_k)) V with keys past each query's
/// global position masked out. Query row r sits at global position row_offset + r.
inline AttentionResult scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t row_offset,
                                            OpCounter* ops = nullptr) {
    detail::check_qkv(q, k, v, row_offset);
    Matrix logits(q.rows(), k.rows(), kNegInf);
    for (std::size_t r = 0; r < q.rows(); ++r) {
        const std::size_t global = row_offset + r;
        for (std::size_t c = 0; c <= global; ++c) {
            logits(r, c) = attention_score(q.row(r), k.row(c));
        }
        if (ops) {
            ops->score_cells += global + 1;
        }
    }
    AttentionResult result;
    result.attention = AttentionBlock::contiguous(softmax_rows(std::move(logits)));
    result.z = detail::weighted_values(result.attention.weights, v);
    return result;
}

/// Attention evaluated only on cells lying on the selected slash/vertical lines.
/// Each row normalizes over its own selected cells; a row that no line reaches
/// attends to its diagonal cell alone.
inline Matrix masked_sparse_attention(const Matrix& q, const Matrix& k, const Matrix& v, LineSelection selection,
                                      std::size_t row_offset, OpCounter* ops = nullptr) {
    detail::check_qkv(q, k, v, row_offset);
    require(!selection.empty(), ErrorCode::EmptyPlan, "selection has no lines");
    selection.normalize();
    const std::size_t n_total = k.rows();
    require(selection.slashes.empty() || selection.slashes.back() < n_total, ErrorCode::DimensionMismatch,
            "slash offset beyond block");
    require(selection.verticals.empty() || selection.verticals.back() < n_total, ErrorCode::DimensionMismatch,
            "vertical column beyond block");
    Matrix z(q.rows(), v.cols());
    std::vector<std::size_t> cols;
    std::vector<double> weights;
    for (std::size_t r = 0; r < q.rows(); ++r) {
        const std::size_t global = row_offset + r;
        selected_columns(selection, global, cols);
        if (cols.empty()) {
            cols.push_back(global);
            if (ops) {
                ++ops->fallback_cells;
            }
        }
        if (ops) {
            ops->score_cells += cols.size();
        }
        gather_attention(q.row(r), k, v, cols, z.row(r), weights);
    }
    return z;
}

/// Reference form of masked attention: logits - c * (1 - M) over causal cells, then
/// a dense softmax. Agrees with masked_sparse_attention whenever every row has at
/// least one selected cell; kept for equivalence checks.
inline Matrix masked_attention_additive(const Matrix& q, const Matrix& k, const Matrix& v, LineSelection selection,
                                        std::size_t row_offset, double c = 1e8) {
    detail::check_qkv(q, k, v, row_offset);
    selection.normalize();
    Matrix logits(q.rows(), k.rows(), kNegInf);
    std::vector<std::size_t> cols;
    for (std::size_t r = 0; r < q.rows(); ++r) {
        const std::size_t global = row_offset + r;
        selected_columns(selection, global, cols);
        std::size_t next = 0;
        for (std::size_t col = 0; col <= global; ++col) {
            const bool kept = next < cols.size() && cols[next] == col;
            if (kept) {
                ++next;
            }
            logits(r, col) = attention_score(q.row(r), k.row(col)) - (kept ? 0.0 : c);
        }
    }
    return detail::weighted_values(softmax_rows(std::move(logits)), v);
}

}  // namespace dialserve
