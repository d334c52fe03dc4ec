// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0
//
// Slow, obviously-correct reference implementations used only by tests. None
// of these call into the library code they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "dialserve/model.hpp"
#include "dialserve/tensor.hpp"

namespace oracle {

using dialserve::Matrix;

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            long double s = 0.0L;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                s += static_cast<long double>(a(i, k)) * b(k, j);
            }
            out(i, j) = static_cast<double>(s);
        }
    }
    return out;
}

/// Causal softmax attention in long double; rows sit at global row_offset + r.
inline std::pair<Matrix, Matrix> naive_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                                 std::size_t row_offset) {
    Matrix a(q.rows(), k.rows());
    Matrix z(q.rows(), v.cols());
    const long double scale = 1.0L / std::sqrt(static_cast<long double>(q.cols()));
    for (std::size_t r = 0; r < q.rows(); ++r) {
        const std::size_t g = row_offset + r;
        std::vector<long double> logits(g + 1);
        long double mx = -std::numeric_limits<long double>::infinity();
        for (std::size_t c = 0; c <= g; ++c) {
            long double s = 0.0L;
            for (std::size_t j = 0; j < q.cols(); ++j) {
                s += static_cast<long double>(q(r, j)) * k(c, j);
            }
            logits[c] = s * scale;
            mx = std::max(mx, logits[c]);
        }
        long double denom = 0.0L;
        for (auto& l : logits) {
            l = std::exp(l - mx);
            denom += l;
        }
        for (std::size_t c = 0; c <= g; ++c) {
            a(r, c) = static_cast<double>(logits[c] / denom);
        }
        for (std::size_t j = 0; j < v.cols(); ++j) {
            long double acc = 0.0L;
            for (std::size_t c = 0; c <= g; ++c) {
                acc += logits[c] / denom * v(c, j);
            }
            z(r, j) = static_cast<double>(acc);
        }
    }
    return {z, a};
}

/// Attention restricted to an explicit cell mask (long double). mask[r][c] true = kept.
inline Matrix naive_masked_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t row_offset,
                                     const std::vector<std::vector<bool>>& mask) {
    Matrix z(q.rows(), v.cols());
    const long double scale = 1.0L / std::sqrt(static_cast<long double>(q.cols()));
    for (std::size_t r = 0; r < q.rows(); ++r) {
        const std::size_t g = row_offset + r;
        std::vector<std::size_t> cols;
        for (std::size_t c = 0; c <= g; ++c) {
            if (mask[r][c]) {
                cols.push_back(c);
            }
        }
        if (cols.empty()) {
            cols.push_back(g);
        }
        std::vector<long double> logits;
        long double mx = -std::numeric_limits<long double>::infinity();
        for (std::size_t c : cols) {
            long double s = 0.0L;
            for (std::size_t j = 0; j < q.cols(); ++j) {
                s += static_cast<long double>(q(r, j)) * k(c, j);
            }
            logits.push_back(s * scale);
            mx = std::max(mx, logits.back());
        }
        long double denom = 0.0L;
        for (auto& l : logits) {
            l = std::exp(l - mx);
            denom += l;
        }
        for (std::size_t j = 0; j < v.cols(); ++j) {
            long double acc = 0.0L;
            for (std::size_t i = 0; i < cols.size(); ++i) {
                acc += logits[i] / denom * v(cols[i], j);
            }
            z(r, j) = static_cast<double>(acc);
        }
    }
    return z;
}

/// Cell-marking union mass of slash offsets and vertical columns over global rows.
inline double union_mass(const Matrix& weights, const std::vector<std::size_t>& row_positions,
                         const std::vector<std::size_t>& slashes, const std::vector<std::size_t>& verticals) {
    std::set<std::size_t> s(slashes.begin(), slashes.end());
    std::set<std::size_t> v(verticals.begin(), verticals.end());
    long double mass = 0.0L;
    for (std::size_t r = 0; r < row_positions.size(); ++r) {
        const std::size_t g = row_positions[r];
        for (std::size_t c = 0; c <= g && c < weights.cols(); ++c) {
            if (s.count(g - c) || v.count(c)) {
                mass += weights(r, c);
            }
        }
    }
    return static_cast<double>(mass);
}

inline double total_mass(const Matrix& weights) {
    long double t = 0.0L;
    for (double x : weights.data()) {
        t += x;
    }
    return static_cast<double>(t);
}

/// Cells of a line set: distinct (row, col) pairs covered.
inline std::size_t covered_cells(const std::vector<std::size_t>& row_positions, std::size_t n_total,
                                 const std::vector<std::size_t>& slashes, const std::vector<std::size_t>& verticals) {
    std::set<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t r = 0; r < row_positions.size(); ++r) {
        const std::size_t g = row_positions[r];
        for (std::size_t d : slashes) {
            if (d <= g) {
                cells.insert({r, g - d});
            }
        }
        for (std::size_t c : verticals) {
            if (c <= g && c < n_total) {
                cells.insert({r, c});
            }
        }
    }
    return cells.size();
}

/// Cost of a line set in the library's sense: per line, number of rows it reaches.
inline std::size_t line_cost(const std::vector<std::size_t>& row_positions, const std::vector<std::size_t>& slashes,
                             const std::vector<std::size_t>& verticals) {
    std::size_t cost = 0;
    for (std::size_t d : slashes) {
        cost += static_cast<std::size_t>(std::count_if(row_positions.begin(), row_positions.end(),
                                                       [d](std::size_t g) { return g >= d; }));
    }
    for (std::size_t c : verticals) {
        cost += static_cast<std::size_t>(std::count_if(row_positions.begin(), row_positions.end(),
                                                       [c](std::size_t g) { return g >= c; }));
    }
    return cost;
}

/// Minimum line cost over every subset of the 2n lines (n <= 8).
inline std::size_t exhaustive_min_cost(const Matrix& weights, const std::vector<std::size_t>& row_positions,
                                       double alpha) {
    const std::size_t n = weights.cols();
    const double total = total_mass(weights);
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << (2 * n)); ++mask) {
        std::vector<std::size_t> s;
        std::vector<std::size_t> v;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask >> i & 1U) s.push_back(i);
            if (mask >> (n + i) & 1U) v.push_back(i);
        }
        const std::size_t cost = line_cost(row_positions, s, v);
        if (cost >= best) {
            continue;
        }
        if (union_mass(weights, row_positions, s, v) >= alpha * total - 1e-12 * total) {
            best = cost;
        }
    }
    return best;
}

/// Best subset of exactly min(B, n) candidates maximizing the summed score;
/// ties broken toward the lexicographically smallest sorted position list.
inline std::vector<std::size_t> exhaustive_top_b(const std::vector<double>& scores, std::size_t budget) {
    const std::size_t n = scores.size();
    const std::size_t k = std::min(budget, n);
    std::vector<std::size_t> best;
    long double best_sum = -std::numeric_limits<long double>::infinity();
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcountll(mask)) != k) {
            continue;
        }
        std::vector<std::size_t> pick;
        long double sum = 0.0L;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask >> i & 1U) {
                pick.push_back(i);
                sum += scores[i];
            }
        }
        if (sum > best_sum || (sum == best_sum && pick < best)) {
            best_sum = sum;
            best = pick;
        }
    }
    return best;
}

/// LCS length by checking every subsequence of `b` (|b| <= 12) against `a`.
template <class T>
std::size_t exhaustive_lcs(const std::vector<T>& a, const std::vector<T>& b) {
    std::size_t best = 0;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << b.size()); ++mask) {
        std::vector<T> sub;
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (mask >> i & 1U) sub.push_back(b[i]);
        }
        std::size_t j = 0;
        for (std::size_t i = 0; i < a.size() && j < sub.size(); ++i) {
            if (a[i] == sub[j]) ++j;
        }
        if (j == sub.size()) best = std::max(best, sub.size());
    }
    return best;
}

template <class T>
double bag_f1(const std::vector<T>& pred, const std::vector<T>& ref) {
    std::map<T, int> p;
    std::map<T, int> r;
    for (const auto& t : pred) ++p[t];
    for (const auto& t : ref) ++r[t];
    int common = 0;
    for (const auto& [t, n] : p) {
        auto it = r.find(t);
        if (it != r.end()) common += std::min(n, it->second);
    }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
    return 2.0 * precision * recall / (precision + recall);
}

/// From-scratch forward of the toy decoder over a whole sequence; returns logits
/// of the last position. Shares nothing with the library forward.
inline std::vector<double> reference_last_logits(const dialserve::ModelWeights& w,
                                                 const std::vector<dialserve::TokenId>& tokens) {
    const auto& c = w.config;
    const std::size_t n = tokens.size();
    auto rms = [](const std::vector<long double>& x, const std::vector<double>& g) {
        long double ms = 0.0L;
        for (auto v : x) ms += v * v;
        const long double inv = 1.0L / std::sqrt(ms / x.size() + 1e-6L);
        std::vector<long double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * g[i];
        return out;
    };
    auto project = [](const std::vector<long double>& x, const Matrix& m) {
        std::vector<long double> out(m.cols(), 0.0L);
        for (std::size_t j = 0; j < m.cols(); ++j) {
            for (std::size_t i = 0; i < x.size(); ++i) out[j] += x[i] * m(i, j);
        }
        return out;
    };
    std::vector<std::vector<long double>> h(n, std::vector<long double>(c.d_model));
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t j = 0; j < c.d_model; ++j) {
            h[t][j] = static_cast<long double>(w.token_embedding(tokens[t], j)) + w.position_embedding(t, j);
        }
    }
    for (const auto& layer : w.layers) {
        std::vector<std::vector<long double>> a(n);
        for (std::size_t t = 0; t < n; ++t) a[t] = rms(h[t], layer.attn_norm);
        std::vector<std::vector<long double>> concat(n, std::vector<long double>(c.n_heads * c.d_v, 0.0L));
        for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
            const auto& hw = layer.heads[hd];
            std::vector<std::vector<long double>> q(n), k(n), v(n);
            for (std::size_t t = 0; t < n; ++t) {
                q[t] = project(a[t], hw.w_q);
                k[t] = project(a[t], hw.w_k);
                v[t] = project(a[t], hw.w_v);
            }
            for (std::size_t t = 0; t < n; ++t) {
                std::vector<long double> s(t + 1);
                long double mx = -std::numeric_limits<long double>::infinity();
                for (std::size_t u = 0; u <= t; ++u) {
                    long double d = 0.0L;
                    for (std::size_t j = 0; j < c.d_k; ++j) d += q[t][j] * k[u][j];
                    s[u] = d / std::sqrt(static_cast<long double>(c.d_k));
                    mx = std::max(mx, s[u]);
                }
                long double den = 0.0L;
                for (auto& x : s) {
                    x = std::exp(x - mx);
                    den += x;
                }
                for (std::size_t j = 0; j < c.d_v; ++j) {
                    long double acc = 0.0L;
                    for (std::size_t u = 0; u <= t; ++u) acc += s[u] / den * v[u][j];
                    concat[t][hd * c.d_v + j] = acc;
                }
            }
        }
        for (std::size_t t = 0; t < n; ++t) {
            const auto o = project(concat[t], layer.w_o);
            for (std::size_t j = 0; j < c.d_model; ++j) h[t][j] += o[j];
            auto hidden = project(rms(h[t], layer.ffn_norm), layer.w_ff1);
            for (auto& x : hidden) x = x > 0.0L ? x : 0.0L;
            const auto f = project(hidden, layer.w_ff2);
            for (std::size_t j = 0; j < c.d_model; ++j) h[t][j] += f[j];
        }
    }
    const auto last = project(rms(h[n - 1], w.final_norm), w.w_out);
    std::vector<double> logits(last.size());
    for (std::size_t i = 0; i < last.size(); ++i) logits[i] = static_cast<double>(last[i] + w.b_out[i]);
    return logits;
}

}  // namespace oracle
