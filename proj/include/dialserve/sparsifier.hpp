// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "dialserve/error.hpp"
#include "dialserve/rng.hpp"
#include "dialserve/tensor.hpp"

namespace dialserve::prefill {

enum class LineKind { Slash, Vertical };

/// One slash (offset = row - col) or vertical (column) line of a block.
struct Line {
    LineKind kind = LineKind::Slash;
    std::size_t index = 0;
    double weight = 0.0;
    std::size_t length = 0;
    double max_cell = 0.0;
};

struct LineSums {
    std::vector<Line> slashes;    // descending weight, ties to the smaller index
    std::vector<Line> verticals;  // same order
    double total_weight = 0.0;
};

/// Selected lines for one head together with the coverage they achieve on the
/// block they were chosen from.
struct HeadPlan {
    std::size_t n_total = 0;
    LineSelection lines;
    double achieved_coverage = 0.0;
    double approx_sum = 0.0;
    double total_weight = 0.0;
    std::size_t cost = 0;
    bool stalled = false;

    std::size_t line_count() const noexcept { return lines.slashes.size() + lines.verticals.size(); }
};

struct SamplingConfig {
    double rate = 0.1;
    std::size_t floor = 32;
};

/// Number of cells on vertical `index` (or slash offset `index`): rows whose
/// global position is >= index. Both kinds share the formula.
inline std::size_t line_length(std::span<const std::size_t> row_positions, std::size_t index) {
    return static_cast<std::size_t>(row_positions.end() -
                                    std::lower_bound(row_positions.begin(), row_positions.end(), index));
}

inline std::size_t selection_cost(const AttentionBlock& block, const LineSelection& sel) {
    std::size_t cost = 0;
    for (std::size_t d : sel.slashes) {
        cost += line_length(block.row_positions, d);
    }
    for (std::size_t c : sel.verticals) {
        cost += line_length(block.row_positions, c);
    }
    return cost;
}

/// Row sample of size min(n_new, max(floor, ceil(rate * n_new))), drawn uniformly
/// without replacement, always containing the last row, sorted ascending.
inline std::vector<std::size_t> sample_rows(std::size_t n_new, double rate, std::size_t floor, std::uint64_t seed) {
    require(n_new > 0, ErrorCode::EmptyBlock, "cannot sample rows of an empty block");
    require(rate > 0.0 && rate <= 1.0, ErrorCode::InvalidArgument, "sample rate must lie in (0, 1]");
    require(floor >= 1, ErrorCode::InvalidArgument, "sample floor must be >= 1");
    const auto by_rate = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n_new)));
    const std::size_t k = std::min(n_new, std::max(floor, by_rate));
    std::vector<std::size_t> pool(n_new - 1);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i + 1 < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<std::size_t> rows(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k - 1));
    rows.push_back(n_new - 1);
    std::sort(rows.begin(), rows.end());
    return rows;
}

namespace detail {

inline void sort_lines(std::vector<Line>& lines) {
    std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
        if (a.weight != b.weight) {
            return a.weight > b.weight;
        }
        return a.index < b.index;
    });
}

/// Weight of the single cell where slash `d` crosses vertical `c` (0 if absent).
inline double crossing(const AttentionBlock& block, std::size_t d, std::size_t c) {
    const std::size_t r = block.local_row(c + d);
    return r == AttentionBlock::npos ? 0.0 : block.weights(r, c);
}

}  // namespace detail

/// Sums attention mass along every slash and vertical line of the block. Each
/// causal cell belongs to exactly one line of each kind; empty lines are omitted.
inline LineSums line_sums(const AttentionBlock& block) {
    const std::size_t n = block.n_total;
    std::vector<Line> slashes(n);
    std::vector<Line> verticals(n);
    for (std::size_t i = 0; i < n; ++i) {
        slashes[i] = {LineKind::Slash, i, 0.0, line_length(block.row_positions, i), 0.0};
        verticals[i] = {LineKind::Vertical, i, 0.0, line_length(block.row_positions, i), 0.0};
    }
    LineSums sums;
    for (std::size_t r = 0; r < block.n_new(); ++r) {
        const std::size_t g = block.row_positions[r];
        for (std::size_t c = 0; c <= g && c < n; ++c) {
            const double w = block.weights(r, c);
            sums.total_weight += w;
            Line& v = verticals[c];
            v.weight += w;
            v.max_cell = std::max(v.max_cell, w);
            Line& s = slashes[g - c];
            s.weight += w;
            s.max_cell = std::max(s.max_cell, w);
        }
    }
    auto keep = [](std::vector<Line>& lines) {
        std::erase_if(lines, [](const Line& l) { return l.length == 0; });
        detail::sort_lines(lines);
    };
    keep(slashes);
    keep(verticals);
    sums.slashes = std::move(slashes);
    sums.verticals = std::move(verticals);
    return sums;
}

/// Exact fraction of block mass on the union of selected lines, by
/// inclusion-exclusion: a slash and a vertical share at most one cell.
inline double coverage_ratio(const AttentionBlock& block, LineSelection sel) {
    sel.normalize();
    const double total = block.total_weight();
    if (sel.empty() || total <= 0.0) {
        return 0.0;
    }
    double mass = 0.0;
    for (std::size_t r = 0; r < block.n_new(); ++r) {
        const std::size_t g = block.row_positions[r];
        for (std::size_t d : sel.slashes) {
            if (d > g) {
                break;
            }
            mass += block.weights(r, g - d);
        }
        for (std::size_t c : sel.verticals) {
            if (c > g) {
                break;
            }
            mass += block.weights(r, c);
        }
    }
    for (std::size_t d : sel.slashes) {
        for (std::size_t c : sel.verticals) {
            mass -= detail::crossing(block, d, c);
        }
    }
    return std::clamp(mass / total, 0.0, 1.0);
}

/// Greedy line selection. Compares the top remaining slash and vertical by
/// marginal gain per uncovered cell and takes the better one, until the running
/// counter reaches alpha * total. The counter charges each selected line of the
/// other kind its largest cell as overlap, so it never exceeds the exact union
/// mass. Once the counter stops increasing, termination switches to the exact
/// mass; exhausting both lists ends the loop with full coverage.
inline HeadPlan greedy_select_lines(const AttentionBlock& block, const LineSums& sums, double alpha) {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::InvalidAlpha, "alpha must lie in [0, 1]");
    const double total = sums.total_weight;
    const double target = alpha * total;
    // absorbs summation-order rounding in the threshold; alpha = 1 demands every cell
    const double slack = alpha < 1.0 ? 1e-12 * total : 0.0;
    auto reached = [&](double mass) { return mass >= target - slack; };

    HeadPlan plan;
    plan.n_total = block.n_total;
    plan.total_weight = total;
    std::size_t next_slash = 0;
    std::size_t next_vertical = 0;
    double overlap_from_slashes = 0.0;    // ol_s
    double overlap_from_verticals = 0.0;  // ol_v
    double counter = 0.0;
    double exact = 0.0;
    bool stalled = false;

    while (!reached(counter) && !(stalled && reached(exact))) {
        const bool have_slash = next_slash < sums.slashes.size();
        const bool have_vertical = next_vertical < sums.verticals.size();
        if (!have_slash && !have_vertical) {
            break;
        }
        bool take_slash = have_slash;
        if (have_slash && have_vertical) {
            const Line& s = sums.slashes[next_slash];
            const Line& v = sums.verticals[next_vertical];
            const double gain_s = s.weight - overlap_from_verticals;
            const double gain_v = v.weight - overlap_from_slashes;
            const double room_s = std::max(
                1.0, static_cast<double>(s.length) - static_cast<double>(plan.lines.verticals.size()));
            const double room_v = std::max(
                1.0, static_cast<double>(v.length) - static_cast<double>(plan.lines.slashes.size()));
            take_slash = gain_s / room_s >= gain_v / room_v;
        }
        double delta = 0.0;
        if (take_slash) {
            const Line& s = sums.slashes[next_slash++];
            double shared = 0.0;
            for (std::size_t c : plan.lines.verticals) {
                shared += detail::crossing(block, s.index, c);
            }
            exact += s.weight - shared;
            plan.lines.slashes.push_back(s.index);
            overlap_from_slashes += s.max_cell;
            delta = s.weight - overlap_from_verticals;
        } else {
            const Line& v = sums.verticals[next_vertical++];
            double shared = 0.0;
            for (std::size_t d : plan.lines.slashes) {
                shared += detail::crossing(block, d, v.index);
            }
            exact += v.weight - shared;
            plan.lines.verticals.push_back(v.index);
            overlap_from_verticals += v.max_cell;
            delta = v.weight - overlap_from_slashes;
        }
        counter += delta;
        if (delta <= 0.0) {
            stalled = true;
        }
    }
    plan.stalled = stalled;
    plan.approx_sum = counter;
    plan.lines.normalize();
    plan.cost = selection_cost(block, plan.lines);
    plan.achieved_coverage = coverage_ratio(block, plan.lines);
    return plan;
}

inline HeadPlan select_lines(const AttentionBlock& block, double alpha) {
    return greedy_select_lines(block, line_sums(block), alpha);
}

/// Builds the partial block softmax(Q_s K^T / sqrt(d_k)) for the sampled query rows
/// (global positions `positions`) and selects lines on it. Offsets stay global, so
/// the plan applies unchanged to the full block.
inline HeadPlan sparsify_head(const Matrix& q_sampled, std::span<const std::size_t> positions, const Matrix& k_all,
                              double alpha, OpCounter* ops = nullptr) {
    require(q_sampled.rows() == positions.size(), ErrorCode::DimensionMismatch, "one position per sampled row");
    require(q_sampled.cols() == k_all.cols(), ErrorCode::DimensionMismatch, "Q and K widths differ");
    AttentionBlock block;
    block.n_total = k_all.rows();
    block.row_positions.assign(positions.begin(), positions.end());
    Matrix logits(positions.size(), k_all.rows(), kNegInf);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        require(positions[r] < k_all.rows(), ErrorCode::DimensionMismatch, "sampled position beyond keys");
        require(r == 0 || positions[r] > positions[r - 1], ErrorCode::InvalidArgument, "positions must increase");
        for (std::size_t c = 0; c <= positions[r]; ++c) {
            logits(r, c) = attention_score(q_sampled.row(r), k_all.row(c));
        }
        if (ops) {
            ops->score_cells += positions[r] + 1;
        }
    }
    block.weights = softmax_rows(std::move(logits));
    return select_lines(block, alpha);
}

struct BruteForceResult {
    std::size_t cost = 0;
    LineSelection plan;
};

inline constexpr std::size_t kBruteForceMaxColumns = 14;

/// Exhaustive minimum-cost line set reaching alpha of the block mass. Enumerates
/// every vertical subset; slashes are pairwise disjoint, so for a fixed vertical
/// subset each slash adds an independent amount and every slash subset is scored
/// from a subset-sum table. Exponential: n_total <= 14 only.
inline BruteForceResult brute_force_min_lines(const AttentionBlock& block, double alpha) {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::InvalidAlpha, "alpha must lie in [0, 1]");
    const std::size_t n = block.n_total;
    require(n <= kBruteForceMaxColumns, ErrorCode::InstanceTooLarge,
            "brute force supports n_total <= " + std::to_string(kBruteForceMaxColumns));
    BruteForceResult best;
    if (alpha == 0.0) {
        return best;
    }
    double total = 0.0;
    std::vector<double> column_mass(n, 0.0);
    for (std::size_t r = 0; r < block.n_new(); ++r) {
        for (std::size_t c = 0; c <= block.row_positions[r]; ++c) {
            total += block.weights(r, c);
            column_mass[c] += block.weights(r, c);
        }
    }
    const double need = alpha * total - (alpha < 1.0 ? 1e-12 * total : 1e-15 * total);
    std::vector<std::size_t> lengths(n);
    for (std::size_t i = 0; i < n; ++i) {
        lengths[i] = line_length(block.row_positions, i);
    }
    const std::size_t subsets = std::size_t{1} << n;
    std::vector<std::size_t> mask_cost(subsets, 0);
    for (std::size_t mask = 1; mask < subsets; ++mask) {
        const auto low = static_cast<std::size_t>(std::countr_zero(mask));
        mask_cost[mask] = mask_cost[mask & (mask - 1)] + lengths[low];
    }
    std::size_t best_cost = std::numeric_limits<std::size_t>::max();
    std::size_t best_v = 0;
    std::size_t best_s = 0;
    std::vector<double> slash_gain(n);
    std::vector<double> subset_gain(subsets);
    for (std::size_t vmask = 0; vmask < subsets; ++vmask) {
        if (mask_cost[vmask] >= best_cost) {
            continue;
        }
        double vertical_mass = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            if (vmask >> c & 1U) {
                vertical_mass += column_mass[c];
            }
        }
        std::fill(slash_gain.begin(), slash_gain.end(), 0.0);
        for (std::size_t r = 0; r < block.n_new(); ++r) {
            const std::size_t g = block.row_positions[r];
            for (std::size_t c = 0; c <= g; ++c) {
                if (!(vmask >> c & 1U)) {
                    slash_gain[g - c] += block.weights(r, c);
                }
            }
        }
        subset_gain[0] = 0.0;
        for (std::size_t smask = 1; smask < subsets; ++smask) {
            const auto low = static_cast<std::size_t>(std::countr_zero(smask));
            subset_gain[smask] = subset_gain[smask & (smask - 1)] + slash_gain[low];
        }
        for (std::size_t smask = 0; smask < subsets; ++smask) {
            const std::size_t cost = mask_cost[vmask] + mask_cost[smask];
            if (cost < best_cost && vertical_mass + subset_gain[smask] >= need) {
                best_cost = cost;
                best_v = vmask;
                best_s = smask;
            }
        }
    }
    best.cost = best_cost;
    for (std::size_t i = 0; i < n; ++i) {
        if (best_s >> i & 1U) {
            best.plan.slashes.push_back(i);
        }
        if (best_v >> i & 1U) {
            best.plan.verticals.push_back(i);
        }
    }
    return best;
}

}  // namespace dialserve::prefill
