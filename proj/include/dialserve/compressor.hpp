// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "dialserve/error.hpp"
#include "dialserve/model.hpp"
#include "dialserve/parallel.hpp"
#include "dialserve/tensor.hpp"

namespace dialserve::kv {

/// Retained subset of one head's cache. Rows follow retained_ids order.
struct KVCacheHead {
    Matrix keys;
    Matrix values;
    std::vector<std::size_t> retained_ids;
    std::size_t full_len = 0;

    std::size_t size() const noexcept { return retained_ids.size(); }

    static KVCacheHead from_store(const HeadStore& store) {
        KVCacheHead head;
        head.keys = store.keys;
        head.values = store.values;
        head.full_len = store.length();
        head.retained_ids.resize(head.full_len);
        std::iota(head.retained_ids.begin(), head.retained_ids.end(), std::size_t{0});
        return head;
    }

    /// Adds the row of a freshly processed position; it becomes the newest entry.
    void append(std::size_t position, std::span<const double> key, std::span<const double> value) {
        require(position >= full_len, ErrorCode::CacheCorrupt, "appended position precedes history end");
        keys.append_row(key);
        values.append_row(value);
        retained_ids.push_back(position);
        full_len = position + 1;
    }

    void validate() const {
        require(keys.rows() == retained_ids.size() && values.rows() == retained_ids.size(), ErrorCode::CacheCorrupt,
                "cache rows disagree with retained ids");
        for (std::size_t i = 0; i < retained_ids.size(); ++i) {
            require(retained_ids[i] < full_len, ErrorCode::CacheCorrupt, "retained id beyond full_len");
            require(i == 0 || retained_ids[i] > retained_ids[i - 1], ErrorCode::CacheCorrupt,
                    "retained ids must be strictly increasing");
        }
    }
};

struct CompressionConfig {
    static constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

    std::size_t budget = 1024;
    std::size_t interval = 16;
    std::size_t warmup = 16;
    std::size_t obs_window = 16;

    void validate(std::size_t max_seq_len) const {
        require(budget >= 1 && interval >= 1 && warmup >= 1 && obs_window >= 1, ErrorCode::InvalidConfig,
                "budget, interval, warmup and obs_window must be >= 1");
        require(budget <= max_seq_len || budget == kUnlimited, ErrorCode::InvalidConfig,
                "budget exceeds max_seq_len (use unlimited for an uncapped budget)");
    }
};

enum class Aggregate { PerHead, SummedOverHeads };

/// score(a) = sum over window rows of the weight on key column a.
inline std::vector<double> token_scores(const Matrix& window_rows, std::span<const std::size_t> candidates) {
    require(window_rows.rows() > 0, ErrorCode::EmptyWindow, "observation window has no rows");
    std::vector<double> scores(candidates.size(), 0.0);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        require(candidates[i] < window_rows.cols(), ErrorCode::DimensionMismatch, "candidate beyond window columns");
        for (std::size_t r = 0; r < window_rows.rows(); ++r) {
            scores[i] += window_rows(r, candidates[i]);
        }
    }
    return scores;
}

/// Positions of the `budget` highest scores (ties to the smaller position),
/// returned ascending. All positions when budget >= count.
inline std::vector<std::size_t> top_b(std::span<const double> scores, std::span<const std::size_t> positions,
                                      std::size_t budget) {
    require(scores.size() == positions.size(), ErrorCode::SizeMismatch, "one score per candidate");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t keep = std::min(budget, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) {
                              return scores[a] > scores[b];
                          }
                          return positions[a] < positions[b];
                      });
    std::vector<std::size_t> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        out.push_back(positions[order[i]]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Observation-window selection. SummedOverHeads adds every head's scores and
/// returns one shared set; PerHead returns one set per head.
inline std::vector<std::vector<std::size_t>> select_top_b_obs(const std::vector<std::vector<double>>& head_scores,
                                                              std::span<const std::size_t> positions,
                                                              std::size_t budget, Aggregate aggregate) {
    require(budget >= 1, ErrorCode::InvalidArgument, "budget must be >= 1");
    std::vector<std::vector<std::size_t>> out;
    if (aggregate == Aggregate::PerHead) {
        for (const auto& s : head_scores) {
            out.push_back(top_b(s, positions, budget));
        }
        return out;
    }
    std::vector<double> summed(positions.size(), 0.0);
    for (const auto& s : head_scores) {
        require(s.size() == positions.size(), ErrorCode::SizeMismatch, "one score per candidate");
        for (std::size_t i = 0; i < s.size(); ++i) {
            summed[i] += s[i];
        }
    }
    out.push_back(top_b(summed, positions, budget));
    return out;
}

/// Top-B input positions by attention mass from every output row, summed over heads.
/// Each matrix holds one head's output rows over at least n_input key columns.
inline std::vector<std::size_t> ground_truth_top_b(const std::vector<Matrix>& output_rows_per_head,
                                                   std::size_t n_input, std::size_t budget) {
    std::vector<std::size_t> candidates(n_input);
    std::iota(candidates.begin(), candidates.end(), std::size_t{0});
    std::vector<std::vector<double>> scores;
    scores.reserve(output_rows_per_head.size());
    for (const auto& rows : output_rows_per_head) {
        scores.push_back(token_scores(rows, candidates));
    }
    return select_top_b_obs(scores, candidates, budget, Aggregate::SummedOverHeads).front();
}

inline double overlap_rate(std::span<const std::size_t> selected, std::span<const std::size_t> truth,
                           std::size_t budget) {
    require(budget >= 1 && selected.size() == budget && truth.size() == budget, ErrorCode::SizeMismatch,
            "both selections must hold exactly B ids");
    std::vector<std::size_t> a(selected.begin(), selected.end());
    std::vector<std::size_t> b(truth.begin(), truth.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
    return static_cast<double>(common.size()) / static_cast<double>(budget);
}

/// Keeps the union of `retained` and the last `recent_window` positions of the
/// history. Every id in `retained` must already be in the cache.
inline KVCacheHead compact_cache(const KVCacheHead& cache, std::span<const std::size_t> retained,
                                 std::size_t recent_window) {
    std::vector<std::size_t> keep(retained.begin(), retained.end());
    const std::size_t recent_from = cache.full_len > recent_window ? cache.full_len - recent_window : 0;
    for (std::size_t id : cache.retained_ids) {
        if (id >= recent_from) {
            keep.push_back(id);
        }
    }
    std::sort(keep.begin(), keep.end());
    keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
    KVCacheHead out;
    out.full_len = cache.full_len;
    out.keys = Matrix(0, cache.keys.cols());
    out.values = Matrix(0, cache.values.cols());
    for (std::size_t id : keep) {
        auto it = std::lower_bound(cache.retained_ids.begin(), cache.retained_ids.end(), id);
        require(it != cache.retained_ids.end() && *it == id, ErrorCode::InvalidIds,
                "id " + std::to_string(id) + " is not in the cache");
        const auto row = static_cast<std::size_t>(it - cache.retained_ids.begin());
        out.keys.append_row(cache.keys.row(row));
        out.values.append_row(cache.values.row(row));
        out.retained_ids.push_back(id);
    }
    return out;
}

/// Dense causal attention rows of the given positions' stored queries against
/// every stored key (columns past each position are zero).
inline Matrix window_attention(const HeadStore& store, std::span<const std::size_t> positions,
                               std::uint64_t* scores = nullptr) {
    const std::size_t n = store.length();
    Matrix rows(positions.size(), n, kNegInf);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        require(positions[r] < n, ErrorCode::DimensionMismatch, "window position beyond stored history");
        for (std::size_t c = 0; c <= positions[r]; ++c) {
            rows(r, c) = attention_score(store.queries.row(positions[r]), store.keys.row(c));
        }
        if (scores) {
            *scores += positions[r] + 1;
        }
    }
    return softmax_rows(std::move(rows));
}

enum class DecodePolicy {
    Dense,                  // full cache throughout
    Progressive,            // warmup, then per-head re-selection every interval
    ObservationWindowOnce,  // one summed-over-heads selection from the prompt tail
};

struct DecodeOptions {
    DecodePolicy policy = DecodePolicy::Progressive;
    CompressionConfig compression;
    std::size_t max_new = 16;
    std::optional<TokenId> eos;
    std::size_t threads = 1;
};

struct CompressionEvent {
    std::size_t step = 0;  // tokens generated when the selection ran
    std::size_t layer = 0;
    std::size_t head = 0;
    std::vector<std::size_t> retained_ids;
    double kept_score_fraction = 0.0;
};

struct StepStats {
    std::size_t step = 0;  // tokens generated before this forward pass
    std::uint64_t scores = 0;
    std::uint64_t max_head_scores = 0;
    std::size_t max_retained = 0;
    bool after_compression = false;
    std::size_t retained_at_compression = 0;  // max over heads right after the last selection
    std::size_t steps_since_compression = 0;  // 1 for the first pass after a selection
};

struct DecodeResult {
    TokenSequence answer;
    std::vector<StepStats> steps;
    std::vector<CompressionEvent> events;
    std::uint64_t decode_scores = 0;
    std::uint64_t reselection_scores = 0;
    std::vector<std::size_t> prompt_selection;  // ObservationWindowOnce only
};

namespace detail {

inline std::vector<std::size_t> tail_positions(std::size_t length, std::size_t window) {
    const std::size_t w = std::min(window, length);
    std::vector<std::size_t> out(w);
    std::iota(out.begin(), out.end(), length - w);
    return out;
}

inline double kept_fraction(std::span<const double> scores, std::span<const std::size_t> kept) {
    double all = 0.0;
    for (double s : scores) {
        all += s;
    }
    double part = 0.0;
    for (std::size_t id : kept) {
        part += scores[id];
    }
    return all > 0.0 ? part / all : 0.0;
}

/// Attention of the newest token against each head's retained rows plus itself.
struct CompressedAttend {
    std::vector<KVCacheHead>* active;
    std::vector<std::uint64_t>* scores;
    std::size_t n_heads;

    Matrix operator()(std::size_t layer, std::size_t head, const Matrix& q, std::size_t start_pos,
                      const HeadStore& store) const {
        const std::size_t idx = layer * n_heads + head;
        KVCacheHead& cache = (*active)[idx];
        cache.append(start_pos, store.keys.row(start_pos), store.values.row(start_pos));
        std::vector<std::size_t> rows(cache.size());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        Matrix z(1, store.values.cols());
        std::vector<double> weights;
        gather_attention(q.row(0), cache.keys, cache.values, rows, z.row(0), weights);
        (*scores)[idx] = rows.size();
        return z;
    }
};

}  // namespace detail

/// Greedy decoding over a prefilled store. `first_logits` are the logits of the
/// last prefilled row. Under the progressive policy the first `warmup` tokens use
/// the full cache; when the number of generated tokens n_o satisfies
/// n_o >= warmup and (n_o - warmup) % interval == 0, every head re-scores all
/// stored positions with the attention rows of the last obs_window processed
/// positions, keeps its own top-B plus that window, and decoding continues on the
/// compacted caches. The store itself is never compacted.
inline DecodeResult progressive_decode(const ModelWeights& w, KVCache& store, std::span<const double> first_logits,
                                       const DecodeOptions& opt) {
    const auto& cfg = w.config;
    if (opt.policy != DecodePolicy::Dense) {
        opt.compression.validate(cfg.max_seq_len);
    }
    const std::size_t n_heads_total = cfg.total_heads();
    DecodeResult result;
    if (opt.max_new == 0) {
        return result;
    }
    require(store.length() + opt.max_new <= cfg.max_seq_len + 1, ErrorCode::SequenceTooLong,
            "decoding would exceed max_seq_len");

    std::vector<KVCacheHead> active(n_heads_total);
    for (std::size_t i = 0; i < n_heads_total; ++i) {
        active[i] = KVCacheHead::from_store(store.flat(i));
    }
    const auto& cc = opt.compression;
    bool compressed = false;
    std::size_t retained_at_compression = 0;
    std::size_t steps_since = 0;

    auto all_positions = [](std::size_t n) {
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), std::size_t{0});
        return p;
    };

    if (opt.policy == DecodePolicy::ObservationWindowOnce) {
        const std::size_t n = store.length();
        const auto window = detail::tail_positions(n, cc.obs_window);
        const auto candidates = all_positions(n);
        std::vector<std::vector<double>> scores(n_heads_total);
        for (std::size_t i = 0; i < n_heads_total; ++i) {
            scores[i] = token_scores(window_attention(store.flat(i), window, &result.reselection_scores), candidates);
        }
        result.prompt_selection =
            select_top_b_obs(scores, candidates, cc.budget, Aggregate::SummedOverHeads).front();
        std::vector<double> summed(n, 0.0);
        for (const auto& s : scores) {
            for (std::size_t a = 0; a < n; ++a) {
                summed[a] += s[a];
            }
        }
        for (std::size_t i = 0; i < n_heads_total; ++i) {
            active[i] = compact_cache(active[i], result.prompt_selection, cc.obs_window);
            retained_at_compression = std::max(retained_at_compression, active[i].size());
            result.events.push_back({0, i / cfg.n_heads, i % cfg.n_heads, active[i].retained_ids,
                                     detail::kept_fraction(summed, result.prompt_selection)});
        }
        compressed = true;
    }

    TokenId next = argmax_token(first_logits);
    result.answer.push_back(next);
    std::vector<std::uint64_t> head_scores(n_heads_total, 0);
    while (result.answer.size() < opt.max_new && !(opt.eos && next == *opt.eos)) {
        const std::size_t n_o = result.answer.size();
        if (opt.policy == DecodePolicy::Progressive && n_o >= cc.warmup && (n_o - cc.warmup) % cc.interval == 0) {
            const std::size_t n = store.length();
            const auto window = detail::tail_positions(n, cc.obs_window);
            const auto candidates = all_positions(n);
            std::vector<std::uint64_t> rescored(n_heads_total, 0);
            std::vector<CompressionEvent> events(n_heads_total);
            parallel_for(n_heads_total, opt.threads, [&](std::size_t i) {
                const auto scores = token_scores(window_attention(store.flat(i), window, &rescored[i]), candidates);
                const auto chosen = top_b(scores, candidates, cc.budget);
                active[i] = compact_cache(KVCacheHead::from_store(store.flat(i)), chosen, cc.obs_window);
                events[i] = {n_o, i / cfg.n_heads, i % cfg.n_heads, active[i].retained_ids,
                             detail::kept_fraction(scores, chosen)};
            });
            retained_at_compression = 0;
            for (std::size_t i = 0; i < n_heads_total; ++i) {
                result.reselection_scores += rescored[i];
                retained_at_compression = std::max(retained_at_compression, active[i].size());
                result.events.push_back(std::move(events[i]));
            }
            compressed = true;
            steps_since = 0;
        }
        const TokenId fed[1] = {next};
        detail::CompressedAttend attend{&active, &head_scores, cfg.n_heads};
        const Matrix h = run_layers(w, fed, store.length(), store, attend, opt.threads);
        next = argmax_token(output_logits(w, h.row(0)));
        result.answer.push_back(next);
        ++steps_since;

        StepStats stats;
        stats.step = n_o;
        for (std::size_t i = 0; i < n_heads_total; ++i) {
            stats.scores += head_scores[i];
            stats.max_head_scores = std::max(stats.max_head_scores, head_scores[i]);
            stats.max_retained = std::max(stats.max_retained, active[i].size());
        }
        stats.after_compression = compressed;
        stats.retained_at_compression = retained_at_compression;
        stats.steps_since_compression = compressed ? steps_since : 0;
        result.decode_scores += stats.scores;
        result.steps.push_back(stats);
    }
    return result;
}

}  // namespace dialserve::kv
