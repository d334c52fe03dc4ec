// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dialserve/bench.hpp"
#include "dialserve/compressor.hpp"
#include "dialserve/error.hpp"
#include "dialserve/model.hpp"
#include "dialserve/rng.hpp"
#include "dialserve/sparsifier.hpp"
#include "dialserve/tensor.hpp"

namespace dialserve::session {

enum class Mode { Dense, LoopServe, ObsWindowBaseline };

inline std::string_view to_string(Mode m) {
    switch (m) {
        case Mode::Dense: return "dense";
        case Mode::LoopServe: return "loopserve";
        case Mode::ObsWindowBaseline: return "obswindow-baseline";
    }
    return "dense";
}

inline Mode parse_mode(std::string_view s) {
    if (s == "dense") return Mode::Dense;
    if (s == "loopserve") return Mode::LoopServe;
    if (s == "obswindow-baseline" || s == "obswindow") return Mode::ObsWindowBaseline;
    throw Error(ErrorCode::InvalidArgument, "unknown mode '" + std::string(s) + "'");
}

struct RunParams {
    double alpha = 0.955;
    kv::CompressionConfig compression;
    prefill::SamplingConfig sampling;
    std::size_t max_new = 16;
    std::optional<TokenId> eos;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    bool record_wall_time = false;

    void validate(const ModelConfig& config, Mode mode) const {
        if (mode == Mode::LoopServe) {
            require(alpha > 0.0 && alpha <= 1.0, ErrorCode::InvalidAlpha, "alpha must lie in (0, 1]");
            require(sampling.rate > 0.0 && sampling.rate <= 1.0 && sampling.floor >= 1, ErrorCode::InvalidConfig,
                    "sample rate must lie in (0, 1] and floor must be >= 1");
        }
        if (mode != Mode::Dense) {
            compression.validate(config.max_seq_len);
        }
        require(threads >= 1, ErrorCode::InvalidConfig, "threads must be >= 1");
    }
};

struct PlanRecord {
    std::size_t turn = 0;  // 1-based
    std::size_t layer = 0;
    std::size_t head = 0;
    prefill::HeadPlan plan;
};

struct PlanStats {
    std::size_t heads = 0;
    double mean_coverage = 0.0;
    double min_coverage = 0.0;
    double mean_lines = 0.0;
    std::size_t total_cost = 0;
    std::size_t stalled_heads = 0;
};

/// Attention score computations by phase, summed over heads.
struct OpCounts {
    std::uint64_t prefill_dense_equivalent = 0;
    std::uint64_t prefill_sampling = 0;
    std::uint64_t prefill_attention = 0;
    std::uint64_t prefill_fallback = 0;
    std::uint64_t decode_attention = 0;
    std::uint64_t reselection = 0;
};

struct TurnRecord {
    TokenSequence input_tokens;  // appended block: previous answer then new input
    TokenSequence answer_tokens;
    TokenSequence reference_tokens;
    PlanStats plan_stats;
    OpCounts op_counts;
    double wall_ms = 0.0;
    std::vector<kv::CompressionEvent> events;
    std::vector<kv::StepStats> steps;
    std::optional<double> obs_overlap;
};

class SessionState {
public:
    SessionState(const ModelConfig& config, std::uint64_t seed) : m_store(config), m_seed(seed) {}

    const TokenSequence& history() const noexcept { return m_history; }
    const std::vector<PlanRecord>& plans() const noexcept { return m_plans; }
    std::size_t turn_index() const noexcept { return m_turn; }
    std::uint64_t seed() const noexcept { return m_seed; }
    const KVCache& store() const noexcept { return m_store; }

private:
    friend TokenSequence run_turn(const ModelWeights&, SessionState&, std::span<const TokenId>, Mode,
                                  const RunParams&, TurnRecord*);

    TokenSequence m_history;
    std::vector<PlanRecord> m_plans;
    KVCache m_store;
    std::size_t m_turn = 0;
    std::size_t m_prev_answer = 0;
    std::uint64_t m_seed = 0;
};

namespace detail {

/// Per-head line selection on sampled rows, then attention over the selected lines.
struct SparseAttend {
    std::size_t n_heads;
    double alpha;
    prefill::SamplingConfig sampling;
    std::uint64_t seed;
    std::size_t turn;
    std::vector<prefill::HeadPlan>* plans;
    std::vector<OpCounter>* sampling_ops;
    std::vector<OpCounter>* attention_ops;

    Matrix operator()(std::size_t layer, std::size_t head, const Matrix& q, std::size_t start_pos,
                      const HeadStore& store) const {
        const std::size_t idx = layer * n_heads + head;
        std::vector<std::size_t> rows;
        if (alpha >= 1.0) {
            rows.resize(q.rows());
            std::iota(rows.begin(), rows.end(), std::size_t{0});
        } else {
            rows = prefill::sample_rows(q.rows(), sampling.rate, sampling.floor, derive_seed(seed, turn, layer, head));
        }
        std::vector<std::size_t> positions(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            positions[i] = start_pos + rows[i];
        }
        (*plans)[idx] =
            prefill::sparsify_head(q.select_rows(rows), positions, store.keys, alpha, &(*sampling_ops)[idx]);
        return masked_sparse_attention(q, store.keys, store.values, (*plans)[idx].lines, start_pos,
                                       &(*attention_ops)[idx]);
    }
};

inline PlanStats summarize_plans(std::span<const prefill::HeadPlan> plans) {
    PlanStats s;
    s.heads = plans.size();
    if (plans.empty()) {
        return s;
    }
    s.min_coverage = 1.0;
    for (const auto& p : plans) {
        s.mean_coverage += p.achieved_coverage;
        s.min_coverage = std::min(s.min_coverage, p.achieved_coverage);
        s.mean_lines += static_cast<double>(p.line_count());
        s.total_cost += p.cost;
        s.stalled_heads += p.stalled ? 1 : 0;
    }
    s.mean_coverage /= static_cast<double>(plans.size());
    s.mean_lines /= static_cast<double>(plans.size());
    return s;
}

}  // namespace detail

/// One dialogue turn. The previous answer's KV rows are recomputed together
/// with the new input as one appended block; earlier history is reused.
inline TokenSequence run_turn(const ModelWeights& w, SessionState& state, std::span<const TokenId> new_input,
                              Mode mode, const RunParams& params, TurnRecord* record = nullptr) {
    const auto& cfg = w.config;
    require(!new_input.empty(), ErrorCode::InvalidArgument, "turn input must be nonempty");
    params.validate(cfg, mode);
    const auto started = std::chrono::steady_clock::now();

    const std::size_t start = state.m_history.size() - state.m_prev_answer;
    TokenSequence appended(state.m_history.begin() + static_cast<std::ptrdiff_t>(start), state.m_history.end());
    appended.insert(appended.end(), new_input.begin(), new_input.end());
    const std::size_t n_input = start + appended.size();
    require(n_input + params.max_new <= cfg.max_seq_len, ErrorCode::SequenceTooLong,
            "turn needs " + std::to_string(n_input + params.max_new) + " positions > max_seq_len " +
                std::to_string(cfg.max_seq_len));
    require(state.m_store.length() >= start, ErrorCode::CacheCorrupt, "store shorter than reused history");
    state.m_store.truncate(start);

    const std::size_t n_heads_total = cfg.total_heads();
    std::vector<OpCounter> attention_ops(n_heads_total);
    std::vector<OpCounter> sampling_ops(n_heads_total);
    std::vector<prefill::HeadPlan> plans;
    const std::size_t turn = state.m_turn + 1;
    Matrix hidden;
    if (mode == Mode::LoopServe) {
        plans.resize(n_heads_total);
        detail::SparseAttend attend{cfg.n_heads, params.alpha,   params.sampling, state.m_seed,
                                    turn,        &plans,         &sampling_ops,   &attention_ops};
        hidden = run_layers(w, appended, start, state.m_store, attend, params.threads);
    } else {
        DenseAttend attend{cfg.n_heads, nullptr, &attention_ops};
        hidden = run_layers(w, appended, start, state.m_store, attend, params.threads);
    }
    const auto logits = output_logits(w, hidden.row(hidden.rows() - 1));
    state.m_history.insert(state.m_history.end(), new_input.begin(), new_input.end());

    kv::DecodeOptions opt;
    opt.policy = mode == Mode::LoopServe           ? kv::DecodePolicy::Progressive
                 : mode == Mode::ObsWindowBaseline ? kv::DecodePolicy::ObservationWindowOnce
                                                   : kv::DecodePolicy::Dense;
    opt.compression = params.compression;
    opt.max_new = params.max_new;
    opt.eos = params.eos;
    opt.threads = params.threads;
    kv::DecodeResult decoded = kv::progressive_decode(w, state.m_store, logits, opt);

    std::optional<double> obs_overlap;
    if (mode == Mode::ObsWindowBaseline && decoded.answer.size() > 1) {
        // Ground truth from the rows of the answer tokens that were fed back.
        std::vector<std::size_t> fed(decoded.answer.size() - 1);
        std::iota(fed.begin(), fed.end(), n_input);
        std::vector<Matrix> rows(n_heads_total);
        for (std::size_t i = 0; i < n_heads_total; ++i) {
            rows[i] = kv::window_attention(state.m_store.flat(i), fed);
        }
        const std::size_t b = std::min(params.compression.budget, n_input);
        const auto truth = kv::ground_truth_top_b(rows, n_input, b);
        obs_overlap = kv::overlap_rate(decoded.prompt_selection, truth, b);
    }

    state.m_history.insert(state.m_history.end(), decoded.answer.begin(), decoded.answer.end());
    state.m_prev_answer = decoded.answer.size();
    state.m_turn = turn;
    for (std::size_t i = 0; i < plans.size(); ++i) {
        state.m_plans.push_back({turn, i / cfg.n_heads, i % cfg.n_heads, plans[i]});
    }

    if (record) {
        record->input_tokens = appended;
        record->answer_tokens = decoded.answer;
        record->plan_stats = detail::summarize_plans(plans);
        OpCounts& ops = record->op_counts;
        for (std::size_t i = 0; i < n_heads_total; ++i) {
            ops.prefill_sampling += sampling_ops[i].score_cells;
            ops.prefill_attention += attention_ops[i].score_cells;
            ops.prefill_fallback += attention_ops[i].fallback_cells;
        }
        for (std::size_t r = 0; r < appended.size(); ++r) {
            ops.prefill_dense_equivalent += (start + r + 1) * n_heads_total;
        }
        ops.decode_attention = decoded.decode_scores;
        ops.reselection = decoded.reselection_scores;
        record->events = std::move(decoded.events);
        record->steps = std::move(decoded.steps);
        record->obs_overlap = obs_overlap;
        if (params.record_wall_time) {
            record->wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        }
    }
    return decoded.answer;
}

struct Transcript {
    std::string instance_id;
    Mode mode = Mode::Dense;
    std::vector<TurnRecord> turns;
};

inline Transcript run_session(const ModelWeights& w, const bench::TokenizedInstance& instance, Mode mode,
                              const RunParams& params) {
    require(!instance.turns.empty(), ErrorCode::InvalidArgument, "instance has no turns");
    SessionState state(w.config, params.seed);
    Transcript t;
    t.instance_id = instance.id;
    t.mode = mode;
    for (const auto& turn : instance.turns) {
        TurnRecord rec;
        run_turn(w, state, turn.input, mode, params, &rec);
        rec.reference_tokens = turn.reference;
        t.turns.push_back(std::move(rec));
    }
    return t;
}

}  // namespace dialserve::session
