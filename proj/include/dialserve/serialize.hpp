// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialserve/bench.hpp"
#include "dialserve/compressor.hpp"
#include "dialserve/error.hpp"
#include "dialserve/metrics.hpp"
#include "dialserve/model.hpp"
#include "dialserve/rng.hpp"
#include "dialserve/session.hpp"
#include "dialserve/sparsifier.hpp"
#include "dialserve/tensor.hpp"

namespace dialserve::io {

using json = nlohmann::json;

inline constexpr int kWeightsVersion = 1;

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write '" + path + "'");
    out << content;
    require(static_cast<bool>(out), ErrorCode::Io, "write to '" + path + "' failed");
}

inline json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidFormat, what + ": " + e.what());
    }
}

/// One JSON value per nonempty line.
inline std::vector<json> parse_jsonl(const std::string& text, const std::string& what) {
    std::vector<json> out;
    std::istringstream in(text);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (bench::trim(line).empty()) {
            continue;
        }
        out.push_back(parse_json(line, what + " line " + std::to_string(line_no)));
    }
    return out;
}

/// Runs `fn`, turning json access errors into InvalidFormat.
template <class Fn>
auto guarded(const std::string& what, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidFormat, what + ": " + e.what());
    }
}

inline json to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    }
    return rows;
}

inline Matrix matrix_from_json(const json& j, std::size_t cols_if_empty = 0) {
    require(j.is_array(), ErrorCode::InvalidFormat, "matrix must be an array of rows");
    if (j.empty()) {
        return Matrix(0, cols_if_empty);
    }
    const std::size_t cols = j.front().size();
    Matrix m(j.size(), cols);
    for (std::size_t r = 0; r < j.size(); ++r) {
        require(j[r].is_array() && j[r].size() == cols, ErrorCode::InvalidFormat, "ragged matrix rows");
        for (std::size_t c = 0; c < cols; ++c) {
            require(j[r][c].is_number(), ErrorCode::InvalidFormat, "matrix entries must be numbers");
            m(r, c) = j[r][c].get<double>();
        }
    }
    return m;
}

inline json to_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads},       {"d_model", c.d_model},
            {"d_k", c.d_k},           {"d_v", c.d_v},               {"vocab_size", c.vocab_size},
            {"max_seq_len", c.max_seq_len}};
}

inline ModelConfig config_from_json(const json& j) {
    return guarded("model config", [&] {
        ModelConfig c;
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.d_k = j.at("d_k").get<std::size_t>();
        c.d_v = j.at("d_v").get<std::size_t>();
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
        c.validate();
        return c;
    });
}

inline json to_json(const ModelWeights& w, std::uint64_t seed) {
    json layers = json::array();
    for (const auto& l : w.layers) {
        json heads = json::array();
        for (const auto& h : l.heads) {
            heads.push_back({{"w_q", to_json(h.w_q)}, {"w_k", to_json(h.w_k)}, {"w_v", to_json(h.w_v)}});
        }
        layers.push_back({{"attn_norm", l.attn_norm},
                          {"heads", std::move(heads)},
                          {"w_o", to_json(l.w_o)},
                          {"ffn_norm", l.ffn_norm},
                          {"w_ff1", to_json(l.w_ff1)},
                          {"w_ff2", to_json(l.w_ff2)}});
    }
    return {{"format", "dialserve-weights"},
            {"version", kWeightsVersion},
            {"generator", std::string(kGeneratorName)},
            {"seed", seed},
            {"config", to_json(w.config)},
            {"token_embedding", to_json(w.token_embedding)},
            {"position_embedding", to_json(w.position_embedding)},
            {"layers", std::move(layers)},
            {"final_norm", w.final_norm},
            {"w_out", to_json(w.w_out)},
            {"b_out", w.b_out}};
}

inline ModelWeights weights_from_json(const json& j) {
    ModelWeights w = guarded("weights", [&] {
        require(j.at("format") == "dialserve-weights", ErrorCode::InvalidFormat, "not a weights file");
        require(j.at("version") == kWeightsVersion, ErrorCode::InvalidFormat, "unsupported weights version");
        ModelWeights out;
        out.config = config_from_json(j.at("config"));
        out.token_embedding = matrix_from_json(j.at("token_embedding"));
        out.position_embedding = matrix_from_json(j.at("position_embedding"));
        for (const auto& lj : j.at("layers")) {
            LayerWeights l;
            l.attn_norm = lj.at("attn_norm").get<std::vector<double>>();
            for (const auto& hj : lj.at("heads")) {
                l.heads.push_back(
                    {matrix_from_json(hj.at("w_q")), matrix_from_json(hj.at("w_k")), matrix_from_json(hj.at("w_v"))});
            }
            l.w_o = matrix_from_json(lj.at("w_o"));
            l.ffn_norm = lj.at("ffn_norm").get<std::vector<double>>();
            l.w_ff1 = matrix_from_json(lj.at("w_ff1"));
            l.w_ff2 = matrix_from_json(lj.at("w_ff2"));
            out.layers.push_back(std::move(l));
        }
        out.final_norm = j.at("final_norm").get<std::vector<double>>();
        out.w_out = matrix_from_json(j.at("w_out"));
        out.b_out = j.at("b_out").get<std::vector<double>>();
        return out;
    });
    w.validate();
    return w;
}

inline json to_json(const prefill::HeadPlan& p) {
    return {{"n_total", p.n_total},
            {"slashes", p.lines.slashes},
            {"verticals", p.lines.verticals},
            {"achieved_coverage", p.achieved_coverage},
            {"approx_sum", p.approx_sum},
            {"total_weight", p.total_weight},
            {"cost", p.cost},
            {"stalled", p.stalled}};
}

inline prefill::HeadPlan plan_from_json(const json& j) {
    return guarded("plan", [&] {
        prefill::HeadPlan p;
        p.n_total = j.at("n_total").get<std::size_t>();
        p.lines.slashes = j.at("slashes").get<std::vector<std::size_t>>();
        p.lines.verticals = j.at("verticals").get<std::vector<std::size_t>>();
        p.achieved_coverage = j.value("achieved_coverage", 0.0);
        p.approx_sum = j.value("approx_sum", 0.0);
        p.total_weight = j.value("total_weight", 0.0);
        p.cost = j.value("cost", std::size_t{0});
        p.stalled = j.value("stalled", false);
        return p;
    });
}

inline json to_json(const AttentionBlock& b) {
    return {{"n_total", b.n_total}, {"row_positions", b.row_positions}, {"weights", to_json(b.weights)}};
}

/// Missing row_positions means the rows are the last rows of the sequence.
inline AttentionBlock block_from_json(const json& j) {
    AttentionBlock b = guarded("attention block", [&] {
        Matrix weights = matrix_from_json(j.at("weights"));
        if (!j.contains("row_positions")) {
            return AttentionBlock::contiguous(std::move(weights));
        }
        AttentionBlock out;
        out.n_total = j.value("n_total", weights.cols());
        out.row_positions = j.at("row_positions").get<std::vector<std::size_t>>();
        out.weights = std::move(weights);
        return out;
    });
    b.validate();
    return b;
}

inline json to_json(const bench::DialogueInstance& inst) {
    json turns = json::array();
    for (const auto& t : inst.turns) {
        turns.push_back({{"context_segments", t.context_segments},
                         {"segment_sources", t.segment_sources},
                         {"query_index", t.query_index},
                         {"query", t.query},
                         {"reference_answer", t.reference_answer},
                         {"query_position", std::string(bench::to_string(t.query_position))},
                         {"relevance", t.relevance}});
    }
    return {{"id", inst.id}, {"kind", inst.kind}, {"turns", std::move(turns)}};
}

inline bench::DialogueInstance instance_from_json(const json& j) {
    return guarded("instance", [&] {
        bench::DialogueInstance inst;
        inst.id = j.at("id").get<std::string>();
        inst.kind = j.value("kind", std::string());
        for (const auto& tj : j.at("turns")) {
            bench::Turn t;
            t.context_segments = tj.at("context_segments").get<std::vector<std::string>>();
            t.segment_sources = tj.value("segment_sources", std::vector<std::string>(t.context_segments.size()));
            t.query_index = tj.at("query_index").get<std::size_t>();
            t.query = tj.at("query").get<std::string>();
            t.reference_answer = tj.at("reference_answer").get<std::string>();
            t.query_position = bench::parse_position(tj.at("query_position").get<std::string>());
            t.relevance = tj.at("relevance").get<std::vector<std::size_t>>();
            inst.turns.push_back(std::move(t));
        }
        return inst;
    });
}

inline std::vector<bench::QaRecord> qa_records_from_jsonl(const std::string& text) {
    std::vector<bench::QaRecord> out;
    for (const auto& j : parse_jsonl(text, "qa corpus")) {
        out.push_back(guarded("qa record", [&] {
            return bench::QaRecord{j.at("context").get<std::string>(), j.at("question").get<std::string>(),
                                   j.at("answer").get<std::string>()};
        }));
    }
    return out;
}

inline std::vector<bench::DocRecord> doc_records_from_jsonl(const std::string& text) {
    std::vector<bench::DocRecord> out;
    for (const auto& j : parse_jsonl(text, "document corpus")) {
        out.push_back(guarded("document record", [&] {
            return bench::DocRecord{j.at("document").get<std::string>(), j.at("summary").get<std::string>()};
        }));
    }
    return out;
}

/// Examples come either as an array or as one text split on blank lines.
inline std::vector<bench::FewShotRecord> fewshot_records_from_jsonl(const std::string& text) {
    std::vector<bench::FewShotRecord> out;
    for (const auto& j : parse_jsonl(text, "few-shot corpus")) {
        out.push_back(guarded("few-shot record", [&] {
            bench::FewShotRecord r;
            const auto& ex = j.at("examples");
            r.examples = ex.is_string() ? bench::split_examples(ex.get<std::string>())
                                        : ex.get<std::vector<std::string>>();
            r.query = j.at("query").get<std::string>();
            r.answer = j.at("answer").get<std::string>();
            return r;
        }));
    }
    return out;
}

inline bench::Vocab vocab_from_json(const json& j) {
    return guarded("vocab", [&] {
        require(j.is_array(), ErrorCode::InvalidFormat, "vocab must be a JSON array of strings");
        return bench::Vocab(j.get<std::vector<std::string>>());
    });
}

inline json to_json(const kv::CompressionEvent& e) {
    return {{"step", e.step},
            {"layer", e.layer},
            {"head", e.head},
            {"retained_ids", e.retained_ids},
            {"kept_score_fraction", e.kept_score_fraction}};
}

inline json to_json(const session::PlanStats& s) {
    return {{"heads", s.heads},           {"mean_coverage", s.mean_coverage}, {"min_coverage", s.min_coverage},
            {"mean_lines", s.mean_lines}, {"total_cost", s.total_cost},       {"stalled_heads", s.stalled_heads}};
}

inline json to_json(const session::OpCounts& o) {
    return {{"prefill_dense_equivalent", o.prefill_dense_equivalent},
            {"prefill_sampling", o.prefill_sampling},
            {"prefill_attention", o.prefill_attention},
            {"prefill_fallback", o.prefill_fallback},
            {"decode_attention", o.decode_attention},
            {"reselection", o.reselection}};
}

inline json to_json(const session::Transcript& t) {
    json turns = json::array();
    for (const auto& r : t.turns) {
        json tj = {{"input_tokens", r.input_tokens},
                   {"answer_tokens", r.answer_tokens},
                   {"reference_tokens", r.reference_tokens},
                   {"plan_stats", to_json(r.plan_stats)},
                   {"op_counts", to_json(r.op_counts)},
                   {"compression_events", r.events.size()},
                   {"wall_ms", r.wall_ms}};
        if (r.obs_overlap) {
            tj["obs_overlap"] = *r.obs_overlap;
        }
        turns.push_back(std::move(tj));
    }
    return {{"instance_id", t.instance_id}, {"mode", std::string(session::to_string(t.mode))}, {"turns", turns}};
}

struct TranscriptView {
    std::string instance_id;
    std::string mode;
    struct TurnView {
        TokenSequence answer;
        TokenSequence reference;
        std::uint64_t prefill_attention = 0;
        std::uint64_t prefill_dense_equivalent = 0;
        std::uint64_t decode_attention = 0;
        std::optional<double> obs_overlap;
        double wall_ms = 0.0;
    };
    std::vector<TurnView> turns;
};

inline TranscriptView transcript_from_json(const json& j) {
    return guarded("transcript", [&] {
        TranscriptView v;
        v.instance_id = j.at("instance_id").get<std::string>();
        v.mode = j.at("mode").get<std::string>();
        for (const auto& tj : j.at("turns")) {
            TranscriptView::TurnView t;
            t.answer = tj.at("answer_tokens").get<TokenSequence>();
            t.reference = tj.at("reference_tokens").get<TokenSequence>();
            const auto& ops = tj.at("op_counts");
            t.prefill_attention = ops.at("prefill_attention").get<std::uint64_t>();
            t.prefill_dense_equivalent = ops.at("prefill_dense_equivalent").get<std::uint64_t>();
            t.decode_attention = ops.at("decode_attention").get<std::uint64_t>();
            if (tj.contains("obs_overlap")) {
                t.obs_overlap = tj.at("obs_overlap").get<double>();
            }
            t.wall_ms = tj.value("wall_ms", 0.0);
            v.turns.push_back(std::move(t));
        }
        return v;
    });
}

inline json to_json(const metrics::MetricsRecord& m) {
    json series = json::object();
    for (const auto& [name, points] : m.series) {
        json pts = json::array();
        for (const auto& [x, y] : points) {
            pts.push_back({x, y});
        }
        series[name] = std::move(pts);
    }
    return {{"instance_id", m.instance_id},
            {"turn_scores", m.turn_scores},
            {"series", std::move(series)},
            {"op_counts", m.op_counts},
            {"wall_ms", m.wall_ms}};
}

/// Round-trip formatting for CSV cells.
inline std::string format_number(double v) { return json(v).dump(); }

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        out += c == '"' ? std::string("\"\"") : std::string(1, c);
    }
    return out + "\"";
}

/// Rows of (instance, metric, x, y): per-turn scores use the 1-based turn as x,
/// op counts and wall times use x = 0 and the turn respectively.
inline std::string metrics_csv(const std::vector<metrics::MetricsRecord>& records) {
    std::string out = "instance,metric,x,y\n";
    auto row = [&out](const std::string& id, const std::string& metric, double x, double y) {
        out += csv_escape(id) + "," + csv_escape(metric) + "," + format_number(x) + "," + format_number(y) + "\n";
    };
    for (const auto& m : records) {
        for (std::size_t t = 0; t < m.turn_scores.size(); ++t) {
            for (const auto& [name, v] : m.turn_scores[t]) {
                row(m.instance_id, name, static_cast<double>(t + 1), v);
            }
        }
        for (const auto& [name, points] : m.series) {
            for (const auto& [x, y] : points) {
                row(m.instance_id, name, x, y);
            }
        }
        for (const auto& [name, v] : m.op_counts) {
            row(m.instance_id, "ops." + name, 0.0, static_cast<double>(v));
        }
        for (std::size_t t = 0; t < m.wall_ms.size(); ++t) {
            row(m.instance_id, "wall_ms", static_cast<double>(t + 1), m.wall_ms[t]);
        }
    }
    return out;
}

}  // namespace dialserve::io
