// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0
//
// dialserve: generate weights and benchmarks, run sessions, analyze transcripts
// and query the exact oracles.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dialserve/dialserve.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dialserve;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::Io:
        case ErrorCode::InvalidFormat:
        case ErrorCode::InvalidConfig:
        case ErrorCode::InvalidAlpha:
        case ErrorCode::InvalidArgument:
        case ErrorCode::InstanceTooLarge:
        case ErrorCode::PoolTooSmall:
        case ErrorCode::TooFewExamples:
        case ErrorCode::DimensionMismatch:
        case ErrorCode::SequenceTooLong:
        case ErrorCode::EmptyReference:
        case ErrorCode::SizeMismatch:
            return kExitValidation;
        default:
            return kExitRuntime;
    }
}

int report(std::string_view code, const std::string& message, int exit_code) {
    std::cerr << json{{"error", code}, {"message", message}}.dump() << "\n";
    return exit_code;
}

struct Output {
    std::string path;
    bool to_stdout = false;

    void add_to(CLI::App* app, const std::string& what) {
        app->add_option("--out", path, "Write " + what + " to this file");
        app->add_flag("--stdout", to_stdout, "Write " + what + " to stdout");
    }

    void check() const {
        if (path.empty() && !to_stdout) {
            throw CLI::ValidationError("--out", "an output needs --out or --stdout");
        }
    }

    void emit(const std::string& content) const {
        if (to_stdout) {
            std::cout << content;
        }
        if (!path.empty()) {
            io::write_file(path, content);
        }
    }
};

struct Common {
    std::string data_dir;
    std::string config_path;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    /// Relative inputs missing from the working directory are looked up in the data directory.
    std::string resolve(const std::string& path) const {
        if (path.empty() || fs::path(path).is_absolute() || fs::exists(path) || data_dir.empty()) {
            return path;
        }
        const fs::path alt = fs::path(data_dir) / path;
        return fs::exists(alt) ? alt.string() : path;
    }
};

/// Values from --config fill options that were not given on the command line.
void merge_config(CLI::App* app, const std::string& path) {
    if (path.empty()) {
        return;
    }
    const json cfg = io::parse_json(io::read_file(path), "config '" + path + "'");
    require(cfg.is_object(), ErrorCode::InvalidFormat, "config must be a JSON object");
    for (const auto& [key, value] : cfg.items()) {
        CLI::Option* opt = app->get_option_no_throw("--" + key);
        require(opt != nullptr, ErrorCode::InvalidConfig, "config key '" + key + "' is not an option of this command");
        if (opt->count() > 0) {
            continue;
        }
        opt->add_result(value.is_string() ? value.get<std::string>() : value.dump());
        opt->run_callback();
    }
}

std::size_t parse_budget(const std::string& s) {
    if (s == "inf" || s == "unlimited") {
        return kv::CompressionConfig::kUnlimited;
    }
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    require(used == s.size() && !s.empty(), ErrorCode::InvalidArgument, "budget must be a count or 'inf'");
    return static_cast<std::size_t>(v);
}

std::vector<bench::DialogueInstance> load_instances(const std::string& path) {
    std::vector<bench::DialogueInstance> out;
    for (const auto& j : io::parse_jsonl(io::read_file(path), "instances '" + path + "'")) {
        out.push_back(io::instance_from_json(j));
    }
    return out;
}

// ---------------------------------------------------------------- gen-model

struct GenModelArgs {
    ModelConfig config;
    Output out;
};

int cmd_gen_model(const GenModelArgs& a, const Common& c) {
    a.out.check();
    const ModelWeights w = init_weights(a.config, c.seed);
    a.out.emit(io::to_json(w, c.seed).dump() + "\n");
    std::cerr << "gen-model: " << a.config.total_heads() << " heads, seed " << c.seed << "\n";
    return 0;
}

// ---------------------------------------------------------------- gen-bench

struct GenBenchArgs {
    std::string kind = "qa";
    std::string corpus;
    std::string noise;
    std::size_t count = 4;
    std::size_t turns = 3;
    std::string positions;
    std::size_t corpus_records = 32;
    std::string vocab_out;
    Output out;
};

std::vector<bench::QueryPosition> parse_positions(const std::string& s) {
    std::vector<bench::QueryPosition> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        out.push_back(bench::parse_position(bench::trim(item)));
    }
    return out;
}

int cmd_gen_bench(const GenBenchArgs& a, const Common& c) {
    a.out.check();
    require(a.kind == "qa" || a.kind == "sum" || a.kind == "fewshot", ErrorCode::InvalidArgument,
            "kind must be qa, sum or fewshot");
    require(a.count >= 1, ErrorCode::InvalidArgument, "count must be >= 1");
    bench::SyntheticCorpus corpus;
    if (a.corpus.empty()) {
        corpus = bench::make_synthetic_corpus(a.corpus_records, derive_seed(c.seed, 0xC0));
    } else {
        const std::string text = io::read_file(c.resolve(a.corpus));
        if (a.kind == "qa") {
            corpus.qa = io::qa_records_from_jsonl(text);
        } else if (a.kind == "sum") {
            corpus.docs = io::doc_records_from_jsonl(text);
        } else {
            corpus.fewshot = io::fewshot_records_from_jsonl(text);
        }
    }
    if (!a.noise.empty()) {
        corpus.noise.clear();
        for (const auto& j : io::parse_jsonl(io::read_file(c.resolve(a.noise)), "noise pool")) {
            corpus.noise.push_back(io::guarded("noise record", [&] { return j.at("text").get<std::string>(); }));
        }
    }
    const auto fixed_positions = parse_positions(a.positions);
    std::string jsonl;
    for (std::size_t i = 0; i < a.count; ++i) {
        const std::uint64_t s = derive_seed(c.seed, i, 1);
        bench::DialogueInstance inst;
        if (a.kind == "qa") {
            std::vector<bench::QueryPosition> pos = fixed_positions;
            if (pos.empty()) {
                Rng rng(derive_seed(s, 2));
                for (std::size_t t = 0; t < a.turns; ++t) {
                    pos.push_back(static_cast<bench::QueryPosition>(rng.below(3)));
                }
            }
            inst = bench::build_qa_instance(corpus.qa, a.turns, pos, corpus.noise, s);
        } else if (a.kind == "sum") {
            inst = bench::build_sum_instance(corpus.docs, s);
        } else {
            require(!corpus.fewshot.empty(), ErrorCode::PoolTooSmall, "few-shot corpus is empty");
            inst = bench::build_fewshot_instance(corpus.fewshot[i % corpus.fewshot.size()], s);
        }
        const auto rep = bench::validate_instance(inst);
        require(rep.ok(), ErrorCode::InvalidFormat, "generated instance failed validation");
        jsonl += io::to_json(inst).dump() + "\n";
    }
    a.out.emit(jsonl);
    if (!a.vocab_out.empty()) {
        require(a.corpus.empty(), ErrorCode::InvalidArgument, "--vocab-out only applies to the synthetic corpus");
        io::write_file(a.vocab_out, json(corpus.vocab_words).dump() + "\n");
    }
    std::cerr << "gen-bench: " << a.count << " " << a.kind << " instances\n";
    return 0;
}

// ---------------------------------------------------------------- run

struct RunArgs {
    std::string model;
    std::string instances;
    std::string vocab;
    std::string mode = "loopserve";
    double alpha = 0.955;
    std::string budget = "1024";
    std::size_t interval = 16;
    std::size_t warmup = 16;
    std::size_t obs_window = 0;
    double sample_rate = 0.1;
    std::size_t sample_floor = 32;
    std::size_t max_new = 16;
    bool wall_clock = false;
    std::string events;
    Output out;
};

void need(const std::string& value, const std::string& flag) {
    if (value.empty()) {
        throw CLI::RequiredError(flag);
    }
}

int cmd_run(const RunArgs& a, const Common& c) {
    a.out.check();
    need(a.model, "--model");
    need(a.instances, "--instances");
    need(a.vocab, "--vocab");
    const ModelWeights w = io::weights_from_json(io::parse_json(io::read_file(c.resolve(a.model)), "model"));
    const bench::Vocab vocab = io::vocab_from_json(io::parse_json(io::read_file(c.resolve(a.vocab)), "vocab"));
    require(vocab.size() <= w.config.vocab_size, ErrorCode::InvalidConfig, "vocab larger than the model vocabulary");
    const auto mode = session::parse_mode(a.mode);

    session::RunParams p;
    p.alpha = a.alpha;
    p.compression.budget = parse_budget(a.budget);
    p.compression.interval = a.interval;
    p.compression.warmup = a.warmup;
    p.compression.obs_window = a.obs_window == 0 ? a.interval : a.obs_window;
    p.sampling = {a.sample_rate, a.sample_floor};
    p.max_new = a.max_new;
    p.eos = vocab.eos();
    p.seed = c.seed;
    p.threads = c.threads;
    p.record_wall_time = a.wall_clock;
    p.validate(w.config, mode);

    std::string transcripts;
    std::string events;
    for (const auto& inst : load_instances(c.resolve(a.instances))) {
        const auto rep = bench::validate_instance(inst);
        require(rep.ok(), ErrorCode::InvalidFormat,
                "instance '" + inst.id + "' is invalid: " + (rep.ok() ? "" : rep.violations.front()));
        const auto t = session::run_session(w, bench::tokenize_instance(inst, vocab), mode, p);
        transcripts += io::to_json(t).dump() + "\n";
        for (std::size_t turn = 0; turn < t.turns.size(); ++turn) {
            for (const auto& e : t.turns[turn].events) {
                json ej = io::to_json(e);
                ej["instance_id"] = inst.id;
                ej["turn"] = turn + 1;
                events += ej.dump() + "\n";
            }
        }
    }
    a.out.emit(transcripts);
    if (!a.events.empty()) {
        io::write_file(a.events, events);
    }
    std::cerr << "run: mode " << a.mode << " done\n";
    return 0;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
    std::string transcripts;
    std::string vocab;
    std::string metrics = "f1,rouge_l,accuracy";
    std::string blocks;
    std::string etas = "0,0.05,0.1,0.15,0.2,0.3,0.5,1";
    std::string format = "csv";
    Output out;
};

metrics::MetricsRecord analyze_transcript(const io::TranscriptView& t, const std::vector<std::string>& which,
                                          std::optional<TokenId> eos) {
    metrics::MetricsRecord m;
    m.instance_id = t.instance_id + "/" + t.mode;
    metrics::Series prefill_ratio;
    metrics::Series overlap;
    for (std::size_t i = 0; i < t.turns.size(); ++i) {
        const auto& turn = t.turns[i];
        TokenSequence answer = turn.answer;
        if (eos && !answer.empty() && answer.back() == *eos) {
            answer.pop_back();
        }
        std::map<std::string, double> scores;
        if (!turn.reference.empty()) {
            const std::span<const TokenId> pred(answer);
            const std::span<const TokenId> ref(turn.reference);
            for (const auto& name : which) {
                if (name == "f1") {
                    scores["f1"] = metrics::f1(pred, ref);
                } else if (name == "rouge_l") {
                    scores["rouge_l"] = metrics::rouge_l(pred, ref);
                } else if (name == "accuracy") {
                    const TokenId first[1] = {answer.empty() ? TokenId(-1) : answer.front()};
                    const TokenId label[1] = {turn.reference.front()};
                    scores["accuracy"] =
                        metrics::accuracy(std::span<const TokenId>(first), std::span<const TokenId>(label));
                }
            }
        }
        m.turn_scores.push_back(std::move(scores));
        if (turn.prefill_dense_equivalent > 0) {
            prefill_ratio.emplace_back(static_cast<double>(i + 1), static_cast<double>(turn.prefill_attention) /
                                                                       static_cast<double>(turn.prefill_dense_equivalent));
        }
        if (turn.obs_overlap) {
            overlap.emplace_back(static_cast<double>(i + 1), *turn.obs_overlap);
        }
        m.op_counts["prefill_attention"] += turn.prefill_attention;
        m.op_counts["prefill_dense_equivalent"] += turn.prefill_dense_equivalent;
        m.op_counts["decode_attention"] += turn.decode_attention;
        m.wall_ms.push_back(turn.wall_ms);
    }
    if (!prefill_ratio.empty()) {
        m.series["prefill_op_ratio"] = std::move(prefill_ratio);
    }
    if (!overlap.empty()) {
        m.series["obs_overlap"] = std::move(overlap);
    }
    return m;
}

int cmd_analyze(const AnalyzeArgs& a, const Common& c) {
    a.out.check();
    require(a.format == "csv" || a.format == "json", ErrorCode::InvalidArgument, "format must be csv or json");
    require(!a.transcripts.empty() || !a.blocks.empty(), ErrorCode::InvalidArgument,
            "analyze needs --transcripts and/or --blocks");
    std::vector<std::string> which;
    {
        std::stringstream ss(a.metrics);
        for (std::string item; std::getline(ss, item, ',');) {
            item = bench::trim(item);
            require(item == "f1" || item == "rouge_l" || item == "accuracy", ErrorCode::InvalidArgument,
                    "unknown metric '" + item + "'");
            which.push_back(item);
        }
    }
    std::optional<TokenId> eos;
    if (!a.vocab.empty()) {
        eos = io::vocab_from_json(io::parse_json(io::read_file(c.resolve(a.vocab)), "vocab")).eos();
    }
    std::vector<metrics::MetricsRecord> records;
    if (!a.transcripts.empty()) {
        for (const auto& j : io::parse_jsonl(io::read_file(c.resolve(a.transcripts)), "transcripts")) {
            records.push_back(analyze_transcript(io::transcript_from_json(j), which, eos));
        }
    }
    if (!a.blocks.empty()) {
        const json bj = io::parse_json(io::read_file(c.resolve(a.blocks)), "blocks");
        std::vector<AttentionBlock> blocks;
        if (bj.is_array()) {
            for (const auto& b : bj) {
                blocks.push_back(io::block_from_json(b));
            }
        } else {
            blocks.push_back(io::block_from_json(bj));
        }
        std::vector<double> grid;
        std::stringstream ss(a.etas);
        for (std::string item; std::getline(ss, item, ',');) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(item, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            require(used > 0 && bench::trim(item.substr(used)).empty(), ErrorCode::InvalidArgument,
                    "bad eta '" + item + "'");
            grid.push_back(v);
        }
        metrics::MetricsRecord m;
        m.instance_id = fs::path(a.blocks).filename().string();
        m.series["recovery"] = metrics::recovery_curve(blocks, grid);
        records.push_back(std::move(m));
    }
    for (const auto& r : records) {
        r.validate();
    }
    if (a.format == "csv") {
        a.out.emit(io::metrics_csv(records));
    } else {
        json arr = json::array();
        for (const auto& r : records) {
            arr.push_back(io::to_json(r));
        }
        a.out.emit(arr.dump(2) + "\n");
    }
    std::cerr << "analyze: " << records.size() << " records\n";
    return 0;
}

// ---------------------------------------------------------------- oracle

struct OracleArgs {
    std::string input;
    std::string which = "min-lines";
    double alpha = 0.955;
    Output out;
};

json selection_json(const LineSelection& s) { return {{"slashes", s.slashes}, {"verticals", s.verticals}}; }

int cmd_oracle(const OracleArgs& a, const Common& c) {
    a.out.check();
    need(a.input, "--input");
    require(a.which == "min-lines" || a.which == "greedy", ErrorCode::InvalidArgument,
            "oracle must be min-lines or greedy");
    require(a.alpha > 0.0 && a.alpha <= 1.0, ErrorCode::InvalidAlpha, "alpha must lie in (0, 1]");
    const AttentionBlock block = io::block_from_json(io::parse_json(io::read_file(c.resolve(a.input)), "block"));
    const prefill::HeadPlan greedy = prefill::select_lines(block, a.alpha);
    json rep = {{"oracle", a.which},
                {"alpha", a.alpha},
                {"n_total", block.n_total},
                {"n_new", block.n_new()},
                {"greedy_cost", greedy.cost},
                {"greedy", selection_json(greedy.lines)},
                {"greedy_coverage", greedy.achieved_coverage}};
    if (a.which == "min-lines") {
        const auto best = prefill::brute_force_min_lines(block, a.alpha);
        rep["optimal_cost"] = best.cost;
        rep["optimal"] = selection_json(best.plan);
        rep["optimal_coverage"] = prefill::coverage_ratio(block, best.plan);
        rep["cost_ratio"] = best.cost == 0 ? 1.0 : static_cast<double>(greedy.cost) / static_cast<double>(best.cost);
    }
    a.out.emit(rep.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dialserve: sparse prefill and progressive KV compression lab"};
    app.require_subcommand(1);
    Common common;
    if (const char* env = std::getenv("DIALSERVE_DATA_DIR")) {
        common.data_dir = env;
    }
    auto add_common = [&common](CLI::App* sub) {
        sub->add_option("--seed", common.seed, "Seed for every random choice");
        sub->add_option("--threads", common.threads, "Worker cap (results do not depend on it)")
            ->check(CLI::PositiveNumber);
        sub->add_option("--data-dir", common.data_dir, "Directory searched for relative inputs");
        sub->add_option("--config", common.config_path, "JSON object of option values; flags win");
    };

    GenModelArgs gm;
    auto* s_model = app.add_subcommand("gen-model", "Write deterministic toy-model weights");
    s_model->add_option("--layers", gm.config.n_layers);
    s_model->add_option("--heads", gm.config.n_heads);
    s_model->add_option("--d-model", gm.config.d_model);
    s_model->add_option("--d-k", gm.config.d_k);
    s_model->add_option("--d-v", gm.config.d_v);
    s_model->add_option("--vocab-size", gm.config.vocab_size);
    s_model->add_option("--max-seq-len", gm.config.max_seq_len);
    gm.out.add_to(s_model, "weights JSON");
    add_common(s_model);

    GenBenchArgs gb;
    auto* s_bench = app.add_subcommand("gen-bench", "Generate multi-turn instances as JSONL");
    s_bench->add_option("--kind", gb.kind, "qa, sum or fewshot");
    s_bench->add_option("--corpus", gb.corpus, "JSONL corpus; the synthetic corpus when omitted");
    s_bench->add_option("--noise", gb.noise, "JSONL of {\"text\": ...} noise paragraphs");
    s_bench->add_option("--count", gb.count);
    s_bench->add_option("--turns", gb.turns, "Turns per qa instance");
    s_bench->add_option("--positions", gb.positions, "Comma list of begin|middle|end per qa turn");
    s_bench->add_option("--corpus-records", gb.corpus_records, "Records in the synthetic corpus");
    s_bench->add_option("--vocab-out", gb.vocab_out, "Write the synthetic vocab here");
    gb.out.add_to(s_bench, "instances JSONL");
    add_common(s_bench);

    RunArgs ra;
    auto* s_run = app.add_subcommand("run", "Run instances through the session loop");
    s_run->add_option("--model", ra.model);
    s_run->add_option("--instances", ra.instances);
    s_run->add_option("--vocab", ra.vocab);
    s_run->add_option("--mode", ra.mode, "dense, loopserve or obswindow-baseline");
    s_run->add_option("--alpha", ra.alpha, "Coverage target in (0, 1]");
    s_run->add_option("--budget", ra.budget, "Tokens kept per head, or inf");
    s_run->add_option("--interval", ra.interval, "Decode steps between re-selections");
    s_run->add_option("--warmup", ra.warmup, "Decode steps before the first selection");
    s_run->add_option("--obs-window", ra.obs_window, "Observation window (default: interval)");
    s_run->add_option("--sample-rate", ra.sample_rate);
    s_run->add_option("--sample-floor", ra.sample_floor);
    s_run->add_option("--max-new", ra.max_new, "Answer length cap per turn");
    s_run->add_flag("--wall-clock", ra.wall_clock, "Record wall times (output no longer byte-stable)");
    s_run->add_option("--events", ra.events, "Write compression events JSONL here");
    ra.out.add_to(s_run, "transcripts JSONL");
    add_common(s_run);

    AnalyzeArgs aa;
    auto* s_an = app.add_subcommand("analyze", "Score transcripts and attention blocks");
    s_an->add_option("--transcripts", aa.transcripts);
    s_an->add_option("--vocab", aa.vocab, "Vocab whose <eos> is stripped from answers");
    s_an->add_option("--metrics", aa.metrics, "Comma list of f1, rouge_l, accuracy");
    s_an->add_option("--blocks", aa.blocks, "Attention block JSON (object or array) for the recovery curve");
    s_an->add_option("--etas", aa.etas, "Comma list of line fractions");
    s_an->add_option("--format", aa.format, "csv or json");
    aa.out.add_to(s_an, "metrics");
    add_common(s_an);

    OracleArgs oa;
    auto* s_or = app.add_subcommand("oracle", "Exact minimum line cover of an attention block");
    s_or->add_option("--input", oa.input);
    s_or->add_option("--which", oa.which, "min-lines or greedy");
    s_or->add_option("--alpha", oa.alpha);
    oa.out.add_to(s_or, "oracle report");
    add_common(s_or);

    try {
        app.parse(argc, argv);
        for (auto* sub : app.get_subcommands()) {
            merge_config(sub, common.config_path);
        }
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        return report("Usage", e.what(), kExitUsage);
    } catch (const Error& e) {
        return report(to_string(e.code()), e.what(), exit_code_for(e.code()));
    }

    try {
        if (s_model->parsed()) return cmd_gen_model(gm, common);
        if (s_bench->parsed()) return cmd_gen_bench(gb, common);
        if (s_run->parsed()) return cmd_run(ra, common);
        if (s_an->parsed()) return cmd_analyze(aa, common);
        if (s_or->parsed()) return cmd_oracle(oa, common);
    } catch (const CLI::ParseError& e) {
        return report("Usage", e.what(), kExitUsage);
    } catch (const Error& e) {
        return report(to_string(e.code()), e.what(), exit_code_for(e.code()));
    } catch (const std::exception& e) {
        return report("Runtime", e.what(), kExitRuntime);
    }
    return kExitUsage;
}
