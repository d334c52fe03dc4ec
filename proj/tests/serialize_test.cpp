// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dialserve/serialize.hpp"

using namespace dialserve;
using namespace dialserve::io;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_model = 6;
    c.d_k = 3;
    c.d_v = 3;
    c.vocab_size = 10;
    c.max_seq_len = 16;
    return c;
}

template <class Fn>
ErrorCode code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::Io;
}

}  // namespace

TEST(Weights, RoundTripIsExact) {
    const auto w = init_weights(tiny(), 42);
    const json j = to_json(w, 42);
    EXPECT_EQ(j.at("format"), "dialserve-weights");
    EXPECT_EQ(j.at("version"), kWeightsVersion);
    const auto back = weights_from_json(parse_json(j.dump(), "weights"));
    EXPECT_EQ(back.config, w.config);
    EXPECT_EQ(back.token_embedding, w.token_embedding);
    EXPECT_EQ(back.layers[0].heads[1].w_v, w.layers[0].heads[1].w_v);
    EXPECT_EQ(back.b_out, w.b_out);
    EXPECT_EQ(to_json(back, 42).dump(), j.dump());
}

TEST(Weights, RejectsBadDocuments) {
    auto j = to_json(init_weights(tiny(), 1), 1);
    j["version"] = 7;
    EXPECT_EQ(code_of([&] { weights_from_json(j); }), ErrorCode::InvalidFormat);
    j = to_json(init_weights(tiny(), 1), 1);
    j.erase("w_out");
    EXPECT_EQ(code_of([&] { weights_from_json(j); }), ErrorCode::InvalidFormat);
    j = to_json(init_weights(tiny(), 1), 1);
    j["config"]["n_heads"] = 0;
    EXPECT_EQ(code_of([&] { weights_from_json(j); }), ErrorCode::InvalidConfig);
}

TEST(Parse, ErrorsCarryCodes) {
    EXPECT_EQ(code_of([] { parse_json("{not json", "x"); }), ErrorCode::InvalidFormat);
    EXPECT_EQ(code_of([] { read_file("/nonexistent/file.json"); }), ErrorCode::Io);
    EXPECT_EQ(parse_jsonl("{\"a\":1}\n\n  \n{\"a\":2}\n", "x").size(), 2U);
    EXPECT_EQ(code_of([] { parse_jsonl("{\"a\":1}\n[", "x"); }), ErrorCode::InvalidFormat);
    EXPECT_EQ(code_of([] { matrix_from_json(json::parse("[[1,2],[3]]")); }), ErrorCode::InvalidFormat);
}

TEST(Blocks, ContiguousDefaultAndValidation) {
    const auto b = block_from_json(json::parse(R"({"weights":[[1,0,0],[0.5,0.5,0]]})"));
    EXPECT_EQ(b.n_total, 3U);
    EXPECT_EQ(b.row_positions, (std::vector<std::size_t>{1, 2}));
    const auto c = block_from_json(json::parse(R"({"n_total":4,"row_positions":[2,3],
        "weights":[[0.02,0,0.98,0],[0,0.03,0,0.97]]})"));
    EXPECT_EQ(c.row_positions, (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(block_from_json(to_json(c)).weights, c.weights);
    EXPECT_THROW(block_from_json(json::parse(R"({"weights":[[0.5,0.5],[0.5,0.5]]})")), Error);
}

TEST(Plans, RoundTrip) {
    prefill::HeadPlan p;
    p.n_total = 9;
    p.lines = {{0, 3}, {1}};
    p.achieved_coverage = 0.96;
    p.cost = 14;
    p.stalled = true;
    const auto q = plan_from_json(to_json(p));
    EXPECT_EQ(q.lines.slashes, p.lines.slashes);
    EXPECT_EQ(q.lines.verticals, p.lines.verticals);
    EXPECT_EQ(q.cost, 14U);
    EXPECT_TRUE(q.stalled);
}

TEST(Instances, RoundTrip) {
    const auto corpus = bench::make_synthetic_corpus(6, 2);
    const auto inst = bench::build_qa_instance(
        corpus.qa, 3, {bench::QueryPosition::Begin, bench::QueryPosition::Middle, bench::QueryPosition::End},
        corpus.noise, 9);
    EXPECT_EQ(instance_from_json(parse_json(to_json(inst).dump(), "i")), inst);
    auto j = to_json(inst);
    j["turns"][0]["query_position"] = "side";
    EXPECT_EQ(code_of([&] { instance_from_json(j); }), ErrorCode::InvalidFormat);
}

TEST(Corpora, JsonlReaders) {
    const auto qa = qa_records_from_jsonl(R"({"context":"c","question":"q","answer":"a"})" "\n");
    ASSERT_EQ(qa.size(), 1U);
    EXPECT_EQ(qa[0].answer, "a");
    const auto docs = doc_records_from_jsonl(R"({"document":"d","summary":"s"})");
    EXPECT_EQ(docs[0].summary, "s");
    const auto fs = fewshot_records_from_jsonl(
        R"({"examples":"e1 x\n\ne2\n\ne3\n\ne4","query":"q","answer":"a"})" "\n"
        R"({"examples":["a","b"],"query":"q","answer":"a"})");
    ASSERT_EQ(fs.size(), 2U);
    EXPECT_EQ(fs[0].examples, (std::vector<std::string>{"e1 x", "e2", "e3", "e4"}));
    EXPECT_EQ(fs[1].examples.size(), 2U);
    EXPECT_EQ(code_of([] { qa_records_from_jsonl(R"({"context":"c"})"); }), ErrorCode::InvalidFormat);
    EXPECT_EQ(code_of([] { vocab_from_json(json::parse(R"(["a","b"])")); }), ErrorCode::InvalidFormat);
    EXPECT_EQ(vocab_from_json(json::parse(R"(["<unk>","a"])")).size(), 2U);
}

TEST(Transcripts, ViewReadsWhatWasWritten) {
    session::Transcript t;
    t.instance_id = "qa-1";
    t.mode = session::Mode::ObsWindowBaseline;
    session::TurnRecord r;
    r.answer_tokens = {4, 5};
    r.reference_tokens = {5};
    r.op_counts.prefill_attention = 10;
    r.op_counts.prefill_dense_equivalent = 20;
    r.op_counts.decode_attention = 7;
    r.obs_overlap = 0.25;
    t.turns.push_back(r);
    const auto v = transcript_from_json(parse_json(to_json(t).dump(), "t"));
    EXPECT_EQ(v.mode, "obswindow-baseline");
    ASSERT_EQ(v.turns.size(), 1U);
    EXPECT_EQ(v.turns[0].answer, (TokenSequence{4, 5}));
    EXPECT_EQ(v.turns[0].prefill_dense_equivalent, 20U);
    EXPECT_EQ(v.turns[0].obs_overlap, 0.25);
    EXPECT_EQ(v.turns[0].wall_ms, 0.0);
}

TEST(Csv, HeaderRowsAndEscaping) {
    metrics::MetricsRecord m;
    m.instance_id = "a,b";
    m.turn_scores = {{{"f1", 0.5}}};
    m.series["recovery"] = {{0.1, 0.75}};
    m.op_counts["decode"] = 12;
    const std::string csv = metrics_csv({m});
    EXPECT_EQ(csv,
              "instance,metric,x,y\n"
              "\"a,b\",f1,1.0,0.5\n"
              "\"a,b\",recovery,0.1,0.75\n"
              "\"a,b\",ops.decode,0.0,12.0\n");
}

TEST(Files, WriteThenRead) {
    const std::string path = ::testing::TempDir() + "dialserve_io_test.txt";
    write_file(path, "hello\n");
    EXPECT_EQ(read_file(path), "hello\n");
    EXPECT_EQ(code_of([] { write_file("/nonexistent/dir/x", "y"); }), ErrorCode::Io);
}
