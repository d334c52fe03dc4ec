// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#include <vector>

#include <gtest/gtest.h>

#include "dialserve/session.hpp"

using namespace dialserve;
using namespace dialserve::session;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 16;
    c.d_k = 8;
    c.d_v = 8;
    c.vocab_size = 60;
    c.max_seq_len = 256;
    return c;
}

TokenSequence random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
    Rng rng(seed);
    TokenSequence t(n);
    for (auto& x : t) x = static_cast<TokenId>(rng.below(vocab));
    return t;
}

bench::TokenizedInstance instance(std::size_t turns, std::uint64_t seed) {
    bench::TokenizedInstance inst;
    inst.id = "t" + std::to_string(seed);
    for (std::size_t j = 0; j < turns; ++j) {
        inst.turns.push_back({random_tokens(20 + 7 * j, 60, seed * 10 + j), random_tokens(3, 60, seed * 10 + j + 5)});
    }
    return inst;
}

RunParams params() {
    RunParams p;
    p.max_new = 8;
    p.compression = {6, 3, 3, 4};
    p.sampling = {0.25, 4};
    p.seed = 17;
    return p;
}

}  // namespace

class SessionTest : public ::testing::Test {
protected:
    ModelWeights w = init_weights(small_config(), 99);
};

TEST_F(SessionTest, DenseTurnsMatchFullRegeneration) {
    const auto inst = instance(3, 1);
    const auto t = run_session(w, inst, Mode::Dense, params());
    TokenSequence history;
    for (std::size_t j = 0; j < inst.turns.size(); ++j) {
        history.insert(history.end(), inst.turns[j].input.begin(), inst.turns[j].input.end());
        const auto expected = generate(w, history, 8, std::nullopt);
        EXPECT_EQ(t.turns[j].answer_tokens, expected) << "turn " << j;
        history.insert(history.end(), expected.begin(), expected.end());
        EXPECT_EQ(t.turns[j].reference_tokens, inst.turns[j].reference);
    }
}

TEST_F(SessionTest, AppendedBlockStartsWithPreviousAnswer) {
    const auto inst = instance(2, 2);
    const auto t = run_session(w, inst, Mode::LoopServe, params());
    EXPECT_EQ(t.turns[0].input_tokens, inst.turns[0].input);
    TokenSequence expect = t.turns[0].answer_tokens;
    expect.insert(expect.end(), inst.turns[1].input.begin(), inst.turns[1].input.end());
    EXPECT_EQ(t.turns[1].input_tokens, expect);
}

TEST_F(SessionTest, LosslessSettingsReproduceDense) {
    RunParams p = params();
    p.alpha = 1.0;
    p.compression.budget = kv::CompressionConfig::kUnlimited;
    for (std::uint64_t s = 0; s < 4; ++s) {
        const auto inst = instance(3, 10 + s);
        const auto dense = run_session(w, inst, Mode::Dense, p);
        const auto loop = run_session(w, inst, Mode::LoopServe, p);
        for (std::size_t j = 0; j < inst.turns.size(); ++j) {
            EXPECT_EQ(loop.turns[j].answer_tokens, dense.turns[j].answer_tokens);
            EXPECT_NEAR(loop.turns[j].plan_stats.min_coverage, 1.0, 1e-12);
        }
    }
}

TEST_F(SessionTest, PlansAndOpCounts) {
    const auto inst = instance(3, 3);
    SessionState state(w.config, 5);
    const RunParams p = params();
    for (std::size_t j = 0; j < inst.turns.size(); ++j) {
        TurnRecord rec;
        run_turn(w, state, inst.turns[j].input, Mode::LoopServe, p, &rec);
        EXPECT_EQ(state.turn_index(), j + 1);
        EXPECT_EQ(rec.plan_stats.heads, w.config.total_heads());
        EXPECT_GE(rec.plan_stats.min_coverage, p.alpha - 1e-9);
        const auto& ops = rec.op_counts;
        std::uint64_t dense = 0;
        const std::size_t start = state.store().length() - rec.input_tokens.size() - (rec.answer_tokens.size() - 1);
        for (std::size_t r = 0; r < rec.input_tokens.size(); ++r) dense += (start + r + 1) * w.config.total_heads();
        EXPECT_EQ(ops.prefill_dense_equivalent, dense);
        EXPECT_GT(ops.prefill_sampling, 0U);
        EXPECT_LE(ops.prefill_attention, dense);
        EXPECT_LE(ops.prefill_fallback, ops.prefill_attention);
        EXPECT_EQ(rec.wall_ms, 0.0);
    }
    EXPECT_EQ(state.plans().size(), 3 * w.config.total_heads());
    EXPECT_EQ(state.plans().back().turn, 3U);
    EXPECT_EQ(state.store().length() + 1, state.history().size());
}

TEST_F(SessionTest, DeterministicAcrossThreadsAndSeeds) {
    const auto inst = instance(2, 4);
    RunParams p = params();
    const auto a = run_session(w, inst, Mode::LoopServe, p);
    p.threads = 4;
    const auto b = run_session(w, inst, Mode::LoopServe, p);
    for (std::size_t j = 0; j < 2; ++j) {
        EXPECT_EQ(a.turns[j].answer_tokens, b.turns[j].answer_tokens);
        EXPECT_EQ(a.turns[j].op_counts.prefill_attention, b.turns[j].op_counts.prefill_attention);
        EXPECT_EQ(a.turns[j].op_counts.prefill_sampling, b.turns[j].op_counts.prefill_sampling);
    }
}

TEST_F(SessionTest, ObservationBaselineReportsOverlap) {
    const auto inst = instance(2, 5);
    const auto t = run_session(w, inst, Mode::ObsWindowBaseline, params());
    for (const auto& turn : t.turns) {
        ASSERT_TRUE(turn.obs_overlap.has_value());
        EXPECT_GE(*turn.obs_overlap, 0.0);
        EXPECT_LE(*turn.obs_overlap, 1.0);
        EXPECT_EQ(turn.events.size(), w.config.total_heads());
        EXPECT_EQ(turn.plan_stats.heads, 0U);
    }
}

TEST_F(SessionTest, WallClockOnlyWhenAsked) {
    RunParams p = params();
    p.record_wall_time = true;
    const auto t = run_session(w, instance(1, 6), Mode::Dense, p);
    EXPECT_GT(t.turns[0].wall_ms, 0.0);
}

TEST_F(SessionTest, Errors) {
    SessionState state(w.config, 1);
    RunParams p = params();
    const auto huge = random_tokens(250, 60, 1);
    try {
        run_turn(w, state, huge, Mode::Dense, p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SequenceTooLong);
    }
    p.alpha = 0.0;
    try {
        run_turn(w, state, random_tokens(5, 60, 2), Mode::LoopServe, p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidAlpha);
    }
    EXPECT_THROW(run_turn(w, state, TokenSequence{}, Mode::Dense, params()), Error);
}

TEST(ModeNames, RoundTrip) {
    for (Mode m : {Mode::Dense, Mode::LoopServe, Mode::ObsWindowBaseline}) EXPECT_EQ(parse_mode(to_string(m)), m);
    EXPECT_THROW(parse_mode("sparse"), Error);
}

TEST_F(SessionTest, DenseIgnoresCompressionBudget) {
    RunParams p = params();
    p.compression.budget = 100000;
    EXPECT_NO_THROW(run_session(w, instance(1, 7), Mode::Dense, p));
    EXPECT_THROW(run_session(w, instance(1, 7), Mode::LoopServe, p), Error);
}
