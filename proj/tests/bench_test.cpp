// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dialserve/bench.hpp"

using namespace dialserve;
using namespace dialserve::bench;

namespace {

std::vector<QaRecord> qa_pool(std::size_t n) {
    std::vector<QaRecord> pool;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string s = std::to_string(i);
        pool.push_back({"first para " + s + "\n\nsecond para " + s + "\n  \nthird para " + s, "question " + s + " ?",
                        "answer " + s});
    }
    return pool;
}

std::size_t record_of(const std::string& source) {
    // "qa:<i>:p<k>"
    const auto a = source.find(':');
    const auto b = source.find(':', a + 1);
    return std::stoul(source.substr(a + 1, b - a - 1));
}

}  // namespace

TEST(Split, Paragraphs) {
    EXPECT_EQ(split_paragraphs("a b\n\nc\n \t\n\n d \n"), (std::vector<std::string>{"a b", "c", "d"}));
    EXPECT_EQ(split_paragraphs("one line\nsame para"), (std::vector<std::string>{"one line\nsame para"}));
    EXPECT_TRUE(split_paragraphs("  \n\n ").empty());
    EXPECT_EQ(trim("  x y \n"), "x y");
}

TEST(QaBuilder, StructureHolds) {
    const auto pool = qa_pool(12);
    const std::vector<std::string> noise{"noise zero", "noise one"};
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const std::vector<QueryPosition> pos{QueryPosition::Begin, QueryPosition::Middle, QueryPosition::End,
                                             QueryPosition::Middle};
        const auto inst = build_qa_instance(pool, 4, pos, noise, seed);
        ASSERT_TRUE(validate_instance(inst).ok());
        ASSERT_EQ(inst.turns.size(), 4U);
        std::map<std::size_t, std::size_t> turn_of_record;
        for (std::size_t j = 1; j <= 4; ++j) {
            const Turn& t = inst.turns[j - 1];
            EXPECT_EQ(t.query_position, pos[j - 1]);
            EXPECT_TRUE(std::binary_search(t.relevance.begin(), t.relevance.end(), j));
            const std::size_t rec = std::stoul(t.reference_answer.substr(7));
            EXPECT_EQ(t.query, "question " + std::to_string(rec) + " ?");
            turn_of_record[rec] = j;
        }
        // every paragraph of turn j's record lands in a turn listed in R_j, and nowhere else
        std::map<std::size_t, std::set<std::size_t>> seen_in;
        std::map<std::size_t, std::size_t> para_count;
        std::size_t noise_segments = 0;
        for (std::size_t j = 1; j <= 4; ++j) {
            const Turn& t = inst.turns[j - 1];
            std::size_t turn_noise = 0;
            for (std::size_t s = 0; s < t.segment_sources.size(); ++s) {
                if (t.segment_sources[s].rfind("noise:", 0) == 0) {
                    ++turn_noise;
                    continue;
                }
                const std::size_t rec = record_of(t.segment_sources[s]);
                ASSERT_TRUE(turn_of_record.count(rec));
                seen_in[turn_of_record[rec]].insert(j);
                ++para_count[rec];
            }
            EXPECT_GE(turn_noise, 1U);
            EXPECT_LE(turn_noise, 2U);
            noise_segments += turn_noise;
        }
        for (const auto& [rec, n] : para_count) EXPECT_EQ(n, 3U);
        for (std::size_t j = 1; j <= 4; ++j) {
            const auto& rel = inst.turns[j - 1].relevance;
            EXPECT_EQ(seen_in[j], std::set<std::size_t>(rel.begin(), rel.end()));
        }
    }
}

TEST(QaBuilder, DeterministicPerSeed) {
    const auto pool = qa_pool(8);
    const std::vector<QueryPosition> pos(3, QueryPosition::End);
    EXPECT_EQ(build_qa_instance(pool, 3, pos, {}, 5), build_qa_instance(pool, 3, pos, {}, 5));
    EXPECT_NE(build_qa_instance(pool, 3, pos, {}, 5), build_qa_instance(pool, 3, pos, {}, 6));
}

TEST(QaBuilder, MiddleSplitsSingleSegment) {
    const std::vector<QaRecord> pool{{"w1 w2 w3 w4 w5", "q ?", "a"}};
    const auto inst = build_qa_instance(pool, 1, {QueryPosition::Middle}, {}, 1);
    const Turn& t = inst.turns[0];
    EXPECT_TRUE(validate_instance(inst).ok());
    EXPECT_EQ(t.context_segments, (std::vector<std::string>{"w1 w2", "w3 w4 w5"}));
    EXPECT_EQ(t.query_index, 1U);
    EXPECT_EQ(turn_text(t), "w1 w2 q ? w3 w4 w5");
}

TEST(QaBuilder, Errors) {
    try {
        build_qa_instance(qa_pool(2), 3, std::vector<QueryPosition>(3, QueryPosition::End), {}, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::PoolTooSmall);
    }
    EXPECT_THROW(build_qa_instance(qa_pool(4), 3, {QueryPosition::End}, {}, 1), Error);
}

TEST(SumBuilder, TwoTurnsWithRelevance) {
    std::vector<DocRecord> docs;
    for (int i = 0; i < 5; ++i) {
        docs.push_back({"doc " + std::to_string(i) + " a\n\ndoc " + std::to_string(i) + " b", "sum" + std::to_string(i)});
    }
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto inst = build_sum_instance(docs, seed);
        EXPECT_TRUE(validate_instance(inst).ok());
        ASSERT_EQ(inst.turns.size(), 2U);
        EXPECT_EQ(inst.turns[0].relevance, std::vector<std::size_t>{1});
        EXPECT_EQ(inst.turns[1].relevance, (std::vector<std::size_t>{1, 2}));
        std::set<std::string> docs_used;
        for (const auto& t : inst.turns) {
            std::size_t noise = 0;
            for (const auto& s : t.segment_sources) {
                if (s.rfind("noise:", 0) == 0) {
                    ++noise;
                } else {
                    docs_used.insert(s.substr(0, s.rfind(':')));
                }
            }
            EXPECT_EQ(noise, 1U);
        }
        EXPECT_EQ(docs_used.size(), 2U);
    }
    try {
        build_sum_instance({docs[0]}, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::PoolTooSmall);
    }
}

TEST(FewShotBuilder, HalvesExamples) {
    FewShotRecord rec{{"e0", "e1", "e2", "e3", "e4"}, "query :", "ans"};
    const auto inst = build_fewshot_instance(rec, 3);
    EXPECT_TRUE(validate_instance(inst).ok());
    std::vector<std::string> first = inst.turns[0].context_segments;
    std::sort(first.begin(), first.end());
    EXPECT_EQ(first, (std::vector<std::string>{"e0", "e1", "e2"}));
    std::vector<std::string> second = inst.turns[1].context_segments;
    std::sort(second.begin(), second.end());
    EXPECT_EQ(second, (std::vector<std::string>{"e3", "e4"}));
    EXPECT_EQ(inst.turns[1].query, "query :");
    rec.examples.resize(3);
    try {
        build_fewshot_instance(rec, 3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::TooFewExamples);
    }
}

TEST(Validate, FlagsViolations) {
    DialogueInstance inst;
    inst.id = "x";
    Turn t;
    t.context_segments = {"c1", "c2"};
    t.segment_sources = {"s1"};
    t.query = "q";
    t.reference_answer = "";
    t.query_index = 0;
    t.query_position = QueryPosition::End;
    t.relevance = {2};
    inst.turns = {t};
    const auto r = validate_instance(inst);
    EXPECT_FALSE(r.ok());
    EXPECT_EQ(r.violations.size(), 4U);
    EXPECT_FALSE(validate_instance(DialogueInstance{}).ok());
}

TEST(VocabTest, LookupAndErrors) {
    const Vocab v({"<unk>", "<eos>", "a", "b"});
    EXPECT_EQ(v.tokenize("a  b\tzzz a"), (TokenSequence{2, 3, 0, 2}));
    EXPECT_EQ(v.eos(), TokenId{1});
    EXPECT_EQ(v.detokenize(TokenSequence{3, 2, 99}), "b a <unk>");
    EXPECT_THROW(Vocab({"a", "b"}), Error);
    EXPECT_THROW(Vocab({"<unk>", "a", "a"}), Error);
    EXPECT_FALSE(Vocab({"<unk>"}).eos().has_value());
}

TEST(TurnText, QueryPlacement) {
    Turn t;
    t.context_segments = {"c1", "c2"};
    t.query = "q";
    t.query_index = 0;
    EXPECT_EQ(turn_text(t), "q c1 c2");
    t.query_index = 2;
    EXPECT_EQ(turn_text(t), "c1 c2 q");
}

TEST(SyntheticCorpus, ClosedVocabulary) {
    const auto c = make_synthetic_corpus(10, 4);
    EXPECT_EQ(c.vocab_words.size(), 156U);
    const Vocab v(c.vocab_words);
    auto no_unk = [&](const std::string& text) {
        for (TokenId t : v.tokenize(text)) {
            if (t == v.unk()) return false;
        }
        return true;
    };
    ASSERT_EQ(c.qa.size(), 10U);
    for (const auto& r : c.qa) {
        EXPECT_TRUE(no_unk(r.context) && no_unk(r.question) && no_unk(r.answer));
        EXPECT_EQ(split_paragraphs(r.context).size(), 3U);
    }
    for (const auto& d : c.docs) EXPECT_TRUE(no_unk(d.document) && no_unk(d.summary));
    for (const auto& f : c.fewshot) {
        EXPECT_GE(f.examples.size(), 4U);
        for (const auto& e : f.examples) EXPECT_TRUE(no_unk(e));
    }
    const auto inst = tokenize_instance(
        build_qa_instance(c.qa, 3, std::vector<QueryPosition>(3, QueryPosition::End), c.noise, 1), v);
    EXPECT_EQ(inst.turns.size(), 3U);
    for (const auto& t : inst.turns) EXPECT_FALSE(t.input.empty());
}
