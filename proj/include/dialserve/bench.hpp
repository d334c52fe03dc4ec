// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dialserve/error.hpp"
#include "dialserve/model.hpp"
#include "dialserve/rng.hpp"

namespace dialserve::bench {

enum class QueryPosition { Begin, Middle, End };

inline std::string_view to_string(QueryPosition p) {
    switch (p) {
        case QueryPosition::Begin: return "begin";
        case QueryPosition::Middle: return "middle";
        case QueryPosition::End: return "end";
    }
    return "end";
}

inline QueryPosition parse_position(std::string_view s) {
    if (s == "begin") return QueryPosition::Begin;
    if (s == "middle") return QueryPosition::Middle;
    if (s == "end") return QueryPosition::End;
    throw Error(ErrorCode::InvalidFormat, "unknown query position '" + std::string(s) + "'");
}

/// One turn. The query is placed before context_segments[query_index]
/// (query_index == size() puts it after every segment).
struct Turn {
    std::vector<std::string> context_segments;
    std::vector<std::string> segment_sources;
    std::size_t query_index = 0;
    std::string query;
    std::string reference_answer;
    QueryPosition query_position = QueryPosition::End;
    std::vector<std::size_t> relevance;  // 1-based turn indices

    friend bool operator==(const Turn&, const Turn&) = default;
};

struct DialogueInstance {
    std::string id;
    std::string kind;
    std::vector<Turn> turns;

    friend bool operator==(const DialogueInstance&, const DialogueInstance&) = default;
};

struct QaRecord {
    std::string context;
    std::string question;
    std::string answer;
};

struct DocRecord {
    std::string document;
    std::string summary;
};

struct FewShotRecord {
    std::vector<std::string> examples;
    std::string query;
    std::string answer;
};

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

/// Splits on `separator` matches, trims each piece and drops empty ones.
inline std::vector<std::string> split_regex(const std::string& text, const std::regex& separator) {
    std::vector<std::string> out;
    std::sregex_token_iterator it(text.begin(), text.end(), separator, -1);
    for (; it != std::sregex_token_iterator(); ++it) {
        auto piece = trim(it->str());
        if (!piece.empty()) {
            out.push_back(std::move(piece));
        }
    }
    return out;
}

/// Paragraphs are separated by one or more blank lines.
inline std::vector<std::string> split_paragraphs(const std::string& text) {
    static const std::regex blank(R"(\n[ \t\r]*\n\s*)");
    return split_regex(text, blank);
}

/// Few-shot example blocks: blank-line separated, each block kept whole.
inline std::vector<std::string> split_examples(const std::string& text) { return split_paragraphs(text); }

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const noexcept { return violations.empty(); }
};

inline ValidationReport validate_instance(const DialogueInstance& inst) {
    ValidationReport report;
    auto flag = [&](std::size_t turn, const std::string& what) {
        report.violations.push_back(turn == 0 ? what : "turn " + std::to_string(turn) + ": " + what);
    };
    if (inst.id.empty()) {
        flag(0, "missing id");
    }
    if (inst.turns.empty()) {
        flag(0, "no turns");
    }
    for (std::size_t j = 1; j <= inst.turns.size(); ++j) {
        const Turn& t = inst.turns[j - 1];
        const std::size_t p = t.context_segments.size();
        if (p == 0) {
            flag(j, "no context segments");
        }
        if (t.segment_sources.size() != p) {
            flag(j, "segment_sources length differs from context_segments");
        }
        for (const auto& s : t.context_segments) {
            if (trim(s).empty()) {
                flag(j, "empty context segment");
                break;
            }
        }
        if (trim(t.query).empty()) {
            flag(j, "empty query");
        }
        if (trim(t.reference_answer).empty()) {
            flag(j, "empty reference answer");
        }
        if (t.query_index > p) {
            flag(j, "query index beyond segments");
        } else if (p > 0) {
            const bool matches = (t.query_position == QueryPosition::Begin && t.query_index == 0) ||
                                 (t.query_position == QueryPosition::End && t.query_index == p) ||
                                 (t.query_position == QueryPosition::Middle && t.query_index > 0 && t.query_index < p);
            if (!matches) {
                flag(j, "query_position label '" + std::string(to_string(t.query_position)) +
                            "' does not match query index " + std::to_string(t.query_index));
            }
        }
        if (t.relevance.empty()) {
            flag(j, "empty relevance set");
        } else if (t.relevance.size() > j) {
            flag(j, "relevance set larger than turn index");
        }
        for (std::size_t i = 0; i < t.relevance.size(); ++i) {
            if (t.relevance[i] < 1 || t.relevance[i] > j) {
                flag(j, "relevance entry " + std::to_string(t.relevance[i]) + " outside 1.." + std::to_string(j));
            }
            if (i > 0 && t.relevance[i] <= t.relevance[i - 1]) {
                flag(j, "relevance entries must be strictly increasing");
            }
        }
    }
    return report;
}

namespace detail {

inline std::vector<std::size_t> pick_distinct(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.below(n - i))]);
    }
    idx.resize(k);
    return idx;
}

/// Splits a segment at its word midpoint; used when a middle placement needs two segments.
inline void split_single_segment(Turn& t) {
    std::istringstream in(t.context_segments.front());
    std::vector<std::string> words;
    for (std::string w; in >> w;) {
        words.push_back(w);
    }
    if (words.size() < 2) {
        return;
    }
    const std::size_t half = words.size() / 2;
    auto join = [&](std::size_t from, std::size_t to) {
        std::string s;
        for (std::size_t i = from; i < to; ++i) {
            s += (i == from ? "" : " ") + words[i];
        }
        return s;
    };
    const std::string src = t.segment_sources.front();
    t.context_segments = {join(0, half), join(half, words.size())};
    t.segment_sources = {src + "#a", src + "#b"};
}

inline void place_query(Turn& t, QueryPosition pos, Rng& rng) {
    if (pos == QueryPosition::Middle && t.context_segments.size() == 1) {
        split_single_segment(t);
    }
    const std::size_t p = t.context_segments.size();
    t.query_position = pos;
    switch (pos) {
        case QueryPosition::Begin: t.query_index = 0; break;
        case QueryPosition::End: t.query_index = p; break;
        case QueryPosition::Middle:
            require(p >= 2, ErrorCode::InvalidArgument, "middle placement needs a splittable context");
            t.query_index = 1 + static_cast<std::size_t>(rng.below(p - 1));
            break;
    }
}

inline QueryPosition random_position(Rng& rng) { return static_cast<QueryPosition>(rng.below(3)); }

template <class T>
void shuffle_pairs(std::vector<T>& a, std::vector<T>& b, Rng& rng) {
    for (std::size_t i = a.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(a[i - 1], a[j]);
        std::swap(b[i - 1], b[j]);
    }
}

}  // namespace detail

/// QA dialogue: each turn asks one pooled question whose context paragraphs are
/// spread over a random subset of turns 1..j that always contains j.
inline DialogueInstance build_qa_instance(const std::vector<QaRecord>& pool, std::size_t n_turns,
                                          const std::vector<QueryPosition>& positions,
                                          const std::vector<std::string>& noise_pool, std::uint64_t seed) {
    require(n_turns >= 1, ErrorCode::InvalidArgument, "n_turns must be >= 1");
    require(pool.size() >= n_turns, ErrorCode::PoolTooSmall,
            "qa pool holds " + std::to_string(pool.size()) + " records, need " + std::to_string(n_turns));
    require(positions.size() == n_turns, ErrorCode::InvalidArgument, "one query position per turn");
    Rng rng(seed);
    const auto chosen = detail::pick_distinct(pool.size(), n_turns, rng);
    DialogueInstance inst;
    inst.id = "qa-" + std::to_string(seed);
    inst.kind = "qa";
    inst.turns.resize(n_turns);
    for (std::size_t j = 1; j <= n_turns; ++j) {
        const QaRecord& rec = pool[chosen[j - 1]];
        auto paragraphs = split_paragraphs(rec.context);
        if (paragraphs.empty()) {
            paragraphs.push_back(trim(rec.context));
        }
        const std::size_t extra = static_cast<std::size_t>(rng.below(j));
        const std::size_t k = std::min(extra + 1, paragraphs.size());
        auto earlier = detail::pick_distinct(j - 1, k - 1, rng);
        std::vector<std::size_t> rel{j};
        for (std::size_t e : earlier) {
            rel.push_back(e + 1);
        }
        std::sort(rel.begin(), rel.end());
        for (std::size_t i = 0; i < paragraphs.size(); ++i) {
            Turn& dst = inst.turns[rel[i % rel.size()] - 1];
            dst.context_segments.push_back(paragraphs[i]);
            dst.segment_sources.push_back("qa:" + std::to_string(chosen[j - 1]) + ":p" + std::to_string(i));
        }
        inst.turns[j - 1].relevance = std::move(rel);
        inst.turns[j - 1].query = rec.question;
        inst.turns[j - 1].reference_answer = rec.answer;
    }
    for (std::size_t j = 0; j < n_turns; ++j) {
        Turn& t = inst.turns[j];
        if (!noise_pool.empty()) {
            const std::size_t count = 1 + static_cast<std::size_t>(rng.below(2));
            for (std::size_t c = 0; c < count; ++c) {
                const auto pick = static_cast<std::size_t>(rng.below(noise_pool.size()));
                t.context_segments.push_back(noise_pool[pick]);
                t.segment_sources.push_back("noise:" + std::to_string(pick));
            }
        }
        detail::shuffle_pairs(t.context_segments, t.segment_sources, rng);
        detail::place_query(t, positions[j], rng);
    }
    return inst;
}

/// Two-turn summarization over two pooled documents; paragraphs of the other
/// pooled documents serve as noise.
inline DialogueInstance build_sum_instance(const std::vector<DocRecord>& pool, std::uint64_t seed) {
    require(pool.size() >= 2, ErrorCode::PoolTooSmall, "summarization needs at least two documents");
    Rng rng(seed);
    const auto chosen = detail::pick_distinct(pool.size(), 2, rng);
    DialogueInstance inst;
    inst.id = "sum-" + std::to_string(seed);
    inst.kind = "sum";
    inst.turns.resize(2);
    for (std::size_t j = 0; j < 2; ++j) {
        Turn& t = inst.turns[j];
        const auto paragraphs = split_paragraphs(pool[chosen[j]].document);
        require(!paragraphs.empty(), ErrorCode::InvalidArgument, "document has no text");
        for (std::size_t i = 0; i < paragraphs.size(); ++i) {
            t.context_segments.push_back(paragraphs[i]);
            t.segment_sources.push_back("doc:" + std::to_string(chosen[j]) + ":p" + std::to_string(i));
        }
        if (pool.size() > 2) {
            std::size_t other = static_cast<std::size_t>(rng.below(pool.size() - 2));
            for (std::size_t c : {std::min(chosen[0], chosen[1]), std::max(chosen[0], chosen[1])}) {
                other += other >= c ? 1 : 0;
            }
            const auto noise = split_paragraphs(pool[other].document);
            if (!noise.empty()) {
                const auto pi = static_cast<std::size_t>(rng.below(noise.size()));
                t.context_segments.push_back(noise[pi]);
                t.segment_sources.push_back("noise:doc:" + std::to_string(other) + ":p" + std::to_string(pi));
            }
        }
        detail::shuffle_pairs(t.context_segments, t.segment_sources, rng);
        detail::place_query(t, detail::random_position(rng), rng);
    }
    inst.turns[0].query = "summarize the document above .";
    inst.turns[0].reference_answer = pool[chosen[0]].summary;
    inst.turns[0].relevance = {1};
    inst.turns[1].query = "summarize both documents .";
    inst.turns[1].reference_answer = pool[chosen[0]].summary + " " + pool[chosen[1]].summary;
    inst.turns[1].relevance = {1, 2};
    return inst;
}

/// Examples split across two turns, first half then second half; the same
/// query is asked in both turns.
inline DialogueInstance build_fewshot_instance(const FewShotRecord& record, std::uint64_t seed) {
    require(record.examples.size() >= 4, ErrorCode::TooFewExamples,
            "few-shot record has " + std::to_string(record.examples.size()) + " examples, need >= 4");
    Rng rng(seed);
    DialogueInstance inst;
    inst.id = "fewshot-" + std::to_string(seed);
    inst.kind = "fewshot";
    inst.turns.resize(2);
    const std::size_t half = (record.examples.size() + 1) / 2;
    for (std::size_t i = 0; i < record.examples.size(); ++i) {
        Turn& t = inst.turns[i < half ? 0 : 1];
        t.context_segments.push_back(record.examples[i]);
        t.segment_sources.push_back("ex:" + std::to_string(i));
    }
    for (std::size_t j = 0; j < 2; ++j) {
        Turn& t = inst.turns[j];
        t.query = record.query;
        t.reference_answer = record.answer;
        detail::place_query(t, detail::random_position(rng), rng);
    }
    inst.turns[0].relevance = {1};
    inst.turns[1].relevance = {1, 2};
    return inst;
}

/// Word list indexed by token id. "<unk>" is required; "<eos>" is optional.
class Vocab {
public:
    Vocab() = default;

    explicit Vocab(std::vector<std::string> words) : m_words(std::move(words)) {
        for (std::size_t i = 0; i < m_words.size(); ++i) {
            require(!m_words[i].empty(), ErrorCode::InvalidFormat, "vocab entry " + std::to_string(i) + " is empty");
            const bool fresh = m_index.emplace(m_words[i], static_cast<TokenId>(i)).second;
            require(fresh, ErrorCode::InvalidFormat, "duplicate vocab entry '" + m_words[i] + "'");
        }
        const auto unk = m_index.find("<unk>");
        require(unk != m_index.end(), ErrorCode::InvalidFormat, "vocab lacks <unk>");
        m_unk = unk->second;
        if (const auto eos = m_index.find("<eos>"); eos != m_index.end()) {
            m_eos = eos->second;
        }
    }

    std::size_t size() const noexcept { return m_words.size(); }
    const std::vector<std::string>& words() const noexcept { return m_words; }
    TokenId unk() const noexcept { return m_unk; }
    std::optional<TokenId> eos() const noexcept { return m_eos; }

    TokenId id(std::string_view word) const {
        const auto it = m_index.find(std::string(word));
        return it == m_index.end() ? m_unk : it->second;
    }

    TokenSequence tokenize(std::string_view text) const {
        TokenSequence out;
        std::istringstream in{std::string(text)};
        for (std::string w; in >> w;) {
            out.push_back(id(w));
        }
        return out;
    }

    std::vector<std::string> words_of(std::span<const TokenId> ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (TokenId t : ids) {
            out.push_back(t < m_words.size() ? m_words[t] : "<unk>");
        }
        return out;
    }

    std::string detokenize(std::span<const TokenId> ids) const {
        std::string s;
        for (const auto& w : words_of(ids)) {
            s += (s.empty() ? "" : " ") + w;
        }
        return s;
    }

private:
    std::vector<std::string> m_words;
    std::unordered_map<std::string, TokenId> m_index;
    TokenId m_unk = 0;
    std::optional<TokenId> m_eos;
};

/// Context segments with the query spliced in at its index, space-joined.
inline std::string turn_text(const Turn& t) {
    std::string out;
    auto add = [&out](const std::string& piece) { out += (out.empty() ? "" : " ") + piece; };
    for (std::size_t i = 0; i <= t.context_segments.size(); ++i) {
        if (i == t.query_index) {
            add(t.query);
        }
        if (i < t.context_segments.size()) {
            add(t.context_segments[i]);
        }
    }
    return out;
}

struct TokenizedTurn {
    TokenSequence input;
    TokenSequence reference;
};

struct TokenizedInstance {
    std::string id;
    std::vector<TokenizedTurn> turns;
};

inline TokenizedInstance tokenize_instance(const DialogueInstance& inst, const Vocab& vocab) {
    TokenizedInstance out;
    out.id = inst.id;
    for (const auto& t : inst.turns) {
        out.turns.push_back({vocab.tokenize(turn_text(t)), vocab.tokenize(t.reference_answer)});
    }
    return out;
}

/// Templated texts with planted facts; every word is in `vocab_words`.
struct SyntheticCorpus {
    std::vector<std::string> vocab_words;
    std::vector<QaRecord> qa;
    std::vector<DocRecord> docs;
    std::vector<FewShotRecord> fewshot;
    std::vector<std::string> noise;
};

inline SyntheticCorpus make_synthetic_corpus(std::size_t records, std::uint64_t seed) {
    static const std::vector<std::string> kSpecial{"<unk>", "<eos>", ".", "?", ":"};
    static const std::vector<std::string> kFunction{
        "the",  "of",     "is",   "what",   "a",     "and",      "in",    "to",    "was",     "for",
        "on",   "with",   "by",   "at",     "from",  "report",   "note",  "text",  "label",   "example",
        "team", "city",   "river", "market", "north", "south",    "old",   "new",   "quiet",   "busy",
        "near", "beyond", "seen", "walked", "built", "moved",    "small", "large", "morning", "evening",
        "summarize", "document", "above", "both", "documents", "summary"};
    static const std::vector<std::string> kAttributes{"code", "color", "owner", "year", "value"};
    SyntheticCorpus corpus;
    corpus.vocab_words = kSpecial;
    corpus.vocab_words.insert(corpus.vocab_words.end(), kFunction.begin(), kFunction.end());
    corpus.vocab_words.insert(corpus.vocab_words.end(), kAttributes.begin(), kAttributes.end());
    constexpr std::size_t kEntities = 40;
    constexpr std::size_t kValues = 60;
    for (std::size_t i = 0; i < kEntities; ++i) {
        corpus.vocab_words.push_back("ent" + std::to_string(i));
    }
    for (std::size_t i = 0; i < kValues; ++i) {
        corpus.vocab_words.push_back("val" + std::to_string(i));
    }

    Rng rng(seed);
    auto pick = [&rng](const std::vector<std::string>& v) { return v[static_cast<std::size_t>(rng.below(v.size()))]; };
    auto entity = [&rng] { return "ent" + std::to_string(rng.below(kEntities)); };
    auto value = [&rng] { return "val" + std::to_string(rng.below(kValues)); };
    static const std::vector<std::string> kNouns{"report", "note", "team", "city", "river", "market"};
    static const std::vector<std::string> kAdjs{"north", "south", "old", "new", "quiet", "busy", "small", "large"};
    static const std::vector<std::string> kVerbs{"walked", "built", "moved", "seen"};
    static const std::vector<std::string> kTimes{"morning", "evening"};
    auto filler = [&] {
        return "the " + pick(kAdjs) + " " + pick(kNouns) + " was " + pick(kVerbs) + " near " + entity() + " in the " +
               pick(kTimes) + " .";
    };
    auto paragraph = [&](std::size_t sentences) {
        std::string p;
        for (std::size_t s = 0; s < sentences; ++s) {
            p += (p.empty() ? "" : " ") + filler();
        }
        return p;
    };
    auto join_paragraphs = [](const std::vector<std::string>& ps) {
        std::string s;
        for (const auto& p : ps) {
            s += (s.empty() ? "" : "\n\n") + p;
        }
        return s;
    };

    for (std::size_t r = 0; r < records; ++r) {
        std::vector<std::string> ps;
        for (std::size_t i = 0; i < 3; ++i) {
            ps.push_back(paragraph(2 + static_cast<std::size_t>(rng.below(2))));
        }
        const std::string attr = pick(kAttributes);
        const std::string ent = entity();
        const std::string val = value();
        ps[static_cast<std::size_t>(rng.below(ps.size()))] += " the " + attr + " of " + ent + " is " + val + " .";
        corpus.qa.push_back({join_paragraphs(ps), "what is the " + attr + " of " + ent + " ?", val});

        std::vector<std::string> dps;
        std::string summary;
        for (std::size_t i = 0; i < 3; ++i) {
            const std::string a = pick(kAttributes);
            const std::string e = entity();
            const std::string v = value();
            dps.push_back(paragraph(1 + static_cast<std::size_t>(rng.below(2))) + " the " + a + " of " + e + " is " +
                          v + " .");
            summary += (summary.empty() ? "" : " ") + e + " " + a + " " + v;
        }
        corpus.docs.push_back({join_paragraphs(dps), summary});

        FewShotRecord fs;
        const std::size_t n_examples = 4 + static_cast<std::size_t>(rng.below(3));
        for (std::size_t i = 0; i < n_examples; ++i) {
            const std::string a = pick(kAttributes);
            fs.examples.push_back("text : what is the " + a + " of " + entity() + " ? label : " + a);
        }
        const std::string qa = pick(kAttributes);
        fs.query = "text : what is the " + qa + " of " + entity() + " ? label :";
        fs.answer = qa;
        corpus.fewshot.push_back(std::move(fs));

        corpus.noise.push_back(paragraph(2));
    }
    return corpus;
}

}  // namespace dialserve::bench
