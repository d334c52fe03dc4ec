// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dialserve/error.hpp"
#include "dialserve/parallel.hpp"
#include "dialserve/rng.hpp"
#include "dialserve/tensor.hpp"

namespace dialserve {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t d_model = 32;
    std::size_t d_k = 16;
    std::size_t d_v = 16;
    std::size_t vocab_size = 256;
    std::size_t max_seq_len = 1024;

    std::size_t d_ff() const noexcept { return 4 * d_model; }
    /// Heads across all layers; plans and caches are indexed by layer * n_heads + head.
    std::size_t total_heads() const noexcept { return n_layers * n_heads; }
    std::size_t head_index(std::size_t layer, std::size_t head) const noexcept { return layer * n_heads + head; }

    void validate() const {
        require(n_layers >= 1 && n_heads >= 1 && d_model >= 1 && d_k >= 1 && d_v >= 1 && vocab_size >= 1 &&
                    max_seq_len >= 1,
                ErrorCode::InvalidConfig, "all model dimensions must be >= 1");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct HeadWeights {
    Matrix w_q;  // d_model x d_k
    Matrix w_k;  // d_model x d_k
    Matrix w_v;  // d_model x d_v
};

struct LayerWeights {
    std::vector<double> attn_norm;  // d_model gains
    std::vector<HeadWeights> heads;
    Matrix w_o;                     // (n_heads * d_v) x d_model
    std::vector<double> ffn_norm;   // d_model gains
    Matrix w_ff1;                   // d_model x d_ff
    Matrix w_ff2;                   // d_ff x d_model
};

struct ModelWeights {
    ModelConfig config;
    Matrix token_embedding;     // vocab x d_model
    Matrix position_embedding;  // max_seq_len x d_model
    std::vector<LayerWeights> layers;
    std::vector<double> final_norm;
    Matrix w_out;               // d_model x vocab
    std::vector<double> b_out;  // vocab

    void validate() const {
        config.validate();
        const auto& c = config;
        auto shape = [](const Matrix& m, std::size_t r, std::size_t k, const char* what) {
            require(m.rows() == r && m.cols() == k, ErrorCode::InvalidConfig, std::string(what) + " has wrong shape");
            require(m.all_finite(), ErrorCode::NonFiniteInput, std::string(what) + " has non-finite entries");
        };
        auto gains = [](const std::vector<double>& g, std::size_t n, const char* what) {
            require(g.size() == n, ErrorCode::InvalidConfig, std::string(what) + " has wrong length");
            for (double v : g) {
                require(std::isfinite(v), ErrorCode::NonFiniteInput, std::string(what) + " has non-finite entries");
            }
        };
        shape(token_embedding, c.vocab_size, c.d_model, "token_embedding");
        shape(position_embedding, c.max_seq_len, c.d_model, "position_embedding");
        require(layers.size() == c.n_layers, ErrorCode::InvalidConfig, "layer count mismatch");
        for (const auto& layer : layers) {
            gains(layer.attn_norm, c.d_model, "attn_norm");
            require(layer.heads.size() == c.n_heads, ErrorCode::InvalidConfig, "head count mismatch");
            for (const auto& h : layer.heads) {
                shape(h.w_q, c.d_model, c.d_k, "w_q");
                shape(h.w_k, c.d_model, c.d_k, "w_k");
                shape(h.w_v, c.d_model, c.d_v, "w_v");
            }
            shape(layer.w_o, c.n_heads * c.d_v, c.d_model, "w_o");
            gains(layer.ffn_norm, c.d_model, "ffn_norm");
            shape(layer.w_ff1, c.d_model, c.d_ff(), "w_ff1");
            shape(layer.w_ff2, c.d_ff(), c.d_model, "w_ff2");
        }
        gains(final_norm, c.d_model, "final_norm");
        shape(w_out, c.d_model, c.vocab_size, "w_out");
        gains(b_out, c.vocab_size, "b_out");
    }
};

/// Weights drawn uniformly from [-0.1, 0.1]; normalization gains start at 1.
inline ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    auto draw = [&rng](std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        for (double& v : m.data()) {
            v = rng.uniform(-0.1, 0.1);
        }
        return m;
    };
    ModelWeights w;
    w.config = config;
    w.token_embedding = draw(config.vocab_size, config.d_model);
    w.position_embedding = draw(config.max_seq_len, config.d_model);
    w.layers.resize(config.n_layers);
    for (auto& layer : w.layers) {
        layer.attn_norm.assign(config.d_model, 1.0);
        layer.heads.resize(config.n_heads);
        for (auto& h : layer.heads) {
            h.w_q = draw(config.d_model, config.d_k);
            h.w_k = draw(config.d_model, config.d_k);
            h.w_v = draw(config.d_model, config.d_v);
        }
        layer.w_o = draw(config.n_heads * config.d_v, config.d_model);
        layer.ffn_norm.assign(config.d_model, 1.0);
        layer.w_ff1 = draw(config.d_model, config.d_ff());
        layer.w_ff2 = draw(config.d_ff(), config.d_model);
    }
    w.final_norm.assign(config.d_model, 1.0);
    w.w_out = draw(config.d_model, config.vocab_size);
    w.b_out = draw(1, config.vocab_size).data();
    return w;
}

struct QKV {
    Matrix q;
    Matrix k;
    Matrix v;
};

inline QKV qkv_project(const Matrix& x, const HeadWeights& head) {
    require(x.cols() == head.w_q.rows(), ErrorCode::DimensionMismatch, "X width must equal d_model");
    return {matmul(x, head.w_q), matmul(x, head.w_k), matmul(x, head.w_v)};
}

inline Matrix rms_norm_rows(const Matrix& x, std::span<const double> gain) {
    constexpr double kEps = 1e-6;
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto in = x.row(r);
        double ms = 0.0;
        for (double v : in) {
            ms += v * v;
        }
        const double inv = 1.0 / std::sqrt(ms / static_cast<double>(in.size()) + kEps);
        auto o = out.row(r);
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = in[j] * inv * gain[j];
        }
    }
    return out;
}

/// Keys, values and queries of every processed position for one head.
struct HeadStore {
    Matrix keys;
    Matrix values;
    Matrix queries;

    std::size_t length() const noexcept { return keys.rows(); }
};

/// Full (uncompressed) per-head store for all layers.
class KVCache {
public:
    KVCache() = default;

    explicit KVCache(const ModelConfig& config) : m_n_heads(config.n_heads), m_heads(config.total_heads()) {
        for (auto& h : m_heads) {
            h.keys = Matrix(0, config.d_k);
            h.values = Matrix(0, config.d_v);
            h.queries = Matrix(0, config.d_k);
        }
    }

    std::size_t n_heads() const noexcept { return m_n_heads; }
    std::size_t size() const noexcept { return m_heads.size(); }

    HeadStore& head(std::size_t layer, std::size_t h) { return m_heads[layer * m_n_heads + h]; }
    const HeadStore& head(std::size_t layer, std::size_t h) const { return m_heads[layer * m_n_heads + h]; }
    HeadStore& flat(std::size_t i) { return m_heads[i]; }
    const HeadStore& flat(std::size_t i) const { return m_heads[i]; }

    /// Logical history length; throws CacheCorrupt if heads disagree.
    std::size_t length() const {
        if (m_heads.empty()) {
            return 0;
        }
        const std::size_t n = m_heads.front().length();
        for (const auto& h : m_heads) {
            require(h.keys.rows() == n && h.values.rows() == n && h.queries.rows() == n, ErrorCode::CacheCorrupt,
                    "per-head cache lengths disagree");
        }
        return n;
    }

    void truncate(std::size_t n) {
        for (auto& h : m_heads) {
            h.keys.truncate_rows(n);
            h.values.truncate_rows(n);
            h.queries.truncate_rows(n);
        }
    }

private:
    std::size_t m_n_heads = 0;
    std::vector<HeadStore> m_heads;
};

/// Runs `tokens` (global positions start_pos, start_pos + 1, ...) through every layer.
/// Per layer, each head's Q/K/V rows are appended to `cache` first; then
/// attend(layer, head, q_rows, start_pos, store) must return the head output
/// (rows x d_v). Heads run on up to `threads` workers. Returns final hidden rows.
template <class AttendFn>
Matrix run_layers(const ModelWeights& w, std::span<const TokenId> tokens, std::size_t start_pos, KVCache& cache,
                  AttendFn&& attend, std::size_t threads = 1) {
    const auto& cfg = w.config;
    require(cache.size() == cfg.total_heads(), ErrorCode::CacheCorrupt, "cache built for another config");
    require(cache.length() == start_pos, ErrorCode::CacheCorrupt,
            "cache holds " + std::to_string(cache.length()) + " positions, expected " + std::to_string(start_pos));
    require(start_pos + tokens.size() <= cfg.max_seq_len, ErrorCode::SequenceTooLong,
            "sequence would reach " + std::to_string(start_pos + tokens.size()) + " > max_seq_len " +
                std::to_string(cfg.max_seq_len));
    const std::size_t m = tokens.size();
    Matrix h(m, cfg.d_model);
    for (std::size_t r = 0; r < m; ++r) {
        require(tokens[r] < cfg.vocab_size, ErrorCode::InvalidArgument, "token id beyond vocab");
        const auto te = w.token_embedding.row(tokens[r]);
        const auto pe = w.position_embedding.row(start_pos + r);
        auto out = h.row(r);
        for (std::size_t j = 0; j < cfg.d_model; ++j) {
            out[j] = te[j] + pe[j];
        }
    }
    std::vector<Matrix> queries(cfg.n_heads);
    std::vector<Matrix> head_out(cfg.n_heads);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto& layer = w.layers[l];
        const Matrix a = rms_norm_rows(h, layer.attn_norm);
        for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
            QKV p = qkv_project(a, layer.heads[hd]);
            auto& store = cache.head(l, hd);
            for (std::size_t r = 0; r < m; ++r) {
                store.keys.append_row(p.k.row(r));
                store.values.append_row(p.v.row(r));
                store.queries.append_row(p.q.row(r));
            }
            queries[hd] = std::move(p.q);
        }
        parallel_for(cfg.n_heads, threads, [&](std::size_t hd) {
            head_out[hd] = attend(l, hd, queries[hd], start_pos, static_cast<const HeadStore&>(cache.head(l, hd)));
        });
        Matrix concat(m, cfg.n_heads * cfg.d_v);
        for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
            require(head_out[hd].rows() == m && head_out[hd].cols() == cfg.d_v, ErrorCode::DimensionMismatch,
                    "head output has wrong shape");
            for (std::size_t r = 0; r < m; ++r) {
                std::copy_n(head_out[hd].row(r).begin(), cfg.d_v, concat.row(r).begin() + hd * cfg.d_v);
            }
        }
        const Matrix projected = matmul(concat, layer.w_o);
        for (std::size_t i = 0; i < h.data().size(); ++i) {
            h.data()[i] += projected.data()[i];
        }
        Matrix hidden = matmul(rms_norm_rows(h, layer.ffn_norm), layer.w_ff1);
        for (double& v : hidden.data()) {
            v = v > 0.0 ? v : 0.0;
        }
        const Matrix ffn = matmul(hidden, layer.w_ff2);
        for (std::size_t i = 0; i < h.data().size(); ++i) {
            h.data()[i] += ffn.data()[i];
        }
    }
    return h;
}

/// Vocabulary logits h W_out + b_out for one final hidden row.
inline std::vector<double> output_logits(const ModelWeights& w, std::span<const double> hidden_row) {
    Matrix h(1, hidden_row.size(), std::vector<double>(hidden_row.begin(), hidden_row.end()));
    Matrix logits = matmul(rms_norm_rows(h, w.final_norm), w.w_out);
    std::vector<double> out = std::move(logits.data());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += w.b_out[i];
    }
    return out;
}

/// Greedy choice; ties go to the smaller token id.
inline TokenId argmax_token(std::span<const double> logits) {
    require(!logits.empty(), ErrorCode::InvalidArgument, "empty logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = i;
        }
    }
    return static_cast<TokenId>(best);
}

/// Dense causal attention against the full store; optionally records the
/// attention block and score count of every (layer, head).
struct DenseAttend {
    std::size_t n_heads = 0;
    std::vector<AttentionBlock>* blocks = nullptr;
    std::vector<OpCounter>* ops = nullptr;

    Matrix operator()(std::size_t layer, std::size_t head, const Matrix& q, std::size_t start_pos,
                      const HeadStore& store) const {
        const std::size_t idx = layer * n_heads + head;
        AttentionResult r = scaled_dot_attention(q, store.keys, store.values, start_pos, ops ? &(*ops)[idx] : nullptr);
        if (blocks) {
            (*blocks)[idx] = std::move(r.attention);
        }
        return std::move(r.z);
    }
};

struct PrefillResult {
    Matrix hidden;
    KVCache cache;
    std::vector<AttentionBlock> blocks;  // indexed layer * n_heads + head
    std::vector<double> last_logits;
};

inline PrefillResult forward_prefill(const ModelWeights& w, std::span<const TokenId> tokens, std::size_t threads = 1) {
    require(!tokens.empty(), ErrorCode::InvalidArgument, "prefill needs at least one token");
    PrefillResult result;
    result.cache = KVCache(w.config);
    result.blocks.resize(w.config.total_heads());
    DenseAttend attend{w.config.n_heads, &result.blocks, nullptr};
    result.hidden = run_layers(w, tokens, 0, result.cache, attend, threads);
    result.last_logits = output_logits(w, result.hidden.row(result.hidden.rows() - 1));
    return result;
}

struct DecodeStepResult {
    std::vector<double> logits;
    TokenId next_token = 0;
};

/// Feeds `last_token` at position cache.length() and predicts the next token.
inline DecodeStepResult decode_step(const ModelWeights& w, KVCache& cache, TokenId last_token,
                                    std::size_t threads = 1) {
    const std::size_t pos = cache.length();
    const TokenId tok[1] = {last_token};
    DenseAttend attend{w.config.n_heads, nullptr, nullptr};
    const Matrix h = run_layers(w, tok, pos, cache, attend, threads);
    DecodeStepResult out;
    out.logits = output_logits(w, h.row(0));
    out.next_token = argmax_token(out.logits);
    return out;
}

/// Greedy generation; stops after emitting eos_id (kept in the output) or max_new tokens.
inline TokenSequence generate(const ModelWeights& w, std::span<const TokenId> prompt, std::size_t max_new,
                              std::optional<TokenId> eos_id, std::size_t threads = 1) {
    require(!prompt.empty(), ErrorCode::InvalidArgument, "prompt must be nonempty");
    require(prompt.size() + max_new <= w.config.max_seq_len, ErrorCode::SequenceTooLong,
            "prompt + max_new exceeds max_seq_len");
    TokenSequence out;
    if (max_new == 0) {
        return out;
    }
    PrefillResult pre = forward_prefill(w, prompt, threads);
    TokenId next = argmax_token(pre.last_logits);
    out.push_back(next);
    while (out.size() < max_new && !(eos_id && next == *eos_id)) {
        next = decode_step(w, pre.cache, next, threads).next_token;
        out.push_back(next);
    }
    return out;
}

}  // namespace dialserve
