#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "notelm/corpus.hpp"
#include "notelm/model.hpp"
#include "notelm/tokenizer.hpp"

namespace notelm {

struct Prediction {
    double score = 0.5;  // P(trauma), renormalized over the two answer tokens
    TraumaLabel predicted = TraumaLabel::NonTrauma;
    TokenId raw_top_token = -1;  // argmax over the full vocabulary
    bool on_vocab = false;       // argmax landed on one of the answer tokens
};

inline constexpr double kDecisionThreshold = 0.5;

// Pairwise renormalized probability: P(1) / (P(0) + P(1)) over the two answer
// tokens, i.e. sigmoid of their logit difference. Untouched by logits of any
// other token, so the score sweeps thresholds cleanly for AUC.
template <typename T>
Prediction prediction_from_logits(const Tensor<T>& last_logits, const TokenizerState& tokenizer) {
    const T* row = last_logits.data.data();
    size_t v = last_logits.numel();
    size_t top = 0;
    for (size_t j = 1; j < v; ++j)
        if (row[j] > row[top]) top = j;

    double l0 = static_cast<double>(row[static_cast<size_t>(tokenizer.label0_id())]);
    double l1 = static_cast<double>(row[static_cast<size_t>(tokenizer.label1_id())]);

    Prediction p;
    p.score = 1.0 / (1.0 + std::exp(l0 - l1));
    p.predicted = p.score >= kDecisionThreshold ? TraumaLabel::Trauma : TraumaLabel::NonTrauma;
    p.raw_top_token = static_cast<TokenId>(top);
    p.on_vocab = p.raw_top_token == tokenizer.label0_id() || p.raw_top_token == tokenizer.label1_id();
    return p;
}

// prompt = front-truncated note tokens + MARKER; read the next-token logits
template <typename T>
std::vector<TokenId> classify_prompt(const TokenizerState& tokenizer, const std::string& text,
                                     size_t context_len) {
    std::vector<TokenId> ids = tokenizer.encode(text);
    const size_t keep = context_len - 1;
    if (ids.size() > keep)
        ids.erase(ids.begin(), ids.begin() + static_cast<ptrdiff_t>(ids.size() - keep));
    ids.push_back(tokenizer.marker_id());
    return ids;
}

template <typename T>
Prediction classify(const ModelParams<T>& params, const TokenizerState& tokenizer,
                    const std::string& text) {
    if (text.empty()) throw Error("classify: empty note text");
    auto ids = classify_prompt<T>(tokenizer, text, params.config.context_len);
    Tensor<T> logits = forward_last(params, ids);
    return prediction_from_logits(logits, tokenizer);
}

// fan the frozen test set across worker threads; results land by index so the
// output is independent of scheduling
template <typename T>
std::vector<Prediction> classify_many(const ModelParams<T>& params,
                                      const TokenizerState& tokenizer,
                                      const std::vector<const ClinicalNote*>& notes,
                                      int threads = 1) {
    std::vector<Prediction> out(notes.size());
    if (threads <= 1 || notes.size() < 2) {
        for (size_t i = 0; i < notes.size(); ++i)
            out[i] = classify(params, tokenizer, notes[i]->text);
        return out;
    }
    std::atomic<size_t> cursor{0};
    auto worker = [&] {
        for (;;) {
            size_t i = cursor.fetch_add(1);
            if (i >= notes.size()) break;
            out[i] = classify(params, tokenizer, notes[i]->text);
        }
    };
    std::vector<std::thread> pool;
    int n = std::min<int>(threads, static_cast<int>(notes.size()));
    pool.reserve(static_cast<size_t>(n - 1));
    for (int t = 0; t < n - 1; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    return out;
}

struct GenerateOptions {
    size_t max_new = 64;
    double temperature = 1.0;
    size_t top_k = 0;  // 0 means all tokens
    uint64_t seed = 0;
    bool greedy = false;  // the temperature -> 0 limit
};

// temperature-scaled, top-k-filtered sampling from one logits row; ties at
// the k boundary and in argmax resolve to the lowest id
template <typename T>
TokenId sample_token(const Tensor<T>& logits_row, const GenerateOptions& opts, Rng& rng) {
    size_t v = logits_row.numel();
    const T* row = logits_row.data.data();
    if (opts.greedy) {
        size_t top = 0;
        for (size_t j = 1; j < v; ++j)
            if (row[j] > row[top]) top = j;
        return static_cast<TokenId>(top);
    }
    if (!(opts.temperature > 0.0)) throw Error("generate: temperature must be positive");

    std::vector<size_t> idx(v);
    for (size_t j = 0; j < v; ++j) idx[j] = j;
    size_t k = opts.top_k == 0 ? v : std::min(opts.top_k, v);
    if (k < v) {
        std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
            if (row[a] != row[b]) return row[a] > row[b];
            return a < b;
        });
        idx.resize(k);
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j : idx) mx = std::max(mx, static_cast<double>(row[j]));
    std::vector<double> probs(idx.size());
    double sum = 0.0;
    for (size_t i = 0; i < idx.size(); ++i) {
        probs[i] = std::exp((static_cast<double>(row[idx[i]]) - mx) / opts.temperature);
        sum += probs[i];
    }
    double r = rng.uniform_real() * sum;
    double acc = 0.0;
    for (size_t i = 0; i < idx.size(); ++i) {
        acc += probs[i];
        if (r < acc) return static_cast<TokenId>(idx[i]);
    }
    return static_cast<TokenId>(idx.back());
}

// iterative next-token sampling; stops at EOT or max_new tokens
template <typename T>
std::string generate(const ModelParams<T>& params, const TokenizerState& tokenizer,
                     const std::string& prompt, const GenerateOptions& opts) {
    if (opts.max_new == 0) throw Error("generate: max_new must be at least 1");
    std::vector<TokenId> ids = tokenizer.encode(prompt);
    if (ids.empty()) ids.push_back(tokenizer.eot_id());
    Rng rng(derive_seed(opts.seed, "generate"));

    std::vector<TokenId> produced;
    for (size_t step = 0; step < opts.max_new; ++step) {
        std::vector<TokenId> window = ids;
        if (window.size() > params.config.context_len)
            window.erase(window.begin(),
                         window.begin() +
                             static_cast<ptrdiff_t>(window.size() - params.config.context_len));
        Tensor<T> logits = forward_last(params, window);
        TokenId next = sample_token(logits, opts, rng);
        if (next == tokenizer.eot_id()) break;
        produced.push_back(next);
        ids.push_back(next);
    }
    return tokenizer.decode(produced);
}

}  // namespace notelm
