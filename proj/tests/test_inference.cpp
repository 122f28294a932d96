#include <catch2/catch.hpp>

#include <cmath>

#include "notelm/corpus.hpp"
#include "notelm/inference.hpp"
#include "notelm/tokenizer.hpp"
#include "notelm/training.hpp"

using namespace notelm;

namespace {

TokenizerState byte_tokenizer() { return TokenizerState{}; }

ModelConfig tiny_config(const TokenizerState& tok, uint64_t seed) {
    ModelConfig cfg;
    cfg.vocab_size = tok.vocab_size();
    cfg.context_len = 48;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 32;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("score: exactly one half when the answer logits tie", "[inference]") {
    auto tok = byte_tokenizer();
    auto params = init_params<double>(tiny_config(tok, 3));
    // identical embedding rows for the two answer tokens force equal logits
    size_t d = params.config.d_model;
    for (size_t j = 0; j < d; ++j)
        params.wte.at(static_cast<size_t>(tok.label1_id()), j) =
            params.wte.at(static_cast<size_t>(tok.label0_id()), j);
    auto pred = classify(params, tok, "n'importe quel texte");
    CHECK(pred.score == 0.5);
    CHECK(pred.predicted == TraumaLabel::Trauma);  // threshold is >=
}

TEST_CASE("score: untouched by logits of other tokens", "[inference]") {
    auto tok = byte_tokenizer();
    Tensor<double> logits({1, tok.vocab_size()});
    logits.data[static_cast<size_t>(tok.label0_id())] = 0.3;
    logits.data[static_cast<size_t>(tok.label1_id())] = 1.1;
    auto base = prediction_from_logits(logits, tok);
    for (size_t j = 0; j < 200; ++j) logits.data[j] = static_cast<double>(j) * 0.05 - 3.0;
    auto bumped = prediction_from_logits(logits, tok);
    CHECK(base.score == bumped.score);
    CHECK(base.score == Approx(1.0 / (1.0 + std::exp(0.3 - 1.1))).margin(1e-15));
}

TEST_CASE("classify: prompt is front-truncated note plus marker", "[inference]") {
    auto tok = byte_tokenizer();
    std::string text;
    for (int i = 0; i < 300; ++i) text += static_cast<char>('a' + i % 26);
    auto prompt = classify_prompt<double>(tok, text, 64);
    REQUIRE(prompt.size() == 64);
    CHECK(prompt.back() == tok.marker_id());
    auto all = tok.encode(text);
    for (size_t i = 0; i < 63; ++i) CHECK(prompt[i] == all[all.size() - 63 + i]);

    auto short_prompt = classify_prompt<double>(tok, "abc", 64);
    REQUIRE(short_prompt.size() == 4);
    CHECK(short_prompt.back() == tok.marker_id());
}

TEST_CASE("classify: fine-tuned model answers on-vocabulary", "[inference]") {
    auto tok = byte_tokenizer();
    auto params = init_params<double>(tiny_config(tok, 17));

    std::vector<ClinicalNote> notes = {
        make_note("t1", "chute de velo douleur poignet", std::string("S52")),
        make_note("t2", "plaie par couteau main droite", std::string("S61")),
        make_note("n1", "fievre et toux depuis 3 jours", std::string("J18")),
        make_note("n2", "douleur thoracique a l effort", std::string("I20")),
    };
    TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.max_iterations = 400;
    tc.seed = 2;
    tc.loss_extent = LossExtent::LabelOnly;
    finetune(params, notes, tok, tc);

    for (const auto& n : notes) {
        auto pred = classify(params, tok, n.text);
        CHECK(pred.on_vocab);
        CHECK(pred.predicted == *n.label);
        if (*n.label == TraumaLabel::Trauma) CHECK(pred.score > 0.9);
        else CHECK(pred.score < 0.1);
    }
}

TEST_CASE("classify: untrained model rarely answers on-vocabulary", "[inference]") {
    auto corpus = generate_synthetic_corpus(303, 1000, 0.5);
    std::vector<std::string> texts;
    for (size_t i = 0; i < 200; ++i) texts.push_back(corpus[i].text);
    auto tok = train_bpe(texts, 500);

    ModelConfig cfg;
    cfg.vocab_size = tok.vocab_size();  // 761 tokens
    cfg.context_len = 96;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 32;
    cfg.seed = 99;
    auto params = init_params<float>(cfg);

    std::vector<const ClinicalNote*> ptrs;
    for (const auto& n : corpus) ptrs.push_back(&n);
    auto preds = classify_many(params, tok, ptrs, 2);
    size_t on_vocab = 0;
    for (const auto& p : preds) on_vocab += p.on_vocab ? 1 : 0;
    CHECK(static_cast<double>(on_vocab) / static_cast<double>(preds.size()) < 0.05);
}

TEST_CASE("classify_many: parallel equals serial", "[inference]") {
    auto tok = byte_tokenizer();
    auto params = init_params<float>(tiny_config(tok, 5));
    auto corpus = generate_synthetic_corpus(7, 40, 0.5);
    std::vector<const ClinicalNote*> ptrs;
    for (const auto& n : corpus) ptrs.push_back(&n);
    auto serial = classify_many(params, tok, ptrs, 1);
    auto parallel = classify_many(params, tok, ptrs, 4);
    REQUIRE(serial.size() == parallel.size());
    for (size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].score == parallel[i].score);
        CHECK(serial[i].raw_top_token == parallel[i].raw_top_token);
    }
}

TEST_CASE("generate: deterministic under a fixed seed", "[inference]") {
    auto tok = byte_tokenizer();
    auto params = init_params<float>(tiny_config(tok, 6));
    GenerateOptions opts;
    opts.max_new = 24;
    opts.seed = 7;
    auto a = generate(params, tok, "douleur", opts);
    auto b = generate(params, tok, "douleur", opts);
    CHECK(a == b);
    opts.seed = 8;
    auto c = generate(params, tok, "douleur", opts);
    CHECK(a != c);  // a new stream almost surely diverges within 24 tokens
}

TEST_CASE("generate: top_k of one equals greedy", "[inference]") {
    auto tok = byte_tokenizer();
    auto params = init_params<float>(tiny_config(tok, 9));
    GenerateOptions greedy;
    greedy.greedy = true;
    greedy.max_new = 20;
    GenerateOptions topk1;
    topk1.top_k = 1;
    topk1.max_new = 20;
    topk1.seed = 3;
    CHECK(generate(params, tok, "pat", greedy) == generate(params, tok, "pat", topk1));
    // greedy ignores the seed entirely
    GenerateOptions greedy2 = greedy;
    greedy2.seed = 999;
    CHECK(generate(params, tok, "pat", greedy) == generate(params, tok, "pat", greedy2));
}

TEST_CASE("generate: bounded by max_new", "[inference]") {
    auto tok = byte_tokenizer();
    auto params = init_params<float>(tiny_config(tok, 10));
    GenerateOptions opts;
    opts.max_new = 5;
    opts.seed = 1;
    auto text = generate(params, tok, "x", opts);
    CHECK(tok.encode(text).size() <= 5);
    CHECK_THROWS_AS(generate(params, tok, "x", GenerateOptions{0}), Error);
}

TEST_CASE("sampler: matches the exact model distribution on a 3-token model", "[inference]") {
    // enumerate the toy model's next-token distribution, then chi-square the
    // sampler against it
    ModelConfig cfg;
    cfg.vocab_size = 3;
    cfg.context_len = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 1;
    cfg.d_model = 8;
    cfg.seed = 31;
    auto params = init_params<double>(cfg);
    Tensor<double> logits = forward_last(params, {0, 1, 2, 1});

    double mx = std::max({logits.data[0], logits.data[1], logits.data[2]});
    double z = 0.0;
    double p[3];
    for (int j = 0; j < 3; ++j) {
        p[j] = std::exp(logits.data[j] - mx);
        z += p[j];
    }
    for (auto& v : p) v /= z;

    GenerateOptions opts;
    opts.temperature = 1.0;
    opts.top_k = 3;  // the full vocabulary
    Rng rng(424242);
    const int n = 30000;
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < n; ++i) counts[sample_token(logits, opts, rng)]++;

    double chi2 = 0.0;
    for (int j = 0; j < 3; ++j) {
        double expected = p[j] * n;
        chi2 += (counts[j] - expected) * (counts[j] - expected) / expected;
    }
    INFO("chi2 " << chi2 << " p " << p[0] << " " << p[1] << " " << p[2]);
    CHECK(chi2 < 13.82);  // 99.9th percentile of chi-square with 2 dof
}
