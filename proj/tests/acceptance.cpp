// Acceptance suite: one test per criterion, each printing a pass/fail line.
// [properties] covers the fast checks; [replication] runs the full
// two-scenario experiment and takes tens of minutes.

#include <catch2/catch.hpp>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "notelm/notelm.hpp"
#include "test_support.hpp"

using namespace notelm;
namespace fsys = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

void report_line(bool ok, const std::string& what) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << what << std::endl;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fsys::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

TokenizerState acceptance_tokenizer(size_t merges) {
    auto notes = generate_synthetic_corpus(1001, 1500, 0.5);
    std::vector<std::string> texts;
    texts.reserve(notes.size());
    for (const auto& n : notes) texts.push_back(n.text);
    return train_bpe(texts, merges);
}

}  // namespace

TEST_CASE("criterion 1: tokenizer round-trip on random byte strings", "[properties]") {
    auto tok = acceptance_tokenizer(500);
    Rng rng(0xC0FFEE);
    auto t0 = Clock::now();
    size_t failures = 0;
    for (int i = 0; i < 10000; ++i) {
        size_t len = rng.uniform(513);  // 0..512
        std::string s(len, '\0');
        for (auto& c : s) c = static_cast<char>(rng.uniform(256));
        if (tok.decode(tok.encode(s)) != s) ++failures;
    }
    double secs = seconds_since(t0);
    bool ok = failures == 0 && secs < 10.0;
    report_line(ok, "criterion 1: 10000/10000 byte strings round-trip exactly in " +
                        format_double(secs) + "s (< 10s)");
    CHECK(failures == 0);
    CHECK(secs < 10.0);
}

TEST_CASE("criterion 2: finite-difference gradients, 1-block width-16 model", "[properties]") {
    auto t0 = Clock::now();
    ModelConfig cfg;
    cfg.vocab_size = 48;
    cfg.context_len = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.seed = 4242;
    ModelParams<double> params = init_params<double>(cfg);

    TrainingExample ex;
    ex.ids = {3, 41, 17, 5, 33, 17, 0, 46, 12, 3};
    ex.loss_mask.assign(ex.ids.size(), 1);
    ex.source_id = "acceptance-fd";

    auto loss_value = [&] {
        Tape<double> tape;
        ModelGraph<double> graph(tape, params, false);
        return tape.value(example_loss(tape, graph, ex)).data[0];
    };
    Tape<double> tape;
    ModelGraph<double> graph(tape, params, true);
    auto loss = example_loss(tape, graph, ex);
    tape.backward(loss);

    std::vector<std::pair<std::string, Tensor<double>*>> plist;
    params.for_each(
        [&](const std::string& name, Tensor<double>& t) { plist.emplace_back(name, &t); });
    std::vector<Tensor<double>> grads;
    for (auto v : graph.param_vars()) grads.push_back(tape.grad(v));

    auto fd = test_support::finite_difference_check(plist, grads, loss_value, 1e-5);
    double secs = seconds_since(t0);
    bool ok = fd.max_rel_error < 1e-4 && secs < 120.0;
    report_line(ok, "criterion 2: every parameter tensor within rel 1e-4 of central "
                    "differences (worst " +
                        format_double(fd.max_rel_error) + " at " + fd.worst_param + ", " +
                        format_double(secs) + "s < 2min)");
    CHECK(fd.max_rel_error < 1e-4);
    CHECK(secs < 120.0);
}

TEST_CASE("criterion 3: causality is bitwise over 100 random inputs", "[properties]") {
    ModelConfig cfg;
    cfg.vocab_size = 96;
    cfg.context_len = 24;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.seed = 31415;
    auto params = init_params<double>(cfg);

    Rng rng(2718);
    size_t violations = 0;
    for (int trial = 0; trial < 100; ++trial) {
        size_t len = 2 + rng.uniform(cfg.context_len - 1);
        std::vector<TokenId> ids(len);
        for (auto& id : ids) id = static_cast<TokenId>(rng.uniform(cfg.vocab_size));
        Tensor<double> base = forward(params, ids);
        for (size_t j = 0; j < len; ++j) {
            auto perturbed = ids;
            perturbed[j] = static_cast<TokenId>((perturbed[j] + 1 + rng.uniform(17)) %
                                                cfg.vocab_size);
            Tensor<double> changed = forward(params, perturbed);
            if (j > 0 && std::memcmp(base.data.data(), changed.data.data(),
                                     j * cfg.vocab_size * sizeof(double)) != 0)
                ++violations;
        }
    }
    bool ok = violations == 0;
    report_line(ok, "criterion 3: perturbing position j never changed a logit bit at "
                    "positions < j (100 inputs, every position)");
    CHECK(violations == 0);
}

TEST_CASE("criterion 4: rank-sum AUC equals brute-force pair counting", "[properties]") {
    // hand anchors first
    auto perfect = auc({{0.9, true}, {0.1, false}});
    auto ties = auc({{0.5, true}, {0.5, false}, {0.5, true}, {0.5, false}});
    bool anchors = perfect && *perfect == 1.0 && ties && *ties == 0.5;

    Rng rng(987654321);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        size_t n = 2 + rng.uniform(499);
        std::vector<ScoredTruth> items;
        items.reserve(n);
        bool heavy_ties = trial % 2 == 0;
        for (size_t i = 0; i < n; ++i) {
            double score = heavy_ties ? static_cast<double>(rng.uniform(7)) / 6.0
                                      : rng.uniform_real();
            items.push_back({score, rng.bernoulli(0.35)});
        }
        items[0].truth = true;
        items[n - 1].truth = false;

        double concordant = 0.0;
        size_t n_pos = 0, n_neg = 0;
        for (const auto& a : items) {
            if (!a.truth) continue;
            ++n_pos;
            for (const auto& b : items) {
                if (b.truth) continue;
                if (a.score > b.score) concordant += 1.0;
                else if (a.score == b.score) concordant += 0.5;
            }
        }
        n_neg = items.size() - n_pos;
        double brute = concordant / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
        auto fast = auc(items);
        REQUIRE(fast);
        worst = std::max(worst, std::abs(*fast - brute));
    }
    bool ok = anchors && worst < 1e-12;
    report_line(ok, "criterion 4: 1000 random instances (n <= 500, with ties) agree with the "
                    "quadratic oracle to " +
                        format_double(worst) + " (< 1e-12); anchors exact");
    CHECK(anchors);
    CHECK(worst < 1e-12);
}

TEST_CASE("criterion 5: all-negative predictions leave F1 undefined, never 0", "[properties]") {
    auto c = confusion({{false, true}, {false, true}, {false, false}, {false, false}});
    bool undefined_ok = !c.f1 && !c.precision && c.recall && *c.recall == 0.0;

    EvalRecord rec;
    rec.iteration = 20;
    rec.auc = 0.5;
    rec.f1 = c.f1;
    rec.precision = c.precision;
    rec.recall = c.recall;
    auto curve = make_learning_curve(10, {rec});
    std::string csv = curve_to_csv(curve);
    // iteration,auc,f1,precision,recall,n_on_vocab with f1/precision empty
    bool csv_ok = csv.find("20,0.5,,,0,0") != std::string::npos;

    nlohmann::json j;
    j["f1"] = c.f1 ? nlohmann::json(*c.f1) : nlohmann::json(nullptr);
    bool json_ok = j["f1"].is_null() && j.dump() == "{\"f1\":null}";

    bool ok = undefined_ok && csv_ok && json_ok;
    report_line(ok, "criterion 5: degenerate F1 serializes as empty/null, not 0");
    CHECK(undefined_ok);
    CHECK(csv_ok);
    CHECK(json_ok);
}

TEST_CASE("criterion 6: marker-scheme memorization of 8 labeled notes", "[properties]") {
    auto corpus = generate_synthetic_corpus(606, 64, 0.5);
    std::vector<ClinicalNote> eight;  // four per class, short enough to memorize fast
    size_t trauma_taken = 0, nontrauma_taken = 0;
    for (const auto& n : corpus) {
        if (n.text.size() > 110) continue;
        bool is_trauma = *n.label == TraumaLabel::Trauma;
        if (is_trauma && trauma_taken < 4) {
            eight.push_back(n);
            ++trauma_taken;
        } else if (!is_trauma && nontrauma_taken < 4) {
            eight.push_back(n);
            ++nontrauma_taken;
        }
        if (eight.size() == 8) break;
    }
    REQUIRE(eight.size() == 8);

    std::vector<std::string> texts;
    for (const auto& n : eight) texts.push_back(n.text);
    auto tok = train_bpe(texts, 120);

    ModelConfig cfg;
    cfg.vocab_size = tok.vocab_size();
    cfg.context_len = 128;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 64;
    cfg.seed = 123;
    auto params = init_params<double>(cfg);

    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.max_iterations = 2000;
    tc.seed = 9;
    tc.loss_extent = LossExtent::FullSequence;
    auto result = finetune(params, eight, tok, tc);
    double final_loss = result.loss_trace.back().second;

    size_t correct = 0, on_vocab = 0;
    for (const auto& n : eight) {
        auto pred = classify(params, tok, n.text);
        if (pred.predicted == *n.label) ++correct;
        if (pred.on_vocab) ++on_vocab;
    }
    bool ok = final_loss < 0.05 && correct == 8 && on_vocab == 8;
    report_line(ok, "criterion 6: after " + std::to_string(result.loss_trace.size()) +
                        " iterations loss " + format_double(final_loss) + " (< 0.05), " +
                        std::to_string(correct) + "/8 correct, " + std::to_string(on_vocab) +
                        "/8 on-vocabulary");
    CHECK(final_loss < 0.05);
    CHECK(correct == 8);
    CHECK(on_vocab == 8);
}

TEST_CASE("criterion 8: a case manifest replays to a byte-identical curve", "[properties]") {
    ExperimentConfig cfg;
    cfg.seed = 88;
    cfg.float_mode = "f64";
    cfg.threads = 2;
    cfg.target_tau = 0.9;
    cfg.corpus_n = 320;
    cfg.class_balance = 0.5;
    cfg.test_size = 60;
    cfg.supervised_size = 80;
    cfg.merges = 60;
    cfg.tokenizer_train_cap = 150;
    cfg.model.context_len = 64;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.model.d_model = 32;
    cfg.pretrain_iterations = 120;
    cfg.pretrain_lr = 1e-3;
    cfg.finetune_lr = 1e-3;
    cfg.case_min_iterations = 100;
    cfg.case_epochs = 10;
    cfg.case_max_iterations = 140;
    cfg.grid_cases = {10};
    cfg.eval_start = 20;
    cfg.eval_growth = 2.0;
    cfg.eval_cap = 5;

    auto out_dir = (fsys::temp_directory_path() / "notelm_acceptance_rerun").string();
    fsys::remove_all(out_dir);
    auto outcome = run_experiment(cfg, out_dir);
    REQUIRE(outcome.failures.empty());

    bool ok = true;
    for (const auto& scen : {"scenario_a", "scenario_b"}) {
        fsys::path dir = fsys::path(out_dir) / scen / "case_10";
        auto rerun = rerun_case((dir / "manifest.json").string());
        ok = ok && rerun.curve_csv == slurp(dir / "curve.csv");
    }
    report_line(ok, "criterion 8: rerunning both scenarios' manifests in f64 reproduced "
                    "curve.csv byte-identically");
    CHECK(ok);
    fsys::remove_all(out_dir);
}

TEST_CASE("criterion 9: log-spaced grid construction matches the oracle", "[properties]") {
    auto grid = make_grid(20, 10000, 19);
    bool ok = grid.size() == 19 && grid.front() == 20 && grid.back() == 10000;
    for (size_t i = 1; i < grid.size(); ++i) ok = ok && grid[i] > grid[i - 1];
    for (size_t i = 0; i < grid.size() && ok; ++i) {
        double expected = std::exp(std::log(20.0) + static_cast<double>(i) *
                                                        (std::log(10000.0) - std::log(20.0)) /
                                                        18.0);
        ok = ok && grid[i] == static_cast<size_t>(std::llround(expected));
    }
    report_line(ok, "criterion 9: make_grid(20, 10000, 19) is strictly increasing with exact "
                    "endpoints and matches round(exp(...)) pointwise");
    REQUIRE(grid.size() == 19);
    CHECK(ok);
}

TEST_CASE("criterion 10: golden ICD-10 labeling table", "[properties]") {
    const auto& table = test_support::golden_icd10_table();
    REQUIRE(table.size() >= 40);
    size_t mismatches = 0;
    for (const auto& [raw, expected] : table) {
        if (label_of(parse_icd10(raw)) != expected) {
            ++mismatches;
            std::cout << "  labeling mismatch: " << raw << std::endl;
        }
    }
    bool ok = mismatches == 0;
    report_line(ok, "criterion 10: " + std::to_string(table.size()) +
                        " golden codes labeled exactly (S/V/T boundaries, all ten non-trauma "
                        "letters, default exclusions)");
    CHECK(mismatches == 0);
}

TEST_CASE("criterion 7: qualitative replication of the pre-training effect", "[replication]") {
    ExperimentConfig cfg;
    cfg.seed = 7001;
    cfg.float_mode = "f32";
    cfg.threads = 2;
    cfg.target_tau = 0.90;
    cfg.corpus_n = 54000;  // 2000 test + 2000 supervised + 50000 pretrain
    cfg.class_balance = 0.5;
    cfg.test_size = 2000;
    cfg.supervised_size = 2000;
    cfg.merges = 800;
    cfg.tokenizer_train_cap = 2500;
    cfg.model.context_len = 128;
    cfg.model.n_layers = 4;
    cfg.model.n_heads = 4;
    cfg.model.d_model = 64;
    cfg.pretrain_iterations = 100000;
    cfg.pretrain_lr = 1e-3;
    cfg.finetune_lr = 2.5e-4;
    cfg.case_min_iterations = 3000;
    cfg.case_epochs = 50;
    cfg.case_max_iterations = 4000;
    cfg.grid_cases = {20, 60, 200, 600, 2000};
    cfg.eval_start = 20;
    cfg.eval_growth = 1.6;
    cfg.eval_cap = 14;

    auto out_dir = (fsys::temp_directory_path() / "notelm_acceptance_replication").string();
    fsys::remove_all(out_dir);
    auto t0 = Clock::now();
    auto outcome = run_experiment(cfg, out_dir);
    double secs = seconds_since(t0);
    REQUIRE(outcome.failures.empty());
    REQUIRE(outcome.curves_a.size() == 5);
    REQUIRE(outcome.curves_b.size() == 5);

    auto best = [](const std::vector<LearningCurve>& curves, size_t case_labels) {
        for (const auto& c : curves)
            if (c.case_labels == case_labels) return *c.best_by_auc().auc;
        throw Error("missing case");
    };

    std::cout << "  replication summary (" << format_double(secs) << "s):" << std::endl;
    for (const auto& c : outcome.curves_a)
        std::cout << "    A " << c.case_labels << ": best AUC "
                  << format_double(*c.best_by_auc().auc) << std::endl;
    for (const auto& c : outcome.curves_b)
        std::cout << "    B " << c.case_labels << ": best AUC "
                  << format_double(*c.best_by_auc().auc) << " (final "
                  << format_double(*c.points.back().auc) << ")" << std::endl;

    // (a) at 200 labels, pre-training buys at least 0.05 AUC
    double a200 = best(outcome.curves_a, 200);
    double b200 = best(outcome.curves_b, 200);
    bool gap_ok = b200 - a200 >= 0.05;
    report_line(gap_ok, "criterion 7a: B@200 " + format_double(b200) + " vs A@200 " +
                            format_double(a200) + " (gap " + format_double(b200 - a200) +
                            " >= 0.05)");

    // (b) label-efficiency factor at tau = 0.90 is at least 3; if A never
    // reaches tau inside the grid, the true factor exceeds max_case / b
    auto eff = compute_efficiency(outcome.curves_a, outcome.curves_b, 0.90);
    bool factor_ok = false;
    std::string factor_note;
    if (eff.smallest_a && eff.smallest_b) {
        factor_ok = *eff.factor >= 3.0;
        factor_note = "factor " + format_double(*eff.factor) + " (A " +
                      std::to_string(*eff.smallest_a) + " / B " +
                      std::to_string(*eff.smallest_b) + ")";
    } else if (eff.smallest_b) {
        double lower_bound = 2000.0 / static_cast<double>(*eff.smallest_b);
        factor_ok = lower_bound >= 3.0;
        factor_note = "A never reached 0.90 within the grid; factor > " +
                      format_double(lower_bound) + " (B " + std::to_string(*eff.smallest_b) +
                      ")";
    } else {
        factor_note = "B never reached 0.90";
    }
    report_line(factor_ok, "criterion 7b: label-efficiency " + factor_note + " (>= 3)");

    // (c) the B curve at 600 labels ends above 0.90
    double b600_final = 0.0;
    for (const auto& c : outcome.curves_b)
        if (c.case_labels == 600) b600_final = *c.points.back().auc;
    bool end_ok = b600_final > 0.90;
    report_line(end_ok, "criterion 7c: B@600 final AUC " + format_double(b600_final) +
                            " (> 0.90)");

    CHECK(gap_ok);
    CHECK(factor_ok);
    CHECK(end_ok);
    fsys::remove_all(out_dir);
}
