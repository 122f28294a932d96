#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "notelm/config.hpp"
#include "notelm/corpus.hpp"
#include "notelm/inference.hpp"
#include "notelm/metrics.hpp"
#include "notelm/model.hpp"
#include "notelm/plot.hpp"
#include "notelm/tokenizer.hpp"
#include "notelm/training.hpp"

namespace notelm {

namespace fs = std::filesystem;

// log-spaced case grid with exact endpoints, deduplicated ascending
inline std::vector<size_t> make_grid(size_t lo, size_t hi, size_t n_cases) {
    if (lo == 0 || lo >= hi) throw Error("make_grid: need 0 < lo < hi");
    if (n_cases < 2) throw Error("make_grid: need at least 2 cases");
    std::vector<size_t> out;
    double llo = std::log(static_cast<double>(lo));
    double lhi = std::log(static_cast<double>(hi));
    for (size_t i = 0; i < n_cases; ++i) {
        double f = static_cast<double>(i) / static_cast<double>(n_cases - 1);
        auto v = static_cast<size_t>(std::llround(std::exp(llo + f * (lhi - llo))));
        if (out.empty() || v > out.back()) out.push_back(v);
    }
    out.front() = lo;
    out.back() = hi;
    return out;
}

inline std::vector<size_t> geometric_eval_schedule(size_t start, double growth, size_t cap,
                                                   size_t max_iterations) {
    std::vector<size_t> s;
    if (max_iterations == 0) return s;
    if (start == 0 || growth <= 1.0 || cap == 0)
        throw Error("eval schedule: need start > 0, growth > 1, cap > 0");
    double v = static_cast<double>(start);
    while (s.size() + 1 < cap) {
        auto iv = static_cast<size_t>(std::llround(v));
        if (iv >= max_iterations) break;
        if (s.empty() || iv > s.back()) s.push_back(iv);
        v *= growth;
    }
    s.push_back(max_iterations);
    return s;
}

// --- Run manifests -----------------------------------------------------------
//
// Everything needed to reproduce one case bit-exactly in f64 mode: corpus
// provenance, split sizes and seeds, tokenizer file + hash, model and train
// configs (with their derived seeds), float mode, and the pre-training
// checkpoint for Scenario B.

struct CorpusRef {
    std::string kind = "synthetic";  // synthetic | file
    std::string path;
    std::string format = "jsonl";
    uint64_t seed = 0;
    size_t n = 0;
    double class_balance = 0.5;
    std::string hash;

    nlohmann::json to_json() const {
        return {{"kind", kind},          {"path", path}, {"format", format},
                {"seed", seed},          {"n", n},       {"class_balance", class_balance},
                {"hash", hash}};
    }
    static CorpusRef from_json(const nlohmann::json& j) {
        CorpusRef r;
        r.kind = j.at("kind").get<std::string>();
        r.path = j.at("path").get<std::string>();
        r.format = j.at("format").get<std::string>();
        r.seed = j.at("seed").get<uint64_t>();
        r.n = j.at("n").get<size_t>();
        r.class_balance = j.at("class_balance").get<double>();
        r.hash = j.at("hash").get<std::string>();
        return r;
    }
};

struct RunManifest {
    std::string phase = "finetune";  // finetune | pretrain
    std::string scenario = "A";      // A | B
    size_t case_labels = 0;
    CorpusRef corpus;
    size_t test_size = 0;
    size_t supervised_size = 0;
    uint64_t split_seed = 0;
    uint64_t pool_seed = 0;
    std::string tokenizer_path;
    std::string tokenizer_hash;
    ModelConfig model;
    TrainConfig train;
    std::string float_mode = "f64";
    int threads = 1;
    std::string pretrain_checkpoint;  // relative to the manifest directory

    nlohmann::json to_json() const {
        return {{"phase", phase},
                {"scenario", scenario},
                {"case_labels", case_labels},
                {"corpus", corpus.to_json()},
                {"split",
                 {{"test_size", test_size},
                  {"supervised_size", supervised_size},
                  {"seed", split_seed}}},
                {"pool_seed", pool_seed},
                {"tokenizer", {{"path", tokenizer_path}, {"hash", tokenizer_hash}}},
                {"model", model.to_json()},
                {"train", train.to_json()},
                {"float_mode", float_mode},
                {"threads", threads},
                {"pretrain_checkpoint", pretrain_checkpoint}};
    }

    static RunManifest from_json(const nlohmann::json& j) {
        RunManifest m;
        m.phase = j.at("phase").get<std::string>();
        m.scenario = j.at("scenario").get<std::string>();
        m.case_labels = j.at("case_labels").get<size_t>();
        m.corpus = CorpusRef::from_json(j.at("corpus"));
        m.test_size = j.at("split").at("test_size").get<size_t>();
        m.supervised_size = j.at("split").at("supervised_size").get<size_t>();
        m.split_seed = j.at("split").at("seed").get<uint64_t>();
        m.pool_seed = j.at("pool_seed").get<uint64_t>();
        m.tokenizer_path = j.at("tokenizer").at("path").get<std::string>();
        m.tokenizer_hash = j.at("tokenizer").at("hash").get<std::string>();
        m.model = ModelConfig::from_json(j.at("model"));
        m.train = TrainConfig::from_json(j.at("train"));
        m.float_mode = j.at("float_mode").get<std::string>();
        m.threads = j.at("threads").get<int>();
        m.pretrain_checkpoint = j.at("pretrain_checkpoint").get<std::string>();
        return m;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("manifest: cannot open " + path);
        out << to_json().dump(2) << '\n';
    }

    static RunManifest load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("manifest: cannot open " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("manifest " + path + ": " + e.what());
        }
        return from_json(j);
    }
};

// --- Case execution ------------------------------------------------------------

template <typename T>
EvalRecord evaluate_on_test(const ModelParams<T>& params, const TokenizerState& tokenizer,
                            const std::vector<const ClinicalNote*>& test_notes,
                            size_t iteration, int threads) {
    auto preds = classify_many(params, tokenizer, test_notes, threads);
    std::vector<ScoredTruth> scored;
    std::vector<std::pair<bool, bool>> decided;
    scored.reserve(preds.size());
    decided.reserve(preds.size());
    size_t on_vocab = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        bool truth = test_notes[i]->label == TraumaLabel::Trauma;
        scored.push_back({preds[i].score, truth});
        decided.push_back({preds[i].predicted == TraumaLabel::Trauma, truth});
        if (preds[i].on_vocab) ++on_vocab;
    }
    EvalRecord r;
    r.iteration = iteration;
    r.auc = auc(scored);
    Confusion c = confusion(decided);
    r.f1 = c.f1;
    r.precision = c.precision;
    r.recall = c.recall;
    r.n_on_vocab = on_vocab;
    return r;
}

// labeled pool for a scenario, in corpus order before the seeded shuffle;
// Scenario A may draw from the pretraining split (those notes carry labels
// too), Scenario B only from the supervised split
inline std::vector<const ClinicalNote*> scenario_pool(
    const std::vector<ClinicalNote>& corpus, const SplitManifest& splits,
    const std::string& scenario, uint64_t pool_seed) {
    std::unordered_map<std::string, const ClinicalNote*> by_id;
    for (const auto& n : corpus) by_id[n.id] = &n;
    std::vector<const ClinicalNote*> pool;
    auto add = [&](const std::vector<std::string>& ids) {
        for (const auto& id : ids) {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw Error("scenario_pool: unknown note id " + id);
            const auto& l = it->second->label;
            if (l && (*l == TraumaLabel::Trauma || *l == TraumaLabel::NonTrauma))
                pool.push_back(it->second);
        }
    };
    add(splits.supervised_ids);
    if (scenario == "A") add(splits.pretrain_ids);
    Rng rng(pool_seed);
    rng.shuffle(pool);
    return pool;
}

inline std::vector<const ClinicalNote*> test_notes_of(const std::vector<ClinicalNote>& corpus,
                                                      const SplitManifest& splits) {
    std::unordered_map<std::string, const ClinicalNote*> by_id;
    for (const auto& n : corpus) by_id[n.id] = &n;
    std::vector<const ClinicalNote*> test;
    test.reserve(splits.test_ids.size());
    for (const auto& id : splits.test_ids) test.push_back(by_id.at(id));
    return test;
}

template <typename T>
struct CaseResult {
    LearningCurve curve;
    ModelParams<T> final_params;
    ModelParams<T> best_params;
    size_t best_iteration = 0;
};

// Pure (given the files it references): replays one case from its manifest.
// `manifest_dir` anchors the tokenizer/checkpoint paths.
template <typename T>
CaseResult<T> execute_case(const RunManifest& manifest, const std::vector<ClinicalNote>& corpus,
                           const TokenizerState& tokenizer, const fs::path& manifest_dir,
                           int eval_threads = 1) {
    if (manifest.phase != "finetune")
        throw Error("execute_case: manifest phase is \"" + manifest.phase +
                    "\", only finetune cases replay into a learning curve");
    SplitManifest splits =
        make_splits(corpus, manifest.test_size, manifest.supervised_size, manifest.split_seed);
    auto pool = scenario_pool(corpus, splits, manifest.scenario, manifest.pool_seed);
    if (pool.size() < manifest.case_labels)
        throw Error("execute_case: pool holds " + std::to_string(pool.size()) +
                    " labeled notes, case needs " + std::to_string(manifest.case_labels));
    std::vector<const ClinicalNote*> subset(pool.begin(),
                                            pool.begin() + static_cast<ptrdiff_t>(manifest.case_labels));
    auto test = test_notes_of(corpus, splits);

    ModelParams<T> params;
    if (manifest.scenario == "B") {
        if (manifest.pretrain_checkpoint.empty())
            throw Error("execute_case: Scenario B manifest lacks a pretrain checkpoint");
        fs::path ckpt = manifest.pretrain_checkpoint;
        if (ckpt.is_relative()) ckpt = manifest_dir / ckpt;
        auto [loaded, info] = load_checkpoint<T>(ckpt.string(), tokenizer.hash());
        if (!(info.config == manifest.model))
            throw Error("execute_case: checkpoint model config differs from manifest");
        params = std::move(loaded);
    } else {
        params = init_params<T>(manifest.model);
    }

    std::vector<ClinicalNote> owned;  // finetune() wants values; keep copies local
    owned.reserve(subset.size());
    for (const auto* n : subset) owned.push_back(*n);

    CaseResult<T> result;
    result.best_params = params;
    std::vector<EvalRecord> points;
    double best_auc = -1.0;

    EvalHook<T> hook = [&](size_t iteration, const ModelParams<T>& snapshot) {
        EvalRecord rec = evaluate_on_test(snapshot, tokenizer, test, iteration, eval_threads);
        if (rec.auc && *rec.auc > best_auc) {
            best_auc = *rec.auc;
            result.best_params = snapshot;
            result.best_iteration = iteration;
        }
        points.push_back(rec);
    };

    finetune(params, owned, tokenizer, manifest.train, hook);

    result.curve = make_learning_curve(manifest.case_labels, std::move(points));
    result.final_params = std::move(params);
    return result;
}

// --- Experiment orchestration -----------------------------------------------------

struct CaseFailure {
    std::string scenario;
    size_t case_labels;
    std::string error;
};

struct EfficiencyReport {
    double tau = 0.0;
    std::optional<size_t> smallest_a;
    std::optional<size_t> smallest_b;
    std::optional<double> factor;
};

inline std::optional<size_t> smallest_case_reaching(const std::vector<LearningCurve>& curves,
                                                    double tau) {
    std::optional<size_t> best;
    for (const auto& c : curves) {
        const auto& b = c.best_by_auc();
        if (b.auc && *b.auc >= tau && (!best || c.case_labels < *best)) best = c.case_labels;
    }
    return best;
}

// labeled-notes ratio A/B needed to reach the target AUC
inline EfficiencyReport compute_efficiency(const std::vector<LearningCurve>& curves_a,
                                           const std::vector<LearningCurve>& curves_b,
                                           double tau) {
    EfficiencyReport r;
    r.tau = tau;
    r.smallest_a = smallest_case_reaching(curves_a, tau);
    r.smallest_b = smallest_case_reaching(curves_b, tau);
    if (r.smallest_a && r.smallest_b)
        r.factor = static_cast<double>(*r.smallest_a) / static_cast<double>(*r.smallest_b);
    return r;
}

struct ExperimentOutcome {
    std::vector<LearningCurve> curves_a;
    std::vector<LearningCurve> curves_b;
    std::vector<CaseFailure> failures;
    EfficiencyReport efficiency;
    std::string out_dir;
};

inline std::string scenario_dir_name(const std::string& scenario) {
    return scenario == "A" ? "scenario_a" : "scenario_b";
}

inline void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::string summary_csv(const std::vector<LearningCurve>& curves_a,
                               const std::vector<LearningCurve>& curves_b) {
    std::string out = "scenario,case_labels,best_auc,best_f1,iterations_to_best\n";
    auto emit = [&](const char* scen, const std::vector<LearningCurve>& curves) {
        for (const auto& c : curves) {
            const auto& row = summarize({c})[0];
            out += scen;
            out += ',';
            out += std::to_string(row.case_labels);
            out += ',';
            out += metric_to_csv(row.best_auc);
            out += ',';
            out += metric_to_csv(row.best_f1);
            out += ',';
            out += std::to_string(row.iterations_to_best_auc);
            out += '\n';
        }
    };
    emit("A", curves_a);
    emit("B", curves_b);
    return out;
}

inline std::string efficiency_csv(const EfficiencyReport& r) {
    auto opt_str = [](const auto& o) -> std::string {
        if (!o) return "unavailable";
        if constexpr (std::is_same_v<std::decay_t<decltype(*o)>, double>)
            return format_double(*o);
        else
            return std::to_string(*o);
    };
    std::string out = "tau,smallest_case_a,smallest_case_b,factor\n";
    out += format_double(r.tau) + "," + opt_str(r.smallest_a) + "," + opt_str(r.smallest_b) +
           "," + opt_str(r.factor) + "\n";
    return out;
}

// comparison tables and figures for a pair of scenario runs
inline void report(const std::vector<LearningCurve>& curves_a,
                   const std::vector<LearningCurve>& curves_b, const std::string& out_dir,
                   double tau) {
    if (curves_a.empty() && curves_b.empty()) throw Error("report: no curves");
    fs::create_directories(fs::path(out_dir) / "plots");

    write_text_file(fs::path(out_dir) / "summary.csv", summary_csv(curves_a, curves_b));
    write_text_file(fs::path(out_dir) / "efficiency.csv",
                    efficiency_csv(compute_efficiency(curves_a, curves_b, tau)));

    auto iteration_series = [](const std::vector<LearningCurve>& curves, bool f1) {
        std::vector<PlotSeries> series;
        for (const auto& c : curves) {
            PlotSeries s;
            s.label = std::to_string(c.case_labels) + " notes";
            for (const auto& p : c.points) {
                const Metric& m = f1 ? p.f1 : p.auc;
                if (m) s.points.push_back({static_cast<double>(p.iteration), *m});
            }
            if (!s.points.empty()) series.push_back(std::move(s));
        }
        return series;
    };
    auto best_series = [](const std::vector<LearningCurve>& curves, bool f1, const char* label) {
        PlotSeries s;
        s.label = label;
        for (const auto& c : curves) {
            const auto& b = f1 ? c.best_by_f1() : c.best_by_auc();
            const Metric& m = f1 ? b.f1 : b.auc;
            if (m) s.points.push_back({static_cast<double>(c.case_labels), *m});
        }
        return s;
    };

    fs::path plots = fs::path(out_dir) / "plots";
    if (!curves_a.empty()) {
        write_svg_chart((plots / "auc_by_iteration_scenario_a.svg").string(),
                        "Scenario A: AUC by iterations", "iteration", "AUC",
                        iteration_series(curves_a, false), true);
        write_svg_chart((plots / "f1_by_iteration_scenario_a.svg").string(),
                        "Scenario A: F1 by iterations", "iteration", "F1",
                        iteration_series(curves_a, true), true);
    }
    if (!curves_b.empty()) {
        write_svg_chart((plots / "auc_by_iteration_scenario_b.svg").string(),
                        "Scenario B: AUC by iterations", "iteration", "AUC",
                        iteration_series(curves_b, false), true);
        write_svg_chart((plots / "f1_by_iteration_scenario_b.svg").string(),
                        "Scenario B: F1 by iterations", "iteration", "F1",
                        iteration_series(curves_b, true), true);
    }
    std::vector<PlotSeries> best_auc;
    std::vector<PlotSeries> best_f1;
    if (!curves_a.empty()) {
        best_auc.push_back(best_series(curves_a, false, "Scenario A"));
        best_f1.push_back(best_series(curves_a, true, "Scenario A"));
    }
    if (!curves_b.empty()) {
        best_auc.push_back(best_series(curves_b, false, "Scenario B"));
        best_f1.push_back(best_series(curves_b, true, "Scenario B"));
    }
    write_svg_chart((plots / "best_auc_by_case.svg").string(), "Best AUC by labeled notes",
                    "labeled notes", "best AUC", best_auc, true);
    write_svg_chart((plots / "best_f1_by_case.svg").string(), "Best F1 by labeled notes",
                    "labeled notes", "best F1", best_f1, true);
}

// --- Full experiment ---------------------------------------------------------------

namespace detail {

struct PreparedExperiment {
    ExperimentConfig cfg;
    std::vector<ClinicalNote> corpus;
    CorpusRef corpus_ref;
    SplitManifest splits;
    TokenizerState tokenizer;
    std::string tokenizer_path;  // absolute
    std::vector<size_t> grid;
};

inline PreparedExperiment prepare_experiment(ExperimentConfig cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);

    PreparedExperiment prep;
    prep.corpus_ref.class_balance = cfg.class_balance;
    if (cfg.corpus_path.empty()) {
        prep.corpus_ref.kind = "synthetic";
        prep.corpus_ref.seed = derive_seed(cfg.seed, "corpus");
        prep.corpus_ref.n = cfg.corpus_n;
        prep.corpus = generate_synthetic_corpus(prep.corpus_ref.seed, cfg.corpus_n,
                                                cfg.class_balance);
    } else {
        prep.corpus_ref.kind = "file";
        prep.corpus_ref.path = fs::absolute(cfg.corpus_path).string();
        prep.corpus_ref.format = cfg.corpus_format;
        prep.corpus = ingest(cfg.corpus_path,
                             cfg.corpus_format == "csv" ? CorpusFormat::Csv : CorpusFormat::Jsonl);
        prep.corpus_ref.n = prep.corpus.size();
    }
    prep.corpus_ref.hash = hex64(corpus_hash(prep.corpus));

    prep.splits = make_splits(prep.corpus, cfg.test_size, cfg.supervised_size,
                              derive_seed(cfg.seed, "split"));
    write_text_file(fs::path(out_dir) / "splits.json", splits_to_json(prep.splits).dump(2) + "\n");

    // BPE trained on (a cap of) the pretraining split so the frozen test text
    // never influences the vocabulary
    std::unordered_map<std::string, const ClinicalNote*> by_id;
    for (const auto& n : prep.corpus) by_id[n.id] = &n;
    std::vector<std::string> train_texts;
    for (const auto& id : prep.splits.pretrain_ids) {
        if (train_texts.size() >= cfg.tokenizer_train_cap) break;
        train_texts.push_back(by_id.at(id)->text);
    }
    if (train_texts.empty())
        for (const auto& n : prep.corpus) {
            if (train_texts.size() >= cfg.tokenizer_train_cap) break;
            train_texts.push_back(n.text);
        }
    prep.tokenizer = train_bpe(train_texts, cfg.merges);
    prep.tokenizer_path = fs::absolute(fs::path(out_dir) / "tokenizer.json").string();
    prep.tokenizer.save(prep.tokenizer_path);

    cfg.model.vocab_size = prep.tokenizer.vocab_size();

    if (!cfg.grid_cases.empty()) prep.grid = cfg.grid_cases;
    else prep.grid = make_grid(cfg.grid_lo, cfg.grid_hi, cfg.grid_n);

    prep.cfg = std::move(cfg);
    return prep;
}

template <typename T>
RunManifest case_manifest(const PreparedExperiment& prep, const std::string& scenario,
                          size_t case_labels, const fs::path& case_dir,
                          const std::string& pretrain_ckpt_abs) {
    const ExperimentConfig& cfg = prep.cfg;
    RunManifest m;
    m.phase = "finetune";
    m.scenario = scenario;
    m.case_labels = case_labels;
    m.corpus = prep.corpus_ref;
    m.test_size = cfg.test_size;
    m.supervised_size = cfg.supervised_size;
    m.split_seed = prep.splits.seed;
    m.pool_seed = derive_seed(cfg.seed, "pool-" + scenario);
    m.tokenizer_path = fs::relative(prep.tokenizer_path, case_dir).string();
    m.tokenizer_hash = hex64(prep.tokenizer.hash());
    m.model = cfg.model;
    // Scenario B inherits the pretrained weights, so its recorded init seed is
    // the pretraining one; A cases each get a fresh random init
    m.model.seed = scenario == "B"
                       ? derive_seed(cfg.seed, "init-pretrain")
                       : derive_seed(cfg.seed, "init-A-" + std::to_string(case_labels));
    m.train.learning_rate = cfg.finetune_lr;
    m.train.grad_clip = cfg.grad_clip;
    m.train.loss_extent = cfg.loss_extent;
    m.train.seed = derive_seed(cfg.seed, "train-" + scenario + "-" + std::to_string(case_labels));
    size_t iters = std::max(cfg.case_epochs * case_labels, cfg.case_min_iterations);
    iters = std::min(iters, cfg.case_max_iterations);
    m.train.max_iterations = iters;
    m.train.eval_at = geometric_eval_schedule(cfg.eval_start, cfg.eval_growth, cfg.eval_cap, iters);
    m.float_mode = sizeof(T) == 8 ? "f64" : "f32";
    m.threads = cfg.threads;
    if (!pretrain_ckpt_abs.empty())
        m.pretrain_checkpoint = fs::relative(pretrain_ckpt_abs, case_dir).string();
    return m;
}

template <typename T>
std::string pretrain_scenario_b(const PreparedExperiment& prep, const std::string& out_dir) {
    const ExperimentConfig& cfg = prep.cfg;
    fs::path dir = fs::path(out_dir) / "scenario_b" / "pretrain";
    fs::create_directories(dir);

    RunManifest m;
    m.phase = "pretrain";
    m.scenario = "B";
    m.corpus = prep.corpus_ref;
    m.test_size = cfg.test_size;
    m.supervised_size = cfg.supervised_size;
    m.split_seed = prep.splits.seed;
    m.pool_seed = 0;
    m.tokenizer_path = fs::relative(prep.tokenizer_path, dir).string();
    m.tokenizer_hash = hex64(prep.tokenizer.hash());
    m.model = cfg.model;
    m.model.seed = derive_seed(cfg.seed, "init-pretrain");
    m.train.learning_rate = cfg.pretrain_lr;
    m.train.grad_clip = cfg.grad_clip;
    m.train.seed = derive_seed(cfg.seed, "train-pretrain");
    m.train.max_iterations = cfg.pretrain_iterations;
    m.float_mode = sizeof(T) == 8 ? "f64" : "f32";
    m.threads = cfg.threads;
    m.save((dir / "manifest.json").string());

    std::unordered_map<std::string, const ClinicalNote*> by_id;
    for (const auto& n : prep.corpus) by_id[n.id] = &n;
    std::vector<ClinicalNote> notes;
    notes.reserve(prep.splits.pretrain_ids.size());
    for (const auto& id : prep.splits.pretrain_ids) notes.push_back(*by_id.at(id));

    ModelParams<T> params = init_params<T>(m.model);
    auto result = pretrain(params, notes, prep.tokenizer, m.train);
    write_text_file(dir / "loss.csv", loss_trace_to_csv(result.loss_trace));

    std::string ckpt = (dir / "ckpt_pretrain.bin").string();
    save_checkpoint(params, prep.tokenizer.hash(), ckpt);
    return fs::absolute(ckpt).string();
}

template <typename T>
void run_scenario(const PreparedExperiment& prep, const std::string& scenario,
                  const std::string& out_dir, const std::string& pretrain_ckpt_abs,
                  std::vector<LearningCurve>& curves, std::vector<CaseFailure>& failures) {
    const ExperimentConfig& cfg = prep.cfg;
    fs::path scen_dir = fs::path(out_dir) / scenario_dir_name(scenario);
    fs::create_directories(scen_dir);

    struct Job {
        size_t case_labels;
        fs::path dir;
        RunManifest manifest;
    };
    std::vector<Job> jobs;
    for (size_t case_labels : prep.grid) {
        fs::path case_dir = scen_dir / ("case_" + std::to_string(case_labels));
        fs::create_directories(case_dir);
        RunManifest m = case_manifest<T>(prep, scenario, case_labels, case_dir, pretrain_ckpt_abs);
        m.save((case_dir / "manifest.json").string());  // manifest lands before training
        jobs.push_back({case_labels, case_dir, std::move(m)});
    }

    std::mutex mu;
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= jobs.size()) break;
            const Job& job = jobs[i];
            try {
                CaseResult<T> res =
                    execute_case<T>(job.manifest, prep.corpus, prep.tokenizer, job.dir,
                                    cfg.threads > 1 ? 1 : cfg.threads);
                write_text_file(job.dir / "curve.csv", curve_to_csv(res.curve));
                save_checkpoint(res.best_params, prep.tokenizer.hash(),
                                (job.dir / "ckpt_best.bin").string());
                save_checkpoint(res.final_params, prep.tokenizer.hash(),
                                (job.dir / "ckpt_final.bin").string());
                std::lock_guard<std::mutex> lk(mu);
                curves.push_back(std::move(res.curve));
            } catch (const std::exception& e) {
                write_text_file(job.dir / ".failed", std::string(e.what()) + "\n");
                std::lock_guard<std::mutex> lk(mu);
                failures.push_back({scenario, job.case_labels, e.what()});
            }
        }
    };
    int n_workers = std::max(1, std::min<int>(cfg.threads, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int t = 0; t < n_workers - 1; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    std::sort(curves.begin(), curves.end(),
              [](const LearningCurve& a, const LearningCurve& b) {
                  return a.case_labels < b.case_labels;
              });
}

template <typename T>
ExperimentOutcome run_experiment_impl(const ExperimentConfig& cfg, const std::string& out_dir) {
    PreparedExperiment prep = prepare_experiment(cfg, out_dir);
    set_num_threads(prep.cfg.threads);

    // the largest case must fit each scenario's labeled pool
    size_t max_case = prep.grid.empty() ? 0 : prep.grid.back();
    for (const auto& scen : prep.cfg.scenarios) {
        size_t pool = scenario_pool(prep.corpus, prep.splits, scen,
                                    derive_seed(prep.cfg.seed, "pool-" + scen))
                          .size();
        if (max_case > pool)
            throw ConfigError("grid case " + std::to_string(max_case) + " exceeds the " +
                              std::to_string(pool) + " labeled notes available to scenario " + scen);
    }

    ExperimentOutcome outcome;
    outcome.out_dir = out_dir;
    bool run_a = false, run_b = false;
    for (const auto& s : prep.cfg.scenarios) {
        run_a = run_a || s == "A";
        run_b = run_b || s == "B";
    }
    if (run_a)
        run_scenario<T>(prep, "A", out_dir, "", outcome.curves_a, outcome.failures);
    if (run_b) {
        std::string ckpt = pretrain_scenario_b<T>(prep, out_dir);
        run_scenario<T>(prep, "B", out_dir, ckpt, outcome.curves_b, outcome.failures);
    }

    if (!outcome.curves_a.empty() || !outcome.curves_b.empty())
        report(outcome.curves_a, outcome.curves_b, out_dir, prep.cfg.target_tau);
    outcome.efficiency =
        compute_efficiency(outcome.curves_a, outcome.curves_b, prep.cfg.target_tau);
    return outcome;
}

}  // namespace detail

inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    if (cfg.float_mode == "f64") return detail::run_experiment_impl<double>(cfg, out_dir);
    return detail::run_experiment_impl<float>(cfg, out_dir);
}

// Replays a case manifest and returns the regenerated curve.csv bytes;
// f64 manifests reproduce their original output exactly.
struct RerunResult {
    LearningCurve curve;
    std::string curve_csv;
};

namespace detail {

template <typename T>
RerunResult rerun_case_impl(const RunManifest& manifest, const fs::path& manifest_dir) {
    std::vector<ClinicalNote> corpus;
    if (manifest.corpus.kind == "synthetic") {
        corpus = generate_synthetic_corpus(manifest.corpus.seed, manifest.corpus.n,
                                           manifest.corpus.class_balance);
    } else {
        corpus = ingest(manifest.corpus.path, manifest.corpus.format == "csv"
                                                  ? CorpusFormat::Csv
                                                  : CorpusFormat::Jsonl);
    }
    if (hex64(corpus_hash(corpus)) != manifest.corpus.hash)
        throw Error("rerun_case: corpus hash mismatch; the data differ from the recorded run");

    fs::path tok_path = manifest.tokenizer_path;
    if (tok_path.is_relative()) tok_path = manifest_dir / tok_path;
    TokenizerState tokenizer = TokenizerState::load(tok_path.string());
    if (hex64(tokenizer.hash()) != manifest.tokenizer_hash)
        throw Error("rerun_case: tokenizer hash mismatch (file " + hex64(tokenizer.hash()) +
                    ", manifest " + manifest.tokenizer_hash + ")");

    CaseResult<T> res = execute_case<T>(manifest, corpus, tokenizer, manifest_dir, 1);
    return {res.curve, curve_to_csv(res.curve)};
}

}  // namespace detail

inline RerunResult rerun_case(const std::string& manifest_path) {
    RunManifest manifest = RunManifest::load(manifest_path);
    fs::path dir = fs::absolute(manifest_path).parent_path();
    if (manifest.float_mode == "f64") return detail::rerun_case_impl<double>(manifest, dir);
    return detail::rerun_case_impl<float>(manifest, dir);
}

}  // namespace notelm
