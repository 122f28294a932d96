// notelm — desk-scale generative pre-training for clinical note classification.
//
// One executable wraps the whole pipeline: corpus generation/ingestion, BPE
// training, self-supervised pre-training, marker-token fine-tuning,
// classification, generation, and the two-scenario learning-curve experiment.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "notelm/config.hpp"
#include "notelm/corpus.hpp"
#include "notelm/harness.hpp"
#include "notelm/inference.hpp"
#include "notelm/metrics.hpp"
#include "notelm/model.hpp"
#include "notelm/tokenizer.hpp"
#include "notelm/training.hpp"

namespace fs = std::filesystem;
using namespace notelm;

namespace {

bool g_quiet = false;

void say(const std::string& msg) {
    if (!g_quiet) std::cout << msg << std::endl;
}

void handle_sigint(int) { interrupt_flag().store(true); }

void install_sigint() { std::signal(SIGINT, handle_sigint); }

void mark_failed(const std::string& out_dir, const std::string& what) {
    if (out_dir.empty()) return;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream f(fs::path(out_dir) / ".failed", std::ios::trunc);
    if (f) f << what << "\n";
}

CorpusFormat format_of(const std::string& s) {
    if (s == "jsonl") return CorpusFormat::Jsonl;
    if (s == "csv") return CorpusFormat::Csv;
    throw ConfigError("format must be jsonl or csv, got \"" + s + "\"");
}

struct ModelFlags {
    size_t context_len = 128;
    size_t n_layers = 4;
    size_t n_heads = 4;
    size_t d_model = 64;
    size_t d_mlp = 0;
    double dropout = 0.0;
    std::string preset;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--context-len", context_len, "Context window length")
            ->capture_default_str();
        cmd->add_option("--layers", n_layers, "Transformer blocks")->capture_default_str();
        cmd->add_option("--heads", n_heads, "Attention heads")->capture_default_str();
        cmd->add_option("--d-model", d_model, "Model width")->capture_default_str();
        cmd->add_option("--d-mlp", d_mlp, "MLP width (0 = 4*d_model)")->capture_default_str();
        cmd->add_option("--dropout", dropout, "Dropout probability")->capture_default_str();
        cmd->add_option("--model-preset", preset, "Model preset: desk, gpt2-117m, gpt2-345m");
    }

    ModelConfig to_config(size_t vocab, uint64_t seed) const {
        ModelConfig c;
        if (!preset.empty()) {
            c = ModelConfig::preset(preset, vocab, seed);
        } else {
            c.vocab_size = vocab;
            c.context_len = context_len;
            c.n_layers = n_layers;
            c.n_heads = n_heads;
            c.d_model = d_model;
            c.d_mlp = d_mlp;
            c.dropout = dropout;
            c.seed = seed;
        }
        c.validate();
        return c;
    }
};

nlohmann::json file_ref(const std::string& path, uint64_t hash) {
    return {{"path", fs::absolute(path).string()}, {"hash", hex64(hash)}};
}

// reduced manifest for the standalone train subcommands; experiment cases get
// the full harness manifest
void write_standalone_manifest(const std::string& out_dir, const std::string& command,
                               const nlohmann::json& extra) {
    nlohmann::json j = extra;
    j["command"] = command;
    std::ofstream f(fs::path(out_dir) / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write manifest in " + out_dir);
    f << j.dump(2) << "\n";
}

template <typename T>
int do_pretrain(const std::string& notes_path, const std::string& format,
                const std::string& tok_path, const std::string& out_dir,
                const ModelFlags& mf, size_t iterations, double lr, uint64_t seed,
                int threads) {
    auto notes = ingest(notes_path, format_of(format));
    auto tokenizer = TokenizerState::load(tok_path);
    set_num_threads(threads);

    ModelConfig mc = mf.to_config(tokenizer.vocab_size(), derive_seed(seed, "init"));
    TrainConfig tc;
    tc.learning_rate = lr;
    tc.max_iterations = iterations;
    tc.seed = derive_seed(seed, "train");

    fs::create_directories(out_dir);
    write_standalone_manifest(out_dir, "pretrain",
                              {{"notes", file_ref(notes_path, corpus_hash(notes))},
                               {"tokenizer", file_ref(tok_path, tokenizer.hash())},
                               {"model", mc.to_json()},
                               {"train", tc.to_json()},
                               {"float_mode", sizeof(T) == 8 ? "f64" : "f32"},
                               {"threads", threads}});

    ModelParams<T> params = init_params<T>(mc);
    say("pretraining on " + std::to_string(notes.size()) + " notes for " +
        std::to_string(iterations) + " iterations");
    auto result = pretrain(params, notes, tokenizer, tc);
    write_text_file(fs::path(out_dir) / "loss.csv", loss_trace_to_csv(result.loss_trace));
    save_checkpoint(params, tokenizer.hash(), (fs::path(out_dir) / "ckpt.bin").string());
    if (result.interrupted) {
        say("interrupted; checkpoint written to " + out_dir);
        return 130;
    }
    say("checkpoint written to " + out_dir);
    return 0;
}

template <typename T>
int do_finetune(const std::string& notes_path, const std::string& format,
                const std::string& tok_path, const std::string& init_ckpt,
                const std::string& out_dir, const ModelFlags& mf, size_t iterations,
                double lr, const std::string& loss_extent, uint64_t seed, int threads) {
    auto notes = ingest(notes_path, format_of(format));
    std::vector<ClinicalNote> labeled;
    for (auto& n : notes) {
        if (n.label && (*n.label == TraumaLabel::Trauma || *n.label == TraumaLabel::NonTrauma))
            labeled.push_back(std::move(n));
    }
    if (labeled.empty()) throw Error("finetune: no labeled (non-excluded) notes in " + notes_path);
    auto tokenizer = TokenizerState::load(tok_path);
    set_num_threads(threads);

    ModelParams<T> params;
    ModelConfig mc;
    if (!init_ckpt.empty()) {
        auto [loaded, info] = load_checkpoint<T>(init_ckpt, tokenizer.hash());
        params = std::move(loaded);
        mc = info.config;
    } else {
        mc = mf.to_config(tokenizer.vocab_size(), derive_seed(seed, "init"));
        params = init_params<T>(mc);
    }
    TrainConfig tc;
    tc.learning_rate = lr;
    tc.max_iterations = iterations;
    tc.seed = derive_seed(seed, "train");
    tc.loss_extent = loss_extent_from_string(loss_extent);

    fs::create_directories(out_dir);
    write_standalone_manifest(out_dir, "finetune",
                              {{"notes", file_ref(notes_path, corpus_hash(labeled))},
                               {"tokenizer", file_ref(tok_path, tokenizer.hash())},
                               {"init_checkpoint", init_ckpt},
                               {"model", mc.to_json()},
                               {"train", tc.to_json()},
                               {"float_mode", sizeof(T) == 8 ? "f64" : "f32"},
                               {"threads", threads}});

    say("fine-tuning on " + std::to_string(labeled.size()) + " labeled notes for " +
        std::to_string(iterations) + " iterations");
    auto result = finetune(params, labeled, tokenizer, tc);
    write_text_file(fs::path(out_dir) / "loss.csv", loss_trace_to_csv(result.loss_trace));
    save_checkpoint(params, tokenizer.hash(), (fs::path(out_dir) / "ckpt.bin").string());
    if (result.interrupted) {
        say("interrupted; checkpoint written to " + out_dir);
        return 130;
    }
    say("checkpoint written to " + out_dir);
    return 0;
}

template <typename T>
int do_classify(const std::string& ckpt, const std::string& tok_path,
                const std::string& in_path, const std::string& format,
                const std::string& out_path, int threads) {
    auto tokenizer = TokenizerState::load(tok_path);
    auto [params, info] = load_checkpoint<T>(ckpt, tokenizer.hash());
    auto notes = ingest(in_path, format_of(format));
    std::vector<const ClinicalNote*> ptrs;
    ptrs.reserve(notes.size());
    for (const auto& n : notes) ptrs.push_back(&n);
    auto preds = classify_many(params, tokenizer, ptrs, threads);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path, std::ios::binary | std::ios::trunc);
        if (!file) throw IoError("classify: cannot open " + out_path);
        out = &file;
    }
    for (size_t i = 0; i < notes.size(); ++i) {
        nlohmann::json j{{"id", notes[i].id},
                         {"score", preds[i].score},
                         {"predicted", to_string(preds[i].predicted)},
                         {"on_vocab", preds[i].on_vocab}};
        (*out) << j.dump() << '\n';
    }
    return 0;
}

template <typename T>
int do_generate(const std::string& ckpt, const std::string& tok_path, const std::string& prompt,
                const GenerateOptions& opts) {
    auto tokenizer = TokenizerState::load(tok_path);
    auto [params, info] = load_checkpoint<T>(ckpt, tokenizer.hash());
    std::cout << generate(params, tokenizer, prompt, opts) << std::endl;
    return 0;
}

std::vector<LearningCurve> curves_from_dir(const fs::path& scen_dir) {
    std::vector<LearningCurve> curves;
    if (!fs::exists(scen_dir)) return curves;
    for (const auto& entry : fs::directory_iterator(scen_dir)) {
        if (!entry.is_directory()) continue;
        std::string name = entry.path().filename().string();
        if (name.rfind("case_", 0) != 0) continue;
        fs::path csv = entry.path() / "curve.csv";
        if (!fs::exists(csv)) continue;
        std::ifstream in(csv, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        curves.push_back(
            make_learning_curve(std::stoull(name.substr(5)), curve_from_csv(content)));
    }
    std::sort(curves.begin(), curves.end(),
              [](const LearningCurve& a, const LearningCurve& b) {
                  return a.case_labels < b.case_labels;
              });
    return curves;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"notelm: generative pre-training for free-text note classification"};
    app.require_subcommand(1);
    app.fallthrough(true);

    // global flags
    uint64_t seed = 1;
    std::string config_path;
    std::string out;
    std::string float_mode = "f32";
    int threads = 1;
    app.add_option("--seed", seed, "Master seed")->capture_default_str();
    app.add_option("--config", config_path, "Config file (TOML-style)");
    app.add_option("--out", out, "Output directory or file");
    app.add_option("--float-mode", float_mode, "Float mode: f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();
    app.add_flag("--quiet", g_quiet, "Suppress progress output");
    app.add_option("--threads", threads, "Worker threads")->capture_default_str();

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic labeled note corpus");
    size_t gen_n = 10000;
    double gen_balance = 0.5;
    gen->add_option("--n", gen_n, "Number of notes")->capture_default_str();
    gen->add_option("--balance", gen_balance, "Trauma fraction")->capture_default_str();

    // ingest
    auto* ing = app.add_subcommand("ingest", "Ingest notes, derive labels, drop duplicates");
    std::string ing_in, ing_format = "jsonl";
    ing->add_option("--in", ing_in, "Input file")->required();
    ing->add_option("--format", ing_format, "Input format: jsonl or csv")
        ->check(CLI::IsMember({"jsonl", "csv"}))
        ->capture_default_str();

    // train-tokenizer
    auto* ttok = app.add_subcommand("train-tokenizer", "Train the byte-level BPE tokenizer");
    std::string tt_in, tt_format = "jsonl";
    size_t tt_merges = 4744;
    size_t tt_cap = 0;
    ttok->add_option("--in", tt_in, "Notes file")->required();
    ttok->add_option("--format", tt_format, "Input format")->capture_default_str();
    ttok->add_option("--merges", tt_merges, "Merge count")->capture_default_str();
    ttok->add_option("--cap", tt_cap, "Max notes fed to the trainer (0 = all)")
        ->capture_default_str();

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "Self-supervised next-token pre-training");
    std::string pre_notes, pre_format = "jsonl", pre_tok;
    size_t pre_iters = 40000;
    double pre_lr = 2.5e-4;
    ModelFlags pre_mf;
    pre->add_option("--notes", pre_notes, "Unlabeled notes file")->required();
    pre->add_option("--format", pre_format, "Input format")->capture_default_str();
    pre->add_option("--tokenizer", pre_tok, "Tokenizer file")->required();
    pre->add_option("--iters", pre_iters, "Training iterations")->capture_default_str();
    pre->add_option("--lr", pre_lr, "Learning rate")->capture_default_str();
    pre_mf.add_to(pre);

    // finetune
    auto* fin = app.add_subcommand("finetune", "Marker-token supervised fine-tuning");
    std::string fin_notes, fin_format = "jsonl", fin_tok, fin_init;
    size_t fin_iters = 3000;
    double fin_lr = 2.5e-4;
    std::string fin_extent = "full_sequence";
    ModelFlags fin_mf;
    fin->add_option("--notes", fin_notes, "Labeled notes file")->required();
    fin->add_option("--format", fin_format, "Input format")->capture_default_str();
    fin->add_option("--tokenizer", fin_tok, "Tokenizer file")->required();
    fin->add_option("--init-ckpt", fin_init, "Start from this checkpoint (Scenario B style)");
    fin->add_option("--iters", fin_iters, "Training iterations")->capture_default_str();
    fin->add_option("--lr", fin_lr, "Learning rate")->capture_default_str();
    fin->add_option("--loss-extent", fin_extent, "full_sequence or label_only")
        ->check(CLI::IsMember({"full_sequence", "label_only"}))
        ->capture_default_str();
    fin_mf.add_to(fin);

    // classify
    auto* cls = app.add_subcommand("classify", "Score notes with the marker-token prompt");
    std::string cls_ckpt, cls_tok, cls_in, cls_format = "jsonl";
    cls->add_option("--ckpt", cls_ckpt, "Model checkpoint")->required();
    cls->add_option("--tokenizer", cls_tok, "Tokenizer file")->required();
    cls->add_option("--in", cls_in, "Notes file")->required();
    cls->add_option("--format", cls_format, "Input format")->capture_default_str();

    // generate
    auto* gen_text = app.add_subcommand("generate", "Sample text from a trained model");
    std::string g_ckpt, g_tok, g_prompt;
    GenerateOptions g_opts;
    gen_text->add_option("--ckpt", g_ckpt, "Model checkpoint")->required();
    gen_text->add_option("--tokenizer", g_tok, "Tokenizer file")->required();
    gen_text->add_option("--prompt", g_prompt, "Prompt text");
    gen_text->add_option("--max-new", g_opts.max_new, "Max new tokens")->capture_default_str();
    gen_text->add_option("--temperature", g_opts.temperature, "Sampling temperature")
        ->capture_default_str();
    gen_text->add_option("--top-k", g_opts.top_k, "Top-k filter (0 = off)")->capture_default_str();
    gen_text->add_flag("--greedy", g_opts.greedy, "Greedy decoding (temperature -> 0 limit)");

    // experiment
    auto* exp = app.add_subcommand("experiment",
                                   "Run the Scenario A/B learning-curve comparison");
    std::string exp_rerun;
    exp->add_option("--rerun", exp_rerun, "Replay one case from its manifest.json");

    // report
    auto* rep = app.add_subcommand("report", "Rebuild summary tables and plots from curves");
    std::string rep_dir;
    double rep_tau = 0.95;
    rep->add_option("--dir", rep_dir, "Experiment output directory")->required();
    rep->add_option("--tau", rep_tau, "Target AUC for the label-efficiency factor")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    install_sigint();
    const bool f64 = float_mode == "f64";

    try {
        if (gen->parsed()) {
            if (out.empty()) throw ConfigError("gen-corpus: --out <file> is required");
            auto notes = generate_synthetic_corpus(seed, gen_n, gen_balance);
            export_jsonl(notes, out);
            say("wrote " + std::to_string(notes.size()) + " notes to " + out);
        } else if (ing->parsed()) {
            if (out.empty()) throw ConfigError("ingest: --out <file> is required");
            auto notes = ingest(ing_in, format_of(ing_format));
            export_jsonl(notes, out);
            say("ingested " + std::to_string(notes.size()) + " unique notes to " + out);
        } else if (ttok->parsed()) {
            if (out.empty()) throw ConfigError("train-tokenizer: --out <file> is required");
            auto notes = ingest(tt_in, format_of(tt_format));
            std::vector<std::string> texts;
            for (const auto& n : notes) {
                if (tt_cap && texts.size() >= tt_cap) break;
                texts.push_back(n.text);
            }
            auto tok = train_bpe(texts, tt_merges);
            tok.save(out);
            say("trained " + std::to_string(tok.merges().size()) + " merges (vocab " +
                std::to_string(tok.vocab_size()) + ") -> " + out);
        } else if (pre->parsed()) {
            if (out.empty()) throw ConfigError("pretrain: --out <dir> is required");
            try {
                return f64 ? do_pretrain<double>(pre_notes, pre_format, pre_tok, out, pre_mf,
                                                 pre_iters, pre_lr, seed, threads)
                           : do_pretrain<float>(pre_notes, pre_format, pre_tok, out, pre_mf,
                                                pre_iters, pre_lr, seed, threads);
            } catch (...) {
                mark_failed(out, "pretrain failed");
                throw;
            }
        } else if (fin->parsed()) {
            if (out.empty()) throw ConfigError("finetune: --out <dir> is required");
            try {
                return f64 ? do_finetune<double>(fin_notes, fin_format, fin_tok, fin_init, out,
                                                 fin_mf, fin_iters, fin_lr, fin_extent, seed,
                                                 threads)
                           : do_finetune<float>(fin_notes, fin_format, fin_tok, fin_init, out,
                                                fin_mf, fin_iters, fin_lr, fin_extent, seed,
                                                threads);
            } catch (...) {
                mark_failed(out, "finetune failed");
                throw;
            }
        } else if (cls->parsed()) {
            return f64 ? do_classify<double>(cls_ckpt, cls_tok, cls_in, cls_format, out, threads)
                       : do_classify<float>(cls_ckpt, cls_tok, cls_in, cls_format, out, threads);
        } else if (gen_text->parsed()) {
            g_opts.seed = seed;
            return f64 ? do_generate<double>(g_ckpt, g_tok, g_prompt, g_opts)
                       : do_generate<float>(g_ckpt, g_tok, g_prompt, g_opts);
        } else if (exp->parsed()) {
            if (!exp_rerun.empty()) {
                RerunResult r = rerun_case(exp_rerun);
                if (out.empty()) {
                    std::cout << r.curve_csv;
                } else {
                    write_text_file(out, r.curve_csv);
                    say("rerun curve written to " + out);
                }
                return 0;
            }
            if (out.empty()) throw ConfigError("experiment: --out <dir> is required");
            ExperimentConfig cfg;
            if (!config_path.empty()) cfg = experiment_config_from_toml(parse_toml_file(config_path));
            // flags override the config file
            if (app.count("--seed")) cfg.seed = seed;
            if (app.count("--threads")) cfg.threads = threads;
            if (app.count("--float-mode")) cfg.float_mode = float_mode;
            try {
                auto outcome = run_experiment(cfg, out);
                say("experiment complete: " + std::to_string(outcome.curves_a.size()) + " A / " +
                    std::to_string(outcome.curves_b.size()) + " B curves in " + out);
                for (const auto& f : outcome.failures)
                    std::cerr << "case failed: scenario " << f.scenario << " n=" << f.case_labels
                              << ": " << f.error << "\n";
                return outcome.failures.empty() ? 0 : 2;
            } catch (...) {
                mark_failed(out, "experiment failed");
                throw;
            }
        } else if (rep->parsed()) {
            auto curves_a = curves_from_dir(fs::path(rep_dir) / "scenario_a");
            auto curves_b = curves_from_dir(fs::path(rep_dir) / "scenario_b");
            if (curves_a.empty() && curves_b.empty())
                throw Error("report: no case curves under " + rep_dir);
            report(curves_a, curves_b, rep_dir, rep_tau);
            say("report written under " + rep_dir);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 0;
}
