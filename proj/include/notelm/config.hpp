#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "notelm/common.hpp"
#include "notelm/model.hpp"
#include "notelm/training.hpp"

namespace notelm {

// --- TOML-style config parser -----------------------------------------------
//
// Sections of key = value pairs; values are integers, floats, booleans,
// quoted strings, or flat arrays of integers/strings. Enough for experiment
// configs without pulling in a full TOML implementation.

using TomlValue =
    std::variant<int64_t, double, bool, std::string, std::vector<int64_t>, std::vector<std::string>>;

using TomlTable = std::map<std::string, std::map<std::string, TomlValue>>;

namespace detail {

inline std::string toml_trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline TomlValue toml_scalar(const std::string& raw, size_t line_no) {
    std::string v = toml_trim(raw);
    if (v.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw ConfigError("config line " + std::to_string(line_no) + ": unterminated string");
        return v.substr(1, v.size() - 2);
    }
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.find_first_of(".eE") != std::string::npos &&
        v.find_first_not_of("+-0123456789.eE") == std::string::npos) {
        try {
            return std::stod(v);
        } catch (...) {
            throw ConfigError("config line " + std::to_string(line_no) + ": bad number \"" + v + "\"");
        }
    }
    try {
        size_t used = 0;
        int64_t n = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (...) {
        throw ConfigError("config line " + std::to_string(line_no) + ": bad value \"" + v + "\"");
    }
}

}  // namespace detail

inline TomlTable parse_toml(std::istream& in) {
    TomlTable table;
    std::string section;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        // strip comments outside quotes
        bool quoted = false;
        for (size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        std::string t = detail::toml_trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
            section = detail::toml_trim(t.substr(1, t.size() - 2));
            if (section.empty())
                throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
            table[section];
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = detail::toml_trim(t.substr(0, eq));
        std::string val = detail::toml_trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        if (!val.empty() && val.front() == '[') {
            if (val.back() != ']')
                throw ConfigError("config line " + std::to_string(line_no) + ": unterminated array");
            std::string body = val.substr(1, val.size() - 2);
            std::vector<TomlValue> items;
            std::string cur;
            bool q = false;
            for (char c : body) {
                if (c == '"') q = !q;
                if (c == ',' && !q) {
                    items.push_back(detail::toml_scalar(cur, line_no));
                    cur.clear();
                } else {
                    cur += c;
                }
            }
            if (!detail::toml_trim(cur).empty()) items.push_back(detail::toml_scalar(cur, line_no));
            if (items.empty()) {
                table[section][key] = std::vector<int64_t>{};
            } else if (std::holds_alternative<std::string>(items[0])) {
                std::vector<std::string> out;
                for (auto& it : items) out.push_back(std::get<std::string>(it));
                table[section][key] = out;
            } else {
                std::vector<int64_t> out;
                for (auto& it : items) {
                    if (!std::holds_alternative<int64_t>(it))
                        throw ConfigError("config line " + std::to_string(line_no) +
                                          ": arrays must hold integers or strings");
                    out.push_back(std::get<int64_t>(it));
                }
                table[section][key] = out;
            }
        } else {
            table[section][key] = detail::toml_scalar(val, line_no);
        }
    }
    return table;
}

inline TomlTable parse_toml_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path);
    return parse_toml(in);
}

// --- Experiment configuration ---------------------------------------------------

struct ExperimentConfig {
    // experiment
    uint64_t seed = 1;
    std::string float_mode = "f32";  // f32 | f64
    int threads = 1;
    double target_tau = 0.95;
    std::vector<std::string> scenarios = {"A", "B"};

    // corpus: synthetic unless a path is given
    std::string corpus_path;
    std::string corpus_format = "jsonl";
    size_t corpus_n = 12000;
    double class_balance = 0.5;

    // split
    size_t test_size = 1000;
    size_t supervised_size = 2000;

    // tokenizer
    size_t merges = 1000;
    size_t tokenizer_train_cap = 8000;  // max notes fed to the BPE trainer

    // model (vocab_size filled from the tokenizer at run time)
    ModelConfig model = [] {
        ModelConfig c;
        c.context_len = 128;
        c.n_layers = 4;
        c.n_heads = 4;
        c.d_model = 64;
        return c;
    }();

    // pretrain
    size_t pretrain_iterations = 40000;
    double pretrain_lr = 2.5e-4;

    // finetune budgets: max(epochs * case, min_iterations) capped at max_iterations
    double finetune_lr = 2.5e-4;
    double grad_clip = 1.0;
    LossExtent loss_extent = LossExtent::FullSequence;
    size_t case_min_iterations = 3000;
    size_t case_epochs = 50;
    size_t case_max_iterations = 8000;

    // grid: explicit cases, or log-spaced lo..hi with n points
    std::vector<size_t> grid_cases = {20, 60, 200, 600, 2000};
    size_t grid_lo = 0, grid_hi = 0, grid_n = 0;

    // evaluation schedule: geometric from start, capped count
    size_t eval_start = 20;
    double eval_growth = 1.45;
    size_t eval_cap = 50;

    void validate() const {
        if (float_mode != "f32" && float_mode != "f64")
            throw ConfigError("experiment: float_mode must be f32 or f64");
        if (threads < 1) throw ConfigError("experiment: threads must be >= 1");
        for (const auto& s : scenarios)
            if (s != "A" && s != "B") throw ConfigError("experiment: scenarios must be A or B");
        if (corpus_path.empty() && corpus_n == 0)
            throw ConfigError("corpus: n must be positive for the synthetic corpus");
        if (merges == 0) throw ConfigError("tokenizer: merges must be positive");
    }
};

namespace detail {

template <typename T>
T toml_get(const TomlValue& v, const std::string& where);

template <>
inline int64_t toml_get<int64_t>(const TomlValue& v, const std::string& where) {
    if (!std::holds_alternative<int64_t>(v)) throw ConfigError(where + ": expected integer");
    return std::get<int64_t>(v);
}

template <>
inline double toml_get<double>(const TomlValue& v, const std::string& where) {
    if (std::holds_alternative<int64_t>(v)) return static_cast<double>(std::get<int64_t>(v));
    if (!std::holds_alternative<double>(v)) throw ConfigError(where + ": expected number");
    return std::get<double>(v);
}

template <>
inline bool toml_get<bool>(const TomlValue& v, const std::string& where) {
    if (!std::holds_alternative<bool>(v)) throw ConfigError(where + ": expected true/false");
    return std::get<bool>(v);
}

template <>
inline std::string toml_get<std::string>(const TomlValue& v, const std::string& where) {
    if (!std::holds_alternative<std::string>(v)) throw ConfigError(where + ": expected string");
    return std::get<std::string>(v);
}

inline size_t toml_size(const TomlValue& v, const std::string& where) {
    int64_t n = toml_get<int64_t>(v, where);
    if (n < 0) throw ConfigError(where + ": must be non-negative");
    return static_cast<size_t>(n);
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_toml(const TomlTable& table) {
    ExperimentConfig cfg;
    for (const auto& [section, kvs] : table) {
        for (const auto& [key, value] : kvs) {
            const std::string where = "[" + section + "] " + key;
            if (section == "experiment") {
                if (key == "seed") cfg.seed = static_cast<uint64_t>(detail::toml_get<int64_t>(value, where));
                else if (key == "float_mode") cfg.float_mode = detail::toml_get<std::string>(value, where);
                else if (key == "threads") cfg.threads = static_cast<int>(detail::toml_get<int64_t>(value, where));
                else if (key == "target_tau") cfg.target_tau = detail::toml_get<double>(value, where);
                else if (key == "scenarios") {
                    if (!std::holds_alternative<std::vector<std::string>>(value))
                        throw ConfigError(where + ": expected array of strings");
                    cfg.scenarios = std::get<std::vector<std::string>>(value);
                } else throw ConfigError(where + ": unknown key");
            } else if (section == "corpus") {
                if (key == "path") cfg.corpus_path = detail::toml_get<std::string>(value, where);
                else if (key == "format") cfg.corpus_format = detail::toml_get<std::string>(value, where);
                else if (key == "n") cfg.corpus_n = detail::toml_size(value, where);
                else if (key == "class_balance") cfg.class_balance = detail::toml_get<double>(value, where);
                else throw ConfigError(where + ": unknown key");
            } else if (section == "split") {
                if (key == "test_size") cfg.test_size = detail::toml_size(value, where);
                else if (key == "supervised_size") cfg.supervised_size = detail::toml_size(value, where);
                else throw ConfigError(where + ": unknown key");
            } else if (section == "tokenizer") {
                if (key == "merges") cfg.merges = detail::toml_size(value, where);
                else if (key == "train_cap") cfg.tokenizer_train_cap = detail::toml_size(value, where);
                else throw ConfigError(where + ": unknown key");
            } else if (section == "model") {
                if (key == "context_len") cfg.model.context_len = detail::toml_size(value, where);
                else if (key == "n_layers") cfg.model.n_layers = detail::toml_size(value, where);
                else if (key == "n_heads") cfg.model.n_heads = detail::toml_size(value, where);
                else if (key == "d_model") cfg.model.d_model = detail::toml_size(value, where);
                else if (key == "d_mlp") cfg.model.d_mlp = detail::toml_size(value, where);
                else if (key == "dropout") cfg.model.dropout = detail::toml_get<double>(value, where);
                else if (key == "preset") {
                    auto preset = ModelConfig::preset(detail::toml_get<std::string>(value, where), 1);
                    cfg.model.context_len = preset.context_len;
                    cfg.model.n_layers = preset.n_layers;
                    cfg.model.n_heads = preset.n_heads;
                    cfg.model.d_model = preset.d_model;
                } else throw ConfigError(where + ": unknown key");
            } else if (section == "pretrain") {
                if (key == "iterations") cfg.pretrain_iterations = detail::toml_size(value, where);
                else if (key == "learning_rate") cfg.pretrain_lr = detail::toml_get<double>(value, where);
                else throw ConfigError(where + ": unknown key");
            } else if (section == "finetune") {
                if (key == "learning_rate") cfg.finetune_lr = detail::toml_get<double>(value, where);
                else if (key == "grad_clip") cfg.grad_clip = detail::toml_get<double>(value, where);
                else if (key == "loss_extent")
                    cfg.loss_extent = loss_extent_from_string(detail::toml_get<std::string>(value, where));
                else if (key == "min_iterations") cfg.case_min_iterations = detail::toml_size(value, where);
                else if (key == "epochs") cfg.case_epochs = detail::toml_size(value, where);
                else if (key == "max_iterations") cfg.case_max_iterations = detail::toml_size(value, where);
                else throw ConfigError(where + ": unknown key");
            } else if (section == "grid") {
                if (key == "cases") {
                    if (!std::holds_alternative<std::vector<int64_t>>(value))
                        throw ConfigError(where + ": expected array of integers");
                    cfg.grid_cases.clear();
                    for (int64_t v : std::get<std::vector<int64_t>>(value)) {
                        if (v <= 0) throw ConfigError(where + ": cases must be positive");
                        cfg.grid_cases.push_back(static_cast<size_t>(v));
                    }
                } else if (key == "lo") cfg.grid_lo = detail::toml_size(value, where);
                else if (key == "hi") cfg.grid_hi = detail::toml_size(value, where);
                else if (key == "n") cfg.grid_n = detail::toml_size(value, where);
                else throw ConfigError(where + ": unknown key");
            } else if (section == "eval") {
                if (key == "start") cfg.eval_start = detail::toml_size(value, where);
                else if (key == "growth") cfg.eval_growth = detail::toml_get<double>(value, where);
                else if (key == "cap") cfg.eval_cap = detail::toml_size(value, where);
                else throw ConfigError(where + ": unknown key");
            } else {
                throw ConfigError("config: unknown section [" + section + "]");
            }
        }
    }
    cfg.validate();
    return cfg;
}

}  // namespace notelm
