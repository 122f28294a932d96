#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "notelm/autodiff.hpp"
#include "notelm/common.hpp"
#include "notelm/tensor.hpp"
#include "notelm/tokenizer.hpp"

namespace notelm {

struct ModelConfig {
    size_t vocab_size = 0;
    size_t context_len = 256;
    size_t n_layers = 4;
    size_t n_heads = 4;
    size_t d_model = 128;
    size_t d_mlp = 0;  // 0 means 4 * d_model
    double dropout = 0.0;
    uint64_t seed = 0;

    size_t mlp_width() const { return d_mlp ? d_mlp : 4 * d_model; }
    size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (vocab_size == 0) throw ConfigError("model: vocab_size must be set");
        if (context_len < 2) throw ConfigError("model: context_len must be at least 2");
        if (n_layers == 0 || n_heads == 0 || d_model == 0)
            throw ConfigError("model: layers/heads/width must be positive");
        if (d_model % n_heads != 0)
            throw ConfigError("model: d_model (" + std::to_string(d_model) +
                              ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
    }

    // full-scale GPT-2 shapes exist as named presets; defaults stay desk-scale
    static ModelConfig preset(const std::string& name, size_t vocab_size, uint64_t seed = 0) {
        ModelConfig c;
        c.vocab_size = vocab_size;
        c.seed = seed;
        if (name == "desk") {
            // defaults already desk-scale
        } else if (name == "gpt2-117m") {
            c.context_len = 1024;
            c.n_layers = 12;
            c.n_heads = 12;
            c.d_model = 768;
        } else if (name == "gpt2-345m") {
            c.context_len = 1024;
            c.n_layers = 24;
            c.n_heads = 16;
            c.d_model = 1024;
        } else {
            throw ConfigError("unknown model preset \"" + name + "\"");
        }
        return c;
    }

    nlohmann::json to_json() const {
        return {{"vocab_size", vocab_size}, {"context_len", context_len},
                {"n_layers", n_layers},     {"n_heads", n_heads},
                {"d_model", d_model},       {"d_mlp", d_mlp},
                {"dropout", dropout},       {"seed", seed}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.vocab_size = j.at("vocab_size").get<size_t>();
        c.context_len = j.at("context_len").get<size_t>();
        c.n_layers = j.at("n_layers").get<size_t>();
        c.n_heads = j.at("n_heads").get<size_t>();
        c.d_model = j.at("d_model").get<size_t>();
        c.d_mlp = j.at("d_mlp").get<size_t>();
        c.dropout = j.at("dropout").get<double>();
        c.seed = j.at("seed").get<uint64_t>();
        c.validate();
        return c;
    }

    bool operator==(const ModelConfig&) const = default;
};

// GPT-2-shaped decoder: token + learned position embeddings, pre-norm blocks
// of masked multi-head attention and a GELU MLP, final norm, and an output
// projection tied to the token embedding.
template <typename T>
struct ModelParams {
    struct Block {
        Tensor<T> ln1_g, ln1_b;
        Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor<T> ln2_g, ln2_b;
        Tensor<T> w1, b1, w2, b2;
    };

    ModelConfig config;
    Tensor<T> wte;  // [vocab, d]; also the transposed output projection
    Tensor<T> wpe;  // [context, d]
    std::vector<Block> blocks;
    Tensor<T> lnf_g, lnf_b;
    uint64_t step = 0;

    template <typename Fn>
    void for_each(Fn&& fn) {
        fn("wte", wte);
        fn("wpe", wpe);
        for (size_t l = 0; l < blocks.size(); ++l) {
            auto& b = blocks[l];
            std::string p = "h" + std::to_string(l) + ".";
            fn(p + "ln1_g", b.ln1_g);
            fn(p + "ln1_b", b.ln1_b);
            fn(p + "wq", b.wq);
            fn(p + "bq", b.bq);
            fn(p + "wk", b.wk);
            fn(p + "bk", b.bk);
            fn(p + "wv", b.wv);
            fn(p + "bv", b.bv);
            fn(p + "wo", b.wo);
            fn(p + "bo", b.bo);
            fn(p + "ln2_g", b.ln2_g);
            fn(p + "ln2_b", b.ln2_b);
            fn(p + "w1", b.w1);
            fn(p + "b1", b.b1);
            fn(p + "w2", b.w2);
            fn(p + "b2", b.b2);
        }
        fn("lnf_g", lnf_g);
        fn("lnf_b", lnf_b);
    }

    template <typename Fn>
    void for_each(Fn&& fn) const {
        const_cast<ModelParams*>(this)->for_each(
            [&](const std::string& name, Tensor<T>& t) { fn(name, const_cast<const Tensor<T>&>(t)); });
    }

    size_t param_count() const {
        size_t n = 0;
        for_each([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
        return n;
    }
};

template <typename T>
ModelParams<T> init_params(const ModelConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, "model-init"));
    const size_t d = config.d_model, dm = config.mlp_width();
    const double std_base = 0.02;
    // projections feeding the residual stream start smaller, per GPT-2
    const double std_resid = std_base / std::sqrt(2.0 * static_cast<double>(config.n_layers));

    ModelParams<T> p;
    p.config = config;
    p.wte = Tensor<T>::randn({config.vocab_size, d}, rng, std_base);
    p.wpe = Tensor<T>::randn({config.context_len, d}, rng, std_base);
    p.blocks.resize(config.n_layers);
    for (auto& b : p.blocks) {
        b.ln1_g = Tensor<T>::full({d}, static_cast<T>(1));
        b.ln1_b = Tensor<T>::zeros({d});
        b.wq = Tensor<T>::randn({d, d}, rng, std_base);
        b.bq = Tensor<T>::zeros({d});
        b.wk = Tensor<T>::randn({d, d}, rng, std_base);
        b.bk = Tensor<T>::zeros({d});
        b.wv = Tensor<T>::randn({d, d}, rng, std_base);
        b.bv = Tensor<T>::zeros({d});
        b.wo = Tensor<T>::randn({d, d}, rng, std_resid);
        b.bo = Tensor<T>::zeros({d});
        b.ln2_g = Tensor<T>::full({d}, static_cast<T>(1));
        b.ln2_b = Tensor<T>::zeros({d});
        b.w1 = Tensor<T>::randn({d, dm}, rng, std_base);
        b.b1 = Tensor<T>::zeros({dm});
        b.w2 = Tensor<T>::randn({dm, d}, rng, std_resid);
        b.b2 = Tensor<T>::zeros({d});
    }
    p.lnf_g = Tensor<T>::full({d}, static_cast<T>(1));
    p.lnf_b = Tensor<T>::zeros({d});
    return p;
}

// 0 on and below the diagonal, -inf above: position t sees only positions <= t
template <typename T>
std::shared_ptr<const Tensor<T>> causal_mask(size_t len) {
    static thread_local std::unordered_map<size_t, std::shared_ptr<const Tensor<T>>> cache;
    auto it = cache.find(len);
    if (it != cache.end()) return it->second;
    auto mask = std::make_shared<Tensor<T>>(std::vector<size_t>{len, len});
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (size_t i = 0; i < len; ++i)
        for (size_t j = i + 1; j < len; ++j) mask->data[i * len + j] = neg_inf;
    cache[len] = mask;
    return mask;
}

// Builds the forward graph for one sequence on a tape. Parameters become tape
// leaves once per graph; the training loop reads their gradients back through
// param_vars() in for_each order.
template <typename T>
class ModelGraph {
public:
    using Var = typename Tape<T>::Var;

    ModelGraph(Tape<T>& tape, const ModelParams<T>& params, bool track_grads,
               Rng* dropout_rng = nullptr)
        : tape_(tape), config_(params.config), dropout_rng_(dropout_rng) {
        params.for_each([&](const std::string&, const Tensor<T>& t) {
            param_vars_.push_back(tape_.leaf(t, track_grads));
        });
        size_t i = 0;
        wte_ = param_vars_[i++];
        wpe_ = param_vars_[i++];
        blocks_.resize(config_.n_layers);
        for (auto& b : blocks_) {
            b.ln1_g = param_vars_[i++];
            b.ln1_b = param_vars_[i++];
            b.wq = param_vars_[i++];
            b.bq = param_vars_[i++];
            b.wk = param_vars_[i++];
            b.bk = param_vars_[i++];
            b.wv = param_vars_[i++];
            b.bv = param_vars_[i++];
            b.wo = param_vars_[i++];
            b.bo = param_vars_[i++];
            b.ln2_g = param_vars_[i++];
            b.ln2_b = param_vars_[i++];
            b.w1 = param_vars_[i++];
            b.b1 = param_vars_[i++];
            b.w2 = param_vars_[i++];
            b.b2 = param_vars_[i++];
        }
        lnf_g_ = param_vars_[i++];
        lnf_b_ = param_vars_[i++];
    }

    // final-norm hidden states [len, d_model]
    Var hidden(const std::vector<TokenId>& ids) {
        const size_t len = ids.size();
        if (len == 0) throw Error("model forward: empty input");
        if (len > config_.context_len)
            throw Error("model forward: sequence length " + std::to_string(len) +
                        " exceeds context_len " + std::to_string(config_.context_len) +
                        "; caller must truncate");
        for (TokenId id : ids)
            if (id < 0 || static_cast<size_t>(id) >= config_.vocab_size)
                throw Error("model forward: token id " + std::to_string(id) +
                            " outside vocab of " + std::to_string(config_.vocab_size));

        std::vector<int32_t> positions(len);
        for (size_t i = 0; i < len; ++i) positions[i] = static_cast<int32_t>(i);

        Var x = tape_.add(tape_.embedding(wte_, std::vector<int32_t>(ids.begin(), ids.end())),
                          tape_.embedding(wpe_, positions));
        x = maybe_dropout(x);

        auto mask = causal_mask<T>(len);
        const size_t n_heads = config_.n_heads;
        const size_t hd = config_.head_dim();
        const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

        for (const auto& b : blocks_) {
            Var a = tape_.layer_norm(x, b.ln1_g, b.ln1_b);
            Var q = tape_.add(tape_.matmul(a, b.wq), b.bq);
            Var k = tape_.add(tape_.matmul(a, b.wk), b.bk);
            Var v = tape_.add(tape_.matmul(a, b.wv), b.bv);
            std::vector<Var> heads;
            heads.reserve(n_heads);
            for (size_t h = 0; h < n_heads; ++h) {
                Var qh = tape_.slice_cols(q, h * hd, (h + 1) * hd);
                Var kh = tape_.slice_cols(k, h * hd, (h + 1) * hd);
                Var vh = tape_.slice_cols(v, h * hd, (h + 1) * hd);
                Var scores = tape_.scale(tape_.matmul_nt(qh, kh), att_scale);
                Var probs = tape_.masked_softmax(scores, mask);
                heads.push_back(tape_.matmul(probs, vh));
            }
            Var att = tape_.add(tape_.matmul(tape_.concat_cols(heads), b.wo), b.bo);
            x = tape_.add(x, maybe_dropout(att));

            Var m = tape_.layer_norm(x, b.ln2_g, b.ln2_b);
            Var ff = tape_.gelu(tape_.add(tape_.matmul(m, b.w1), b.b1));
            Var mlp = tape_.add(tape_.matmul(ff, b.w2), b.b2);
            x = tape_.add(x, maybe_dropout(mlp));
        }
        return tape_.layer_norm(x, lnf_g_, lnf_b_);
    }

    // weight-tied projection to vocabulary logits
    Var logits(Var hidden_states) { return tape_.matmul_nt(hidden_states, wte_); }

    // logits for the final position only, [1, vocab]
    Var last_logits(Var hidden_states) {
        size_t len = tape_.value(hidden_states).shape[0];
        return tape_.matmul_nt(tape_.slice_rows(hidden_states, len - 1, len), wte_);
    }

    const std::vector<Var>& param_vars() const { return param_vars_; }

private:
    Var maybe_dropout(Var v) {
        if (config_.dropout > 0.0 && dropout_rng_)
            return tape_.dropout(v, config_.dropout, *dropout_rng_);
        return v;
    }

    struct BlockVars {
        Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };

    Tape<T>& tape_;
    ModelConfig config_;
    Rng* dropout_rng_;
    std::vector<Var> param_vars_;
    Var wte_, wpe_;
    std::vector<BlockVars> blocks_;
    Var lnf_g_, lnf_b_;
};

// one-shot forward: logits [len, vocab] for a token sequence
template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const std::vector<TokenId>& ids) {
    Tape<T> tape;
    ModelGraph<T> graph(tape, params, /*track_grads=*/false);
    return tape.value(graph.logits(graph.hidden(ids)));
}

template <typename T>
Tensor<T> forward_last(const ModelParams<T>& params, const std::vector<TokenId>& ids) {
    Tape<T> tape;
    ModelGraph<T> graph(tape, params, /*track_grads=*/false);
    return tape.value(graph.last_logits(graph.hidden(ids)));
}

// --- checkpoints -----------------------------------------------------------------
//
// Self-describing binary: magic "MGCK", u32 version, u64 header length, JSON
// header (config, tokenizer hash, step, tensor directory), then tensor
// payloads as little-endian f64 in directory order. Payloads are stored as
// f64 regardless of the run's float mode so reloads are bit-exact.

namespace detail {

inline constexpr char kCkptMagic[4] = {'M', 'G', 'C', 'K'};
inline constexpr uint32_t kCkptVersion = 1;

}  // namespace detail

template <typename T>
void save_checkpoint(const ModelParams<T>& params, uint64_t tokenizer_hash,
                     const std::string& path) {
    nlohmann::json tensors = nlohmann::json::array();
    params.for_each([&](const std::string& name, const Tensor<T>& t) {
        tensors.push_back({{"name", name}, {"shape", t.shape}});
    });
    nlohmann::json header{{"config", params.config.to_json()},
                          {"tokenizer_hash", hex64(tokenizer_hash)},
                          {"step", params.step},
                          {"float_mode", sizeof(T) == 8 ? "f64" : "f32"},
                          {"tensors", tensors}};
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write(detail::kCkptMagic, 4);
    uint32_t version = detail::kCkptVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    std::vector<double> buf;
    params.for_each([&](const std::string&, const Tensor<T>& t) {
        buf.resize(t.numel());
        for (size_t i = 0; i < t.numel(); ++i) buf[i] = static_cast<double>(t.data[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(double)));
    });
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

struct CheckpointInfo {
    ModelConfig config;
    uint64_t tokenizer_hash = 0;
    uint64_t step = 0;
    std::string float_mode;
};

template <typename T>
std::pair<ModelParams<T>, CheckpointInfo> load_checkpoint(
    const std::string& path, std::optional<uint64_t> expected_tokenizer_hash = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, detail::kCkptMagic, 4) != 0)
        throw IoError("load_checkpoint: " + path + " is not a checkpoint file");
    uint32_t version = 0;
    if (!in.read(reinterpret_cast<char*>(&version), sizeof(version)) ||
        version != detail::kCkptVersion)
        throw IoError("load_checkpoint: unsupported version in " + path);
    uint64_t hlen = 0;
    if (!in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen)) || hlen == 0 ||
        hlen > (uint64_t{1} << 24))
        throw IoError("load_checkpoint: corrupt header length in " + path);
    std::string hs(hlen, '\0');
    if (!in.read(hs.data(), static_cast<std::streamsize>(hlen)))
        throw IoError("load_checkpoint: truncated header in " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_checkpoint: corrupt header in " + path + ": " + e.what());
    }

    CheckpointInfo info;
    info.config = ModelConfig::from_json(header.at("config"));
    info.step = header.at("step").get<uint64_t>();
    info.float_mode = header.at("float_mode").get<std::string>();
    std::string hash_hex = header.at("tokenizer_hash").get<std::string>();
    info.tokenizer_hash = std::stoull(hash_hex, nullptr, 16);
    if (expected_tokenizer_hash && *expected_tokenizer_hash != info.tokenizer_hash)
        throw Error("load_checkpoint: tokenizer hash mismatch (checkpoint " + hash_hex +
                    ", supplied " + hex64(*expected_tokenizer_hash) +
                    "); refusing to mix vocabularies");

    ModelParams<T> params = init_params<T>(info.config);
    params.step = info.step;
    const auto& tensors = header.at("tensors");
    size_t idx = 0;
    std::vector<double> buf;
    bool ok = true;
    params.for_each([&](const std::string& name, Tensor<T>& t) {
        if (!ok) return;
        if (idx >= tensors.size()) {
            ok = false;
            return;
        }
        const auto& entry = tensors[idx++];
        if (entry.at("name").get<std::string>() != name ||
            entry.at("shape").get<std::vector<size_t>>() != t.shape) {
            ok = false;
            return;
        }
        buf.resize(t.numel());
        if (!in.read(reinterpret_cast<char*>(buf.data()),
                     static_cast<std::streamsize>(buf.size() * sizeof(double)))) {
            ok = false;
            return;
        }
        for (size_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<T>(buf[i]);
    });
    if (!ok || idx != tensors.size())
        throw IoError("load_checkpoint: truncated or inconsistent payload in " + path);
    return {std::move(params), info};
}

}  // namespace notelm
