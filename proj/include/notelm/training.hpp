#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "notelm/corpus.hpp"
#include "notelm/model.hpp"
#include "notelm/optim.hpp"
#include "notelm/tokenizer.hpp"

namespace notelm {

enum class LossExtent { FullSequence, LabelOnly };

inline std::string to_string(LossExtent e) {
    return e == LossExtent::FullSequence ? "full_sequence" : "label_only";
}

inline LossExtent loss_extent_from_string(const std::string& s) {
    if (s == "full_sequence") return LossExtent::FullSequence;
    if (s == "label_only") return LossExtent::LabelOnly;
    throw ConfigError("unknown loss_extent \"" + s + "\"");
}

struct TrainConfig {
    double learning_rate = 2.5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double grad_clip = 1.0;  // global-norm cap; <= 0 disables
    size_t batch_size = 1;   // 1 matches the source protocol
    size_t max_iterations = 0;
    std::vector<size_t> eval_at;  // iterations at which eval_hook fires
    uint64_t seed = 0;
    LossExtent loss_extent = LossExtent::FullSequence;
    bool cosine_lr = false;

    nlohmann::json to_json() const {
        return {{"learning_rate", learning_rate},
                {"beta1", beta1},
                {"beta2", beta2},
                {"epsilon", epsilon},
                {"grad_clip", grad_clip},
                {"batch_size", batch_size},
                {"max_iterations", max_iterations},
                {"eval_at", eval_at},
                {"seed", seed},
                {"loss_extent", to_string(loss_extent)},
                {"cosine_lr", cosine_lr}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.learning_rate = j.at("learning_rate").get<double>();
        c.beta1 = j.at("beta1").get<double>();
        c.beta2 = j.at("beta2").get<double>();
        c.epsilon = j.at("epsilon").get<double>();
        c.grad_clip = j.at("grad_clip").get<double>();
        c.batch_size = j.at("batch_size").get<size_t>();
        c.max_iterations = j.at("max_iterations").get<size_t>();
        c.eval_at = j.at("eval_at").get<std::vector<size_t>>();
        c.seed = j.at("seed").get<uint64_t>();
        c.loss_extent = loss_extent_from_string(j.at("loss_extent").get<std::string>());
        c.cosine_lr = j.at("cosine_lr").get<bool>();
        return c;
    }
};

struct TrainingExample {
    std::vector<TokenId> ids;
    std::vector<uint8_t> loss_mask;  // weight of predicting ids[t] at position t-1
    std::string source_id;

    void validate() const {
        if (ids.size() < 2) throw Error("TrainingExample: need at least 2 tokens");
        if (loss_mask.size() != ids.size())
            throw Error("TrainingExample: mask length must equal ids length");
        bool any = false;
        for (size_t i = 0; i + 1 < loss_mask.size(); ++i) any = any || loss_mask[i] != 0;
        if (!any) throw Error("TrainingExample: no position weighted");
    }
};

// Self-supervised stream: note tokens plus EOT. Notes longer than the context
// are covered by overlapping windows (stride = context/2, final window clipped
// to the end), every position weighted.
inline std::vector<TrainingExample> make_pretrain_examples(const ClinicalNote& note,
                                                           const TokenizerState& tokenizer,
                                                           size_t context_len) {
    if (note.text.empty()) throw Error("make_pretrain_examples: empty note text");
    std::vector<TokenId> ids = tokenizer.encode(note.text);
    ids.push_back(tokenizer.eot_id());

    std::vector<TrainingExample> out;
    if (ids.size() <= context_len) {
        TrainingExample ex{ids, std::vector<uint8_t>(ids.size(), 1), note.id};
        ex.validate();
        out.push_back(std::move(ex));
        return out;
    }
    const size_t stride = std::max<size_t>(1, context_len / 2);
    size_t start = 0;
    for (;;) {
        size_t end = std::min(start + context_len, ids.size());
        TrainingExample ex;
        ex.ids.assign(ids.begin() + static_cast<ptrdiff_t>(start),
                      ids.begin() + static_cast<ptrdiff_t>(end));
        ex.loss_mask.assign(ex.ids.size(), 1);
        ex.source_id = note.id + "@" + std::to_string(start);
        ex.validate();
        out.push_back(std::move(ex));
        if (end == ids.size()) break;
        start += stride;
    }
    return out;
}

// Supervised example: note suffixed with [MARKER, LABEL]. Long notes are
// truncated from the front so the marker scheme is always intact.
inline TrainingExample make_finetune_example(const ClinicalNote& note,
                                             const TokenizerState& tokenizer,
                                             size_t context_len,
                                             LossExtent extent = LossExtent::FullSequence) {
    if (!note.label ||
        (*note.label != TraumaLabel::Trauma && *note.label != TraumaLabel::NonTrauma))
        throw Error("make_finetune_example: note \"" + note.id + "\" is not labeled");
    if (context_len < 2) throw Error("make_finetune_example: context_len must be >= 2");

    std::vector<TokenId> ids = tokenizer.encode(note.text);
    const size_t keep = context_len - 2;
    if (ids.size() > keep) ids.erase(ids.begin(), ids.begin() + static_cast<ptrdiff_t>(ids.size() - keep));
    ids.push_back(tokenizer.marker_id());
    ids.push_back(*note.label == TraumaLabel::Trauma ? tokenizer.label1_id()
                                                     : tokenizer.label0_id());

    TrainingExample ex;
    ex.ids = std::move(ids);
    ex.source_id = note.id;
    if (extent == LossExtent::FullSequence) {
        ex.loss_mask.assign(ex.ids.size(), 1);
    } else {
        ex.loss_mask.assign(ex.ids.size(), 0);
        ex.loss_mask[ex.ids.size() - 2] = 1;  // the position that predicts the label
    }
    ex.validate();
    return ex;
}

template <typename T>
struct TrainResult {
    std::vector<std::pair<size_t, double>> loss_trace;
    bool interrupted = false;
};

template <typename T>
using EvalHook = std::function<void(size_t iteration, const ModelParams<T>&)>;

// builds the masked LM loss for one example on a fresh tape
template <typename T>
typename Tape<T>::Var example_loss(Tape<T>& tape, ModelGraph<T>& graph,
                                   const TrainingExample& ex) {
    auto hidden = graph.hidden(ex.ids);
    size_t tpos = ex.ids.size() - 1;  // positions 0..tpos-1 predict ids[1..tpos]
    auto logits = graph.logits(tape.slice_rows(hidden, 0, tpos));
    std::vector<int32_t> targets(ex.ids.begin() + 1, ex.ids.end());
    std::vector<T> weights(tpos);
    for (size_t i = 0; i < tpos; ++i) weights[i] = static_cast<T>(ex.loss_mask[i]);
    return tape.cross_entropy(logits, std::move(targets), std::move(weights));
}

// One iteration = one example at batch_size 1 (larger batches accumulate
// gradients before the step). Examples replay in epoch order, reshuffled per
// epoch; everything is a pure function of (params, examples, config) in f64.
template <typename T>
TrainResult<T> train(ModelParams<T>& params, const std::vector<TrainingExample>& examples,
                     const TrainConfig& cfg, const EvalHook<T>& eval_hook = nullptr) {
    if (cfg.max_iterations > 0 && examples.empty())
        throw Error("train: no examples");
    if (cfg.batch_size == 0) throw Error("train: batch_size must be positive");
    for (const auto& ex : examples) ex.validate();

    Adam<T> adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    std::vector<Tensor<T>*> param_ptrs;
    params.for_each([&](const std::string&, Tensor<T>& t) { param_ptrs.push_back(&t); });

    TrainResult<T> result;
    result.loss_trace.reserve(cfg.max_iterations);

    std::vector<size_t> order(examples.size());
    size_t cursor = order.size();  // forces a shuffle on first use
    size_t epoch = 0;

    size_t next_eval = 0;
    std::vector<size_t> eval_at = cfg.eval_at;
    std::sort(eval_at.begin(), eval_at.end());
    eval_at.erase(std::unique(eval_at.begin(), eval_at.end()), eval_at.end());

    std::vector<Tensor<T>> grad_accum;
    Rng dropout_rng(derive_seed(cfg.seed, "dropout"));

    for (size_t iter = 1; iter <= cfg.max_iterations; ++iter) {
        if (interrupt_flag().load()) {
            result.interrupted = true;
            break;
        }
        if (cfg.cosine_lr)
            adam.set_learning_rate(cfg.learning_rate * 0.5 *
                                   (1.0 + std::cos(3.141592653589793 *
                                                   static_cast<double>(iter - 1) /
                                                   static_cast<double>(cfg.max_iterations))));
        double batch_loss = 0.0;
        std::vector<Tensor<T>*> grads;
        for (size_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                for (size_t i = 0; i < order.size(); ++i) order[i] = i;
                Rng erng(derive_seed(cfg.seed, "epoch-" + std::to_string(epoch)));
                erng.shuffle(order);
                cursor = 0;
                ++epoch;
            }
            const TrainingExample& ex = examples[order[cursor++]];

            Tape<T> tape;
            ModelGraph<T> graph(tape, params, /*track_grads=*/true,
                                params.config.dropout > 0.0 ? &dropout_rng : nullptr);
            auto loss = example_loss(tape, graph, ex);
            double loss_val = static_cast<double>(tape.value(loss).data[0]);
            if (!std::isfinite(loss_val))
                throw Error("train: non-finite loss at iteration " + std::to_string(iter) +
                            " on example \"" + ex.source_id + "\"");
            batch_loss += loss_val;
            tape.backward(loss);

            if (cfg.batch_size == 1) {
                grads.clear();
                const auto& vars = graph.param_vars();
                for (size_t i = 0; i < vars.size(); ++i)
                    grads.push_back(&tape.grad_mut(vars[i]));
                if (cfg.grad_clip > 0.0) clip_global_norm(grads, cfg.grad_clip);
                adam.step(param_ptrs, grads);
            } else {
                if (grad_accum.empty()) {
                    for (auto* p : param_ptrs) grad_accum.push_back(Tensor<T>::zeros(p->shape));
                }
                const auto& vars = graph.param_vars();
                for (size_t i = 0; i < vars.size(); ++i) {
                    const auto& g = tape.grad(vars[i]);
                    for (size_t j = 0; j < g.numel(); ++j) grad_accum[i].data[j] += g.data[j];
                }
            }
        }
        if (cfg.batch_size > 1) {
            T inv = static_cast<T>(1.0 / static_cast<double>(cfg.batch_size));
            grads.clear();
            for (auto& g : grad_accum) {
                for (auto& v : g.data) v *= inv;
                grads.push_back(&g);
            }
            if (cfg.grad_clip > 0.0) clip_global_norm(grads, cfg.grad_clip);
            adam.step(param_ptrs, grads);
            for (auto& g : grad_accum)
                std::fill(g.data.begin(), g.data.end(), T{});
        }
        params.step += 1;
        result.loss_trace.emplace_back(iter, batch_loss / static_cast<double>(cfg.batch_size));

        while (next_eval < eval_at.size() && eval_at[next_eval] < iter) ++next_eval;
        if (eval_hook && next_eval < eval_at.size() && eval_at[next_eval] == iter) {
            eval_hook(iter, params);
            ++next_eval;
        }
    }
    return result;
}

// composition: sliding-window examples over unlabeled notes, then train
template <typename T>
TrainResult<T> pretrain(ModelParams<T>& params, const std::vector<ClinicalNote>& notes,
                        const TokenizerState& tokenizer, const TrainConfig& cfg,
                        const EvalHook<T>& eval_hook = nullptr) {
    std::vector<TrainingExample> examples;
    for (const auto& n : notes) {
        auto ex = make_pretrain_examples(n, tokenizer, params.config.context_len);
        for (auto& e : ex) examples.push_back(std::move(e));
    }
    return train(params, examples, cfg, eval_hook);
}

// composition: marker-scheme examples over labeled notes, then train
template <typename T>
TrainResult<T> finetune(ModelParams<T>& params, const std::vector<ClinicalNote>& notes,
                        const TokenizerState& tokenizer, const TrainConfig& cfg,
                        const EvalHook<T>& eval_hook = nullptr) {
    std::vector<TrainingExample> examples;
    examples.reserve(notes.size());
    for (const auto& n : notes)
        examples.push_back(
            make_finetune_example(n, tokenizer, params.config.context_len, cfg.loss_extent));
    return train(params, examples, cfg, eval_hook);
}

inline std::string loss_trace_to_csv(const std::vector<std::pair<size_t, double>>& trace) {
    std::string out = "iteration,loss\n";
    for (const auto& [it, loss] : trace) {
        out += std::to_string(it);
        out += ',';
        out += format_double(loss);
        out += '\n';
    }
    return out;
}

}  // namespace notelm
