#pragma once

#include <cmath>
#include <vector>

#include "notelm/tensor.hpp"

namespace notelm {

// scales gradients in place so their global L2 norm is at most `max_norm`;
// returns the pre-clip norm
template <typename T>
double clip_global_norm(std::vector<Tensor<T>*>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto* g : grads)
        for (T v : g->data) sq += static_cast<double>(v) * static_cast<double>(v);
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        T s = static_cast<T>(max_norm / norm);
        for (auto* g : grads)
            for (T& v : g->data) v *= s;
    }
    return norm;
}

template <typename T>
class Adam {
public:
    Adam(double learning_rate = 2.5e-4, double beta1 = 0.9, double beta2 = 0.999,
         double epsilon = 1e-8)
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    uint64_t steps() const { return t_; }

    // params and grads aligned element-for-element; moment buffers are lazily
    // shaped on the first step
    void step(std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>*>& grads) {
        if (params.size() != grads.size()) throw Error("Adam::step: params/grads mismatch");
        if (m_.empty()) {
            for (auto* p : params) {
                m_.push_back(Tensor<T>::zeros(p->shape));
                v_.push_back(Tensor<T>::zeros(p->shape));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i]->data;
            const auto& g = grads[i]->data;
            auto& m = m_[i].data;
            auto& v = v_[i].data;
            if (p.size() != g.size()) throw Error("Adam::step: grad shape mismatch");
            for (size_t j = 0; j < p.size(); ++j) {
                double gj = static_cast<double>(g[j]);
                double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * gj;
                double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * gj * gj;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                double m_hat = mj / bc1;
                double v_hat = vj / bc2;
                p[j] = static_cast<T>(static_cast<double>(p[j]) -
                                      lr_ * m_hat / (std::sqrt(v_hat) + eps_));
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    uint64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace notelm
