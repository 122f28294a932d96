#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "notelm/tensor.hpp"

namespace notelm {

// Reverse-mode tape. Ops append nodes in creation order (which is a valid
// topological order), backward() walks them in reverse exactly once.
// Gradients accumulate, so a value used twice receives the sum of both paths.
template <typename T>
class Tape {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Var leaf(Tensor<T> value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, nullptr);
    }

    const Tensor<T>& value(Var v) const { return node(v).value; }

    const Tensor<T>& grad(Var v) const {
        const Node& n = node(v);
        if (!n.requires_grad) throw Error("grad: variable does not track gradients");
        if (n.grad.empty()) throw Error("grad: no gradient; call backward first");
        return n.grad;
    }

    // mutable access for in-place gradient clipping
    Tensor<T>& grad_mut(Var v) {
        return const_cast<Tensor<T>&>(static_cast<const Tape*>(this)->grad(v));
    }

    size_t size() const { return nodes_.size(); }

    // --- ops ---------------------------------------------------------------

    Var matmul(Var a, Var b) {
        const auto& A = value(a);
        const auto& B = value(b);
        if (A.ndim() != 2 || B.ndim() != 2 || A.shape[1] != B.shape[0])
            throw ShapeError("matmul: incompatible shapes " + A.shape_str() + " and " +
                             B.shape_str());
        size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
        Tensor<T> out({m, n});
        kern::matmul_nn(A.data.data(), B.data.data(), out.data.data(), m, k, n);
        return push(std::move(out), needs(a) || needs(b), [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            if (t.needs(a)) {
                // dA += dY x B^T
                kern::matmul_nt(dy.data.data(), t.value(b).data.data(),
                                t.grad_buf(a).data.data(), m, n, k);
            }
            if (t.needs(b)) {
                // dB += A^T x dY
                kern::matmul_tn(t.value(a).data.data(), dy.data.data(),
                                t.grad_buf(b).data.data(), k, m, n);
            }
        });
    }

    // a x b^T, with b stored row-major [n,k]; used for attention scores and
    // the weight-tied output projection
    Var matmul_nt(Var a, Var b) {
        const auto& A = value(a);
        const auto& B = value(b);
        if (A.ndim() != 2 || B.ndim() != 2 || A.shape[1] != B.shape[1])
            throw ShapeError("matmul_nt: incompatible shapes " + A.shape_str() + " and " +
                             B.shape_str());
        size_t m = A.shape[0], k = A.shape[1], n = B.shape[0];
        Tensor<T> out({m, n});
        kern::matmul_nt(A.data.data(), B.data.data(), out.data.data(), m, k, n);
        return push(std::move(out), needs(a) || needs(b), [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            if (t.needs(a)) {
                // dA += dY x B
                kern::matmul_nn(dy.data.data(), t.value(b).data.data(),
                                t.grad_buf(a).data.data(), m, n, k);
            }
            if (t.needs(b)) {
                // dB += dY^T x A
                kern::matmul_tn(dy.data.data(), t.value(a).data.data(),
                                t.grad_buf(b).data.data(), n, m, k);
            }
        });
    }

    // elementwise add; b may also be rank-1 [n] broadcast over the rows of a
    Var add(Var a, Var b) {
        const auto& A = value(a);
        const auto& B = value(b);
        bool broadcast = false;
        if (!A.same_shape(B)) {
            if (A.ndim() == 2 && B.ndim() == 1 && B.shape[0] == A.shape[1]) {
                broadcast = true;
            } else {
                throw ShapeError("add: incompatible shapes " + A.shape_str() + " and " +
                                 B.shape_str());
            }
        }
        Tensor<T> out = A;
        if (broadcast) {
            size_t m = A.shape[0], n = A.shape[1];
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) out.data[i * n + j] += B.data[j];
        } else {
            for (size_t i = 0; i < out.numel(); ++i) out.data[i] += B.data[i];
        }
        return push(std::move(out), needs(a) || needs(b), [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            if (t.needs(a)) {
                auto& da = t.grad_buf(a);
                for (size_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i];
            }
            if (t.needs(b)) {
                auto& db = t.grad_buf(b);
                if (broadcast) {
                    size_t m = dy.shape[0], n = dy.shape[1];
                    for (size_t i = 0; i < m; ++i)
                        for (size_t j = 0; j < n; ++j) db.data[j] += dy.data[i * n + j];
                } else {
                    for (size_t i = 0; i < dy.numel(); ++i) db.data[i] += dy.data[i];
                }
            }
        });
    }

    Var scale(Var a, T s) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v *= s;
        return push(std::move(out), needs(a), [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            auto& da = t.grad_buf(a);
            for (size_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i] * s;
        });
    }

    // tanh-approximation GELU, as in the GPT-2 reference
    Var gelu(Var a) {
        const auto& A = value(a);
        Tensor<T> out(A.shape);
        const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
        const T k3 = static_cast<T>(0.044715);
        for (size_t i = 0; i < A.numel(); ++i) {
            T x = A.data[i];
            T u = c * (x + k3 * x * x * x);
            out.data[i] = static_cast<T>(0.5) * x * (static_cast<T>(1) + std::tanh(u));
        }
        return push(std::move(out), needs(a), [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            const Tensor<T>& x = t.value(a);
            auto& da = t.grad_buf(a);
            for (size_t i = 0; i < x.numel(); ++i) {
                T xi = x.data[i];
                T u = c * (xi + k3 * xi * xi * xi);
                T th = std::tanh(u);
                T sech2 = static_cast<T>(1) - th * th;
                T du = c * (static_cast<T>(1) + static_cast<T>(3) * k3 * xi * xi);
                T d = static_cast<T>(0.5) * (static_cast<T>(1) + th) +
                      static_cast<T>(0.5) * xi * sech2 * du;
                da.data[i] += dy.data[i] * d;
            }
        });
    }

    // softmax over the last axis of a 2-D input after adding `mask`
    // (0 where visible, -inf where blocked). The row max is taken over the
    // masked values, so blocked entries are exact zeros in the output and
    // receive exactly zero gradient.
    Var masked_softmax(Var a, std::shared_ptr<const Tensor<T>> mask = nullptr) {
        const auto& A = value(a);
        if (A.ndim() != 2) throw ShapeError("masked_softmax: need 2-D input, got " + A.shape_str());
        if (mask && !mask->same_shape(A))
            throw ShapeError("masked_softmax: mask shape " + mask->shape_str() +
                             " does not match input " + A.shape_str());
        size_t m = A.shape[0], n = A.shape[1];
        Tensor<T> out({m, n});
        for (size_t i = 0; i < m; ++i) {
            const T* row = A.data.data() + i * n;
            const T* mrow = mask ? mask->data.data() + i * n : nullptr;
            T mx = -std::numeric_limits<T>::infinity();
            for (size_t j = 0; j < n; ++j) {
                T z = mrow ? row[j] + mrow[j] : row[j];
                if (z > mx) mx = z;
            }
            double sum = 0.0;
            T* orow = out.data.data() + i * n;
            for (size_t j = 0; j < n; ++j) {
                T z = mrow ? row[j] + mrow[j] : row[j];
                T e = std::exp(z - mx);
                orow[j] = e;
                sum += static_cast<double>(e);
            }
            T inv = static_cast<T>(1.0 / sum);
            for (size_t j = 0; j < n; ++j) orow[j] *= inv;
        }
        return push(std::move(out), needs(a), [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            const Tensor<T>& y = t.nodes_[self].value;
            auto& da = t.grad_buf(a);
            for (size_t i = 0; i < m; ++i) {
                const T* yrow = y.data.data() + i * n;
                const T* dyrow = dy.data.data() + i * n;
                double dot = 0.0;
                for (size_t j = 0; j < n; ++j) dot += static_cast<double>(dyrow[j]) * yrow[j];
                T* darow = da.data.data() + i * n;
                for (size_t j = 0; j < n; ++j)
                    darow[j] += (dyrow[j] - static_cast<T>(dot)) * yrow[j];
            }
        });
    }

    // layer norm over the last axis with learned gain/bias
    Var layer_norm(Var x, Var gain, Var bias, T eps = static_cast<T>(1e-5)) {
        const auto& X = value(x);
        const auto& G = value(gain);
        const auto& B = value(bias);
        if (X.ndim() != 2) throw ShapeError("layer_norm: need 2-D input, got " + X.shape_str());
        size_t m = X.shape[0], n = X.shape[1];
        if (G.ndim() != 1 || G.shape[0] != n || B.ndim() != 1 || B.shape[0] != n)
            throw ShapeError("layer_norm: gain/bias " + G.shape_str() + "/" + B.shape_str() +
                             " do not match input " + X.shape_str());
        Tensor<T> out({m, n});
        auto stats = std::make_shared<std::vector<T>>(2 * m);  // mean, inv_std per row
        for (size_t i = 0; i < m; ++i) {
            const T* row = X.data.data() + i * n;
            double mean = 0.0;
            for (size_t j = 0; j < n; ++j) mean += static_cast<double>(row[j]);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (size_t j = 0; j < n; ++j) {
                double d = static_cast<double>(row[j]) - mean;
                var += d * d;
            }
            var /= static_cast<double>(n);
            T inv_std = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            (*stats)[2 * i] = static_cast<T>(mean);
            (*stats)[2 * i + 1] = inv_std;
            T* orow = out.data.data() + i * n;
            for (size_t j = 0; j < n; ++j) {
                T xn = (row[j] - static_cast<T>(mean)) * inv_std;
                orow[j] = xn * G.data[j] + B.data[j];
            }
        }
        return push(std::move(out), needs(x) || needs(gain) || needs(bias),
                    [=](Tape& t, int self) {
                        const Tensor<T>& dy = t.nodes_[self].grad;
                        const Tensor<T>& X2 = t.value(x);
                        const Tensor<T>& G2 = t.value(gain);
                        for (size_t i = 0; i < m; ++i) {
                            T mean = (*stats)[2 * i];
                            T inv_std = (*stats)[2 * i + 1];
                            const T* xrow = X2.data.data() + i * n;
                            const T* dyrow = dy.data.data() + i * n;
                            if (t.needs(gain)) {
                                auto& dg = t.grad_buf(gain);
                                for (size_t j = 0; j < n; ++j)
                                    dg.data[j] += dyrow[j] * (xrow[j] - mean) * inv_std;
                            }
                            if (t.needs(bias)) {
                                auto& db = t.grad_buf(bias);
                                for (size_t j = 0; j < n; ++j) db.data[j] += dyrow[j];
                            }
                            if (t.needs(x)) {
                                auto& dx = t.grad_buf(x);
                                double sum_h = 0.0, sum_hx = 0.0;
                                for (size_t j = 0; j < n; ++j) {
                                    double h = static_cast<double>(dyrow[j]) * G2.data[j];
                                    double xn = (xrow[j] - mean) * inv_std;
                                    sum_h += h;
                                    sum_hx += h * xn;
                                }
                                double inv_n = 1.0 / static_cast<double>(n);
                                T* dxrow = dx.data.data() + i * n;
                                for (size_t j = 0; j < n; ++j) {
                                    double h = static_cast<double>(dyrow[j]) * G2.data[j];
                                    double xn = (xrow[j] - mean) * inv_std;
                                    dxrow[j] += static_cast<T>(
                                        inv_std * (h - sum_h * inv_n - xn * sum_hx * inv_n));
                                }
                            }
                        }
                    });
    }

    // gather rows of `table` [V,D] at `ids`
    Var embedding(Var table, std::vector<int32_t> ids) {
        const auto& W = value(table);
        if (W.ndim() != 2) throw ShapeError("embedding: table must be 2-D, got " + W.shape_str());
        size_t v = W.shape[0], d = W.shape[1];
        Tensor<T> out({ids.size(), d});
        for (size_t i = 0; i < ids.size(); ++i) {
            int32_t id = ids[i];
            if (id < 0 || static_cast<size_t>(id) >= v)
                throw Error("embedding: id " + std::to_string(id) + " out of range [0," +
                            std::to_string(v) + ")");
            std::copy_n(W.data.data() + static_cast<size_t>(id) * d, d,
                        out.data.data() + i * d);
        }
        auto ids_ptr = std::make_shared<std::vector<int32_t>>(std::move(ids));
        return push(std::move(out), needs(table), [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            auto& dw = t.grad_buf(table);
            for (size_t i = 0; i < ids_ptr->size(); ++i) {
                T* dst = dw.data.data() + static_cast<size_t>((*ids_ptr)[i]) * d;
                const T* src = dy.data.data() + i * d;
                for (size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }

    // weighted mean negative log-likelihood over rows of logits;
    // rows with weight zero contribute exactly nothing
    Var cross_entropy(Var logits, std::vector<int32_t> targets, std::vector<T> weights) {
        const auto& L = value(logits);
        if (L.ndim() != 2) throw ShapeError("cross_entropy: logits must be 2-D, got " + L.shape_str());
        size_t m = L.shape[0], v = L.shape[1];
        if (targets.size() != m || weights.size() != m)
            throw ShapeError("cross_entropy: logits " + L.shape_str() + " need " +
                             std::to_string(m) + " targets/weights, got " +
                             std::to_string(targets.size()) + "/" + std::to_string(weights.size()));
        double weight_sum = 0.0;
        for (T w : weights) weight_sum += static_cast<double>(w);
        if (!(weight_sum > 0.0)) throw Error("cross_entropy: weights sum to zero");

        auto probs = std::make_shared<Tensor<T>>(std::vector<size_t>{m, v});
        double loss = 0.0;
        for (size_t i = 0; i < m; ++i) {
            int32_t tgt = targets[i];
            if (tgt < 0 || static_cast<size_t>(tgt) >= v)
                throw Error("cross_entropy: target " + std::to_string(tgt) + " out of range");
            const T* row = L.data.data() + i * v;
            T mx = row[0];
            for (size_t j = 1; j < v; ++j)
                if (row[j] > mx) mx = row[j];
            double sum = 0.0;
            T* prow = probs->data.data() + i * v;
            for (size_t j = 0; j < v; ++j) {
                T e = std::exp(row[j] - mx);
                prow[j] = e;
                sum += static_cast<double>(e);
            }
            T inv = static_cast<T>(1.0 / sum);
            for (size_t j = 0; j < v; ++j) prow[j] *= inv;
            double lse = static_cast<double>(mx) + std::log(sum);
            double nll = lse - static_cast<double>(row[tgt]);
            loss += static_cast<double>(weights[i]) * nll;
        }
        loss /= weight_sum;
        Tensor<T> out = Tensor<T>::from({1}, {static_cast<T>(loss)});
        auto tgt_ptr = std::make_shared<std::vector<int32_t>>(std::move(targets));
        auto w_ptr = std::make_shared<std::vector<T>>(std::move(weights));
        return push(std::move(out), needs(logits), [=](Tape& t, int self) {
            T dy = t.nodes_[self].grad.data[0];
            auto& dl = t.grad_buf(logits);
            for (size_t i = 0; i < m; ++i) {
                T wi = static_cast<T>(static_cast<double>((*w_ptr)[i]) / weight_sum);
                if (wi == T{}) continue;
                const T* prow = probs->data.data() + i * v;
                T* drow = dl.data.data() + i * v;
                T f = dy * wi;
                for (size_t j = 0; j < v; ++j) drow[j] += f * prow[j];
                drow[static_cast<size_t>((*tgt_ptr)[i])] -= f;
            }
        });
    }

    Var transpose(Var a) {
        const auto& A = value(a);
        if (A.ndim() != 2) throw ShapeError("transpose: need 2-D input, got " + A.shape_str());
        size_t m = A.shape[0], n = A.shape[1];
        Tensor<T> out({n, m});
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) out.data[j * m + i] = A.data[i * n + j];
        return push(std::move(out), needs(a), [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            auto& da = t.grad_buf(a);
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) da.data[i * n + j] += dy.data[j * m + i];
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw Error("concat_cols: no inputs");
        size_t m = value(parts[0]).shape[0];
        size_t total = 0;
        bool rg = false;
        for (Var p : parts) {
            const auto& P = value(p);
            if (P.ndim() != 2 || P.shape[0] != m)
                throw ShapeError("concat_cols: incompatible part " + P.shape_str());
            total += P.shape[1];
            rg = rg || needs(p);
        }
        Tensor<T> out({m, total});
        size_t off = 0;
        for (Var p : parts) {
            const auto& P = value(p);
            size_t w = P.shape[1];
            for (size_t i = 0; i < m; ++i)
                std::copy_n(P.data.data() + i * w, w, out.data.data() + i * total + off);
            off += w;
        }
        auto parts_ptr = std::make_shared<std::vector<Var>>(parts);
        return push(std::move(out), rg, [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            size_t o = 0;
            for (Var p : *parts_ptr) {
                size_t w = t.value(p).shape[1];
                if (t.needs(p)) {
                    auto& dp = t.grad_buf(p);
                    for (size_t i = 0; i < m; ++i) {
                        const T* src = dy.data.data() + i * total + o;
                        T* dst = dp.data.data() + i * w;
                        for (size_t j = 0; j < w; ++j) dst[j] += src[j];
                    }
                }
                o += w;
            }
        });
    }

    Var slice_cols(Var a, size_t begin, size_t end) {
        const auto& A = value(a);
        if (A.ndim() != 2 || begin >= end || end > A.shape[1])
            throw ShapeError("slice_cols: bad range [" + std::to_string(begin) + "," +
                             std::to_string(end) + ") for " + A.shape_str());
        size_t m = A.shape[0], n = A.shape[1], w = end - begin;
        Tensor<T> out({m, w});
        for (size_t i = 0; i < m; ++i)
            std::copy_n(A.data.data() + i * n + begin, w, out.data.data() + i * w);
        return push(std::move(out), needs(a), [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            auto& da = t.grad_buf(a);
            for (size_t i = 0; i < m; ++i) {
                const T* src = dy.data.data() + i * w;
                T* dst = da.data.data() + i * n + begin;
                for (size_t j = 0; j < w; ++j) dst[j] += src[j];
            }
        });
    }

    Var slice_rows(Var a, size_t begin, size_t end) {
        const auto& A = value(a);
        if (A.ndim() != 2 || begin >= end || end > A.shape[0])
            throw ShapeError("slice_rows: bad range [" + std::to_string(begin) + "," +
                             std::to_string(end) + ") for " + A.shape_str());
        size_t n = A.shape[1], h = end - begin;
        Tensor<T> out({h, n});
        std::copy_n(A.data.data() + begin * n, h * n, out.data.data());
        return push(std::move(out), needs(a), [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            auto& da = t.grad_buf(a);
            T* dst = da.data.data() + begin * n;
            for (size_t i = 0; i < h * n; ++i) dst[i] += dy.data[i];
        });
    }

    // inverted dropout; identity when p == 0
    Var dropout(Var a, double p, Rng& rng) {
        if (p <= 0.0) return a;
        if (p >= 1.0) throw Error("dropout: p must be < 1");
        const auto& A = value(a);
        auto mask = std::make_shared<std::vector<T>>(A.numel());
        T keep_scale = static_cast<T>(1.0 / (1.0 - p));
        Tensor<T> out(A.shape);
        for (size_t i = 0; i < A.numel(); ++i) {
            T m = rng.bernoulli(p) ? T{} : keep_scale;
            (*mask)[i] = m;
            out.data[i] = A.data[i] * m;
        }
        return push(std::move(out), needs(a), [=](Tape& t, int self) {
            const Tensor<T>& dy = t.nodes_[self].grad;
            auto& da = t.grad_buf(a);
            for (size_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i] * (*mask)[i];
        });
    }

    Var sum(Var a) {
        const auto& A = value(a);
        double s = 0.0;
        for (T v : A.data) s += static_cast<double>(v);
        Tensor<T> out = Tensor<T>::from({1}, {static_cast<T>(s)});
        return push(std::move(out), needs(a), [=](Tape& t, int self) {
            T dy = t.nodes_[self].grad.data[0];
            auto& da = t.grad_buf(a);
            for (auto& g : da.data) g += dy;
        });
    }

    // --- backward ------------------------------------------------------------

    void backward(Var loss) {
        if (consumed_) throw Error("backward: tape already consumed; build a fresh graph");
        const Node& ln = node(loss);
        if (ln.value.numel() != 1) throw Error("backward: loss must be scalar");
        if (!ln.requires_grad)
            throw Error("backward: loss does not depend on any tracked parameter");
        consumed_ = true;
        grad_buf(loss).data[0] = static_cast<T>(1);
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.back && n.requires_grad && !n.grad.empty()) n.back(*this, id);
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::function<void(Tape&, int)> back;
    };

    bool needs(Var v) const { return node(v).requires_grad; }

    const Node& node(Var v) const {
        if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
            throw Error("tape: invalid variable");
        return nodes_[static_cast<size_t>(v.id)];
    }

    Tensor<T>& grad_buf(Var v) {
        Node& n = nodes_[static_cast<size_t>(v.id)];
        if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
        return n.grad;
    }

    Var push(Tensor<T> value, bool requires_grad, std::function<void(Tape&, int)> back) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size() - 1)};
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

}  // namespace notelm
