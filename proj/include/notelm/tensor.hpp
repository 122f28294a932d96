#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "notelm/common.hpp"

namespace notelm {

// Dense row-major tensor. Training uses float, verification double; the
// whole numeric stack is templated on the element type.
template <typename T>
struct Tensor {
    std::vector<size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> shp) : shape(std::move(shp)) {
        data.assign(numel_of(shape), T{});
    }

    static size_t numel_of(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<size_t> shp) { return Tensor(std::move(shp)); }

    static Tensor full(std::vector<size_t> shp, T v) {
        Tensor t(std::move(shp));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor randn(std::vector<size_t> shp, Rng& rng, double stddev) {
        Tensor t(std::move(shp));
        for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
        return t;
    }

    static Tensor from(std::vector<size_t> shp, std::vector<T> values) {
        Tensor t;
        t.shape = std::move(shp);
        t.data = std::move(values);
        if (t.data.size() != numel_of(t.shape)) throw ShapeError("Tensor::from: size mismatch");
        return t;
    }

    size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }
    size_t ndim() const { return shape.size(); }

    size_t rows() const { return shape.size() == 2 ? shape[0] : (shape.empty() ? 0 : 1); }
    size_t cols() const { return shape.size() == 2 ? shape[1] : (shape.empty() ? 0 : shape[0]); }

    T& at(size_t i, size_t j) { return data[i * shape[1] + j]; }
    const T& at(size_t i, size_t j) const { return data[i * shape[1] + j]; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

// --- matmul kernels -----------------------------------------------------------
//
// All kernels accumulate into C; callers zero-initialize when needed. Each
// output row is produced start to finish on one thread with a fixed inner
// order, so results are bitwise reproducible for any thread count.

namespace kern {

constexpr size_t kParallelWork = size_t{1} << 22;  // below this the pool costs more than it saves

// C[m,n] += A[m,k] x B[k,n]
template <typename T>
void matmul_nn(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
    auto rows = [&](size_t i0, size_t i1) {
        for (size_t i = i0; i < i1; ++i) {
            T* c = C + i * n;
            const T* a = A + i * k;
            for (size_t kk = 0; kk < k; ++kk) {
                T av = a[kk];
                const T* b = B + kk * n;
                for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
            }
        }
    };
    if (m * n * k >= kParallelWork) parallel_for(m, rows);
    else rows(0, m);
}

// C[m,n] += A[m,k] x B[n,k]^T
template <typename T>
void matmul_nt(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
    auto rows = [&](size_t i0, size_t i1) {
        for (size_t i = i0; i < i1; ++i) {
            const T* a = A + i * k;
            T* c = C + i * n;
            for (size_t j = 0; j < n; ++j) {
                const T* b = B + j * k;
                T acc{};
                for (size_t kk = 0; kk < k; ++kk) acc += a[kk] * b[kk];
                c[j] += acc;
            }
        }
    };
    if (m * n * k >= kParallelWork) parallel_for(m, rows);
    else rows(0, m);
}

// C[m,n] += A[k,m]^T x B[k,n]
template <typename T>
void matmul_tn(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
    auto rows = [&](size_t i0, size_t i1) {
        for (size_t i = i0; i < i1; ++i) {
            T* c = C + i * n;
            for (size_t kk = 0; kk < k; ++kk) {
                T av = A[kk * m + i];
                const T* b = B + kk * n;
                for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
            }
        }
    };
    if (m * n * k >= kParallelWork) parallel_for(m, rows);
    else rows(0, m);
}

}  // namespace kern

}  // namespace notelm
