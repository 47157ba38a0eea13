#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparseflow {

// Dense row-major tensor. float for training state, double for gradient
// checking; all layer kernels are templated on the scalar type.
template <typename T>
struct TensorT {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(count(shape), T{0});
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return n;
    }

    static TensorT zeros(std::vector<std::size_t> s) { return TensorT(std::move(s)); }

    std::size_t size() const { return data.size(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // 2-D and 3-D indexing for the shapes the layers use
    T& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    const T& at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    T& at3(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    const T& at3(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

template <typename T>
void require_shape(const TensorT<T>& t, std::vector<std::size_t> expect, const char* what) {
    if (t.shape != expect)
        throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(expect) +
                                    ", got " + shape_str(t.shape));
}

// C = A(m x k) * B(k x n), row-major
template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = T{0};
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            T av = arow[p];
            if (av == T{0}) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C = A(m x k) * B^T where B is (n x k)
template <typename T>
void matmul_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc{0};
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] = acc;
        }
    }
}

// C += A^T(k x m -> m x k transposed) * B(k x n); A is (k x m)
template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, std::size_t k, std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            T av = arow[i];
            if (av == T{0}) continue;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace sparseflow
