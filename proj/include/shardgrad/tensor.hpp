// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "shardgrad/core.hpp"

namespace shardgrad {

/// Row-major dense matrix of 64-bit floats.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vector data; // rows*cols, row-major

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    DenseMatrix(std::size_t r, std::size_t c, Vector d) : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols) throw ShapeError("DenseMatrix: data length != rows*cols");
    }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::size_t size() const { return data.size(); }

    bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
};

/// Standard product with deterministic ascending-index summation: every
/// output accumulates k = 0,1,2,... in order.
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols) + " vs " +
                         std::to_string(b.rows) + ")");
    DenseMatrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            const double* brow = &b.data[k * b.cols];
            double* orow = &out.data[i * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

/// out[c - col_begin] += sum_r x[r] * m[r, c] over ascending r, restricted to
/// the column window [col_begin, col_end). Adds into whatever the caller put
/// in `out` (typically a bias slice). The same kernel serves the full product
/// and a worker's column shard, so both accumulate in the identical order.
inline void vec_mat_accumulate(const Vector& x, const DenseMatrix& m, std::size_t col_begin,
                               std::size_t col_end, double* out) {
    if (x.size() != m.rows) throw ShapeError("vec_mat: length != rows");
    if (col_begin > col_end || col_end > m.cols) throw ShapeError("vec_mat: bad column window");
    const std::size_t width = col_end - col_begin;
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double xr = x[r];
        const double* row = &m.data[r * m.cols + col_begin];
        for (std::size_t c = 0; c < width; ++c) out[c] += xr * row[c];
    }
}

inline Vector vec_mat(const Vector& x, const DenseMatrix& m) {
    Vector out(m.cols, 0.0);
    vec_mat_accumulate(x, m, 0, m.cols, out.data());
    return out;
}

/// out[r] = sum_c m[r, c] * y[c], ascending c; rows restricted to
/// [row_begin, row_end).
inline Vector mat_vec_rows(const DenseMatrix& m, const Vector& y, std::size_t row_begin,
                           std::size_t row_end) {
    if (y.size() != m.cols) throw ShapeError("mat_vec: length != cols");
    Vector out(row_end - row_begin);
    for (std::size_t r = row_begin; r < row_end; ++r) {
        const double* row = &m.data[r * m.cols];
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * y[c];
        out[r - row_begin] = acc;
    }
    return out;
}

enum class Activation { Sigmoid, Tanh, Softmax, Identity };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Tanh: return "tanh";
        case Activation::Softmax: return "softmax";
        case Activation::Identity: return "identity";
    }
    return "?";
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// sigma'(x) expressed as sigma(x)(1 - sigma(x)); callers holding the
/// activation value reuse it via sigmoid_prime_from_value.
inline double sigmoid_prime(double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
}
inline double sigmoid_prime_from_value(double s) { return s * (1.0 - s); }
inline double tanh_prime_from_value(double t) { return 1.0 - t * t; }

/// Elementwise for sigmoid/tanh/identity; softmax normalizes the whole vector
/// with max-subtraction for stability.
inline Vector activation_apply(Activation kind, const Vector& x) {
    for (double v : x)
        if (!std::isfinite(v)) throw NumericError("activation_apply: non-finite input");
    Vector out(x.size());
    switch (kind) {
        case Activation::Sigmoid:
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
            break;
        case Activation::Tanh:
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
            break;
        case Activation::Identity: out = x; break;
        case Activation::Softmax: {
            if (x.empty()) throw ShapeError("softmax: empty input");
            double m = x[0];
            for (double v : x) m = std::max(m, v);
            double sum = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                out[i] = std::exp(x[i] - m);
                sum += out[i];
            }
            for (auto& v : out) v /= sum;
            break;
        }
    }
    return out;
}

/// Derivative from the activation value (valid for sigmoid/tanh/identity;
/// softmax gradients go through the loss-specific path in feedforward.hpp).
inline double activation_prime_from_value(Activation kind, double value) {
    switch (kind) {
        case Activation::Sigmoid: return sigmoid_prime_from_value(value);
        case Activation::Tanh: return tanh_prime_from_value(value);
        case Activation::Identity: return 1.0;
        case Activation::Softmax:
            throw NumericError("softmax has no elementwise derivative");
    }
    return 0.0;
}

} // namespace shardgrad
