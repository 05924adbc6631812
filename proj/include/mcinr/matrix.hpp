#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcinr {

// Row-major dense matrix. Training runs in float; double is used for
// gradient checking only.
template <class T>
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    T& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    T at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    T* row(std::size_t i) { return data.data() + i * cols; }
    const T* row(std::size_t i) const { return data.data() + i * cols; }
    std::size_t size() const { return data.size(); }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

inline std::string shape_str(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

template <class T>
void check_finite(const Mat<T>& m, const char* context) {
    for (const T& v : m.data) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string("non-finite value in ") + context);
        }
    }
}

template <class T>
void check_finite(std::span<const T> v, const char* context) {
    for (const T& x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(std::string("non-finite value in ") + context);
        }
    }
}

enum class Activation { Sine, Identity };

// Caches needed to run the chain rule back through one layer.
template <class T>
struct LayerTape {
    Mat<T> input;           // (batch, in)
    Mat<T> pre_activation;  // (batch, out)
    Activation act = Activation::Identity;
    T omega = T(1);
};

// C = A * B with A (n,k), B (k,m). The k-outer loop keeps the inner loop
// contiguous in both B and C; per-row accumulation order is independent of
// the number of rows, so batch-of-1 and batch-of-N agree bitwise.
template <class T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.rows) {
        throw std::runtime_error("matmul: inner dims differ " + shape_str(a.rows, a.cols) +
                                 " vs " + shape_str(b.rows, b.cols));
    }
    Mat<T> c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const T av = arow[k];
            const T* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// C = A * B^T with A (n,k), B (m,k).
template <class T>
Mat<T> matmul_bt(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.cols) {
        throw std::runtime_error("matmul_bt: inner dims differ " + shape_str(a.rows, a.cols) +
                                 " vs " + shape_str(b.rows, b.cols));
    }
    Mat<T> c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const T* brow = b.row(j);
            T s = T(0);
            for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            c.at(i, j) = s;
        }
    }
    return c;
}

// C = A^T * B with A (k,n), B (k,m).
template <class T>
Mat<T> matmul_at(const Mat<T>& a, const Mat<T>& b) {
    if (a.rows != b.rows) {
        throw std::runtime_error("matmul_at: inner dims differ " + shape_str(a.rows, a.cols) +
                                 " vs " + shape_str(b.rows, b.cols));
    }
    Mat<T> c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const T* arow = a.row(k);
        const T* brow = b.row(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const T av = arow[i];
            T* crow = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// output = input * weight + bias, weight laid out (in_features, out_features).
template <class T>
Mat<T> linear_forward(const Mat<T>& input, const Mat<T>& weight, std::span<const T> bias,
                      LayerTape<T>* tape = nullptr) {
    if (input.cols != weight.rows) {
        throw std::runtime_error("linear_forward: input " + shape_str(input.rows, input.cols) +
                                 " does not match weight " + shape_str(weight.rows, weight.cols));
    }
    if (bias.size() != weight.cols) {
        throw std::runtime_error("linear_forward: bias length " + std::to_string(bias.size()) +
                                 " does not match weight " + shape_str(weight.rows, weight.cols));
    }
    Mat<T> out = matmul(input, weight);
    for (std::size_t i = 0; i < out.rows; ++i) {
        T* row = out.row(i);
        for (std::size_t j = 0; j < out.cols; ++j) row[j] += bias[j];
    }
    check_finite(out, "linear_forward output");
    if (tape) {
        tape->input = input;
        tape->pre_activation = out;
    }
    return out;
}

template <class T>
Mat<T> sine_forward(const Mat<T>& pre_activation, T omega) {
    if (!(omega > T(0))) throw std::runtime_error("sine_forward: omega must be > 0");
    Mat<T> out(pre_activation.rows, pre_activation.cols);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = std::sin(omega * pre_activation.data[i]);
    }
    return out;
}

// Convenience: affine layer followed by its activation, tape filled for backward.
template <class T>
Mat<T> layer_forward(const Mat<T>& input, const Mat<T>& weight, std::span<const T> bias,
                     Activation act, T omega, LayerTape<T>& tape) {
    Mat<T> z = linear_forward(input, weight, bias, &tape);
    tape.act = act;
    tape.omega = omega;
    if (act == Activation::Sine) return sine_forward(z, omega);
    return z;
}

template <class T>
struct LayerGrads {
    Mat<T> input;               // (batch, in)
    Mat<T> weight;              // (in, out)
    std::vector<T> bias;        // (out)
};

// Chain rule through activation and affine part; d/dz sin(w z) = w cos(w z).
template <class T>
LayerGrads<T> layer_backward(const Mat<T>& upstream, const LayerTape<T>& tape, const Mat<T>& weight) {
    const Mat<T>& z = tape.pre_activation;
    if (upstream.rows != z.rows || upstream.cols != z.cols) {
        throw std::runtime_error("layer_backward: upstream " + shape_str(upstream.rows, upstream.cols) +
                                 " does not match layer output " + shape_str(z.rows, z.cols));
    }
    Mat<T> dz = upstream;
    if (tape.act == Activation::Sine) {
        for (std::size_t i = 0; i < dz.size(); ++i) {
            dz.data[i] *= tape.omega * std::cos(tape.omega * z.data[i]);
        }
    }
    LayerGrads<T> g;
    g.input = matmul_bt(dz, weight);          // (batch,out)*(in,out)^T
    g.weight = matmul_at(tape.input, dz);     // (batch,in)^T*(batch,out)
    g.bias.assign(dz.cols, T(0));
    for (std::size_t i = 0; i < dz.rows; ++i) {
        const T* row = dz.row(i);
        for (std::size_t j = 0; j < dz.cols; ++j) g.bias[j] += row[j];
    }
    return g;
}

}  // namespace mcinr
