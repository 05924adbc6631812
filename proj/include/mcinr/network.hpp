#pragma once

#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcinr/adam.hpp"
#include "mcinr/matrix.hpp"
#include "mcinr/rng.hpp"

namespace mcinr {

// Fourier-feature encoding of (x,y,z,t): per scalar p emits
// [p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{L-1} pi p), cos(2^{L-1} pi p)].
struct PosEncConfig {
    int num_frequencies = 6;
    bool include_raw = true;
    int input_dim = 4;

    int encoded_dim() const {
        return input_dim * 2 * num_frequencies + (include_raw ? input_dim : 0);
    }
};

// Architecture of one network: a shared trunk of residual blocks (the global
// feature extractor) feeding one residual branch + linear head per output
// group. In the default branched mode there is one branch per variable, each
// emitting a single scalar; shared-head mode uses a single branch whose head
// emits all variables.
struct NetworkShape {
    PosEncConfig pe;
    int width = 128;
    int var_count = 1;
    int gfe_blocks = 5;
    int lfe_blocks = 6;
    bool shared_head = false;
    double omega_first = 30.0;

    int branch_count() const { return shared_head ? 1 : var_count; }
    int head_out_dim() const { return shared_head ? var_count : 1; }
};

template <class T>
struct Linear {
    Mat<T> weight;        // (in, out)
    std::vector<T> bias;  // (out)
};

template <class T>
struct ResidualBlock {
    Linear<T> first;
    Linear<T> second;
};

template <class T>
struct Branch {
    std::vector<ResidualBlock<T>> blocks;
    Linear<T> head;
};

template <class T>
struct NetworkParams {
    NetworkShape shape;
    Linear<T> input_proj;
    std::vector<ResidualBlock<T>> gfe;
    std::vector<Branch<T>> branches;
};

using NetworkParamsF = NetworkParams<float>;

inline const char* axis_name(int axis) {
    static const char* names[] = {"x", "y", "z", "t"};
    return axis < 4 ? names[axis] : "coord";
}

template <class T>
Mat<T> positional_encode(const Mat<T>& coords, const PosEncConfig& cfg) {
    if (coords.cols != static_cast<std::size_t>(cfg.input_dim)) {
        throw std::runtime_error("positional_encode: expected " + std::to_string(cfg.input_dim) +
                                 " input columns, got " + std::to_string(coords.cols));
    }
    constexpr double kPi = std::numbers::pi;
    const T slack = T(1) + T(1e-6);
    const int L = cfg.num_frequencies;
    const int per_axis = 2 * L + (cfg.include_raw ? 1 : 0);
    Mat<T> out(coords.rows, static_cast<std::size_t>(cfg.input_dim) * per_axis);
    for (std::size_t i = 0; i < coords.rows; ++i) {
        const T* in = coords.row(i);
        T* dst = out.row(i);
        for (int a = 0; a < cfg.input_dim; ++a) {
            const T p = in[a];
            if (!(p >= -slack && p <= slack)) {
                throw std::runtime_error(std::string("positional_encode: ") + axis_name(a) +
                                         " = " + std::to_string(static_cast<double>(p)) +
                                         " outside normalized range [-1, 1]");
            }
            if (cfg.include_raw) *dst++ = p;
            T freq = T(kPi);
            for (int l = 0; l < L; ++l) {
                const T arg = freq * p;
                *dst++ = std::sin(arg);
                *dst++ = std::cos(arg);
                freq *= T(2);
            }
        }
    }
    return out;
}

template <class T>
struct BlockTape {
    LayerTape<T> first;
    LayerTape<T> second;
};

// out = 0.5 * (h + sin(W2 sin(W1 h + b1) + b2)); preserves feature width.
template <class T>
Mat<T> residual_block_forward(const Mat<T>& h, const ResidualBlock<T>& block,
                              BlockTape<T>* tape = nullptr) {
    if (h.cols != block.first.weight.rows) {
        throw std::runtime_error("residual_block_forward: feature width " + std::to_string(h.cols) +
                                 " does not match block width " + std::to_string(block.first.weight.rows));
    }
    BlockTape<T> local;
    BlockTape<T>& tp = tape ? *tape : local;
    Mat<T> s1 = layer_forward(h, block.first.weight, std::span<const T>(block.first.bias),
                              Activation::Sine, T(1), tp.first);
    Mat<T> s2 = layer_forward(s1, block.second.weight, std::span<const T>(block.second.bias),
                              Activation::Sine, T(1), tp.second);
    Mat<T> out(h.rows, h.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = T(0.5) * (h.data[i] + s2.data[i]);
    return out;
}

template <class T>
void accumulate(Linear<T>& dst, const LayerGrads<T>& g) {
    for (std::size_t i = 0; i < dst.weight.size(); ++i) dst.weight.data[i] += g.weight.data[i];
    for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += g.bias[i];
}

// upstream is dL/d(block output); returns dL/dh and fills grads.
template <class T>
Mat<T> residual_block_backward(const Mat<T>& upstream, const ResidualBlock<T>& block,
                               const BlockTape<T>& tape, ResidualBlock<T>& grads) {
    Mat<T> d_s2 = upstream;
    for (T& v : d_s2.data) v *= T(0.5);
    LayerGrads<T> g2 = layer_backward(d_s2, tape.second, block.second.weight);
    LayerGrads<T> g1 = layer_backward(g2.input, tape.first, block.first.weight);
    accumulate(grads.second, g2);
    accumulate(grads.first, g1);
    Mat<T> d_h = g1.input;
    for (std::size_t i = 0; i < d_h.size(); ++i) d_h.data[i] += T(0.5) * upstream.data[i];
    return d_h;
}

template <class T>
struct ForwardTapes {
    LayerTape<T> proj;
    std::vector<BlockTape<T>> gfe;
    std::vector<std::vector<BlockTape<T>>> branch_blocks;
    std::vector<LayerTape<T>> heads;
};

// h0 = PE(coords); u = sin(omega_first * (W h0 + b)); trunk blocks; per
// branch: residual blocks then a plain linear head. The trunk is computed
// once per batch and shared by every branch.
template <class T>
Mat<T> forward(const NetworkParams<T>& net, const Mat<T>& coords, ForwardTapes<T>* tapes = nullptr) {
    const NetworkShape& s = net.shape;
    Mat<T> h0 = positional_encode(coords, s.pe);
    ForwardTapes<T> local;
    ForwardTapes<T>& tp = tapes ? *tapes : local;
    tp.gfe.resize(net.gfe.size());
    tp.branch_blocks.resize(net.branches.size());
    tp.heads.resize(net.branches.size());

    Mat<T> h = layer_forward(h0, net.input_proj.weight, std::span<const T>(net.input_proj.bias),
                             Activation::Sine, T(s.omega_first), tp.proj);
    for (std::size_t b = 0; b < net.gfe.size(); ++b) {
        h = residual_block_forward(h, net.gfe[b], &tp.gfe[b]);
    }
    Mat<T> out(coords.rows, static_cast<std::size_t>(s.var_count));
    std::size_t col = 0;
    for (std::size_t br = 0; br < net.branches.size(); ++br) {
        const Branch<T>& branch = net.branches[br];
        tp.branch_blocks[br].resize(branch.blocks.size());
        Mat<T> hb = h;
        for (std::size_t b = 0; b < branch.blocks.size(); ++b) {
            hb = residual_block_forward(hb, branch.blocks[b], &tp.branch_blocks[br][b]);
        }
        Mat<T> y = layer_forward(hb, branch.head.weight, std::span<const T>(branch.head.bias),
                                 Activation::Identity, T(1), tp.heads[br]);
        for (std::size_t i = 0; i < out.rows; ++i) {
            for (std::size_t j = 0; j < y.cols; ++j) out.at(i, col + j) = y.at(i, j);
        }
        col += y.cols;
    }
    return out;
}

template <class T>
NetworkParams<T> zeros_like(const NetworkParams<T>& net) {
    NetworkParams<T> z;
    z.shape = net.shape;
    auto zero_linear = [](const Linear<T>& l) {
        Linear<T> r;
        r.weight = Mat<T>(l.weight.rows, l.weight.cols);
        r.bias.assign(l.bias.size(), T(0));
        return r;
    };
    z.input_proj = zero_linear(net.input_proj);
    z.gfe.reserve(net.gfe.size());
    for (const auto& blk : net.gfe) z.gfe.push_back({zero_linear(blk.first), zero_linear(blk.second)});
    z.branches.reserve(net.branches.size());
    for (const auto& br : net.branches) {
        Branch<T> b;
        for (const auto& blk : br.blocks) b.blocks.push_back({zero_linear(blk.first), zero_linear(blk.second)});
        b.head = zero_linear(br.head);
        z.branches.push_back(std::move(b));
    }
    return z;
}

// residual_error has shape (batch, M) and already carries the loss scaling,
// e.g. 2*(pred-target)/(batch*M) for mean MSE. Trunk gradients accumulate
// contributions from every branch.
template <class T>
NetworkParams<T> backward(const NetworkParams<T>& net, const ForwardTapes<T>& tapes,
                          const Mat<T>& residual_error) {
    const NetworkShape& s = net.shape;
    if (residual_error.cols != static_cast<std::size_t>(s.var_count)) {
        throw std::runtime_error("backward: residual error has " + std::to_string(residual_error.cols) +
                                 " columns, expected " + std::to_string(s.var_count));
    }
    NetworkParams<T> grads = zeros_like(net);
    Mat<T> d_trunk;  // accumulated dL/d(trunk output)
    std::size_t col = 0;
    for (std::size_t br = 0; br < net.branches.size(); ++br) {
        const Branch<T>& branch = net.branches[br];
        const std::size_t out_dim = branch.head.weight.cols;
        Mat<T> d_y(residual_error.rows, out_dim);
        for (std::size_t i = 0; i < d_y.rows; ++i) {
            for (std::size_t j = 0; j < out_dim; ++j) d_y.at(i, j) = residual_error.at(i, col + j);
        }
        col += out_dim;
        LayerGrads<T> hg = layer_backward(d_y, tapes.heads[br], branch.head.weight);
        accumulate(grads.branches[br].head, hg);
        Mat<T> d = hg.input;
        for (std::size_t b = branch.blocks.size(); b-- > 0;) {
            d = residual_block_backward(d, branch.blocks[b], tapes.branch_blocks[br][b],
                                        grads.branches[br].blocks[b]);
        }
        if (d_trunk.size() == 0) {
            d_trunk = std::move(d);
        } else {
            for (std::size_t i = 0; i < d_trunk.size(); ++i) d_trunk.data[i] += d.data[i];
        }
    }
    for (std::size_t b = net.gfe.size(); b-- > 0;) {
        d_trunk = residual_block_backward(d_trunk, net.gfe[b], tapes.gfe[b], grads.gfe[b]);
    }
    LayerGrads<T> pg = layer_backward(d_trunk, tapes.proj, net.input_proj.weight);
    accumulate(grads.input_proj, pg);
    return grads;
}

// SIREN-style init: first layer U(-1/fan_in, 1/fan_in) with omega_first in
// its activation, deeper layers U(+-sqrt(6/fan_in)) with omega 1, zero biases.
template <class T>
NetworkParams<T> init_params(const NetworkShape& shape, std::uint64_t seed) {
    if (shape.width < 1 || shape.var_count < 1) {
        throw std::runtime_error("init_params: width and var_count must be >= 1");
    }
    std::mt19937 rng = make_rng(seed);
    auto uniform_fill = [&rng](Mat<T>& m, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (T& v : m.data) v = static_cast<T>(dist(rng));
    };
    auto make_linear = [&](int in, int out, bool first_layer) {
        Linear<T> l;
        l.weight = Mat<T>(in, out);
        l.bias.assign(out, T(0));
        const double bound = first_layer ? 1.0 / in : std::sqrt(6.0 / in);
        uniform_fill(l.weight, bound);
        return l;
    };
    const int w = shape.width;
    NetworkParams<T> net;
    net.shape = shape;
    net.input_proj = make_linear(shape.pe.encoded_dim(), w, true);
    net.gfe.reserve(shape.gfe_blocks);
    for (int b = 0; b < shape.gfe_blocks; ++b) {
        net.gfe.push_back({make_linear(w, w, false), make_linear(w, w, false)});
    }
    net.branches.resize(shape.branch_count());
    for (auto& br : net.branches) {
        for (int b = 0; b < shape.lfe_blocks; ++b) {
            br.blocks.push_back({make_linear(w, w, false), make_linear(w, w, false)});
        }
        br.head = make_linear(w, shape.head_out_dim(), false);
    }
    return net;
}

// Canonical parameter order: projection, trunk blocks, branches (blocks then
// head), weights before biases within each linear. Everything that walks
// parameters (Adam, serialization, gradient checks) uses this enumeration.
template <class T, class F>
void for_each_param(NetworkParams<T>& net, F&& fn) {
    auto visit_linear = [&fn](Linear<T>& l) {
        fn(std::span<T>(l.weight.data));
        fn(std::span<T>(l.bias));
    };
    visit_linear(net.input_proj);
    for (auto& blk : net.gfe) {
        visit_linear(blk.first);
        visit_linear(blk.second);
    }
    for (auto& br : net.branches) {
        for (auto& blk : br.blocks) {
            visit_linear(blk.first);
            visit_linear(blk.second);
        }
        visit_linear(br.head);
    }
}

template <class T>
std::vector<std::span<T>> param_spans(NetworkParams<T>& net) {
    std::vector<std::span<T>> out;
    for_each_param(net, [&out](std::span<T> s) { out.push_back(s); });
    return out;
}

template <class T>
std::vector<std::span<const T>> param_spans_const(NetworkParams<T>& net) {
    std::vector<std::span<const T>> out;
    for_each_param(net, [&out](std::span<T> s) { out.emplace_back(s.data(), s.size()); });
    return out;
}

inline std::size_t param_count(const NetworkShape& s) {
    const std::size_t w = s.width;
    const std::size_t block = 2 * (w * w + w);
    std::size_t total = static_cast<std::size_t>(s.pe.encoded_dim()) * w + w;
    total += static_cast<std::size_t>(s.gfe_blocks) * block;
    total += static_cast<std::size_t>(s.branch_count()) * s.lfe_blocks * block;
    total += static_cast<std::size_t>(s.branch_count()) * (w * s.head_out_dim() + s.head_out_dim());
    return total;
}

template <class T>
std::size_t param_count(const NetworkParams<T>& net) {
    std::size_t n = 0;
    for_each_param(const_cast<NetworkParams<T>&>(net), [&n](std::span<T> s) { n += s.size(); });
    return n;
}

}  // namespace mcinr
