// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "shardgrad/core.hpp"
#include "shardgrad/tensor.hpp"

namespace shardgrad {

// ---------------------------------------------------------------------------
// Layer and network descriptions
// ---------------------------------------------------------------------------

struct Dense {
    std::size_t in = 0;
    std::size_t out = 0;
    Activation act = Activation::Sigmoid;
};

/// Valid (no padding) convolution; sigmoid nonlinearity.
struct Conv2D {
    std::size_t kh = 0;
    std::size_t kw = 0;
    std::size_t maps = 0;
};

/// Non-overlapping mean pooling, stride == window.
struct MeanPool {
    std::size_t h = 0;
    std::size_t w = 0;
};

/// Fully connected layer from the previous layer to `classes` softmax units.
struct SoftmaxOutput {
    std::size_t classes = 0;
};

/// h_t = tanh(W [x_t; h_{t-1}] + b)
struct RnnCell {
    std::size_t hidden = 0;
};

/// Four gates (input, forget, candidate, output), no peephole connections.
struct LstmCell {
    std::size_t hidden = 0;
};

using LayerSpec = std::variant<Dense, Conv2D, MeanPool, SoftmaxOutput, RnnCell, LstmCell>;

struct VolumeShape {
    std::size_t c = 0, h = 0, w = 0;
    std::size_t flat() const { return c * h * w; }
};

/// Architecture description. Layer 0 is the input; `neuron_counts()` is the
/// per-layer width vector b_0..b_{n-1} used by the cost model.
class NetworkSpec {
  public:
    NetworkSpec() = default;

    /// Flat (dense or recurrent) input of `input_size` units.
    NetworkSpec(std::size_t input_size, std::vector<LayerSpec> layers)
        : layers_(std::move(layers)), input_vol_{1, 1, input_size} {
        validate();
    }

    /// Image input for convolutional stacks.
    NetworkSpec(VolumeShape input, std::vector<LayerSpec> layers)
        : layers_(std::move(layers)), input_vol_(input) {
        validate();
    }

    /// Plain fully connected net: sizes = {in, hidden..., classes}; sigmoid
    /// hidden layers and a softmax output.
    static NetworkSpec fully_connected(const std::vector<std::size_t>& sizes,
                                       Activation hidden_act = Activation::Sigmoid) {
        if (sizes.size() < 2) throw ShapeError("fully_connected: need at least in and out sizes");
        std::vector<LayerSpec> ls;
        for (std::size_t i = 1; i + 1 < sizes.size(); ++i)
            ls.push_back(Dense{sizes[i - 1], sizes[i], hidden_act});
        ls.push_back(SoftmaxOutput{sizes.back()});
        return NetworkSpec(sizes.front(), std::move(ls));
    }

    /// The fixed convolutional stack: conv 5x5/6, pool 2x2, conv 5x5/12,
    /// pool 2x2, conv 4x4/12, softmax head.
    static NetworkSpec lenet_like(std::size_t img_h, std::size_t img_w, std::size_t classes) {
        std::vector<LayerSpec> ls = {Conv2D{5, 5, 6},  MeanPool{2, 2}, Conv2D{5, 5, 12},
                                     MeanPool{2, 2},   Conv2D{4, 4, 12}, SoftmaxOutput{classes}};
        return NetworkSpec(VolumeShape{1, img_h, img_w}, std::move(ls));
    }

    /// Stacked recurrent net over `vocab`-sized one-hot steps with a softmax
    /// readout; `lstm` picks LstmCell over RnnCell.
    static NetworkSpec recurrent(std::size_t vocab, const std::vector<std::size_t>& hidden,
                                 bool lstm) {
        std::vector<LayerSpec> ls;
        for (std::size_t hsize : hidden) {
            if (lstm)
                ls.push_back(LstmCell{hsize});
            else
                ls.push_back(RnnCell{hsize});
        }
        ls.push_back(SoftmaxOutput{vocab});
        return NetworkSpec(vocab, std::move(ls));
    }

    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::size_t layer_count() const { return b_.size(); } // n, input included
    const std::vector<std::size_t>& neuron_counts() const { return b_; }
    const std::vector<VolumeShape>& volumes() const { return vols_; }
    std::size_t input_size() const { return input_vol_.flat(); }
    std::size_t output_size() const { return b_.back(); }

    bool is_recurrent() const {
        for (const auto& l : layers_)
            if (std::holds_alternative<RnnCell>(l) || std::holds_alternative<LstmCell>(l))
                return true;
        return false;
    }

    /// True when every weighted layer is dense — the shape the column
    /// partitioner can split.
    bool is_dense_only() const {
        for (const auto& l : layers_)
            if (!std::holds_alternative<Dense>(l) && !std::holds_alternative<SoftmaxOutput>(l))
                return false;
        return true;
    }

  private:
    void validate();

    std::vector<LayerSpec> layers_;
    VolumeShape input_vol_{};
    std::vector<std::size_t> b_;       // neuron counts, layer 0 = input
    std::vector<VolumeShape> vols_;    // per layer, index 0 = input
};

inline void NetworkSpec::validate() {
    if (layers_.empty()) throw ShapeError("NetworkSpec: no layers");
    if (input_vol_.flat() == 0) throw ShapeError("NetworkSpec: empty input");
    vols_ = {input_vol_};
    b_ = {input_vol_.flat()};
    for (const auto& l : layers_) {
        const VolumeShape prev = vols_.back();
        if (std::holds_alternative<Dense>(l)) {
            const auto& d = std::get<Dense>(l);
            if (d.in == 0 || d.out == 0) throw ShapeError("Dense: zero size");
            if (d.in != prev.flat())
                throw ShapeError("Dense: in=" + std::to_string(d.in) + " but previous layer has " +
                                 std::to_string(prev.flat()) + " units");
            vols_.push_back({1, 1, d.out});
        } else if (std::holds_alternative<Conv2D>(l)) {
            const auto& c = std::get<Conv2D>(l);
            if (c.kh == 0 || c.kw == 0 || c.maps == 0) throw ShapeError("Conv2D: zero size");
            if (prev.h < c.kh || prev.w < c.kw)
                throw ShapeError("Conv2D: kernel larger than input plane");
            vols_.push_back({c.maps, prev.h - c.kh + 1, prev.w - c.kw + 1});
        } else if (std::holds_alternative<MeanPool>(l)) {
            const auto& p = std::get<MeanPool>(l);
            if (p.h == 0 || p.w == 0) throw ShapeError("MeanPool: zero size");
            if (prev.h % p.h != 0 || prev.w % p.w != 0)
                throw ShapeError("MeanPool: plane not divisible by window");
            vols_.push_back({prev.c, prev.h / p.h, prev.w / p.w});
        } else if (std::holds_alternative<SoftmaxOutput>(l)) {
            const auto& s = std::get<SoftmaxOutput>(l);
            if (s.classes == 0) throw ShapeError("SoftmaxOutput: zero classes");
            vols_.push_back({1, 1, s.classes});
        } else if (std::holds_alternative<RnnCell>(l)) {
            const auto& r = std::get<RnnCell>(l);
            if (r.hidden == 0) throw ShapeError("RnnCell: zero size");
            vols_.push_back({1, 1, r.hidden});
        } else {
            const auto& r = std::get<LstmCell>(l);
            if (r.hidden == 0) throw ShapeError("LstmCell: zero size");
            vols_.push_back({1, 1, r.hidden});
        }
        b_.push_back(vols_.back().flat());
    }
    if (b_.size() < 2) throw ShapeError("NetworkSpec: need at least 2 layers");
    // Recurrent cells must not be followed by spatial layers.
    bool seen_recurrent = false;
    for (const auto& l : layers_) {
        if (std::holds_alternative<RnnCell>(l) || std::holds_alternative<LstmCell>(l))
            seen_recurrent = true;
        else if (seen_recurrent && !std::holds_alternative<SoftmaxOutput>(l) &&
                 !std::holds_alternative<Dense>(l))
            throw ShapeError("NetworkSpec: conv/pool after a recurrent cell");
    }
}

// ---------------------------------------------------------------------------
// Parameters & gradients
// ---------------------------------------------------------------------------

struct NoParams {};

struct DenseParams {
    DenseMatrix w; // in x out; column c feeds output unit c
    Vector bias;   // out
};

struct ConvParams {
    DenseMatrix k; // (cin*kh*kw) x maps
    Vector bias;   // maps
};

struct RnnParams {
    DenseMatrix w; // (in+hidden) x hidden
    Vector bias;   // hidden
};

/// Gate order: input, forget, candidate, output.
struct LstmParams {
    std::array<DenseMatrix, 4> w; // each (in+hidden) x hidden
    std::array<Vector, 4> bias;   // each hidden
};

using LayerParams = std::variant<NoParams, DenseParams, ConvParams, RnnParams, LstmParams>;

struct Parameters {
    std::vector<LayerParams> layers;
};

/// Same shapes as Parameters, plus the per-layer error vectors recorded by
/// the backward pass (delta[i] is the error at layer i+1's units; empty when
/// a layer kind does not produce one).
struct Gradients {
    Parameters g;
    std::vector<Vector> delta;
};

/// Per-position validity indicator for padded sequences (values 0/1).
using Mask = std::vector<std::uint8_t>;

// ---------------------------------------------------------------------------
// Initialization (Glorot-uniform weights, zero biases)
// ---------------------------------------------------------------------------

inline DenseMatrix glorot_matrix(std::size_t rows, std::size_t cols, double fan_in,
                                 double fan_out, Rng& rng) {
    const double r = std::sqrt(6.0 / (fan_in + fan_out));
    DenseMatrix m(rows, cols);
    for (auto& v : m.data) v = rng.uniform(-r, r);
    return m;
}

inline Parameters init_params(const NetworkSpec& spec, Rng& rng) {
    Parameters p;
    const auto& vols = spec.volumes();
    for (std::size_t li = 0; li < spec.layers().size(); ++li) {
        const auto& l = spec.layers()[li];
        const VolumeShape prev = vols[li];
        if (std::holds_alternative<Dense>(l)) {
            const auto& d = std::get<Dense>(l);
            p.layers.push_back(DenseParams{
                glorot_matrix(d.in, d.out, double(d.in), double(d.out), rng), Vector(d.out, 0.0)});
        } else if (std::holds_alternative<SoftmaxOutput>(l)) {
            const auto& s = std::get<SoftmaxOutput>(l);
            const std::size_t in = prev.flat();
            p.layers.push_back(DenseParams{
                glorot_matrix(in, s.classes, double(in), double(s.classes), rng),
                Vector(s.classes, 0.0)});
        } else if (std::holds_alternative<Conv2D>(l)) {
            const auto& c = std::get<Conv2D>(l);
            const std::size_t patch = prev.c * c.kh * c.kw;
            p.layers.push_back(ConvParams{
                glorot_matrix(patch, c.maps, double(patch), double(c.maps * c.kh * c.kw), rng),
                Vector(c.maps, 0.0)});
        } else if (std::holds_alternative<MeanPool>(l)) {
            p.layers.push_back(NoParams{});
        } else if (std::holds_alternative<RnnCell>(l)) {
            const auto& r = std::get<RnnCell>(l);
            const std::size_t in = prev.flat() + r.hidden;
            p.layers.push_back(RnnParams{
                glorot_matrix(in, r.hidden, double(in), double(r.hidden), rng),
                Vector(r.hidden, 0.0)});
        } else {
            const auto& r = std::get<LstmCell>(l);
            const std::size_t in = prev.flat() + r.hidden;
            LstmParams lp;
            for (int gate = 0; gate < 4; ++gate) {
                lp.w[gate] = glorot_matrix(in, r.hidden, double(in), double(r.hidden), rng);
                lp.bias[gate] = Vector(r.hidden, 0.0);
            }
            p.layers.push_back(std::move(lp));
        }
    }
    return p;
}

/// Zero-valued gradients/parameters with the same shapes.
inline Parameters zeros_like(const Parameters& p) {
    Parameters z;
    for (const auto& l : p.layers) {
        if (std::holds_alternative<DenseParams>(l)) {
            const auto& d = std::get<DenseParams>(l);
            z.layers.push_back(DenseParams{DenseMatrix(d.w.rows, d.w.cols), Vector(d.bias.size(), 0.0)});
        } else if (std::holds_alternative<ConvParams>(l)) {
            const auto& c = std::get<ConvParams>(l);
            z.layers.push_back(ConvParams{DenseMatrix(c.k.rows, c.k.cols), Vector(c.bias.size(), 0.0)});
        } else if (std::holds_alternative<RnnParams>(l)) {
            const auto& r = std::get<RnnParams>(l);
            z.layers.push_back(RnnParams{DenseMatrix(r.w.rows, r.w.cols), Vector(r.bias.size(), 0.0)});
        } else if (std::holds_alternative<LstmParams>(l)) {
            const auto& r = std::get<LstmParams>(l);
            LstmParams lp;
            for (int g = 0; g < 4; ++g) {
                lp.w[g] = DenseMatrix(r.w[g].rows, r.w[g].cols);
                lp.bias[g] = Vector(r.bias[g].size(), 0.0);
            }
            z.layers.push_back(std::move(lp));
        } else {
            z.layers.push_back(NoParams{});
        }
    }
    return z;
}

// ---------------------------------------------------------------------------
// Flat views — fixed traversal order shared by optimizers, the parameter
// server wire format, and the finite-difference harness.
// ---------------------------------------------------------------------------

template <class Fn> // Fn(double& v)
void for_each_param(Parameters& p, Fn&& fn) {
    for (auto& l : p.layers) {
        if (std::holds_alternative<DenseParams>(l)) {
            auto& d = std::get<DenseParams>(l);
            for (auto& v : d.w.data) fn(v);
            for (auto& v : d.bias) fn(v);
        } else if (std::holds_alternative<ConvParams>(l)) {
            auto& c = std::get<ConvParams>(l);
            for (auto& v : c.k.data) fn(v);
            for (auto& v : c.bias) fn(v);
        } else if (std::holds_alternative<RnnParams>(l)) {
            auto& r = std::get<RnnParams>(l);
            for (auto& v : r.w.data) fn(v);
            for (auto& v : r.bias) fn(v);
        } else if (std::holds_alternative<LstmParams>(l)) {
            auto& r = std::get<LstmParams>(l);
            for (int g = 0; g < 4; ++g) {
                for (auto& v : r.w[g].data) fn(v);
                for (auto& v : r.bias[g]) fn(v);
            }
        }
    }
}

template <class Fn>
void for_each_param(const Parameters& p, Fn&& fn) {
    for_each_param(const_cast<Parameters&>(p), [&](double& v) { fn(static_cast<const double&>(v)); });
}

inline std::size_t param_count(const Parameters& p) {
    std::size_t n = 0;
    for_each_param(p, [&](const double&) { ++n; });
    return n;
}

inline Vector flatten(const Parameters& p) {
    Vector out;
    out.reserve(param_count(p));
    for_each_param(p, [&](const double& v) { out.push_back(v); });
    return out;
}

inline void unflatten(const Vector& flat, Parameters& into) {
    std::size_t i = 0;
    for_each_param(into, [&](double& v) {
        if (i >= flat.size()) throw ShapeError("unflatten: flat vector too short");
        v = flat[i++];
    });
    if (i != flat.size()) throw ShapeError("unflatten: flat vector too long");
}

} // namespace shardgrad
