// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "shardgrad/core.hpp"
#include "shardgrad/network.hpp"
#include "shardgrad/tensor.hpp"

namespace shardgrad {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class Loss { Mse, CrossEntropy };

inline std::string to_string(Loss l) {
    return l == Loss::Mse ? "mse" : "cross_entropy";
}

inline Loss parse_loss(const std::string& s) {
    if (s == "mse") return Loss::Mse;
    if (s == "cross_entropy") return Loss::CrossEntropy;
    throw ConfigError("unknown loss: " + s);
}

inline double loss_value(Loss kind, const Vector& out, const Vector& target) {
    if (out.size() != target.size()) throw ShapeError("loss: output/target size mismatch");
    double s = 0.0;
    if (kind == Loss::Mse) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double d = out[i] - target[i];
            s += 0.5 * d * d;
        }
    } else {
        for (std::size_t i = 0; i < out.size(); ++i)
            if (target[i] != 0.0) s -= target[i] * std::log(std::max(out[i], 1e-300));
    }
    return s;
}

/// dL/da at the output activations. The fused softmax + cross-entropy path in
/// `backward` bypasses this for numerical robustness.
inline Vector loss_grad(Loss kind, const Vector& out, const Vector& target) {
    if (out.size() != target.size()) throw ShapeError("loss: output/target size mismatch");
    Vector g(out.size());
    if (kind == Loss::Mse) {
        for (std::size_t i = 0; i < out.size(); ++i) g[i] = out[i] - target[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i)
            g[i] = target[i] == 0.0 ? 0.0 : -target[i] / std::max(out[i], 1e-300);
    }
    return g;
}

inline std::size_t argmax(const Vector& v) {
    if (v.empty()) throw ShapeError("argmax: empty vector");
    return std::size_t(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Everything the backward pass needs: a[i] is the activation of layer i
/// (a[0] the input), in[i] its pre-activation (in[0] unused).
struct ForwardTrace {
    std::vector<Vector> in;
    std::vector<Vector> a;
    const Vector& output() const { return a.back(); }
};

namespace detail {

inline std::size_t vol_index(const VolumeShape& v, std::size_t c, std::size_t y, std::size_t x) {
    return (c * v.h + y) * v.w + x;
}

inline void conv_forward(const Conv2D& cv, const ConvParams& cp, const Vector& prev,
                         const VolumeShape& pv, const VolumeShape& ov, Vector& pre) {
    pre.assign(ov.flat(), 0.0);
    for (std::size_t m = 0; m < cv.maps; ++m)
        for (std::size_t y = 0; y < ov.h; ++y)
            for (std::size_t x = 0; x < ov.w; ++x) {
                double s = cp.bias[m];
                for (std::size_t ci = 0; ci < pv.c; ++ci)
                    for (std::size_t ky = 0; ky < cv.kh; ++ky)
                        for (std::size_t kx = 0; kx < cv.kw; ++kx) {
                            const std::size_t p = (ci * cv.kh + ky) * cv.kw + kx;
                            s += prev[vol_index(pv, ci, y + ky, x + kx)] * cp.k.at(p, m);
                        }
                pre[vol_index(ov, m, y, x)] = s;
            }
}

inline void pool_forward(const MeanPool& pl, const Vector& prev, const VolumeShape& pv,
                         const VolumeShape& ov, Vector& out) {
    out.assign(ov.flat(), 0.0);
    const double inv = 1.0 / double(pl.h * pl.w);
    for (std::size_t c = 0; c < ov.c; ++c)
        for (std::size_t y = 0; y < ov.h; ++y)
            for (std::size_t x = 0; x < ov.w; ++x) {
                double s = 0.0;
                for (std::size_t dy = 0; dy < pl.h; ++dy)
                    for (std::size_t dx = 0; dx < pl.w; ++dx)
                        s += prev[vol_index(pv, c, y * pl.h + dy, x * pl.w + dx)];
                out[vol_index(ov, c, y, x)] = s * inv;
            }
}

inline Vector dense_pre(const DenseParams& dp, const Vector& prev) {
    Vector pre = dp.bias;
    vec_mat_accumulate(prev, dp.w, 0, dp.w.cols, pre.data());
    return pre;
}

} // namespace detail

inline ForwardTrace forward(const NetworkSpec& spec, const Parameters& params, const Vector& x) {
    if (spec.is_recurrent()) throw ShapeError("forward: recurrent spec, use the sequence API");
    if (x.size() != spec.input_size()) throw ShapeError("forward: input size mismatch");
    ForwardTrace t;
    t.in.resize(spec.layer_count());
    t.a.resize(spec.layer_count());
    t.a[0] = x;
    const auto& vols = spec.volumes();
    for (std::size_t li = 0; li < spec.layers().size(); ++li) {
        const auto& l = spec.layers()[li];
        const Vector& prev = t.a[li];
        Vector& pre = t.in[li + 1];
        if (std::holds_alternative<Dense>(l)) {
            const auto& d = std::get<Dense>(l);
            pre = detail::dense_pre(std::get<DenseParams>(params.layers[li]), prev);
            t.a[li + 1] = activation_apply(d.act, pre);
        } else if (std::holds_alternative<SoftmaxOutput>(l)) {
            pre = detail::dense_pre(std::get<DenseParams>(params.layers[li]), prev);
            t.a[li + 1] = activation_apply(Activation::Softmax, pre);
        } else if (std::holds_alternative<Conv2D>(l)) {
            detail::conv_forward(std::get<Conv2D>(l), std::get<ConvParams>(params.layers[li]),
                                 prev, vols[li], vols[li + 1], pre);
            t.a[li + 1] = activation_apply(Activation::Sigmoid, pre);
        } else if (std::holds_alternative<MeanPool>(l)) {
            detail::pool_forward(std::get<MeanPool>(l), prev, vols[li], vols[li + 1], pre);
            t.a[li + 1] = pre;
        } else {
            throw ShapeError("forward: unsupported layer kind");
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

namespace detail {

/// grad += outer(prev, delta) and bias-grad += delta, ascending indexes.
inline void dense_grads(const Vector& prev, const Vector& delta, DenseParams& g) {
    for (std::size_t r = 0; r < g.w.rows; ++r) {
        const double pr = prev[r];
        double* row = &g.w.data[r * g.w.cols];
        for (std::size_t c = 0; c < g.w.cols; ++c) row[c] += pr * delta[c];
    }
    for (std::size_t c = 0; c < g.bias.size(); ++c) g.bias[c] += delta[c];
}

} // namespace detail

/// Pre-activation error at the output layer, shared by the local backward
/// pass and the distributed engine so both produce identical values.
inline Vector output_delta(const LayerSpec& last, const Vector& o, const Vector& target,
                           Loss loss) {
    Vector delta(o.size());
    if (std::holds_alternative<SoftmaxOutput>(last)) {
        if (loss == Loss::CrossEntropy) {
            for (std::size_t i = 0; i < o.size(); ++i) delta[i] = o[i] - target[i];
        } else {
            const Vector ga = loss_grad(loss, o, target);
            double dot = 0.0;
            for (std::size_t i = 0; i < o.size(); ++i) dot += ga[i] * o[i];
            for (std::size_t i = 0; i < o.size(); ++i) delta[i] = o[i] * (ga[i] - dot);
        }
    } else if (std::holds_alternative<Dense>(last)) {
        const auto& d = std::get<Dense>(last);
        const Vector ga = loss_grad(loss, o, target);
        for (std::size_t i = 0; i < o.size(); ++i)
            delta[i] = ga[i] * activation_prime_from_value(d.act, o[i]);
    } else {
        throw ShapeError("backward: output layer must be dense or softmax");
    }
    return delta;
}

/// Single-example backward. Fills gradient shapes matching `params` and the
/// per-layer error vectors (delta[i] is the pre-activation error of layer i;
/// delta[0] stays empty). Accumulates into `out` so a minibatch can sum.
inline void backward_accumulate(const NetworkSpec& spec, const Parameters& params,
                                const ForwardTrace& t, const Vector& target, Loss loss,
                                Gradients& out) {
    const auto& layers = spec.layers();
    const auto& vols = spec.volumes();
    const std::size_t n = spec.layer_count();
    if (out.g.layers.empty()) out.g = zeros_like(params);
    out.delta.assign(n, Vector{});
    out.delta[n - 1] = output_delta(layers.back(), t.a[n - 1], target, loss);

    for (std::size_t li = layers.size(); li-- > 0;) {
        const auto& l = layers[li];
        const Vector& delta = out.delta[li + 1];
        const Vector& prev = t.a[li];
        const bool need_prev_delta = li > 0;
        Vector prev_delta;
        if (std::holds_alternative<Dense>(l) || std::holds_alternative<SoftmaxOutput>(l)) {
            const auto& p = std::get<DenseParams>(params.layers[li]);
            detail::dense_grads(prev, delta, std::get<DenseParams>(out.g.layers[li]));
            if (need_prev_delta) prev_delta = mat_vec_rows(p.w, delta, 0, p.w.rows);
        } else if (std::holds_alternative<Conv2D>(l)) {
            const auto& cv = std::get<Conv2D>(l);
            const auto& cp = std::get<ConvParams>(params.layers[li]);
            auto& cg = std::get<ConvParams>(out.g.layers[li]);
            const VolumeShape pv = vols[li], ov = vols[li + 1];
            if (need_prev_delta) prev_delta.assign(pv.flat(), 0.0);
            for (std::size_t m = 0; m < cv.maps; ++m)
                for (std::size_t y = 0; y < ov.h; ++y)
                    for (std::size_t x = 0; x < ov.w; ++x) {
                        const double d = delta[detail::vol_index(ov, m, y, x)];
                        cg.bias[m] += d;
                        for (std::size_t ci = 0; ci < pv.c; ++ci)
                            for (std::size_t ky = 0; ky < cv.kh; ++ky)
                                for (std::size_t kx = 0; kx < cv.kw; ++kx) {
                                    const std::size_t p = (ci * cv.kh + ky) * cv.kw + kx;
                                    const std::size_t src =
                                        detail::vol_index(pv, ci, y + ky, x + kx);
                                    cg.k.at(p, m) += prev[src] * d;
                                    if (need_prev_delta) prev_delta[src] += cp.k.at(p, m) * d;
                                }
                    }
        } else if (std::holds_alternative<MeanPool>(l)) {
            const auto& pl = std::get<MeanPool>(l);
            const VolumeShape pv = vols[li], ov = vols[li + 1];
            const double inv = 1.0 / double(pl.h * pl.w);
            if (need_prev_delta) {
                prev_delta.assign(pv.flat(), 0.0);
                for (std::size_t c = 0; c < ov.c; ++c)
                    for (std::size_t y = 0; y < ov.h; ++y)
                        for (std::size_t x = 0; x < ov.w; ++x) {
                            const double d = delta[detail::vol_index(ov, c, y, x)] * inv;
                            for (std::size_t dy = 0; dy < pl.h; ++dy)
                                for (std::size_t dx = 0; dx < pl.w; ++dx)
                                    prev_delta[detail::vol_index(pv, c, y * pl.h + dy,
                                                                 x * pl.w + dx)] = d;
                        }
            }
        } else {
            throw ShapeError("backward: unsupported layer kind");
        }

        if (!need_prev_delta) break;
        // Convert activation error to pre-activation error of layer li.
        const auto& below = layers[li - 1];
        const Vector& aval = t.a[li];
        if (std::holds_alternative<Dense>(below)) {
            const auto& d = std::get<Dense>(below);
            for (std::size_t i = 0; i < prev_delta.size(); ++i)
                prev_delta[i] *= activation_prime_from_value(d.act, aval[i]);
        } else if (std::holds_alternative<Conv2D>(below)) {
            for (std::size_t i = 0; i < prev_delta.size(); ++i)
                prev_delta[i] *= sigmoid_prime_from_value(aval[i]);
        } else if (std::holds_alternative<MeanPool>(below)) {
            // pooling is linear; nothing to apply
        } else {
            throw ShapeError("backward: unsupported layer below a weighted layer");
        }
        out.delta[li] = std::move(prev_delta);
    }
}

inline Gradients backward(const NetworkSpec& spec, const Parameters& params,
                          const ForwardTrace& t, const Vector& target, Loss loss) {
    Gradients g;
    backward_accumulate(spec, params, t, target, loss, g);
    return g;
}

// ---------------------------------------------------------------------------
// Elementwise parameter arithmetic (shared traversal order with flatten)
// ---------------------------------------------------------------------------

template <class Fn> // Fn(double& a, const double& b)
void for_each_param_pair(Parameters& a, const Parameters& b, Fn&& fn) {
    if (a.layers.size() != b.layers.size()) throw ShapeError("param pair: layer count mismatch");
    for (std::size_t li = 0; li < a.layers.size(); ++li) {
        auto& la = a.layers[li];
        const auto& lb = b.layers[li];
        if (la.index() != lb.index()) throw ShapeError("param pair: layer kind mismatch");
        if (std::holds_alternative<DenseParams>(la)) {
            auto& x = std::get<DenseParams>(la);
            const auto& y = std::get<DenseParams>(lb);
            if (!x.w.same_shape(y.w) || x.bias.size() != y.bias.size())
                throw ShapeError("param pair: dense shape mismatch");
            for (std::size_t i = 0; i < x.w.data.size(); ++i) fn(x.w.data[i], y.w.data[i]);
            for (std::size_t i = 0; i < x.bias.size(); ++i) fn(x.bias[i], y.bias[i]);
        } else if (std::holds_alternative<ConvParams>(la)) {
            auto& x = std::get<ConvParams>(la);
            const auto& y = std::get<ConvParams>(lb);
            if (!x.k.same_shape(y.k) || x.bias.size() != y.bias.size())
                throw ShapeError("param pair: conv shape mismatch");
            for (std::size_t i = 0; i < x.k.data.size(); ++i) fn(x.k.data[i], y.k.data[i]);
            for (std::size_t i = 0; i < x.bias.size(); ++i) fn(x.bias[i], y.bias[i]);
        } else if (std::holds_alternative<RnnParams>(la)) {
            auto& x = std::get<RnnParams>(la);
            const auto& y = std::get<RnnParams>(lb);
            if (!x.w.same_shape(y.w) || x.bias.size() != y.bias.size())
                throw ShapeError("param pair: rnn shape mismatch");
            for (std::size_t i = 0; i < x.w.data.size(); ++i) fn(x.w.data[i], y.w.data[i]);
            for (std::size_t i = 0; i < x.bias.size(); ++i) fn(x.bias[i], y.bias[i]);
        } else if (std::holds_alternative<LstmParams>(la)) {
            auto& x = std::get<LstmParams>(la);
            const auto& y = std::get<LstmParams>(lb);
            for (int g = 0; g < 4; ++g) {
                if (!x.w[g].same_shape(y.w[g]) || x.bias[g].size() != y.bias[g].size())
                    throw ShapeError("param pair: lstm shape mismatch");
                for (std::size_t i = 0; i < x.w[g].data.size(); ++i)
                    fn(x.w[g].data[i], y.w[g].data[i]);
                for (std::size_t i = 0; i < x.bias[g].size(); ++i) fn(x.bias[g][i], y.bias[g][i]);
            }
        }
    }
}

/// a += s * b, elementwise.
inline void axpy_params(Parameters& a, const Parameters& b, double s) {
    for_each_param_pair(a, b, [s](double& x, const double& y) { x += s * y; });
}

inline void scale_params(Parameters& p, double s) {
    for_each_param(p, [s](double& v) { v *= s; });
}

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|), over the shared traversal order.
inline double max_rel_diff(const Parameters& a, const Parameters& b) {
    double worst = 0.0;
    for_each_param_pair(const_cast<Parameters&>(a), b, [&](double& x, const double& y) {
        const double denom = std::max({1.0, std::abs(x), std::abs(y)});
        worst = std::max(worst, std::abs(x - y) / denom);
    });
    return worst;
}

// ---------------------------------------------------------------------------
// Reference minibatch step
// ---------------------------------------------------------------------------

/// One minibatch of examples with one-hot (or regression) targets.
struct Batch {
    std::vector<Vector> x;
    std::vector<Vector> y;
    std::size_t size() const { return x.size(); }
};

/// Sum of per-example gradients scaled by 1/batch, examples in order. The
/// distributed engines accumulate in the same order with the same scale so
/// their results can be compared elementwise.
inline Gradients batch_mean_gradients(const NetworkSpec& spec, const Parameters& params,
                                      const std::vector<Vector>& xs, const std::vector<Vector>& ys,
                                      Loss loss, double* mean_loss = nullptr) {
    if (xs.empty() || xs.size() != ys.size()) throw ShapeError("batch: empty or mismatched");
    Gradients acc;
    double lsum = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const ForwardTrace t = forward(spec, params, xs[i]);
        lsum += loss_value(loss, t.output(), ys[i]);
        backward_accumulate(spec, params, t, ys[i], loss, acc);
    }
    scale_params(acc.g, 1.0 / double(xs.size()));
    if (mean_loss) *mean_loss = lsum / double(xs.size());
    return acc;
}

/// Fraction of examples whose argmax prediction matches the one-hot target.
inline double classification_accuracy(const NetworkSpec& spec, const Parameters& params,
                                      const std::vector<Vector>& xs,
                                      const std::vector<Vector>& ys) {
    if (xs.empty() || xs.size() != ys.size()) throw ShapeError("accuracy: empty or mismatched");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const ForwardTrace t = forward(spec, params, xs[i]);
        if (argmax(t.output()) == argmax(ys[i])) ++hits;
    }
    return double(hits) / double(xs.size());
}

} // namespace shardgrad
