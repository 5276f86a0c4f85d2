// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "shardgrad/core.hpp"
#include "shardgrad/feedforward.hpp"
#include "shardgrad/network.hpp"
#include "shardgrad/tensor.hpp"

namespace shardgrad {

// Gate order within LstmParams: 0 input, 1 forget, 2 candidate, 3 output.
inline constexpr int kGateIn = 0, kGateForget = 1, kGateCand = 2, kGateOut = 3;

/// Hidden and cell state per recurrent layer (cell unused for plain RNN).
struct RecurrentState {
    std::vector<Vector> h;
    std::vector<Vector> c;
};

inline RecurrentState initial_state(const NetworkSpec& spec) {
    RecurrentState s;
    for (const auto& l : spec.layers()) {
        if (std::holds_alternative<RnnCell>(l)) {
            s.h.push_back(Vector(std::get<RnnCell>(l).hidden, 0.0));
            s.c.push_back(Vector{});
        } else if (std::holds_alternative<LstmCell>(l)) {
            const std::size_t hs = std::get<LstmCell>(l).hidden;
            s.h.push_back(Vector(hs, 0.0));
            s.c.push_back(Vector(hs, 0.0));
        }
    }
    return s;
}

namespace detail {

struct CellTrace {
    Vector z;      // [input; h_prev]
    Vector h;      // output
    Vector c;      // cell state (lstm)
    Vector c_prev; // previous cell state (lstm)
    Vector tanh_c; // tanh(c) (lstm)
    std::array<Vector, 4> gate; // activated gate values (lstm)
};

struct StepTrace {
    std::vector<CellTrace> cells; // one per recurrent layer
    Vector top_in;                // pre-activation of the output head
    Vector out;                   // softmax output
    bool live = false;            // mask value
};

inline Vector concat(const Vector& a, const Vector& b) {
    Vector z;
    z.reserve(a.size() + b.size());
    z.insert(z.end(), a.begin(), a.end());
    z.insert(z.end(), b.begin(), b.end());
    return z;
}

} // namespace detail

/// Runs one time step, updating `state` in place; returns the softmax output.
/// When `trace` is non-null the intermediates needed for backward are kept.
inline Vector recurrent_step(const NetworkSpec& spec, const Parameters& params, const Vector& x,
                             RecurrentState& state, detail::StepTrace* trace) {
    if (x.size() != spec.input_size()) throw ShapeError("recurrent_step: input size mismatch");
    Vector cur = x;
    std::size_t cell_idx = 0;
    if (trace) trace->cells.clear();
    for (std::size_t li = 0; li < spec.layers().size(); ++li) {
        const auto& l = spec.layers()[li];
        if (std::holds_alternative<RnnCell>(l)) {
            const auto& rp = std::get<RnnParams>(params.layers[li]);
            detail::CellTrace ct;
            ct.z = detail::concat(cur, state.h[cell_idx]);
            Vector pre = rp.bias;
            vec_mat_accumulate(ct.z, rp.w, 0, rp.w.cols, pre.data());
            ct.h = activation_apply(Activation::Tanh, pre);
            state.h[cell_idx] = ct.h;
            cur = ct.h;
            if (trace) trace->cells.push_back(std::move(ct));
            ++cell_idx;
        } else if (std::holds_alternative<LstmCell>(l)) {
            const auto& lp = std::get<LstmParams>(params.layers[li]);
            detail::CellTrace ct;
            ct.z = detail::concat(cur, state.h[cell_idx]);
            ct.c_prev = state.c[cell_idx];
            for (int g = 0; g < 4; ++g) {
                Vector pre = lp.bias[g];
                vec_mat_accumulate(ct.z, lp.w[g], 0, lp.w[g].cols, pre.data());
                ct.gate[g] = activation_apply(
                    g == kGateCand ? Activation::Tanh : Activation::Sigmoid, pre);
            }
            const std::size_t hs = ct.gate[0].size();
            ct.c.resize(hs);
            for (std::size_t k = 0; k < hs; ++k)
                ct.c[k] = ct.gate[kGateForget][k] * ct.c_prev[k] +
                          ct.gate[kGateIn][k] * ct.gate[kGateCand][k];
            ct.tanh_c = activation_apply(Activation::Tanh, ct.c);
            ct.h.resize(hs);
            for (std::size_t k = 0; k < hs; ++k) ct.h[k] = ct.gate[kGateOut][k] * ct.tanh_c[k];
            state.h[cell_idx] = ct.h;
            state.c[cell_idx] = ct.c;
            cur = ct.h;
            if (trace) trace->cells.push_back(std::move(ct));
            ++cell_idx;
        } else if (std::holds_alternative<SoftmaxOutput>(l)) {
            const auto& dp = std::get<DenseParams>(params.layers[li]);
            Vector pre = detail::dense_pre(dp, cur);
            if (trace) trace->top_in = pre;
            cur = activation_apply(Activation::Softmax, pre);
        } else {
            throw ShapeError("recurrent_step: unsupported layer kind in a recurrent net");
        }
    }
    if (trace) trace->out = cur;
    return cur;
}

/// Gradients of the mean per-step cross-entropy of one sequence, computed by
/// backpropagation through time truncated to windows of `truncation` steps.
/// Hidden state flows forward across window boundaries; gradient does not.
/// Positions with mask 0 leave the state untouched and contribute no loss and
/// no gradient. Returns the summed loss and live-step count via out-params so
/// callers can pool several sequences before normalizing.
inline void tbptt_accumulate(const NetworkSpec& spec, const Parameters& params,
                             const std::vector<Vector>& sequence,
                             const std::vector<Vector>& targets, const Mask& mask,
                             std::size_t truncation, Gradients& out, double& loss_sum,
                             std::size_t& live_steps, RecurrentState* carry = nullptr) {
    if (!spec.is_recurrent()) throw ShapeError("tbptt: spec has no recurrent layers");
    if (sequence.size() != targets.size() || sequence.size() != mask.size())
        throw ShapeError("tbptt: sequence, targets, and mask lengths differ");
    if (truncation == 0) throw ConfigError("tbptt: truncation must be positive");
    if (out.g.layers.empty()) out.g = zeros_like(params);

    RecurrentState local_state = carry ? *carry : initial_state(spec);
    const std::size_t T = sequence.size();

    // Map recurrent cell index -> layer index.
    std::vector<std::size_t> cell_layer;
    for (std::size_t li = 0; li < spec.layers().size(); ++li)
        if (std::holds_alternative<RnnCell>(spec.layers()[li]) ||
            std::holds_alternative<LstmCell>(spec.layers()[li]))
            cell_layer.push_back(li);
    const std::size_t ncells = cell_layer.size();

    for (std::size_t w0 = 0; w0 < T; w0 += truncation) {
        const std::size_t w1 = std::min(w0 + truncation, T);
        std::vector<detail::StepTrace> steps(w1 - w0);
        for (std::size_t t = w0; t < w1; ++t) {
            auto& st = steps[t - w0];
            st.live = mask[t] != 0;
            if (!st.live) continue; // state carries unchanged
            recurrent_step(spec, params, sequence[t], local_state, &st);
            loss_sum += loss_value(Loss::CrossEntropy, st.out, targets[t]);
            ++live_steps;
        }

        // Backward over the window; no gradient crosses the window boundary.
        std::vector<Vector> dh(ncells), dc(ncells);
        for (std::size_t ci = 0; ci < ncells; ++ci) {
            const auto& l = spec.layers()[cell_layer[ci]];
            const std::size_t hs = std::holds_alternative<RnnCell>(l)
                                       ? std::get<RnnCell>(l).hidden
                                       : std::get<LstmCell>(l).hidden;
            dh[ci].assign(hs, 0.0);
            dc[ci].assign(hs, 0.0);
        }
        for (std::size_t t = w1; t-- > w0;) {
            const auto& st = steps[t - w0];
            if (!st.live) continue;
            // Output head: fused softmax + cross-entropy error.
            Vector delta(st.out.size());
            for (std::size_t k = 0; k < delta.size(); ++k) delta[k] = st.out[k] - targets[t][k];
            const std::size_t head_li = spec.layers().size() - 1;
            const auto& hp = std::get<DenseParams>(params.layers[head_li]);
            auto& hg = std::get<DenseParams>(out.g.layers[head_li]);
            const Vector& top_h = st.cells.back().h;
            detail::dense_grads(top_h, delta, hg);
            {
                Vector add = mat_vec_rows(hp.w, delta, 0, hp.w.rows);
                for (std::size_t k = 0; k < add.size(); ++k) dh[ncells - 1][k] += add[k];
            }

            for (std::size_t ci = ncells; ci-- > 0;) {
                const std::size_t li = cell_layer[ci];
                const auto& ct = st.cells[ci];
                const std::size_t hs = ct.h.size();
                const std::size_t in_len = ct.z.size() - hs;
                Vector dz(ct.z.size(), 0.0);
                if (std::holds_alternative<RnnCell>(spec.layers()[li])) {
                    const auto& rp = std::get<RnnParams>(params.layers[li]);
                    auto& rg = std::get<RnnParams>(out.g.layers[li]);
                    Vector dpre(hs);
                    for (std::size_t k = 0; k < hs; ++k)
                        dpre[k] = dh[ci][k] * tanh_prime_from_value(ct.h[k]);
                    for (std::size_t r = 0; r < rg.w.rows; ++r) {
                        const double zr = ct.z[r];
                        double* grow = &rg.w.data[r * rg.w.cols];
                        for (std::size_t k = 0; k < hs; ++k) grow[k] += zr * dpre[k];
                    }
                    for (std::size_t k = 0; k < hs; ++k) rg.bias[k] += dpre[k];
                    Vector add = mat_vec_rows(rp.w, dpre, 0, rp.w.rows);
                    for (std::size_t r = 0; r < dz.size(); ++r) dz[r] += add[r];
                } else {
                    const auto& lp = std::get<LstmParams>(params.layers[li]);
                    auto& lg = std::get<LstmParams>(out.g.layers[li]);
                    Vector dall_c(hs);
                    std::array<Vector, 4> dpre;
                    for (int g = 0; g < 4; ++g) dpre[g].assign(hs, 0.0);
                    for (std::size_t k = 0; k < hs; ++k) {
                        const double do_k = dh[ci][k] * ct.tanh_c[k];
                        dall_c[k] = dc[ci][k] +
                                    dh[ci][k] * ct.gate[kGateOut][k] *
                                        tanh_prime_from_value(ct.tanh_c[k]);
                        const double di = dall_c[k] * ct.gate[kGateCand][k];
                        const double df = dall_c[k] * ct.c_prev[k];
                        const double dg = dall_c[k] * ct.gate[kGateIn][k];
                        dpre[kGateIn][k] = di * sigmoid_prime_from_value(ct.gate[kGateIn][k]);
                        dpre[kGateForget][k] =
                            df * sigmoid_prime_from_value(ct.gate[kGateForget][k]);
                        dpre[kGateCand][k] = dg * tanh_prime_from_value(ct.gate[kGateCand][k]);
                        dpre[kGateOut][k] = do_k * sigmoid_prime_from_value(ct.gate[kGateOut][k]);
                        dc[ci][k] = dall_c[k] * ct.gate[kGateForget][k];
                    }
                    for (int g = 0; g < 4; ++g) {
                        for (std::size_t r = 0; r < lg.w[g].rows; ++r) {
                            const double zr = ct.z[r];
                            double* grow = &lg.w[g].data[r * lg.w[g].cols];
                            for (std::size_t k = 0; k < hs; ++k) grow[k] += zr * dpre[g][k];
                        }
                        for (std::size_t k = 0; k < hs; ++k) lg.bias[g][k] += dpre[g][k];
                        Vector add = mat_vec_rows(lp.w[g], dpre[g], 0, lp.w[g].rows);
                        for (std::size_t r = 0; r < dz.size(); ++r) dz[r] += add[r];
                    }
                }
                // Split dz into the input part (flows down the stack at this
                // step) and the recurrent part (flows to step t-1).
                for (std::size_t k = 0; k < hs; ++k) dh[ci][k] = dz[in_len + k];
                if (ci > 0)
                    for (std::size_t r = 0; r < in_len; ++r) dh[ci - 1][r] += dz[r];
            }
        }
    }
    if (carry) *carry = local_state;
}

/// Single-sequence convenience wrapper: mean gradients and mean loss over the
/// live steps.
inline std::pair<Gradients, double> tbptt_step(const NetworkSpec& spec, const Parameters& params,
                                               const std::vector<Vector>& sequence,
                                               const std::vector<Vector>& targets,
                                               const Mask& mask, std::size_t truncation) {
    Gradients g;
    double loss_sum = 0.0;
    std::size_t live = 0;
    tbptt_accumulate(spec, params, sequence, targets, mask, truncation, g, loss_sum, live);
    if (g.g.layers.empty()) g.g = zeros_like(params);
    if (live > 0) scale_params(g.g, 1.0 / double(live));
    return {std::move(g), live > 0 ? loss_sum / double(live) : 0.0};
}

/// Greedy or seeded-stochastic generation of `length` symbol indices,
/// starting from `seed_symbol` with a fresh zero state.
enum class SampleMode { Greedy, Stochastic };

inline std::vector<std::size_t> sample_sequence(const NetworkSpec& spec, const Parameters& params,
                                                std::size_t seed_symbol, std::size_t length,
                                                Rng& rng, SampleMode mode) {
    if (!spec.is_recurrent()) throw ShapeError("sample: spec has no recurrent layers");
    const std::size_t vocab = spec.input_size();
    if (vocab != spec.output_size())
        throw ShapeError("sample: input and output vocabularies differ");
    if (seed_symbol >= vocab) throw RangeError("sample: seed symbol outside vocabulary");
    if (length == 0) throw RangeError("sample: length must be positive");
    RecurrentState state = initial_state(spec);
    std::vector<std::size_t> out;
    out.reserve(length);
    std::size_t cur = seed_symbol;
    for (std::size_t t = 0; t < length; ++t) {
        Vector x(vocab, 0.0);
        x[cur] = 1.0;
        const Vector dist = recurrent_step(spec, params, x, state, nullptr);
        std::size_t pick = 0;
        if (mode == SampleMode::Greedy) {
            pick = argmax(dist);
        } else {
            const double u = rng.next_double();
            double cum = 0.0;
            pick = vocab - 1;
            for (std::size_t k = 0; k < vocab; ++k) {
                cum += dist[k];
                if (u < cum) {
                    pick = k;
                    break;
                }
            }
        }
        out.push_back(pick);
        cur = pick;
    }
    return out;
}

} // namespace shardgrad
