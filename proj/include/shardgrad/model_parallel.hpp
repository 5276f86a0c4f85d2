// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "shardgrad/core.hpp"
#include "shardgrad/feedforward.hpp"
#include "shardgrad/network.hpp"
#include "shardgrad/optimizer.hpp"
#include "shardgrad/tensor.hpp"
#include "shardgrad/transport.hpp"

namespace shardgrad {

// ---------------------------------------------------------------------------
// Column partition
// ---------------------------------------------------------------------------

struct ShardRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
};

/// Contiguous near-even split of [0, total) into `parts`; earlier parts take
/// the remainder.
inline ShardRange split_range(std::size_t total, std::size_t parts, std::size_t part) {
    if (parts == 0 || part >= parts) throw PartitionError("split_range: bad part index");
    const std::size_t base = total / parts;
    const std::size_t rem = total % parts;
    const std::size_t begin = part * base + std::min(part, rem);
    return {begin, begin + base + (part < rem ? 1 : 0)};
}

/// How the hidden layers of a dense net are divided among F ranks. Rank w
/// owns columns hidden(i, w) of the matrix feeding layer i (and the matching
/// bias entries) plus the same-numbered rows of the matrix leaving layer i.
/// The output layer stays whole at rank 0.
struct ShardMap {
    std::size_t ranks = 1;                        // F
    std::size_t first_hidden = 1;                 // layer index of hidden()[0]
    std::vector<std::vector<ShardRange>> hidden_; // [layer-1][rank]
    std::vector<ShardRange> label_;               // target split for input frames

    const ShardRange& hidden(std::size_t layer, std::size_t rank) const {
        if (layer < first_hidden || layer - first_hidden >= hidden_.size())
            throw PartitionError("shard map: layer " + std::to_string(layer) + " is not sharded");
        return hidden_[layer - first_hidden][rank];
    }
    const ShardRange& label(std::size_t rank) const { return label_[rank]; }
    std::size_t hidden_layers() const { return hidden_.size(); }
};

inline ShardMap make_shard_map(const NetworkSpec& spec, std::size_t ranks) {
    if (ranks == 0) throw PartitionError("shard map: need at least one rank");
    if (!spec.is_dense_only() || spec.is_recurrent())
        throw PartitionError("shard map: only dense feedforward nets can be column-partitioned");
    const auto& b = spec.neuron_counts();
    const std::size_t n = b.size();
    if (n < 3 && ranks > 1)
        throw PartitionError("shard map: no hidden layers to partition");
    ShardMap map;
    map.ranks = ranks;
    map.first_hidden = 1;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (b[i] < ranks)
            throw PartitionError("shard map: layer " + std::to_string(i) + " has " +
                                 std::to_string(b[i]) + " units for " + std::to_string(ranks) +
                                 " ranks");
        std::vector<ShardRange> per_rank;
        for (std::size_t w = 0; w < ranks; ++w) per_rank.push_back(split_range(b[i], ranks, w));
        map.hidden_.push_back(std::move(per_rank));
    }
    for (std::size_t w = 0; w < ranks; ++w) map.label_.push_back(split_range(b[n - 1], ranks, w));
    return map;
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

enum class ExchangeMode { Hypercube, MasterRelay };

inline std::string to_string(ExchangeMode m) {
    return m == ExchangeMode::Hypercube ? "hypercube" : "master_relay";
}

inline ExchangeMode parse_exchange(const std::string& s) {
    if (s == "hypercube") return ExchangeMode::Hypercube;
    if (s == "master_relay") return ExchangeMode::MasterRelay;
    throw ConfigError("unknown exchange mode: " + s);
}

struct MpConfig {
    std::size_t ranks = 4; // F, rank 0 doubles as master
    ExchangeMode exchange = ExchangeMode::Hypercube;
    Loss loss = Loss::CrossEntropy;
    bool deterministic = true;
    std::uint64_t seed = 0;
    std::chrono::milliseconds timeout{5000};
};

/// Trains one dense net split column-wise over `ranks` in-process endpoints.
///
/// Every rank holds a full-shape parameter copy but reads and writes only the
/// blocks it owns; rank 0 additionally owns the output layer and maintains
/// the complete set. Per example the protocol is:
///
///   rank 0 -> others   input frame + that rank's slice of the target
///   each hidden layer  ranks compute their pre-activation slice, then swap
///                      slices (pairwise hypercube rounds, or relay through
///                      rank 0) until everyone holds the whole layer
///   rank 0             output layer, loss, output error
///   walking back       rank 0 broadcasts the layer-above error, every rank
///                      derives its slice of the layer error from its row
///                      block, other ranks return the slice to rank 0
///
/// Weight updates are computed where the needed pieces already sit and are
/// applied only after the batch finishes, so the backward pass always sees
/// the forward pass's weights. All per-entry arithmetic reuses the kernels of
/// the local implementation in the same index order, which keeps rank-0
/// results bit-identical to a single-process run.
class MpEngine {
  public:
    MpEngine(NetworkSpec spec, const Parameters& init, OptimizerConfig opt, MpConfig cfg)
        : spec_(std::move(spec)), cfg_(cfg), shards_(make_shard_map(spec_, cfg.ranks)),
          fabric_(cfg.ranks, FabricOptions{cfg.deterministic, cfg.seed, cfg.timeout}) {
        if (cfg_.ranks == 0) throw PartitionError("engine: need at least one rank");
        if (cfg_.exchange == ExchangeMode::Hypercube && (cfg_.ranks & (cfg_.ranks - 1)) != 0)
            throw TopologyError("engine: hypercube exchange needs a power-of-two rank count");
        group_.resize(cfg_.ranks);
        for (std::size_t e = 0; e < cfg_.ranks; ++e) group_[e] = e;
        for (std::size_t e = 0; e < cfg_.ranks; ++e) {
            params_.push_back(init);
            opts_.emplace_back(opt);
        }
    }

    const NetworkSpec& spec() const { return spec_; }
    const ShardMap& shards() const { return shards_; }
    const Parameters& params() const { return params_[0]; }
    const Parameters& rank_params(std::size_t rank) const { return params_.at(rank); }
    MessageStats stats() const { return fabric_.stats(); }
    void reset_stats() { fabric_.reset_stats(); }

    /// Mean gradients of the last train_step, as assembled at rank 0.
    const Gradients& last_gradients() const { return last_grads_; }

    /// Runs the forward protocol for one example and returns rank 0's trace.
    ForwardTrace forward_only(const Vector& x) {
        ForwardTrace trace;
        std::vector<Vector> xs{x};
        std::vector<Vector> ys{Vector(spec_.output_size(), 0.0)};
        run_batch(xs, ys, Phase::ForwardOnly, &trace, nullptr, nullptr);
        return trace;
    }

    /// One minibatch: distributed forward/backward per example, local update
    /// everywhere afterwards. Returns the mean loss.
    double train_step(const std::vector<Vector>& xs, const std::vector<Vector>& ys) {
        if (xs.empty() || xs.size() != ys.size())
            throw ShapeError("train_step: empty or mismatched batch");
        double mean_loss = 0.0;
        run_batch(xs, ys, Phase::Train, nullptr, &mean_loss, &last_grads_);
        return mean_loss;
    }

    /// Distributed forward/backward with no weight update; the mean gradients
    /// land at rank 0. Lets an outer loop own the update rule.
    Gradients compute_gradients(const std::vector<Vector>& xs, const std::vector<Vector>& ys,
                                double* mean_loss = nullptr) {
        if (xs.empty() || xs.size() != ys.size())
            throw ShapeError("compute_gradients: empty or mismatched batch");
        Gradients g;
        double loss = 0.0;
        run_batch(xs, ys, Phase::GradientsOnly, nullptr, &loss, &g);
        if (mean_loss) *mean_loss = loss;
        return g;
    }

    /// Overwrites every rank's parameter copy. Optimizer state is kept.
    void set_params(const Parameters& p) {
        for (auto& copy : params_) copy = p;
    }

  private:
    // Indexing follows the layer numbering of NetworkSpec::neuron_counts():
    // matrix j (params_.layers[j]) connects layer j to layer j+1.

    enum class Phase { ForwardOnly, GradientsOnly, Train };

    void run_batch(const std::vector<Vector>& xs, const std::vector<Vector>& ys, Phase phase,
                   ForwardTrace* trace_out, double* loss_out, Gradients* grads_out) {
        const std::size_t f = cfg_.ranks;
        std::vector<std::function<void()>> tasks;
        tasks.reserve(f);
        tasks.push_back([&] { master_task(xs, ys, phase, trace_out, loss_out, grads_out); });
        for (std::size_t w = 1; w < f; ++w)
            tasks.push_back([&, w] { worker_task(w, xs.size(), phase); });
        fabric_.run(std::move(tasks));
    }

    std::vector<std::size_t> other_ranks() const {
        std::vector<std::size_t> v;
        for (std::size_t e = 1; e < cfg_.ranks; ++e) v.push_back(e);
        return v;
    }

    static void expect(const Message& m, Tag tag, std::uint16_t layer) {
        if (m.tag != tag || m.layer != layer)
            throw TransportError("protocol: expected " + to_string(tag) + "/layer " +
                                 std::to_string(layer) + ", got " + to_string(m.tag) + "/layer " +
                                 std::to_string(m.layer) + " from endpoint " +
                                 std::to_string(m.sender));
    }

    std::vector<std::size_t> hidden_chunk_sizes(std::size_t layer) const {
        std::vector<std::size_t> sizes(cfg_.ranks);
        for (std::size_t w = 0; w < cfg_.ranks; ++w) sizes[w] = shards_.hidden(layer, w).size();
        return sizes;
    }

    /// Pre-activation slice this rank owns for hidden layer i: bias slice
    /// plus the column window of matrix i-1 against the full activation
    /// below. Identical per-entry arithmetic to the local dense forward.
    Vector local_pre_slice(std::size_t rank, std::size_t layer, const Vector& prev) const {
        const auto& dp = std::get<DenseParams>(params_[rank].layers[layer - 1]);
        const ShardRange s = shards_.hidden(layer, rank);
        Vector slice(dp.bias.begin() + std::ptrdiff_t(s.begin),
                     dp.bias.begin() + std::ptrdiff_t(s.end));
        vec_mat_accumulate(prev, dp.w, s.begin, s.end, slice.data());
        return slice;
    }

    /// All ranks leave this holding the complete pre-activation of `layer`.
    Vector exchange_pre(std::size_t rank, std::size_t layer, Vector own_slice) {
        const std::size_t f = cfg_.ranks;
        if (f == 1) return own_slice;
        if (cfg_.exchange == ExchangeMode::Hypercube)
            return allgather_hypercube(fabric_, rank, group_, hidden_chunk_sizes(layer), own_slice,
                                       Tag::ActivationBroadcast, std::uint16_t(layer));
        if (rank == 0) {
            Vector full(spec_.neuron_counts()[layer], 0.0);
            const ShardRange own = shards_.hidden(layer, 0);
            std::copy(own_slice.begin(), own_slice.end(), full.begin() + std::ptrdiff_t(own.begin));
            for (const Message& m : gather_to(fabric_, 0, other_ranks())) {
                expect(m, Tag::PartialActivation, std::uint16_t(layer));
                const ShardRange s = shards_.hidden(layer, m.sender);
                if (m.payload.size() != s.size())
                    throw ShapeError("protocol: activation slice size mismatch");
                std::copy(m.payload.begin(), m.payload.end(),
                          full.begin() + std::ptrdiff_t(s.begin));
            }
            Message bc;
            bc.tag = Tag::ActivationBroadcast;
            bc.layer = std::uint16_t(layer);
            bc.payload = full;
            broadcast_from(fabric_, 0, other_ranks(), bc);
            return full;
        }
        Message part;
        part.tag = Tag::PartialActivation;
        part.layer = std::uint16_t(layer);
        part.payload = std::move(own_slice);
        fabric_.send(rank, 0, std::move(part));
        Message full = fabric_.recv(rank, 0);
        expect(full, Tag::ActivationBroadcast, std::uint16_t(layer));
        return std::move(full.payload);
    }

    /// Error slice this rank owns for hidden layer i, from its row block of
    /// matrix i and the full error of layer i+1. Same arithmetic as the local
    /// backward's row kernel followed by the activation derivative.
    Vector local_delta_slice(std::size_t rank, std::size_t layer, const Vector& delta_above,
                             const Vector& a_layer) const {
        const auto& dp = std::get<DenseParams>(params_[rank].layers[layer]);
        const ShardRange s = shards_.hidden(layer, rank);
        Vector slice = mat_vec_rows(dp.w, delta_above, s.begin, s.end);
        const Activation act = std::get<Dense>(spec_.layers()[layer - 1]).act;
        for (std::size_t k = 0; k < slice.size(); ++k)
            slice[k] *= activation_prime_from_value(act, a_layer[s.begin + k]);
        return slice;
    }

    void master_task(const std::vector<Vector>& xs, const std::vector<Vector>& ys, Phase phase,
                     ForwardTrace* trace_out, double* loss_out, Gradients* grads_out) {
        const bool backward = phase != Phase::ForwardOnly;
        const std::size_t n = spec_.layer_count();
        const auto& b = spec_.neuron_counts();
        const auto others = other_ranks();
        Gradients acc;
        acc.g = zeros_like(params_[0]);
        double loss_sum = 0.0;

        for (std::size_t ex = 0; ex < xs.size(); ++ex) {
            const Vector& x = xs[ex];
            const Vector& y = ys[ex];
            if (x.size() != b[0] || y.size() != b[n - 1])
                throw ShapeError("train_step: example size mismatch");

            for (std::size_t w : others) {
                Message m;
                m.tag = Tag::InitData;
                m.layer = 0;
                m.payload = x;
                const ShardRange ls = shards_.label(w);
                m.payload.insert(m.payload.end(), y.begin() + std::ptrdiff_t(ls.begin),
                                 y.begin() + std::ptrdiff_t(ls.end));
                fabric_.send(0, w, std::move(m));
            }

            ForwardTrace t;
            t.in.resize(n);
            t.a.resize(n);
            t.a[0] = x;
            for (std::size_t i = 1; i + 1 < n; ++i) {
                Vector slice = local_pre_slice(0, i, t.a[i - 1]);
                t.in[i] = exchange_pre(0, i, std::move(slice));
                const Activation act = std::get<Dense>(spec_.layers()[i - 1]).act;
                t.a[i] = activation_apply(act, t.in[i]);
            }
            {
                const auto& dp = std::get<DenseParams>(params_[0].layers[n - 2]);
                t.in[n - 1] = detail::dense_pre(dp, t.a[n - 2]);
                const auto& last = spec_.layers()[n - 2];
                const Activation act = std::holds_alternative<SoftmaxOutput>(last)
                                           ? Activation::Softmax
                                           : std::get<Dense>(last).act;
                t.a[n - 1] = activation_apply(act, t.in[n - 1]);
            }
            if (trace_out) *trace_out = t;
            if (!backward) continue;

            loss_sum += loss_value(cfg_.loss, t.a[n - 1], y);
            std::vector<Vector> deltas(n);
            deltas[n - 1] = output_delta(spec_.layers()[n - 2], t.a[n - 1], y, cfg_.loss);
            Vector delta = deltas[n - 1];

            // delta holds the layer i+1 error entering each turn of the loop.
            for (std::size_t i = n - 2; i >= 1; --i) {
                // Full gradient of matrix i at rank 0.
                {
                    auto& g = std::get<DenseParams>(acc.g.layers[i]);
                    detail::dense_grads(t.a[i], delta, g);
                }
                Message bc;
                bc.tag = Tag::ErrorBroadcast;
                bc.layer = std::uint16_t(i + 1);
                bc.payload = delta;
                broadcast_from(fabric_, 0, others, bc);

                Vector own = local_delta_slice(0, i, delta, t.a[i]);
                Vector full(b[i], 0.0);
                const ShardRange own_s = shards_.hidden(i, 0);
                std::copy(own.begin(), own.end(), full.begin() + std::ptrdiff_t(own_s.begin));
                for (const Message& m : gather_to(fabric_, 0, others)) {
                    expect(m, Tag::PartialError, std::uint16_t(i));
                    const ShardRange s = shards_.hidden(i, m.sender);
                    if (m.payload.size() != s.size())
                        throw ShapeError("protocol: error slice size mismatch");
                    std::copy(m.payload.begin(), m.payload.end(),
                              full.begin() + std::ptrdiff_t(s.begin));
                }
                delta = std::move(full);
                deltas[i] = delta;
            }
            {
                auto& g = std::get<DenseParams>(acc.g.layers[0]);
                detail::dense_grads(t.a[0], delta, g);
            }
            acc.delta = std::move(deltas);
        }

        if (backward) {
            scale_params(acc.g, 1.0 / double(xs.size()));
            if (phase == Phase::Train) opts_[0].apply(params_[0], acc.g);
            if (grads_out) *grads_out = std::move(acc);
            if (loss_out) *loss_out = loss_sum / double(xs.size());
        }
    }

    void worker_task(std::size_t rank, std::size_t batch, Phase phase) {
        const bool backward = phase != Phase::ForwardOnly;
        const std::size_t n = spec_.layer_count();
        const auto& b = spec_.neuron_counts();
        Gradients acc;
        acc.g = zeros_like(params_[rank]);

        for (std::size_t ex = 0; ex < batch; ++ex) {
            Message init = fabric_.recv(rank, 0);
            expect(init, Tag::InitData, 0);
            const std::size_t label_len = shards_.label(rank).size();
            if (init.payload.size() != b[0] + label_len)
                throw ShapeError("protocol: input frame size mismatch");

            std::vector<Vector> a(n);
            a[0].assign(init.payload.begin(), init.payload.begin() + std::ptrdiff_t(b[0]));
            for (std::size_t i = 1; i + 1 < n; ++i) {
                Vector slice = local_pre_slice(rank, i, a[i - 1]);
                Vector full = exchange_pre(rank, i, std::move(slice));
                const Activation act = std::get<Dense>(spec_.layers()[i - 1]).act;
                a[i] = activation_apply(act, full);
            }
            if (!backward) continue;

            for (std::size_t i = n - 2; i >= 1; --i) {
                Message bc = fabric_.recv(rank, 0);
                expect(bc, Tag::ErrorBroadcast, std::uint16_t(i + 1));
                const Vector& delta_above = bc.payload;
                if (delta_above.size() != b[i + 1])
                    throw ShapeError("protocol: broadcast error size mismatch");

                // Row block of matrix i; skip the columns the slice-product
                // below will cover so every owned entry is added once.
                {
                    auto& g = std::get<DenseParams>(acc.g.layers[i]);
                    const ShardRange rows = shards_.hidden(i, rank);
                    const bool above_sharded = (i + 1) + 1 < n;
                    const ShardRange skip =
                        above_sharded ? shards_.hidden(i + 1, rank) : ShardRange{0, 0};
                    for (std::size_t r = rows.begin; r < rows.end; ++r) {
                        const double ar = a[i][r];
                        double* grow = &g.w.data[r * g.w.cols];
                        for (std::size_t c = 0; c < g.w.cols; ++c) {
                            if (above_sharded && skip.contains(c)) continue;
                            grow[c] += ar * delta_above[c];
                        }
                    }
                }
                // Column block of matrix i-1 plus the owned bias slice, from
                // this rank's own error slice.
                Vector own = local_delta_slice(rank, i, delta_above, a[i]);
                {
                    auto& g = std::get<DenseParams>(acc.g.layers[i - 1]);
                    const ShardRange cols = shards_.hidden(i, rank);
                    for (std::size_t r = 0; r < g.w.rows; ++r) {
                        const double ar = a[i - 1][r];
                        double* grow = &g.w.data[r * g.w.cols];
                        for (std::size_t k = 0; k < own.size(); ++k)
                            grow[cols.begin + k] += ar * own[k];
                    }
                    for (std::size_t k = 0; k < own.size(); ++k) g.bias[cols.begin + k] += own[k];
                }
                Message part;
                part.tag = Tag::PartialError;
                part.layer = std::uint16_t(i);
                part.payload = std::move(own);
                fabric_.send(rank, 0, std::move(part));
            }
        }

        if (backward) {
            scale_params(acc.g, 1.0 / double(batch));
            if (phase == Phase::Train) opts_[rank].apply(params_[rank], acc.g);
        }
    }

    NetworkSpec spec_;
    MpConfig cfg_;
    ShardMap shards_;
    Fabric fabric_;
    std::vector<std::size_t> group_;
    std::vector<Parameters> params_;
    std::vector<Optimizer> opts_;
    Gradients last_grads_;
};

// ---------------------------------------------------------------------------
// Invariant checks used by the test suite
// ---------------------------------------------------------------------------

/// Owned-block agreement: every rank's owned entries must equal rank 0's.
/// Returns the largest absolute difference (0 when all copies agree).
inline double shard_consistency(const MpEngine& eng) {
    const auto& spec = eng.spec();
    const auto& map = eng.shards();
    const auto& master = eng.params();
    const std::size_t n = spec.layer_count();
    double worst = 0.0;
    for (std::size_t w = 1; w < map.ranks; ++w) {
        const auto& wp = eng.rank_params(w);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const ShardRange s = map.hidden(i, w);
            const auto& mw = std::get<DenseParams>(master.layers[i - 1]);
            const auto& ww = std::get<DenseParams>(wp.layers[i - 1]);
            for (std::size_t r = 0; r < mw.w.rows; ++r)
                for (std::size_t c = s.begin; c < s.end; ++c)
                    worst = std::max(worst, std::abs(mw.w.at(r, c) - ww.w.at(r, c)));
            for (std::size_t c = s.begin; c < s.end; ++c)
                worst = std::max(worst, std::abs(mw.bias[c] - ww.bias[c]));
            const auto& mu = std::get<DenseParams>(master.layers[i]);
            const auto& wu = std::get<DenseParams>(wp.layers[i]);
            for (std::size_t r = s.begin; r < s.end; ++r)
                for (std::size_t c = 0; c < mu.w.cols; ++c)
                    worst = std::max(worst, std::abs(mu.w.at(r, c) - wu.w.at(r, c)));
        }
    }
    return worst;
}

} // namespace shardgrad
