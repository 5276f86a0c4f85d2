// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include "shardgrad/core.hpp"
#include "shardgrad/feedforward.hpp"
#include "shardgrad/model_parallel.hpp"
#include "shardgrad/network.hpp"
#include "shardgrad/optimizer.hpp"
#include "shardgrad/transport.hpp"

namespace shardgrad {

// ---------------------------------------------------------------------------
// Parameter server
// ---------------------------------------------------------------------------

/// Central store of the flat weight vector. Pulls return an atomic snapshot
/// with its version; pushes apply the shared update rule one at a time and
/// bump the version. Each push records how many versions passed between the
/// pull its gradient was computed from and the moment it landed.
class ParameterServer {
  public:
    struct Snapshot {
        Vector params;
        std::uint64_t version = 0;
    };

    ParameterServer(Vector init, OptimizerConfig opt) : params_(std::move(init)), opt_(opt) {
        if (params_.empty()) throw ShapeError("parameter server: empty weight vector");
    }

    Snapshot pull() {
        std::lock_guard<std::mutex> lk(mu_);
        bump(Tag::ParamPull, 0);
        bump(Tag::ParamState, params_.size());
        return {params_, version_};
    }

    void push(const Vector& grad, std::uint64_t pulled_version) {
        std::lock_guard<std::mutex> lk(mu_);
        if (grad.size() != params_.size())
            throw ShapeError("parameter server: gradient length mismatch");
        if (pulled_version > version_)
            throw InconsistencyError("parameter server: push from the future (version " +
                                     std::to_string(pulled_version) + " > " +
                                     std::to_string(version_) + ")");
        const std::uint64_t staleness = version_ - pulled_version;
        if (staleness >= histogram_.size()) histogram_.resize(staleness + 1, 0);
        histogram_[staleness] += 1;
        bump(Tag::GradPush, grad.size());
        opt_.apply_flat(params_, grad);
        version_ += 1;
    }

    std::uint64_t version() const {
        std::lock_guard<std::mutex> lk(mu_);
        return version_;
    }

    /// histogram()[s] = number of pushes that landed s versions late.
    std::vector<std::uint64_t> staleness_histogram() const {
        std::lock_guard<std::mutex> lk(mu_);
        return histogram_;
    }

    std::uint64_t max_staleness() const {
        std::lock_guard<std::mutex> lk(mu_);
        return histogram_.empty() ? 0 : histogram_.size() - 1;
    }

    MessageStats stats() const {
        std::lock_guard<std::mutex> lk(mu_);
        return stats_;
    }

  private:
    void bump(Tag t, std::size_t units) {
        stats_.messages += 1;
        stats_.data_units += units;
        stats_.messages_by_tag[std::size_t(t)] += 1;
        stats_.units_by_tag[std::size_t(t)] += units;
    }

    mutable std::mutex mu_;
    Vector params_;
    Optimizer opt_;
    std::uint64_t version_ = 0;
    std::vector<std::uint64_t> histogram_;
    MessageStats stats_;
};

// ---------------------------------------------------------------------------
// Replicas
// ---------------------------------------------------------------------------

/// Computes the mean gradient of one minibatch at the given weights. The
/// default wraps the local forward/backward; a column-partitioned engine can
/// be plugged in instead, nesting one parallelism inside the other.
using GradientFn = std::function<Gradients(const Parameters&, const std::vector<Vector>&,
                                           const std::vector<Vector>&, double*)>;

inline GradientFn local_gradient_fn(const NetworkSpec& spec, Loss loss) {
    return [&spec, loss](const Parameters& p, const std::vector<Vector>& xs,
                         const std::vector<Vector>& ys, double* mean_loss) {
        return batch_mean_gradients(spec, p, xs, ys, loss, mean_loss);
    };
}

inline GradientFn mp_gradient_fn(MpEngine& engine) {
    return [&engine](const Parameters& p, const std::vector<Vector>& xs,
                     const std::vector<Vector>& ys, double* mean_loss) {
        engine.set_params(p);
        return engine.compute_gradients(xs, ys, mean_loss);
    };
}

struct ReplicaConfig {
    std::size_t n_fetch = 1; // pull fresh weights every n_fetch steps
    std::size_t n_push = 1;  // push the gradient sum every n_push steps
};

/// One worker of the delayed-update scheme: it fetches weights every n_fetch
/// minibatches, keeps computing gradients against its possibly stale copy,
/// and ships the accumulated gradient sum every n_push minibatches tagged
/// with the version of the oldest pull that contributed.
class Replica {
  public:
    Replica(ParameterServer& ps, Parameters shape, ReplicaConfig cfg, GradientFn fn)
        : ps_(ps), local_(std::move(shape)), cfg_(cfg), fn_(std::move(fn)) {
        if (cfg_.n_fetch == 0 || cfg_.n_push == 0)
            throw ConfigError("replica: n_fetch and n_push must be positive");
    }

    void step(const std::vector<Vector>& xs, const std::vector<Vector>& ys) {
        if (steps_ % cfg_.n_fetch == 0) {
            const auto snap = ps_.pull();
            unflatten(snap.params, local_);
            pulled_version_ = snap.version;
        }
        double loss = 0.0;
        const Gradients g = fn_(local_, xs, ys, &loss);
        last_loss_ = loss;
        Vector flat = flatten(g.g);
        if (buffer_.empty()) {
            buffer_ = std::move(flat);
            buffer_version_ = pulled_version_;
        } else {
            if (buffer_.size() != flat.size()) throw ShapeError("replica: gradient size changed");
            for (std::size_t i = 0; i < flat.size(); ++i) buffer_[i] += flat[i];
        }
        steps_ += 1;
        if (steps_ % cfg_.n_push == 0) {
            ps_.push(buffer_, buffer_version_);
            buffer_.clear();
        }
    }

    void step(const Batch& b) { step(b.x, b.y); }

    /// Ships any gradients still sitting in the buffer.
    void flush() {
        if (!buffer_.empty()) {
            ps_.push(buffer_, buffer_version_);
            buffer_.clear();
        }
    }

    double last_loss() const { return last_loss_; }
    std::size_t steps() const { return steps_; }

  private:
    ParameterServer& ps_;
    Parameters local_;
    ReplicaConfig cfg_;
    GradientFn fn_;
    Vector buffer_;
    std::uint64_t buffer_version_ = 0;
    std::uint64_t pulled_version_ = 0;
    std::size_t steps_ = 0;
    double last_loss_ = 0.0;
};

/// Runs one replica over the batches at positions `idx`, in order.
inline void replica_run(Replica& r, const std::vector<Batch>& batches,
                        const std::vector<std::size_t>& idx) {
    for (std::size_t k : idx) r.step(batches[k]);
    r.flush();
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

struct DpConfig {
    std::size_t replicas = 2;
    ReplicaConfig replica;
    bool threaded = false; // false: deterministic round-robin interleave
};

struct DpResult {
    Parameters params;
    std::uint64_t versions = 0;
    std::vector<std::uint64_t> staleness_histogram;
    MessageStats ps_stats;
    std::vector<double> last_losses; // per replica
};

/// Batch k goes to replica k mod R. In round-robin mode the replicas take
/// turns one step at a time on a single thread, so a fixed batch list gives a
/// fixed result; in threaded mode each replica chews through its share
/// concurrently and only the server's apply order is serialized.
inline DpResult run_data_parallel(const NetworkSpec& spec, const Parameters& init,
                                  OptimizerConfig opt, const std::vector<Batch>& batches,
                                  DpConfig cfg, Loss loss, GradientFn grad_fn = {}) {
    if (cfg.replicas == 0) throw ConfigError("data parallel: need at least one replica");
    if (batches.empty()) throw ShapeError("data parallel: no batches");
    ParameterServer ps(flatten(init), opt);
    if (!grad_fn) grad_fn = local_gradient_fn(spec, loss);

    std::vector<Replica> reps;
    reps.reserve(cfg.replicas);
    for (std::size_t r = 0; r < cfg.replicas; ++r)
        reps.emplace_back(ps, zeros_like(init), cfg.replica, grad_fn);

    if (!cfg.threaded) {
        for (std::size_t k = 0; k < batches.size(); ++k) reps[k % cfg.replicas].step(batches[k]);
        for (auto& r : reps) r.flush();
    } else {
        std::vector<std::vector<std::size_t>> shares(cfg.replicas);
        for (std::size_t k = 0; k < batches.size(); ++k) shares[k % cfg.replicas].push_back(k);
        std::vector<std::thread> threads;
        threads.reserve(cfg.replicas);
        for (std::size_t r = 0; r < cfg.replicas; ++r)
            threads.emplace_back(
                [&, r] { replica_run(reps[r], batches, shares[r]); });
        for (auto& t : threads) t.join();
    }

    DpResult out;
    out.params = zeros_like(init);
    const auto snap = ps.pull();
    unflatten(snap.params, out.params);
    out.versions = snap.version;
    out.staleness_histogram = ps.staleness_histogram();
    out.ps_stats = ps.stats();
    for (auto& r : reps) out.last_losses.push_back(r.last_loss());
    return out;
}

} // namespace shardgrad
