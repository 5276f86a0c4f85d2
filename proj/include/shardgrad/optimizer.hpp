// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "shardgrad/core.hpp"
#include "shardgrad/feedforward.hpp"
#include "shardgrad/network.hpp"

namespace shardgrad {

enum class OptimizerKind { Sgd, Momentum, RmsProp };

inline std::string to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::Sgd: return "sgd";
        case OptimizerKind::Momentum: return "momentum";
        default: return "rmsprop";
    }
}

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "momentum") return OptimizerKind::Momentum;
    if (s == "rmsprop") return OptimizerKind::RmsProp;
    throw ConfigError("unknown optimizer: " + s);
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Sgd;
    double lr = 0.01;
    double momentum = 0.9; // velocity decay
    double rho = 0.9;      // squared-gradient decay
    double eps = 1e-8;
};

/// Stateful per-entry update rule. The same element-order arithmetic runs
/// whether the weights live in a Parameters tree or in a flat vector, so a
/// parameter-server replica chain and a local loop stay bit-identical.
class Optimizer {
  public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
        if (!(cfg.lr > 0.0)) throw ConfigError("optimizer: lr must be positive");
        if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
            throw ConfigError("optimizer: momentum must be in [0,1)");
        if (cfg.rho <= 0.0 || cfg.rho >= 1.0) throw ConfigError("optimizer: rho must be in (0,1)");
    }

    const OptimizerConfig& config() const { return cfg_; }

    void apply(Parameters& w, const Parameters& g) {
        const std::size_t n = param_count(w);
        ensure_state(n);
        std::size_t i = 0;
        for_each_param_pair(w, g, [&](double& wv, const double& gv) { step_one(wv, gv, i++); });
        if (i != n) throw ShapeError("optimizer: gradient size mismatch");
    }

    void apply_flat(Vector& w, const Vector& g) {
        if (w.size() != g.size()) throw ShapeError("optimizer: gradient size mismatch");
        ensure_state(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) step_one(w[i], g[i], i);
    }

  private:
    void ensure_state(std::size_t n) {
        if (cfg_.kind == OptimizerKind::Sgd) return;
        if (state_.empty())
            state_.assign(n, 0.0);
        else if (state_.size() != n)
            throw ShapeError("optimizer: parameter count changed mid-run");
    }

    void step_one(double& w, double g, std::size_t i) {
        switch (cfg_.kind) {
            case OptimizerKind::Sgd:
                w -= cfg_.lr * g;
                break;
            case OptimizerKind::Momentum: {
                double& v = state_[i];
                v = cfg_.momentum * v - cfg_.lr * g;
                w += v;
                break;
            }
            case OptimizerKind::RmsProp: {
                double& c = state_[i];
                c = cfg_.rho * c + (1.0 - cfg_.rho) * g * g;
                w -= cfg_.lr * g / (std::sqrt(c) + cfg_.eps);
                break;
            }
        }
    }

    OptimizerConfig cfg_;
    Vector state_; // velocity or squared-gradient cache, flat order
};

} // namespace shardgrad
