// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "shardgrad/core.hpp"
#include "shardgrad/model_parallel.hpp"
#include "shardgrad/transport.hpp"

namespace shardgrad {

/// Inputs of the analytic communication model for one column-partitioned
/// training pass: layer widths b_0..b_{n-1}, machine count F, examples per
/// batch M, and transport timing constants.
struct CostParams {
    std::vector<std::size_t> b;
    std::size_t machines = 1;
    std::size_t batch_examples = 1;
    double t_latency = 0.0;  // fixed cost per message
    double t_per_unit = 0.0; // cost per payload unit
};

struct CostBreakdown {
    double messages = 0.0;            // K: total messages for the batch
    double init_units = 0.0;          // N1: per-example input + label shards
    double forward_units = 0.0;       // N2: per-example activation exchange (log-scaled form)
    double forward_units_wire = 0.0;  // per-example units the hypercube actually moves
    double backward_units = 0.0;      // N3: per-example error broadcast + partial errors
    double avg_units_per_message = 0.0;     // (N1+N2+N3) / (K / M)
    double avg_units_per_message_raw = 0.0; // (N1+N2+N3) / K, the unnormalized form
    double total_time = 0.0;                // K * (t_latency + avg * t_per_unit)
    bool log2_integral = true; // false when F is not a power of two
};

/// Closed-form message and unit counts. Forward exchange is modeled as a
/// hypercube allgather (F log2 F messages per hidden layer); the backward
/// phase as a full-error broadcast plus gathered partial errors (2(F-1)
/// messages per hidden layer). F = 1 yields an all-zero breakdown.
inline CostBreakdown cost_breakdown(const CostParams& p) {
    if (p.machines == 0) throw ConfigError("cost model: machine count must be positive");
    if (p.b.size() < 2) throw ConfigError("cost model: need at least input and output widths");
    if (p.batch_examples == 0) throw ConfigError("cost model: batch must be positive");
    CostBreakdown r;
    const double F = double(p.machines);
    const double M = double(p.batch_examples);
    const std::size_t n = p.b.size();
    r.log2_integral = (p.machines & (p.machines - 1)) == 0;
    if (p.machines == 1) return r;
    const double log2F = std::log2(F);

    double per_example_msgs = F - 1.0; // init
    for (std::size_t i = 1; i + 1 < n; ++i) {
        per_example_msgs += F * log2F + 2.0 * (F - 1.0);
        const double bi = double(p.b[i]);
        r.forward_units += F * log2F * (bi / F);
        r.forward_units_wire += (F - 1.0) * bi;
        r.backward_units += (F - 1.0) * double(p.b[i + 1]) + (F - 1.0) * (bi / F);
    }
    r.messages = M * per_example_msgs;
    r.init_units = (F - 1.0) * (double(p.b[0]) + double(p.b[n - 1]) / F);
    const double units = r.init_units + r.forward_units + r.backward_units;
    r.avg_units_per_message = units / per_example_msgs;
    r.avg_units_per_message_raw = units / r.messages;
    r.total_time = r.messages * (p.t_latency + r.avg_units_per_message * p.t_per_unit);
    return r;
}

/// Ratio between the log-scaled forward-unit form and the units a hypercube
/// allgather actually moves: log2(F) / (F - 1). Equal to 1 at F = 2.
inline double forward_units_ratio(std::size_t machines) {
    if (machines < 2) throw ConfigError("forward ratio: needs at least two machines");
    return std::log2(double(machines)) / (double(machines) - 1.0);
}

/// One reconciled quantity: closed-form expectation vs. transport-measured.
struct ReconciledRow {
    std::string name;
    double expected = 0.0;
    double measured = 0.0;
    bool ok() const { return expected == measured; }
};

struct ReconciliationReport {
    std::vector<ReconciledRow> rows;
    bool ok() const {
        for (const auto& r : rows)
            if (!r.ok()) return false;
        return true;
    }
    std::string describe() const {
        std::ostringstream os;
        for (const auto& r : rows)
            os << r.name << ": expected " << r.expected << ", measured " << r.measured
               << (r.ok() ? " [ok]" : " [MISMATCH]") << "\n";
        return os.str();
    }
};

/// Compares transport counters from a column-partitioned run against the
/// closed forms. Message totals and init/backward units follow the model for
/// either exchange mode; forward units follow the wire count of the mode in
/// use (hypercube moves (F-1) * b_i per hidden layer, master relay
/// (F-1) * b_i * (1 + 1/F)).
inline ReconciliationReport reconcile_measured(const CostParams& p, ExchangeMode mode,
                                               const MessageStats& stats) {
    const CostBreakdown cb = cost_breakdown(p);
    const double F = double(p.machines);
    const double M = double(p.batch_examples);
    const std::size_t n = p.b.size();

    double expected_msgs = 0.0;
    double expected_fwd_units = 0.0;
    if (p.machines > 1) {
        double per_example = F - 1.0;
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double bi = double(p.b[i]);
            if (mode == ExchangeMode::Hypercube) {
                per_example += F * std::log2(F) + 2.0 * (F - 1.0);
                expected_fwd_units += (F - 1.0) * bi;
            } else {
                per_example += 2.0 * (F - 1.0) + 2.0 * (F - 1.0);
                expected_fwd_units += (F - 1.0) * (bi + bi / F);
            }
        }
        expected_msgs = M * per_example;
        expected_fwd_units *= M;
    }

    const auto fwd_measured = double(stats.units_of(Tag::ActivationBroadcast) +
                                     stats.units_of(Tag::PartialActivation));
    const auto bwd_measured =
        double(stats.units_of(Tag::ErrorBroadcast) + stats.units_of(Tag::PartialError));
    const auto msg_measured = double(
        stats.messages_of(Tag::InitData) + stats.messages_of(Tag::ActivationBroadcast) +
        stats.messages_of(Tag::PartialActivation) + stats.messages_of(Tag::ErrorBroadcast) +
        stats.messages_of(Tag::PartialError));

    ReconciliationReport rep;
    rep.rows.push_back({"messages", expected_msgs, msg_measured});
    rep.rows.push_back({"init_units", M * cb.init_units, double(stats.units_of(Tag::InitData))});
    rep.rows.push_back({"forward_units", expected_fwd_units, fwd_measured});
    rep.rows.push_back({"backward_units", M * cb.backward_units, bwd_measured});
    return rep;
}

/// Throwing form of reconcile_measured.
inline ReconciliationReport validate_measured(const CostParams& p, ExchangeMode mode,
                                              const MessageStats& stats) {
    ReconciliationReport rep = reconcile_measured(p, mode, stats);
    if (!rep.ok())
        throw InconsistencyError("cost model disagrees with transport counters:\n" +
                                 rep.describe());
    return rep;
}

} // namespace shardgrad
