// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "shardgrad/core.hpp"
#include "shardgrad/costmodel.hpp"
#include "shardgrad/data_io.hpp"
#include "shardgrad/data_parallel.hpp"
#include "shardgrad/feedforward.hpp"
#include "shardgrad/model_parallel.hpp"
#include "shardgrad/network.hpp"
#include "shardgrad/optimizer.hpp"
#include "shardgrad/recurrent.hpp"
#include "shardgrad/regret.hpp"
#include "shardgrad/synth.hpp"

namespace shardgrad {

struct RunConfig {
    std::string command;
    std::string net = "fc";   // fc | cnn | rnn | lstm
    std::string mode = "none"; // none | data | model | hybrid
    std::size_t workers = 4;
    std::size_t replicas = 2;
    std::string optimizer = "sgd";
    double lr = 0.1;
    std::size_t batch = 16;
    std::size_t epochs = 1;
    std::uint64_t seed = 0;
    std::string config_path, data_path, labels_path, test_data_path, test_labels_path;
    std::string corpus_path, out_path;
    bool deterministic = true;
    std::string exchange = "hypercube";
    std::vector<std::size_t> widths = {784, 480, 160, 10};
    // cost sweep
    std::vector<std::size_t> f_list = {1, 2, 4, 8};
    std::size_t examples = 1;
    double t_latency = 1.0;
    double t_per_unit = 0.001;
    // regret lab
    std::vector<std::size_t> tau_list = {0, 1, 2, 5, 10};
    std::size_t horizon = 10000;
    std::size_t dim = 10;
    double lambda = 1.0;
    double radius = 2.0;
    double center_radius = 1.0;
    double lr_scale = 0.05;
    // recurrent
    std::size_t hidden = 64;
    std::size_t seq_len = 50;
    std::size_t truncation = 25;
    std::size_t sample = 0;
    // replica cadence
    std::size_t n_fetch = 1;
    std::size_t n_push = 1;
};

inline std::string usage_text() {
    return "usage: shardgrad <train|cost|regret|verify> [--flag value | --flag=value]...\n"
           "  common: --config FILE --seed N --out FILE --deterministic [0|1]\n"
           "  train:  --net fc|cnn|rnn|lstm --mode none|data|model|hybrid --workers F\n"
           "          --replicas R --optimizer sgd|momentum|rmsprop --lr X --batch N\n"
           "          --epochs N --widths a,b,c --data F --labels F --test-data F\n"
           "          --test-labels F --corpus F --hidden N --seq-len N --truncation N\n"
           "          --sample N --n-fetch N --n-push N --exchange hypercube|master_relay\n"
           "  cost:   --fs 1,2,4,8 --widths a,b,c --examples M --tlat X --tdata X\n"
           "  regret: --taus 0,1,2 --horizon T --dim d --lambda X --radius X\n"
           "          --center-radius X --lr-scale X\n"
           "  config file: flat key=value lines (keys match flag names), # comments\n"
           "  environment: SHARDGRAD_SEED used when no --seed is given\n";
}

namespace detail {

inline std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long r = std::stoull(v, &pos);
        if (pos != v.size()) throw ConfigError("");
        return std::size_t(r);
    } catch (...) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw ConfigError("");
        return r;
    } catch (...) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::string cur;
    std::istringstream is(v);
    while (std::getline(is, cur, ',')) out.push_back(parse_size(key, cur));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

/// Stable numeric formatting so equal configs give byte-equal CSV.
inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

} // namespace detail

/// Applies one key=value setting; throws ConfigError for unknown keys or bad
/// values. `seed_seen` tracks whether the environment fallback should apply.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value,
                          bool& seed_seen) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_size;
    using detail::parse_size_list;
    if (key == "net") cfg.net = value;
    else if (key == "mode") cfg.mode = value;
    else if (key == "workers") cfg.workers = parse_size(key, value);
    else if (key == "replicas") cfg.replicas = parse_size(key, value);
    else if (key == "optimizer") cfg.optimizer = value;
    else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "batch") cfg.batch = parse_size(key, value);
    else if (key == "epochs") cfg.epochs = parse_size(key, value);
    else if (key == "seed") { cfg.seed = std::uint64_t(parse_size(key, value)); seed_seen = true; }
    else if (key == "config") cfg.config_path = value;
    else if (key == "data") cfg.data_path = value;
    else if (key == "labels") cfg.labels_path = value;
    else if (key == "test-data") cfg.test_data_path = value;
    else if (key == "test-labels") cfg.test_labels_path = value;
    else if (key == "corpus") cfg.corpus_path = value;
    else if (key == "out") cfg.out_path = value;
    else if (key == "deterministic") cfg.deterministic = parse_bool(key, value);
    else if (key == "exchange") cfg.exchange = value;
    else if (key == "widths") cfg.widths = parse_size_list(key, value);
    else if (key == "fs") cfg.f_list = parse_size_list(key, value);
    else if (key == "examples") cfg.examples = parse_size(key, value);
    else if (key == "tlat") cfg.t_latency = parse_double(key, value);
    else if (key == "tdata") cfg.t_per_unit = parse_double(key, value);
    else if (key == "taus") cfg.tau_list = parse_size_list(key, value);
    else if (key == "horizon") cfg.horizon = parse_size(key, value);
    else if (key == "dim") cfg.dim = parse_size(key, value);
    else if (key == "lambda") cfg.lambda = parse_double(key, value);
    else if (key == "radius") cfg.radius = parse_double(key, value);
    else if (key == "center-radius") cfg.center_radius = parse_double(key, value);
    else if (key == "lr-scale") cfg.lr_scale = parse_double(key, value);
    else if (key == "hidden") cfg.hidden = parse_size(key, value);
    else if (key == "seq-len") cfg.seq_len = parse_size(key, value);
    else if (key == "truncation") cfg.truncation = parse_size(key, value);
    else if (key == "sample") cfg.sample = parse_size(key, value);
    else if (key == "n-fetch") cfg.n_fetch = parse_size(key, value);
    else if (key == "n-push") cfg.n_push = parse_size(key, value);
    else throw ConfigError("unknown setting '" + key + "'");
}

inline void load_config_file(RunConfig& cfg, const std::string& path, bool& seed_seen) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        apply_setting(cfg, key, value, seed_seen);
    }
}

/// Parses command-line words. The first word picks the command; flags come as
/// --key value or --key=value. A config file applies first, then flags on top
/// of it; SHARDGRAD_SEED fills the seed when nothing else set it.
inline RunConfig parse_args(const std::vector<std::string>& args) {
    RunConfig cfg;
    if (args.empty()) throw ConfigError("missing command");
    std::size_t at = 0;
    if (args[0].rfind("--", 0) != 0) cfg.command = args[at++];
    if (cfg.command.empty()) throw ConfigError("missing command");
    if (cfg.command != "train" && cfg.command != "cost" && cfg.command != "regret" &&
        cfg.command != "verify")
        throw ConfigError("unknown command '" + cfg.command + "'");

    std::vector<std::pair<std::string, std::string>> pairs;
    while (at < args.size()) {
        const std::string& tok = args[at];
        if (tok.rfind("--", 0) != 0) throw ConfigError("expected a --flag, got '" + tok + "'");
        std::string key = tok.substr(2), value;
        const std::size_t eq = key.find('=');
        if (eq != std::string::npos) {
            value = key.substr(eq + 1);
            key = key.substr(0, eq);
            ++at;
        } else if (key == "deterministic" &&
                   (at + 1 >= args.size() || args[at + 1].rfind("--", 0) == 0)) {
            value = "1";
            ++at;
        } else if (at + 1 < args.size()) {
            value = args[at + 1];
            at += 2;
        } else {
            throw ConfigError("flag --" + key + " needs a value");
        }
        pairs.emplace_back(key, value);
    }

    bool seed_seen = false;
    for (const auto& [k, v] : pairs)
        if (k == "config") cfg.config_path = v;
    if (!cfg.config_path.empty()) load_config_file(cfg, cfg.config_path, seed_seen);
    for (const auto& [k, v] : pairs) apply_setting(cfg, k, v, seed_seen);
    if (!seed_seen) {
        if (const char* env = std::getenv("SHARDGRAD_SEED"))
            cfg.seed = std::uint64_t(detail::parse_size("SHARDGRAD_SEED", env));
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace detail {

inline double mean_loss_over(const NetworkSpec& spec, const Parameters& params,
                             const std::vector<Vector>& xs, const std::vector<Vector>& ys,
                             Loss loss) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        s += loss_value(loss, forward(spec, params, xs[i]).output(), ys[i]);
    return s / double(xs.size());
}

struct EpochRow {
    std::size_t epoch;
    double train_loss;
    double test_accuracy;
    std::uint64_t wall_ms;
    std::uint64_t messages;
    std::uint64_t data_units;
};

inline void write_train_csv(std::ostream& os, const std::vector<EpochRow>& rows) {
    os << "epoch,train_loss,test_accuracy,wall_ms,messages,data_units\n";
    for (const auto& r : rows)
        os << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(r.test_accuracy) << ','
           << r.wall_ms << ',' << r.messages << ',' << r.data_units << '\n';
}

inline std::uint64_t elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::uint64_t(std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count());
}

/// Feedforward nets (fc and cnn) across the four parallel modes.
inline int train_dense(const RunConfig& cfg, std::ostream& csv) {
    if (cfg.data_path.empty() || cfg.labels_path.empty())
        throw ConfigError("train: --data and --labels are required for image nets");
    const Dataset train = load_dataset(cfg.data_path, cfg.labels_path);
    Dataset test;
    const bool have_test = !cfg.test_data_path.empty() && !cfg.test_labels_path.empty();
    if (have_test) test = load_dataset(cfg.test_data_path, cfg.test_labels_path);
    const Dataset& eval_set = have_test ? test : train;

    NetworkSpec spec;
    std::size_t classes = 0;
    if (cfg.net == "fc") {
        if (cfg.widths.size() < 2) throw ConfigError("train: --widths needs at least two sizes");
        spec = NetworkSpec::fully_connected(cfg.widths);
        classes = cfg.widths.back();
        if (train.rows * train.cols != cfg.widths.front())
            throw ShapeError("train: image size does not match the first width");
    } else {
        spec = NetworkSpec::lenet_like(train.rows, train.cols, 10);
        classes = 10;
    }

    OptimizerConfig oc;
    oc.kind = parse_optimizer(cfg.optimizer);
    oc.lr = cfg.lr;
    const Loss loss = Loss::CrossEntropy;

    Rng root(cfg.seed);
    Rng init_rng = root.split();
    Rng shuffle_rng = root.split();
    Parameters params = init_params(spec, init_rng);

    std::vector<Vector> eval_x = eval_set.images, eval_y;
    eval_y.reserve(eval_set.size());
    for (std::size_t l : eval_set.labels) eval_y.push_back(one_hot(l, classes));

    std::vector<EpochRow> rows;
    const bool mp_mode = cfg.mode == "model" || cfg.mode == "hybrid";
    if (mp_mode && !spec.is_dense_only())
        throw ConfigError("train: column-partitioned modes support fully connected nets only");

    if (cfg.mode == "none") {
        Optimizer opt(oc);
        for (std::size_t e = 1; e <= cfg.epochs; ++e) {
            const auto t0 = std::chrono::steady_clock::now();
            double lsum = 0.0;
            const auto batches = make_batches(train, classes, cfg.batch, shuffle_rng);
            for (const auto& b : batches) {
                double bl = 0.0;
                const Gradients g = batch_mean_gradients(spec, params, b.x, b.y, loss, &bl);
                opt.apply(params, g.g);
                lsum += bl;
            }
            rows.push_back({e, lsum / double(batches.size()),
                            classification_accuracy(spec, params, eval_x, eval_y),
                            cfg.deterministic ? 0 : elapsed_ms(t0), 0, 0});
        }
    } else if (cfg.mode == "model") {
        MpConfig mc;
        mc.ranks = cfg.workers;
        mc.exchange = parse_exchange(cfg.exchange);
        mc.loss = loss;
        mc.deterministic = cfg.deterministic;
        mc.seed = cfg.seed;
        MpEngine eng(spec, params, oc, mc);
        std::uint64_t prev_msgs = 0, prev_units = 0;
        for (std::size_t e = 1; e <= cfg.epochs; ++e) {
            const auto t0 = std::chrono::steady_clock::now();
            double lsum = 0.0;
            const auto batches = make_batches(train, classes, cfg.batch, shuffle_rng);
            for (const auto& b : batches) lsum += eng.train_step(b.x, b.y);
            const MessageStats st = eng.stats();
            rows.push_back({e, lsum / double(batches.size()),
                            classification_accuracy(spec, eng.params(), eval_x, eval_y),
                            cfg.deterministic ? 0 : elapsed_ms(t0), st.messages - prev_msgs,
                            st.data_units - prev_units});
            prev_msgs = st.messages;
            prev_units = st.data_units;
        }
    } else if (cfg.mode == "data" || cfg.mode == "hybrid") {
        ReplicaConfig rc;
        rc.n_fetch = cfg.n_fetch;
        rc.n_push = cfg.n_push;
        ParameterServer ps(flatten(params), oc);
        std::vector<std::unique_ptr<MpEngine>> engines; // hybrid: one per replica
        GradientFn fn = local_gradient_fn(spec, loss);
        if (cfg.mode == "hybrid") {
            MpConfig mc;
            mc.ranks = cfg.workers;
            mc.exchange = parse_exchange(cfg.exchange);
            mc.loss = loss;
            mc.deterministic = cfg.deterministic;
            mc.seed = cfg.seed;
            engines.reserve(cfg.replicas);
            for (std::size_t r = 0; r < cfg.replicas; ++r)
                engines.push_back(std::make_unique<MpEngine>(spec, params, oc, mc));
        }
        std::vector<Replica> reps;
        reps.reserve(cfg.replicas);
        for (std::size_t r = 0; r < cfg.replicas; ++r)
            reps.emplace_back(ps, zeros_like(params), rc,
                              cfg.mode == "hybrid" ? mp_gradient_fn(*engines[r]) : fn);
        std::vector<Vector> train_y;
        train_y.reserve(train.size());
        for (std::size_t l : train.labels) train_y.push_back(one_hot(l, classes));
        std::uint64_t prev_msgs = 0, prev_units = 0;
        for (std::size_t e = 1; e <= cfg.epochs; ++e) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto batches = make_batches(train, classes, cfg.batch, shuffle_rng);
            if (cfg.deterministic) {
                for (std::size_t k = 0; k < batches.size(); ++k)
                    reps[k % cfg.replicas].step(batches[k]);
            } else {
                std::vector<std::vector<std::size_t>> shares(cfg.replicas);
                for (std::size_t k = 0; k < batches.size(); ++k)
                    shares[k % cfg.replicas].push_back(k);
                std::vector<std::thread> threads;
                for (std::size_t r = 0; r < cfg.replicas; ++r)
                    threads.emplace_back([&, r] { replica_run(reps[r], batches, shares[r]); });
                for (auto& t : threads) t.join();
            }
            for (auto& r : reps) r.flush();
            const auto snap = ps.pull();
            unflatten(snap.params, params);
            MessageStats st = ps.stats();
            if (cfg.mode == "hybrid")
                for (auto& eng : engines) {
                    const MessageStats es = eng->stats();
                    st.messages += es.messages;
                    st.data_units += es.data_units;
                }
            rows.push_back({e, mean_loss_over(spec, params, train.images, train_y, loss),
                            classification_accuracy(spec, params, eval_x, eval_y),
                            cfg.deterministic ? 0 : elapsed_ms(t0), st.messages - prev_msgs,
                            st.data_units - prev_units});
            prev_msgs = st.messages;
            prev_units = st.data_units;
        }
    } else {
        throw ConfigError("train: unknown mode '" + cfg.mode + "'");
    }

    write_train_csv(csv, rows);
    return 0;
}

/// Character-level recurrent nets; single-task training only.
inline int train_recurrent(const RunConfig& cfg, std::ostream& csv) {
    if (cfg.mode != "none")
        throw ConfigError("train: recurrent nets support --mode none only");
    if (cfg.corpus_path.empty()) throw ConfigError("train: --corpus is required for rnn/lstm");
    const CharCorpus corpus = CharCorpus::from_file(cfg.corpus_path);
    const std::size_t vocab = corpus.vocab_size();
    NetworkSpec spec = NetworkSpec::recurrent(vocab, {cfg.hidden}, cfg.net == "lstm");

    OptimizerConfig oc;
    oc.kind = parse_optimizer(cfg.optimizer);
    oc.lr = cfg.lr;
    Optimizer opt(oc);

    Rng root(cfg.seed);
    Rng init_rng = root.split();
    Rng shuffle_rng = root.split();
    Rng sample_rng = root.split();
    Parameters params = init_params(spec, init_rng);

    // Train on the first 90% of the stream; score next-symbol accuracy on
    // the held-out tail with carried state.
    const std::size_t train_len = std::max<std::size_t>(2, corpus.stream.size() * 9 / 10);
    const std::size_t tail_begin = train_len;

    std::vector<EpochRow> rows;
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        std::size_t live_total = 0;
        for (const auto& batch : char_batches(train_len, cfg.seq_len, cfg.batch, shuffle_rng)) {
            Gradients acc;
            double bl = 0.0;
            std::size_t blive = 0;
            for (const CharWindow& w : batch) {
                const SequenceExample ex = materialize_window(corpus.stream, vocab, w, cfg.seq_len);
                tbptt_accumulate(spec, params, ex.inputs, ex.targets, ex.mask, cfg.truncation,
                                 acc, bl, blive);
            }
            if (blive == 0) continue;
            scale_params(acc.g, 1.0 / double(blive));
            opt.apply(params, acc.g);
            loss_sum += bl;
            live_total += blive;
        }
        double hits = 0.0, tries = 0.0;
        RecurrentState st = initial_state(spec);
        for (std::size_t t = tail_begin; t + 1 < corpus.stream.size(); ++t) {
            const Vector out =
                recurrent_step(spec, params, one_hot(corpus.stream[t], vocab), st, nullptr);
            hits += argmax(out) == corpus.stream[t + 1] ? 1.0 : 0.0;
            tries += 1.0;
        }
        rows.push_back({e, live_total ? loss_sum / double(live_total) : 0.0,
                        tries > 0 ? hits / tries : 0.0, cfg.deterministic ? 0 : elapsed_ms(t0),
                        0, 0});
    }
    write_train_csv(csv, rows);

    if (cfg.sample > 0) {
        const auto idx = sample_sequence(spec, params, corpus.stream.front(), cfg.sample,
                                         sample_rng, SampleMode::Stochastic);
        std::cerr << corpus.decode(idx) << "\n";
    }
    return 0;
}

} // namespace detail

inline int cmd_train(const RunConfig& cfg, std::ostream& csv) {
    if (cfg.net == "fc" || cfg.net == "cnn") return detail::train_dense(cfg, csv);
    if (cfg.net == "rnn" || cfg.net == "lstm") return detail::train_recurrent(cfg, csv);
    throw ConfigError("unknown network kind '" + cfg.net + "'");
}

// ---------------------------------------------------------------------------
// cost
// ---------------------------------------------------------------------------

inline int cmd_cost(const RunConfig& cfg, std::ostream& csv) {
    csv << "F,K,N1,N2_paper,N2_measured_model,N3,N,T_comm\n";
    for (std::size_t F : cfg.f_list) {
        CostParams p;
        p.b = cfg.widths;
        p.machines = F;
        p.batch_examples = cfg.examples;
        p.t_latency = cfg.t_latency;
        p.t_per_unit = cfg.t_per_unit;
        const CostBreakdown cb = cost_breakdown(p);
        csv << F << ',' << detail::fmt(cb.messages) << ',' << detail::fmt(cb.init_units) << ','
            << detail::fmt(cb.forward_units) << ',' << detail::fmt(cb.forward_units_wire) << ','
            << detail::fmt(cb.backward_units) << ',' << detail::fmt(cb.avg_units_per_message)
            << ',' << detail::fmt(cb.total_time) << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------------------
// regret
// ---------------------------------------------------------------------------

inline int cmd_regret(const RunConfig& cfg, std::ostream& csv) {
    for (std::size_t tau : cfg.tau_list)
        if (tau >= cfg.horizon)
            throw ConfigError("regret: horizon must exceed every delay in --taus");
    csv << "tau,T,regret,bound_thm1,bound_thm2,bound_thm3\n";
    for (std::size_t tau : cfg.tau_list) {
        const ConvexProblem prob(cfg.dim, cfg.lambda, cfg.radius, cfg.center_radius, cfg.horizon,
                                 cfg.seed);
        const DelayedSgdResult res = run_delayed_sgd(prob, tau, cfg.lr_scale);
        const double L = prob.lipschitz();
        const double fsq = prob.divergence_bound_sq();
        const double b1 = bound_general_convex(cfg.lr_scale, L, fsq, tau, cfg.horizon);
        const double b2 = bound_strongly_convex(cfg.lambda, L, fsq, tau, cfg.horizon);
        csv << tau << ',' << cfg.horizon << ',' << detail::fmt(res.regret) << ','
            << detail::fmt(b1) << ',' << detail::fmt(b2) << ',';
        if (tau == 0)
            csv << '\n';
        else
            csv << detail::fmt(bound_smooth_strongly_convex(cfg.lambda, L, prob.smoothness(),
                                                            fsq, tau, cfg.horizon))
                << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

namespace detail {

struct CheckRow {
    std::string name;
    bool pass;
    double measured;
    double threshold;
};

} // namespace detail

inline int cmd_verify(const RunConfig& cfg, std::ostream& summary, std::ostream& csv) {
    std::vector<detail::CheckRow> checks;

    // Distributed gradients against the single-task reference.
    {
        const NetworkSpec spec = NetworkSpec::fully_connected({12, 8, 6, 4});
        Rng rng(cfg.seed + 17);
        const Parameters init = init_params(spec, rng);
        std::vector<Vector> xs, ys;
        for (int i = 0; i < 4; ++i) {
            Vector x(12);
            for (auto& v : x) v = rng.uniform(-1.0, 1.0);
            xs.push_back(std::move(x));
            ys.push_back(one_hot(rng.next_below(4), 4));
        }
        const Gradients ref =
            batch_mean_gradients(spec, init, xs, ys, Loss::CrossEntropy);
        double worst = 0.0;
        for (std::size_t F : {std::size_t(1), std::size_t(2), std::size_t(4)}) {
            for (ExchangeMode mode : {ExchangeMode::Hypercube, ExchangeMode::MasterRelay}) {
                MpConfig mc;
                mc.ranks = F;
                mc.exchange = mode;
                mc.deterministic = true;
                mc.seed = cfg.seed;
                MpEngine eng(spec, init, OptimizerConfig{}, mc);
                Gradients got = eng.compute_gradients(xs, ys, nullptr);
                if (const char* p = std::getenv("SHARDGRAD_INJECT_GRAD_PERTURB")) {
                    auto& dw = std::get<DenseParams>(got.g.layers[0]);
                    dw.w.data[0] += std::atof(p);
                }
                worst = std::max(worst, max_rel_diff(ref.g, got.g));
            }
        }
        checks.push_back({"gradient-equivalence", worst <= 1e-10, worst, 1e-10});
    }

    // Transport counters against the closed-form message/unit model.
    {
        std::size_t mismatches = 0;
        double total = 0.0;
        for (std::size_t F : {std::size_t(2), std::size_t(4)}) {
            for (std::size_t n : {std::size_t(3), std::size_t(4)}) {
                for (std::size_t M : {std::size_t(1), std::size_t(4)}) {
                    std::vector<std::size_t> b = {16, 12, 8, 4};
                    b.resize(n);
                    const NetworkSpec spec = NetworkSpec::fully_connected(b);
                    Rng rng(cfg.seed + 3);
                    MpConfig mc;
                    mc.ranks = F;
                    mc.deterministic = true;
                    MpEngine eng(spec, init_params(spec, rng), OptimizerConfig{}, mc);
                    std::vector<Vector> xs, ys;
                    for (std::size_t i = 0; i < M; ++i) {
                        Vector x(b.front());
                        for (auto& v : x) v = rng.uniform(0.0, 1.0);
                        xs.push_back(std::move(x));
                        ys.push_back(one_hot(rng.next_below(b.back()), b.back()));
                    }
                    eng.train_step(xs, ys);
                    CostParams p;
                    p.b = b;
                    p.machines = F;
                    p.batch_examples = M;
                    const auto rep = reconcile_measured(p, ExchangeMode::Hypercube, eng.stats());
                    for (const auto& row : rep.rows) {
                        ++total;
                        if (!row.ok()) ++mismatches;
                    }
                }
            }
        }
        checks.push_back({"message-reconciliation", mismatches == 0, double(mismatches), 0.0});
    }

    // Delayed-gradient regret against the strongly convex guarantees.
    {
        double worst_ratio = 0.0;
        for (std::size_t tau : {std::size_t(1), std::size_t(5)}) {
            for (std::uint64_t seed : {std::uint64_t(1), std::uint64_t(2)}) {
                const ConvexProblem prob(10, 1.0, 2.0, 1.0, 2000, seed);
                const DelayedSgdResult res = run_delayed_sgd(prob, tau, cfg.lr_scale);
                const double L = prob.lipschitz();
                const double fsq = prob.divergence_bound_sq();
                const double b2 = bound_strongly_convex(1.0, L, fsq, tau, 2000);
                const double b3 =
                    bound_smooth_strongly_convex(1.0, L, prob.smoothness(), fsq, tau, 2000);
                worst_ratio = std::max(worst_ratio, res.regret / std::min(b2, b3));
            }
        }
        checks.push_back({"regret-bounds", worst_ratio <= 1.0, worst_ratio, 1.0});
    }

    csv << "check,status,measured,threshold\n";
    bool all = true;
    for (const auto& c : checks) {
        summary << (c.pass ? "PASS " : "FAIL ") << c.name << ": measured "
                << detail::fmt(c.measured) << ", threshold " << detail::fmt(c.threshold) << "\n";
        csv << c.name << ',' << (c.pass ? "PASS" : "FAIL") << ',' << detail::fmt(c.measured)
            << ',' << detail::fmt(c.threshold) << '\n';
        all = all && c.pass;
    }
    summary << (all ? "all checks passed\n" : "at least one check FAILED\n");
    return all ? 0 : 1;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run_cli(const std::vector<std::string>& args) {
    RunConfig cfg;
    try {
        cfg = parse_args(args);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n" << usage_text();
        return 2;
    }
    try {
        std::ofstream file;
        std::ostream* out = &std::cout;
        if (!cfg.out_path.empty()) {
            file.open(cfg.out_path);
            if (!file) throw ConfigError("cannot open output file " + cfg.out_path);
            out = &file;
        }
        if (cfg.command == "train") return cmd_train(cfg, *out);
        if (cfg.command == "cost") return cmd_cost(cfg, *out);
        if (cfg.command == "regret") return cmd_regret(cfg, *out);
        return cmd_verify(cfg, std::cout, *out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n" << usage_text();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

inline int shardgrad_main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

} // namespace shardgrad
