// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <set>

#include "oracles.hpp"
#include "shardgrad/data_io.hpp"
#include "shardgrad/network.hpp"
#include "shardgrad/recurrent.hpp"

using namespace shardgrad;

namespace {

// Sequence of one-hot symbols with next-symbol targets over a tiny vocab.
struct Toy {
    std::vector<Vector> xs, ys;
    Mask mask;
};

Toy make_toy(std::size_t vocab, const std::vector<std::size_t>& symbols, const Mask& mask) {
    Toy t;
    t.mask = mask;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        t.xs.push_back(one_hot(symbols[i], vocab));
        t.ys.push_back(one_hot(symbols[i + 1], vocab));
    }
    return t;
}

// Forward-only mean cross-entropy over the live steps, used as the scalar
// function for the finite-difference probe. Matches tbptt's masking rule:
// a masked step leaves the state untouched and adds no loss.
double sequence_loss(const NetworkSpec& spec, const Parameters& p, const Toy& t) {
    RecurrentState st = initial_state(spec);
    double sum = 0.0;
    std::size_t live = 0;
    for (std::size_t i = 0; i < t.xs.size(); ++i) {
        if (t.mask[i] == 0) continue;
        const Vector out = recurrent_step(spec, p, t.xs[i], st, nullptr);
        sum += loss_value(Loss::CrossEntropy, out, t.ys[i]);
        ++live;
    }
    return sum / double(live);
}

} // namespace

TEST_CASE("full-window backprop through time matches finite differences: rnn") {
    const NetworkSpec spec = NetworkSpec::recurrent(5, {4}, false);
    Rng rng(21);
    const Parameters p = init_params(spec, rng);
    const Toy t = make_toy(5, {0, 2, 1, 4, 3, 0, 2}, Mask(6, 1));
    const auto [g, loss] = tbptt_step(spec, p, t.xs, t.ys, t.mask, t.xs.size());
    REQUIRE_THAT(loss, Catch::Matchers::WithinRel(sequence_loss(spec, p, t), 1e-12));
    const Vector fd = testing::fd_gradient(
        p, [&](const Parameters& q) { return sequence_loss(spec, q, t); });
    REQUIRE(testing::max_rel_err(flatten(g.g), fd) <= 1e-5);
}

TEST_CASE("full-window backprop through time matches finite differences: lstm") {
    const NetworkSpec spec = NetworkSpec::recurrent(4, {3}, true);
    Rng rng(22);
    const Parameters p = init_params(spec, rng);
    const Toy t = make_toy(4, {1, 3, 0, 2, 1, 3}, Mask(5, 1));
    const auto [g, loss] = tbptt_step(spec, p, t.xs, t.ys, t.mask, t.xs.size());
    const Vector fd = testing::fd_gradient(
        p, [&](const Parameters& q) { return sequence_loss(spec, q, t); });
    REQUIRE(testing::max_rel_err(flatten(g.g), fd) <= 1e-5);
    REQUIRE(loss > 0.0);
}

TEST_CASE("stacked lstm gradients match finite differences") {
    const NetworkSpec spec = NetworkSpec::recurrent(4, {3, 3}, true);
    Rng rng(23);
    const Parameters p = init_params(spec, rng);
    const Toy t = make_toy(4, {0, 1, 2, 3, 0}, Mask(4, 1));
    const auto [g, loss] = tbptt_step(spec, p, t.xs, t.ys, t.mask, t.xs.size());
    const Vector fd = testing::fd_gradient(
        p, [&](const Parameters& q) { return sequence_loss(spec, q, t); });
    REQUIRE(testing::max_rel_err(flatten(g.g), fd) <= 1e-5);
    REQUIRE(loss > 0.0);
}

TEST_CASE("masked gradients match finite differences over the live steps") {
    const NetworkSpec spec = NetworkSpec::recurrent(4, {3}, true);
    Rng rng(24);
    const Parameters p = init_params(spec, rng);
    Toy t = make_toy(4, {1, 0, 3, 2, 0, 1}, {1, 1, 0, 1, 0});
    const auto [g, loss] = tbptt_step(spec, p, t.xs, t.ys, t.mask, t.xs.size());
    const Vector fd = testing::fd_gradient(
        p, [&](const Parameters& q) { return sequence_loss(spec, q, t); });
    REQUIRE(testing::max_rel_err(flatten(g.g), fd) <= 1e-5);
    REQUIRE(loss > 0.0);
}

TEST_CASE("a masked step is invisible: its input does not affect anything") {
    const NetworkSpec spec = NetworkSpec::recurrent(4, {3}, false);
    Rng rng(25);
    const Parameters p = init_params(spec, rng);
    Toy a = make_toy(4, {1, 0, 3, 2, 0, 1}, {1, 1, 0, 1, 1});
    Toy b = a;
    b.xs[2] = Vector{9.0, -3.0, 7.0, 2.0}; // garbage at the dead position
    b.ys[2] = Vector{0.25, 0.25, 0.25, 0.25};
    const auto [ga, la] = tbptt_step(spec, p, a.xs, a.ys, a.mask, 2);
    const auto [gb, lb] = tbptt_step(spec, p, b.xs, b.ys, b.mask, 2);
    REQUIRE(la == lb);
    REQUIRE(flatten(ga.g) == flatten(gb.g));
}

TEST_CASE("window boundaries stop the gradient but not the state") {
    const NetworkSpec spec = NetworkSpec::recurrent(4, {3}, true);
    Rng rng(26);
    const Parameters p = init_params(spec, rng);
    const Toy t = make_toy(4, {0, 3, 1, 2}, Mask(3, 1));

    // Oracle: one-step windows are the same as feeding the steps one at a
    // time while carrying the state between calls.
    Gradients expect;
    double eloss = 0.0;
    std::size_t elive = 0;
    RecurrentState carry = initial_state(spec);
    for (std::size_t i = 0; i < t.xs.size(); ++i)
        tbptt_accumulate(spec, p, {t.xs[i]}, {t.ys[i]}, Mask(1, 1), 1, expect, eloss, elive,
                         &carry);

    Gradients got;
    double gloss = 0.0;
    std::size_t glive = 0;
    tbptt_accumulate(spec, p, t.xs, t.ys, t.mask, 1, got, gloss, glive);
    REQUIRE(gloss == eloss);
    REQUIRE(glive == elive);
    REQUIRE(flatten(got.g) == flatten(expect.g));

    // And truncation must actually matter: the full-window gradient differs.
    const auto [gfull, lfull] = tbptt_step(spec, p, t.xs, t.ys, t.mask, t.xs.size());
    Gradients gtrunc = got;
    scale_params(gtrunc.g, 1.0 / double(glive));
    REQUIRE(lfull == gloss / double(glive));
    REQUIRE(testing::max_rel_err(flatten(gtrunc.g), flatten(gfull.g)) > 1e-8);
}

TEST_CASE("carried state equals the state of a manual step loop") {
    const NetworkSpec spec = NetworkSpec::recurrent(5, {4}, true);
    Rng rng(27);
    const Parameters p = init_params(spec, rng);
    const Toy t = make_toy(5, {0, 1, 2, 3, 4, 0}, Mask(5, 1));

    RecurrentState manual = initial_state(spec);
    for (const auto& x : t.xs) recurrent_step(spec, p, x, manual, nullptr);

    Gradients g;
    double loss = 0.0;
    std::size_t live = 0;
    RecurrentState carry = initial_state(spec);
    tbptt_accumulate(spec, p, t.xs, t.ys, t.mask, 2, g, loss, live, &carry);
    REQUIRE(carry.h == manual.h);
    REQUIRE(carry.c == manual.c);
}

TEST_CASE("generation emits the requested number of in-vocabulary symbols") {
    const NetworkSpec spec = NetworkSpec::recurrent(6, {5}, true);
    Rng rng(28);
    const Parameters p = init_params(spec, rng);
    Rng sampler(5);
    const auto seq = sample_sequence(spec, p, 2, 300, sampler, SampleMode::Stochastic);
    REQUIRE(seq.size() == 300);
    for (std::size_t s : seq) REQUIRE(s < 6);
}

TEST_CASE("greedy generation is deterministic, stochastic follows its seed") {
    const NetworkSpec spec = NetworkSpec::recurrent(6, {5}, false);
    Rng rng(29);
    const Parameters p = init_params(spec, rng);
    Rng s1(7), s2(7), s3(8);
    const auto g1 = sample_sequence(spec, p, 0, 40, s1, SampleMode::Greedy);
    const auto g2 = sample_sequence(spec, p, 0, 40, s2, SampleMode::Greedy);
    REQUIRE(g1 == g2);
    Rng t1(7), t2(7), t3(8);
    const auto a = sample_sequence(spec, p, 0, 200, t1, SampleMode::Stochastic);
    const auto b = sample_sequence(spec, p, 0, 200, t2, SampleMode::Stochastic);
    const auto c = sample_sequence(spec, p, 0, 200, t3, SampleMode::Stochastic);
    REQUIRE(a == b);
    REQUIRE(a != c);
}

TEST_CASE("generation rejects bad arguments") {
    const NetworkSpec spec = NetworkSpec::recurrent(4, {3}, false);
    Rng rng(30);
    const Parameters p = init_params(spec, rng);
    Rng s(1);
    REQUIRE_THROWS_AS(sample_sequence(spec, p, 4, 10, s, SampleMode::Greedy), RangeError);
    REQUIRE_THROWS_AS(sample_sequence(spec, p, 0, 0, s, SampleMode::Greedy), RangeError);
}

TEST_CASE("pooling across sequences sums losses, live counts, and gradients") {
    const NetworkSpec spec = NetworkSpec::recurrent(4, {3}, true);
    Rng rng(31);
    const Parameters p = init_params(spec, rng);
    const Toy t1 = make_toy(4, {0, 1, 2}, Mask(2, 1));
    const Toy t2 = make_toy(4, {3, 2, 1}, Mask(2, 1));

    Gradients pooled;
    double loss = 0.0;
    std::size_t live = 0;
    tbptt_accumulate(spec, p, t1.xs, t1.ys, t1.mask, 4, pooled, loss, live);
    tbptt_accumulate(spec, p, t2.xs, t2.ys, t2.mask, 4, pooled, loss, live);
    REQUIRE(live == 4);

    Gradients a, b;
    double la = 0.0, lb = 0.0;
    std::size_t va = 0, vb = 0;
    tbptt_accumulate(spec, p, t1.xs, t1.ys, t1.mask, 4, a, la, va);
    tbptt_accumulate(spec, p, t2.xs, t2.ys, t2.mask, 4, b, lb, vb);
    REQUIRE_THAT(loss, Catch::Matchers::WithinRel(la + lb, 1e-12));
    const Vector fp = flatten(pooled.g);
    const Vector fa = flatten(a.g);
    const Vector fb = flatten(b.g);
    for (std::size_t i = 0; i < fp.size(); ++i)
        REQUIRE_THAT(fp[i], Catch::Matchers::WithinRel(fa[i] + fb[i], 1e-12) ||
                                Catch::Matchers::WithinAbs(fa[i] + fb[i], 1e-15));
}
