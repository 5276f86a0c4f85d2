// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "oracles.hpp"
#include "shardgrad/feedforward.hpp"
#include "shardgrad/network.hpp"

using namespace shardgrad;
using Catch::Matchers::WithinAbs;

TEST_CASE("fully connected spec mirrors the requested widths") {
    const NetworkSpec spec = NetworkSpec::fully_connected({784, 480, 160, 10});
    REQUIRE(spec.neuron_counts() == std::vector<std::size_t>{784, 480, 160, 10});
    REQUIRE(spec.is_dense_only());
    REQUIRE_FALSE(spec.is_recurrent());
    Rng rng(1);
    const Parameters p = init_params(spec, rng);
    REQUIRE(param_count(p) == 784 * 480 + 480 + 480 * 160 + 160 + 160 * 10 + 10);
}

TEST_CASE("symmetric fan-scaled init stays inside its bound") {
    const NetworkSpec spec = NetworkSpec::fully_connected({784, 480, 10});
    Rng rng(7);
    const Parameters p = init_params(spec, rng);
    const auto& dp = std::get<DenseParams>(p.layers[0]);
    const double bound = std::sqrt(6.0 / (784.0 + 480.0));
    REQUIRE_THAT(bound, WithinAbs(0.06890, 5e-6));
    double mean = 0.0;
    for (double w : dp.w.data) {
        REQUIRE(std::abs(w) < bound);
        mean += w;
    }
    mean /= double(dp.w.data.size());
    REQUIRE(std::abs(mean) < 0.001);
    for (double b : dp.bias) REQUIRE(b == 0.0);
}

TEST_CASE("init is reproducible per seed and differs across seeds") {
    const NetworkSpec spec = NetworkSpec::fully_connected({20, 12, 4});
    Rng a(3), b(3), c(4);
    const Vector fa = flatten(init_params(spec, a));
    const Vector fb = flatten(init_params(spec, b));
    const Vector fc = flatten(init_params(spec, c));
    REQUIRE(fa == fb);
    REQUIRE(fa != fc);
}

TEST_CASE("flatten and unflatten round trip bit-exactly") {
    const NetworkSpec spec = NetworkSpec::lenet_like(28, 28, 4);
    Rng rng(11);
    const Parameters p = init_params(spec, rng);
    const Vector flat = flatten(p);
    Parameters q = zeros_like(p);
    unflatten(flat, q);
    REQUIRE(flatten(q) == flat);
    Vector bad = flat;
    bad.pop_back();
    REQUIRE_THROWS_AS(unflatten(bad, q), ShapeError);
}

TEST_CASE("spec validation rejects impossible stacks") {
    // Pool that does not divide the volume.
    REQUIRE_THROWS_AS(NetworkSpec(VolumeShape{1, 5, 5}, {MeanPool{2, 2}, SoftmaxOutput{2}}),
                      ShapeError);
    // Convolution after a recurrent cell.
    REQUIRE_THROWS_AS(NetworkSpec(8, {LstmCell{4}, Conv2D{2, 2, 2}, SoftmaxOutput{2}}),
                      ShapeError);
}

TEST_CASE("single sigmoid unit gradient of the squared error") {
    // One dense unit, w=0 b=0, input 1, target 1, mean squared error: the
    // output is 0.5 and the weight gradient is -0.125.
    NetworkSpec spec(1, {Dense{1, 1, Activation::Sigmoid}});
    Parameters p;
    p.layers.push_back(DenseParams{DenseMatrix(1, 1, {0.0}), Vector{0.0}});
    const ForwardTrace t = forward(spec, p, {1.0});
    REQUIRE_THAT(t.output()[0], WithinAbs(0.5, 1e-15));
    const Gradients g = backward(spec, p, t, {1.0}, Loss::Mse);
    const auto& dg = std::get<DenseParams>(g.g.layers[0]);
    REQUIRE_THAT(dg.w.data[0], WithinAbs(-0.125, 1e-15));
    REQUIRE_THAT(dg.bias[0], WithinAbs(-0.125, 1e-15));
}

TEST_CASE("cross entropy of a uniform guess against a one-hot target") {
    const Vector uniform(10, 0.1);
    Vector onehot(10, 0.0);
    onehot[3] = 1.0;
    REQUIRE_THAT(loss_value(Loss::CrossEntropy, uniform, onehot),
                 WithinAbs(std::log(10.0), 1e-12));
}

TEST_CASE("softmax head emits a probability vector") {
    const NetworkSpec spec = NetworkSpec::fully_connected({6, 5, 3});
    Rng rng(2);
    const Parameters p = init_params(spec, rng);
    const ForwardTrace t = forward(spec, p, rng_uniform(rng, -1, 1, 6));
    double sum = 0.0;
    for (double v : t.output()) {
        REQUIRE(v > 0.0);
        sum += v;
    }
    REQUIRE_THAT(sum, WithinAbs(1.0, 1e-12));
}

TEST_CASE("convolution stack shapes collapse to the head") {
    const NetworkSpec spec = NetworkSpec::lenet_like(28, 28, 10);
    Rng rng(5);
    const Parameters p = init_params(spec, rng);
    REQUIRE(param_count(p) == 156 + 1812 + 2316 + 130);
    const ForwardTrace t = forward(spec, p, Vector(28 * 28, 0.5));
    REQUIRE(t.output().size() == 10);
}

static double loss_of(const NetworkSpec& spec, const Parameters& p, const Vector& x,
                      const Vector& y, Loss loss) {
    return loss_value(loss, forward(spec, p, x).output(), y);
}

TEST_CASE("dense backward matches central differences") {
    const NetworkSpec spec = NetworkSpec::fully_connected({6, 8, 5});
    Rng rng(31);
    const Parameters p = init_params(spec, rng);
    const Vector x = rng_uniform(rng, -1, 1, 6);
    Vector y(5, 0.0);
    y[2] = 1.0;
    const ForwardTrace t = forward(spec, p, x);
    const Gradients g = backward(spec, p, t, y, Loss::CrossEntropy);
    const Vector fd = testing::fd_gradient(
        p, [&](const Parameters& q) { return loss_of(spec, q, x, y, Loss::CrossEntropy); });
    REQUIRE(testing::max_rel_err(flatten(g.g), fd) <= 1e-5);
}

TEST_CASE("dense backward under squared error matches central differences") {
    NetworkSpec spec(4, {Dense{4, 6, Activation::Tanh}, Dense{6, 3, Activation::Sigmoid}});
    Rng rng(33);
    const Parameters p = init_params(spec, rng);
    const Vector x = rng_uniform(rng, -1, 1, 4);
    const Vector y = {0.2, 0.9, 0.4};
    const ForwardTrace t = forward(spec, p, x);
    const Gradients g = backward(spec, p, t, y, Loss::Mse);
    const Vector fd = testing::fd_gradient(
        p, [&](const Parameters& q) { return loss_of(spec, q, x, y, Loss::Mse); });
    REQUIRE(testing::max_rel_err(flatten(g.g), fd) <= 1e-5);
}

TEST_CASE("convolution backward matches central differences") {
    NetworkSpec spec(VolumeShape{1, 8, 8},
                     {Conv2D{3, 3, 2}, MeanPool{2, 2}, Conv2D{3, 3, 2}, SoftmaxOutput{3}});
    Rng rng(37);
    const Parameters p = init_params(spec, rng);
    REQUIRE(param_count(p) <= 1000);
    const Vector x = rng_uniform(rng, 0, 1, 64);
    Vector y(3, 0.0);
    y[1] = 1.0;
    const ForwardTrace t = forward(spec, p, x);
    const Gradients g = backward(spec, p, t, y, Loss::CrossEntropy);
    const Vector fd = testing::fd_gradient(
        p, [&](const Parameters& q) { return loss_of(spec, q, x, y, Loss::CrossEntropy); });
    REQUIRE(testing::max_rel_err(flatten(g.g), fd) <= 1e-5);
}

TEST_CASE("batch mean gradients equal the scaled sum of example gradients") {
    const NetworkSpec spec = NetworkSpec::fully_connected({5, 6, 3});
    Rng rng(41);
    const Parameters p = init_params(spec, rng);
    std::vector<Vector> xs, ys;
    for (int i = 0; i < 4; ++i) {
        xs.push_back(rng_uniform(rng, -1, 1, 5));
        Vector y(3, 0.0);
        y[std::size_t(rng.next_below(3))] = 1.0;
        ys.push_back(std::move(y));
    }
    const Gradients batch = batch_mean_gradients(spec, p, xs, ys, Loss::CrossEntropy);
    Gradients sum;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const ForwardTrace t = forward(spec, p, xs[i]);
        backward_accumulate(spec, p, t, ys[i], Loss::CrossEntropy, sum);
    }
    scale_params(sum.g, 0.25);
    REQUIRE(flatten(batch.g) == flatten(sum.g));
}
