// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "shardgrad/core.hpp"

namespace shardgrad {

/// Effective delay of a mixed fleet: the participation-weighted mean of the
/// per-group delays, rounded to the nearest integer with ties rounding up.
inline std::size_t tau_effective(const std::vector<double>& weights,
                                 const std::vector<double>& delays) {
    if (weights.empty() || weights.size() != delays.size())
        throw RangeError("tau_effective: weights and delays must be non-empty and equal length");
    double wsum = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] < 0.0 || delays[i] < 0.0)
            throw RangeError("tau_effective: weights and delays must be non-negative");
        wsum += weights[i];
        acc += weights[i] * delays[i];
    }
    if (wsum <= 0.0) throw RangeError("tau_effective: weights must not all be zero");
    return std::size_t(std::floor(acc / wsum + 0.5));
}

/// Delay-aware step size: zero while t <= tau, then scale / sqrt(t - tau).
inline double lr_at(std::size_t t, std::size_t tau, double scale) {
    if (scale <= 0.0) throw RangeError("lr_at: scale must be positive");
    if (t == 0) throw RangeError("lr_at: steps are 1-based");
    if (t <= tau) return 0.0;
    return scale / std::sqrt(double(t - tau));
}

/// Squared-distance Bregman divergence of the Euclidean proximal setup.
inline double bregman(const Vector& x, const Vector& y) {
    if (x.size() != y.size()) throw ShapeError("bregman: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return 0.5 * s;
}

/// Online sequence of strongly convex quadratics f_t(x) = (lambda/2)|x - c_t|^2
/// over a Euclidean ball of the given radius. Centers are drawn once, i.i.d.
/// per coordinate, confined to a ball of radius center_radius.
struct ConvexProblem {
    std::size_t d = 10;
    double lambda = 1.0;
    double radius = 2.0;
    double center_radius = 1.0;
    std::size_t horizon = 10000;
    std::uint64_t seed = 0;

    ConvexProblem(std::size_t dim, double lam, double rad, double c_rad, std::size_t T,
                  std::uint64_t s)
        : d(dim), lambda(lam), radius(rad), center_radius(c_rad), horizon(T), seed(s) {
        if (d == 0 || T == 0) throw RangeError("convex problem: empty dimension or horizon");
        if (lambda <= 0.0 || radius <= 0.0 || c_rad < 0.0)
            throw RangeError("convex problem: curvature and radii must be positive");
        Rng rng(seed);
        const double half = center_radius / std::sqrt(double(d));
        centers_.reserve(T);
        for (std::size_t t = 0; t < T; ++t) {
            Vector c(d);
            for (std::size_t i = 0; i < d; ++i) c[i] = rng.uniform(-half, half);
            centers_.push_back(std::move(c));
        }
    }

    const Vector& center(std::size_t t) const {
        if (t == 0 || t > horizon) throw RangeError("convex problem: step outside horizon");
        return centers_[t - 1];
    }

    double value(std::size_t t, const Vector& x) const {
        const Vector& c = center(t);
        if (x.size() != d) throw ShapeError("convex problem: point dimension mismatch");
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double diff = x[i] - c[i];
            s += diff * diff;
        }
        return 0.5 * lambda * s;
    }

    Vector grad(std::size_t t, const Vector& x) const {
        const Vector& c = center(t);
        if (x.size() != d) throw ShapeError("convex problem: point dimension mismatch");
        Vector g(d);
        for (std::size_t i = 0; i < d; ++i) g[i] = lambda * (x[i] - c[i]);
        return g;
    }

    Vector project(Vector x) const {
        double norm2 = 0.0;
        for (double v : x) norm2 += v * v;
        const double norm = std::sqrt(norm2);
        if (norm > radius) {
            const double s = radius / norm;
            for (double& v : x) v *= s;
        }
        return x;
    }

    /// Gradient-norm bound over the feasible set.
    double lipschitz() const { return lambda * (radius + center_radius); }
    /// Smoothness constant of the quadratic.
    double smoothness() const { return lambda; }
    /// Bound on the divergence between any feasible point and the start.
    double divergence_bound_sq() const { return 2.0 * radius * radius; }

  private:
    std::vector<Vector> centers_;
};

struct DelayedSgdResult {
    std::vector<Vector> iterates; // x_1 .. x_T
    Vector comparator;            // projected mean center
    double regret = 0.0;
    double loss_sum = 0.0;
};

/// Fixed comparator used for regret accounting: the in-hindsight minimizer of
/// the summed quadratics, i.e. the mean center projected onto the ball.
inline Vector hindsight_comparator(const ConvexProblem& p) {
    Vector mean(p.d, 0.0);
    for (std::size_t t = 1; t <= p.horizon; ++t) {
        const Vector& c = p.center(t);
        for (std::size_t i = 0; i < p.d; ++i) mean[i] += c[i];
    }
    for (double& v : mean) v /= double(p.horizon);
    return p.project(mean);
}

inline double regret_of(const ConvexProblem& p, const std::vector<Vector>& iterates) {
    if (iterates.size() != p.horizon) throw ShapeError("regret: trajectory length != horizon");
    const Vector star = hindsight_comparator(p);
    double r = 0.0;
    for (std::size_t t = 1; t <= p.horizon; ++t)
        r += p.value(t, iterates[t - 1]) - p.value(t, star);
    return r;
}

/// Projected gradient descent where the step applied at time t uses the
/// gradient of f_{t-tau} evaluated at the iterate that was current then: a
/// FIFO queue of delayed gradients of depth tau. Steps with no gradient old
/// enough take a zero step (the schedule is zero there anyway).
inline DelayedSgdResult run_delayed_sgd(const ConvexProblem& p, std::size_t tau,
                                        double lr_scale) {
    DelayedSgdResult res;
    res.iterates.reserve(p.horizon);
    Vector x(p.d, 0.0);
    for (std::size_t t = 1; t <= p.horizon; ++t) {
        res.iterates.push_back(x);
        res.loss_sum += p.value(t, x);
        const double eta = lr_at(t, tau, lr_scale);
        if (eta > 0.0) {
            const std::size_t s = t - tau; // >= 1 whenever eta > 0
            const Vector g = p.grad(s, res.iterates[s - 1]);
            for (std::size_t i = 0; i < p.d; ++i) x[i] -= eta * g[i];
            x = p.project(std::move(x));
        }
    }
    res.comparator = hindsight_comparator(p);
    double star_sum = 0.0;
    for (std::size_t t = 1; t <= p.horizon; ++t) star_sum += p.value(t, res.comparator);
    res.regret = res.loss_sum - star_sum;
    return res;
}

/// Regret guarantee for general convex losses under delay tau with the
/// sqrt schedule of scale sigma.
inline double bound_general_convex(double sigma, double lipschitz, double div_bound_sq,
                                   std::size_t tau, std::size_t T) {
    if (sigma <= 0.0) throw RangeError("bound: sigma must be positive");
    if (T == 0) throw RangeError("bound: horizon must be positive");
    const double L2 = lipschitz * lipschitz;
    const double rootT = std::sqrt(double(T));
    const double td = double(tau);
    return sigma * L2 * rootT + div_bound_sq * rootT / sigma + L2 * sigma * td * td / 2.0 +
           2.0 * L2 * sigma * td * rootT;
}

/// Regret guarantee for strongly convex losses under delay tau.
inline double bound_strongly_convex(double lambda, double lipschitz, double div_bound_sq,
                                    std::size_t tau, std::size_t T) {
    if (lambda <= 0.0) throw RangeError("bound: curvature must be positive");
    if (T == 0) throw RangeError("bound: horizon must be positive");
    const double L2 = lipschitz * lipschitz;
    const double td = double(tau);
    return lambda * td * div_bound_sq +
           (0.5 + td) * (L2 / lambda) * (1.0 + td + std::log(double(T)));
}

/// Sharper strongly convex + smooth guarantee. Undefined at tau = 0 because
/// its delay-dependent log term vanishes.
inline double bound_smooth_strongly_convex(double lambda, double lipschitz, double smoothness,
                                           double div_bound_sq, std::size_t tau, std::size_t T) {
    if (lambda <= 0.0) throw RangeError("bound: curvature must be positive");
    if (T == 0) throw RangeError("bound: horizon must be positive");
    if (tau == 0) throw RangeError("bound: smooth variant needs a positive delay");
    const double L2 = lipschitz * lipschitz;
    const double H = smoothness;
    const double td = double(tau);
    const double pi2 = 9.869604401089358; // pi^2
    const double inner = lambda * td * div_bound_sq +
                         (0.5 + td) * (L2 / lambda) *
                             (1.0 + td + std::log(3.0 * td + H * td / lambda)) +
                         (L2 / (2.0 * lambda)) * (1.0 + std::log(double(T))) +
                         pi2 * td * td * H * L2 / (6.0 * lambda * lambda);
    return (10.0 / 9.0) * inner;
}

} // namespace shardgrad
