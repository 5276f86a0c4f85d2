// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace shardgrad {

/// All numeric payloads are 64-bit floats; one element == one data unit.
using Vector = std::vector<double>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct RangeError : Error {
    using Error::Error;
};
struct TransportError : Error {
    using Error::Error;
};
struct TopologyError : TransportError {
    using TransportError::TransportError;
};
struct PartitionError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct InconsistencyError : Error {
    using Error::Error;
};

/// Splittable counter-based generator (SplitMix64 stream, golden-ratio
/// increment). Identical seeds give bit-identical streams on every platform,
/// and split() derives an independent stream usable from another task.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed), gamma_(kGoldenGamma) {}

    std::uint64_t next_u64() {
        state_ += gamma_;
        return mix64(state_);
    }

    /// Uniform in [0, 1), 53 mantissa bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) {
        if (!(lo < hi)) throw RangeError("Rng::uniform: lo must be < hi");
        return lo + (hi - lo) * next_double();
    }

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        // Lemire-style rejection; unbiased.
        std::uint64_t x = next_u64();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            std::uint64_t t = (0 - n) % n;
            while (lo < t) {
                x = next_u64();
                m = static_cast<__uint128_t>(x) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Derive an independent child stream (SplittableRandom scheme).
    Rng split() {
        std::uint64_t s = next_u64();
        std::uint64_t g = mix_gamma(next_u64());
        return Rng(s, g);
    }

  private:
    Rng(std::uint64_t state, std::uint64_t gamma) : state_(state), gamma_(gamma) {}

    static constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ull;

    static std::uint64_t mix64(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Gammas must be odd; weak gammas (few bit transitions) are fixed up.
    static std::uint64_t mix_gamma(std::uint64_t z) {
        z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDull;
        z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ull;
        z = (z ^ (z >> 33)) | 1ull;
        int transitions = __builtin_popcountll(z ^ (z >> 1));
        return (transitions < 24) ? z ^ 0xAAAAAAAAAAAAAAAAull : z;
    }

    std::uint64_t state_;
    std::uint64_t gamma_;
};

/// `count` samples uniform in [lo, hi); advances the stream.
inline Vector rng_uniform(Rng& rng, double lo, double hi, std::size_t count) {
    if (!(lo < hi)) throw RangeError("rng_uniform: lo must be < hi");
    Vector out(count);
    for (auto& v : out) v = lo + (hi - lo) * rng.next_double();
    return out;
}

} // namespace shardgrad
