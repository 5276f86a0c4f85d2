// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "shardgrad/core.hpp"

namespace shardgrad {

/// In-memory digit-style dataset in the same byte layout the IDX writers
/// take: 28x28 grayscale images, labels 0..9.
struct SyntheticDigits {
    std::size_t rows = 28, cols = 28;
    std::vector<std::uint8_t> pixels;
    std::vector<std::uint8_t> labels;
    std::size_t count() const { return labels.size(); }
};

namespace detail {

/// Ten fixed class prototypes: sums of gaussian blobs at seeded positions.
inline std::vector<std::vector<double>> digit_prototypes(std::uint64_t proto_seed) {
    Rng rng(proto_seed);
    std::vector<std::vector<double>> protos;
    protos.reserve(10);
    for (int c = 0; c < 10; ++c) {
        std::vector<double> img(28 * 28, 0.0);
        const int blobs = 5 + int(rng.next_below(3));
        for (int b = 0; b < blobs; ++b) {
            const double bx = rng.uniform(5.0, 22.0);
            const double by = rng.uniform(5.0, 22.0);
            const double s2 = 2.0 * rng.uniform(1.8, 3.2) * rng.uniform(1.8, 3.2);
            for (int y = 0; y < 28; ++y)
                for (int x = 0; x < 28; ++x) {
                    const double dx = x - bx, dy = y - by;
                    img[std::size_t(y) * 28 + std::size_t(x)] +=
                        235.0 * std::exp(-(dx * dx + dy * dy) / s2);
                }
        }
        for (double& v : img)
            if (v > 255.0) v = 255.0;
        protos.push_back(std::move(img));
    }
    return protos;
}

} // namespace detail

/// Deterministic synthetic digit set: each sample is a class prototype under
/// a small integer shift plus uniform pixel noise. The prototype seed fixes
/// the class shapes, so train and test splits drawn with different sample
/// seeds share the same classes.
inline SyntheticDigits synth_digits(std::size_t count, std::uint64_t sample_seed,
                                    std::uint64_t proto_seed = 0xD1617u) {
    if (count == 0) throw RangeError("synth digits: count must be positive");
    const auto protos = detail::digit_prototypes(proto_seed);
    Rng rng(sample_seed);
    SyntheticDigits out;
    out.pixels.reserve(count * 28 * 28);
    out.labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t cls = std::size_t(rng.next_below(10));
        const int dx = int(rng.next_below(5)) - 2;
        const int dy = int(rng.next_below(5)) - 2;
        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x) {
                const int sx = x - dx, sy = y - dy;
                double v = 0.0;
                if (sx >= 0 && sx < 28 && sy >= 0 && sy < 28)
                    v = protos[cls][std::size_t(sy) * 28 + std::size_t(sx)];
                v += rng.uniform(-25.0, 25.0);
                if (v < 0.0) v = 0.0;
                if (v > 255.0) v = 255.0;
                out.pixels.push_back(std::uint8_t(v + 0.5));
            }
        out.labels.push_back(std::uint8_t(cls));
    }
    return out;
}

/// Deterministic lowercase text with strong local structure: templated
/// sentences over a fixed lexicon. Grows until at least min_bytes long.
inline std::string synth_corpus(std::size_t min_bytes, std::uint64_t seed) {
    if (min_bytes == 0) throw RangeError("synth corpus: size must be positive");
    static const std::array<const char*, 12> nouns = {"cat",   "dog",  "fox",   "bird",
                                                      "stone", "tree", "river", "cloud",
                                                      "moon",  "star", "field", "wind"};
    static const std::array<const char*, 8> verbs = {"runs",   "jumps", "sings", "waits",
                                                     "drifts", "turns", "falls", "glows"};
    static const std::array<const char*, 6> preps = {"over", "under", "near",
                                                     "past", "beside", "through"};
    static const std::array<const char*, 4> adjs = {"quick", "quiet", "bright", "pale"};
    Rng rng(seed);
    std::string text;
    text.reserve(min_bytes + 64);
    while (text.size() < min_bytes) {
        text += "the ";
        if (rng.next_below(2) == 0) {
            text += adjs[rng.next_below(adjs.size())];
            text += ' ';
        }
        text += nouns[rng.next_below(nouns.size())];
        text += ' ';
        text += verbs[rng.next_below(verbs.size())];
        text += ' ';
        text += preps[rng.next_below(preps.size())];
        text += " the ";
        text += nouns[rng.next_below(nouns.size())];
        text += ". ";
    }
    return text;
}

} // namespace shardgrad
