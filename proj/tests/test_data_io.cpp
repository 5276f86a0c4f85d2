// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <fstream>
#include <string>

#include "shardgrad/data_io.hpp"
#include "shardgrad/synth.hpp"

using namespace shardgrad;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/shardgrad_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

} // namespace

TEST_CASE("image files round trip through write and load") {
    TempFile f("imgs.idx");
    // Two 2x3 images with distinctive corner bytes.
    const std::vector<std::uint8_t> pixels = {0, 51, 102, 153, 204, 255,
                                              255, 204, 153, 102, 51, 0};
    write_idx_images(f.path, 2, 3, pixels);
    const ImageSet set = load_idx_images(f.path);
    REQUIRE(set.rows == 2);
    REQUIRE(set.cols == 3);
    REQUIRE(set.images.size() == 2);
    REQUIRE(set.images[0][0] == 0.0);
    REQUIRE(set.images[0][5] == 1.0);
    REQUIRE(set.images[0][1] == 51.0 / 255.0);
    REQUIRE(set.images[1][0] == 1.0);

    const ImageSet bin = load_idx_images(f.path, true);
    // 153/255 = 0.6 >= 0.5 -> 1; 102/255 = 0.4 -> 0.
    REQUIRE(bin.images[0] == Vector{0.0, 0.0, 0.0, 1.0, 1.0, 1.0});
    REQUIRE(bin.images[1] == Vector{1.0, 1.0, 1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("label files round trip and pair with images into a dataset") {
    TempFile fi("pair.images.idx"), fl("pair.labels.idx");
    write_idx_images(fi.path, 1, 2, {10, 20, 30, 40, 50, 60});
    write_idx_labels(fl.path, {7, 0, 3});
    const Dataset d = load_dataset(fi.path, fl.path);
    REQUIRE(d.size() == 3);
    REQUIRE(d.labels == std::vector<std::size_t>{7, 0, 3});
    REQUIRE(d.rows == 1);
    REQUIRE(d.cols == 2);
}

TEST_CASE("malformed image and label files fail with distinct messages") {
    TempFile f("bad.idx");

    write_bytes(f.path, {0, 0, 7}); // too short for any header
    REQUIRE_THROWS_WITH(load_idx_images(f.path), Catch::Matchers::ContainsSubstring(
                                                     "truncated image header"));
    REQUIRE_THROWS_WITH(load_idx_labels(f.path),
                        Catch::Matchers::ContainsSubstring("truncated label header"));

    // Label magic where an image file is expected.
    write_bytes(f.path, {0, 0, 8, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 99});
    REQUIRE_THROWS_WITH(load_idx_images(f.path),
                        Catch::Matchers::ContainsSubstring("bad image magic 2049"));

    // Valid image header claiming more payload than present.
    write_bytes(f.path, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
    REQUIRE_THROWS_WITH(load_idx_images(f.path),
                        Catch::Matchers::ContainsSubstring("truncated image payload"));

    // Image magic where labels are expected.
    write_bytes(f.path, {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 42});
    REQUIRE_THROWS_WITH(load_idx_labels(f.path),
                        Catch::Matchers::ContainsSubstring("bad label magic 2051"));

    REQUIRE_THROWS_WITH(load_idx_images("/nonexistent/nowhere.idx"),
                        Catch::Matchers::ContainsSubstring("cannot open"));
}

TEST_CASE("datasets with mismatched image and label counts are rejected") {
    TempFile fi("mis.images.idx"), fl("mis.labels.idx");
    write_idx_images(fi.path, 1, 1, {1, 2, 3});
    write_idx_labels(fl.path, {0, 1});
    REQUIRE_THROWS_AS(load_dataset(fi.path, fl.path), FormatError);
}

TEST_CASE("one-hot encoding and shuffling behave deterministically") {
    REQUIRE(one_hot(2, 4) == Vector{0.0, 0.0, 1.0, 0.0});
    REQUIRE_THROWS_AS(one_hot(4, 4), RangeError);
    Rng a(9), b(9), c(10);
    const auto pa = shuffled_indices(50, a);
    const auto pb = shuffled_indices(50, b);
    const auto pc = shuffled_indices(50, c);
    REQUIRE(pa == pb);
    REQUIRE(pa != pc);
    std::vector<bool> seen(50, false);
    for (std::size_t i : pa) seen[i] = true;
    for (bool s : seen) REQUIRE(s);
}

TEST_CASE("batching splits the epoch and keeps the short remainder") {
    Dataset d;
    d.rows = 1;
    d.cols = 1;
    for (std::size_t i = 0; i < 100; ++i) {
        d.images.push_back(Vector{double(i)});
        d.labels.push_back(i % 5);
    }
    Rng rng(4);
    const auto batches = make_batches(d, 5, 16, rng);
    REQUIRE(batches.size() == 7);
    for (std::size_t i = 0; i < 6; ++i) REQUIRE(batches[i].size() == 16);
    REQUIRE(batches[6].size() == 4);
    // Every example appears exactly once.
    std::vector<bool> seen(100, false);
    for (const auto& b : batches)
        for (const auto& x : b.x) seen[std::size_t(x[0])] = true;
    for (bool s : seen) REQUIRE(s);
}

TEST_CASE("an oversized batch request degrades to one short batch with a warning") {
    Dataset d;
    d.rows = 1;
    d.cols = 1;
    for (std::size_t i = 0; i < 6; ++i) {
        d.images.push_back(Vector{double(i)});
        d.labels.push_back(0);
    }
    Rng rng(4);
    std::string warning;
    const auto batches = make_batches(d, 2, 64, rng, true, &warning);
    REQUIRE(batches.size() == 1);
    REQUIRE(batches[0].size() == 6);
    REQUIRE_THAT(warning, Catch::Matchers::ContainsSubstring("exceeds dataset size"));
    REQUIRE_THROWS_AS(make_batches(d, 2, 0, rng), ConfigError);
}

TEST_CASE("a corpus maps bytes to a dense sorted vocabulary") {
    const CharCorpus c = CharCorpus::from_string("abab");
    REQUIRE(c.vocab == std::vector<char>{'a', 'b'});
    REQUIRE(c.stream == std::vector<std::size_t>{0, 1, 0, 1});
    REQUIRE(c.vocab_size() == 2);
    REQUIRE(c.decode({1, 0, 0}) == "baa");
    REQUIRE_THROWS_AS(c.decode({2}), RangeError);
    REQUIRE_THROWS_AS(CharCorpus::from_string(""), RangeError);

    const CharCorpus mixed = CharCorpus::from_string("the cat.");
    REQUIRE(mixed.vocab.front() == ' '); // space sorts below the letters
    REQUIRE(mixed.decode(mixed.stream) == mixed.text);
}

TEST_CASE("windows tile the stream leaving the final symbol as a target only") {
    // Stream of 12 symbols: 11 usable positions, windows of 4 -> 4 + 4 + 3.
    const auto w = make_char_windows(12, 4);
    REQUIRE(w.size() == 3);
    REQUIRE(w[0].begin == 0);
    REQUIRE(w[0].len == 4);
    REQUIRE(w[2].begin == 8);
    REQUIRE(w[2].len == 3);
    REQUIRE_THROWS_AS(make_char_windows(1, 4), RangeError);
    REQUIRE_THROWS_AS(make_char_windows(12, 0), ConfigError);
}

TEST_CASE("materialized windows pad the tail with masked steps") {
    const CharCorpus c = CharCorpus::from_string("abcabcab");
    const auto w = make_char_windows(c.stream.size(), 5); // 7 usable -> 5 + 2
    const SequenceExample ex = materialize_window(c.stream, c.vocab_size(), w[1], 5);
    REQUIRE(ex.inputs.size() == 5);
    REQUIRE(ex.mask == Mask{1, 1, 0, 0, 0});
    // Live steps encode symbol and next symbol; padding is all zero.
    REQUIRE(ex.inputs[0] == one_hot(c.stream[5], 3));
    REQUIRE(ex.targets[0] == one_hot(c.stream[6], 3));
    REQUIRE(ex.inputs[4] == Vector(3, 0.0));
    REQUIRE(ex.targets[4] == Vector(3, 0.0));
    REQUIRE_THROWS_AS(materialize_window(c.stream, 3, CharWindow{7, 2}, 5), RangeError);
}

TEST_CASE("character batching is deterministic per seed and covers every window") {
    Rng a(3), b(3);
    const auto ba = char_batches(101, 10, 4, a);
    const auto bb = char_batches(101, 10, 4, b);
    REQUIRE(ba.size() == bb.size());
    for (std::size_t i = 0; i < ba.size(); ++i) {
        REQUIRE(ba[i].size() == bb[i].size());
        for (std::size_t j = 0; j < ba[i].size(); ++j) {
            REQUIRE(ba[i][j].begin == bb[i][j].begin);
            REQUIRE(ba[i][j].len == bb[i][j].len);
        }
    }
    std::size_t windows = 0;
    for (const auto& batch : ba) windows += batch.size();
    REQUIRE(windows == make_char_windows(101, 10).size());
}

TEST_CASE("synthetic digits are plausible image data") {
    const SyntheticDigits d = synth_digits(40, 11);
    REQUIRE(d.count() == 40);
    REQUIRE(d.rows == 28);
    REQUIRE(d.cols == 28);
    REQUIRE(d.pixels.size() == 40 * 28 * 28);
    bool any_bright = false;
    for (std::uint8_t p : d.pixels) any_bright |= p > 128;
    REQUIRE(any_bright);
    for (std::uint8_t l : d.labels) REQUIRE(l < 10);
    // Same seeds reproduce; different sample seeds differ.
    const SyntheticDigits d2 = synth_digits(40, 11);
    REQUIRE(d2.pixels == d.pixels);
    const SyntheticDigits d3 = synth_digits(40, 12);
    REQUIRE(d3.pixels != d.pixels);
}

TEST_CASE("synthetic corpus meets its size floor with a small vocabulary") {
    const std::string text = synth_corpus(4096, 3);
    REQUIRE(text.size() >= 4096);
    const CharCorpus c = CharCorpus::from_string(text);
    REQUIRE(c.vocab_size() >= 5);
    REQUIRE(c.vocab_size() <= 32); // lowercase words, spaces, periods
    REQUIRE(synth_corpus(4096, 3) == text);
    REQUIRE(synth_corpus(4096, 4) != text);
}
