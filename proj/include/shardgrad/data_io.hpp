// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "shardgrad/core.hpp"
#include "shardgrad/feedforward.hpp"
#include "shardgrad/network.hpp"

namespace shardgrad {

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

inline std::uint32_t read_u32_be(const std::vector<std::uint8_t>& b, std::size_t off) {
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

inline void write_u32_be(std::ofstream& out, std::uint32_t v) {
    const char buf[4] = {char((v >> 24) & 0xFF), char((v >> 16) & 0xFF), char((v >> 8) & 0xFF),
                         char(v & 0xFF)};
    out.write(buf, 4);
}

} // namespace detail

struct ImageSet {
    std::size_t rows = 0, cols = 0;
    std::vector<Vector> images; // row-major pixels scaled to [0, 1]
};

/// Big-endian IDX image file: magic 2051, count, rows, cols, then raw bytes.
/// With binarize set, pixels at or above half intensity become 1, others 0.
inline ImageSet load_idx_images(const std::string& path, bool binarize = false) {
    const auto bytes = detail::read_file_bytes(path);
    if (bytes.size() < 16) throw FormatError(path + ": truncated image header");
    const std::uint32_t magic = detail::read_u32_be(bytes, 0);
    if (magic != kIdxImageMagic)
        throw FormatError(path + ": bad image magic " + std::to_string(magic));
    const std::size_t count = detail::read_u32_be(bytes, 4);
    const std::size_t rows = detail::read_u32_be(bytes, 8);
    const std::size_t cols = detail::read_u32_be(bytes, 12);
    const std::size_t need = 16 + count * rows * cols;
    if (bytes.size() < need) throw FormatError(path + ": truncated image payload");
    ImageSet set;
    set.rows = rows;
    set.cols = cols;
    set.images.reserve(count);
    std::size_t off = 16;
    for (std::size_t i = 0; i < count; ++i) {
        Vector img(rows * cols);
        for (std::size_t p = 0; p < rows * cols; ++p) {
            const double v = double(bytes[off + p]) / 255.0;
            img[p] = binarize ? (v >= 0.5 ? 1.0 : 0.0) : v;
        }
        off += rows * cols;
        set.images.push_back(std::move(img));
    }
    return set;
}

/// Big-endian IDX label file: magic 2049, count, then one byte per label.
inline std::vector<std::size_t> load_idx_labels(const std::string& path) {
    const auto bytes = detail::read_file_bytes(path);
    if (bytes.size() < 8) throw FormatError(path + ": truncated label header");
    const std::uint32_t magic = detail::read_u32_be(bytes, 0);
    if (magic != kIdxLabelMagic)
        throw FormatError(path + ": bad label magic " + std::to_string(magic));
    const std::size_t count = detail::read_u32_be(bytes, 4);
    if (bytes.size() < 8 + count) throw FormatError(path + ": truncated label payload");
    std::vector<std::size_t> labels(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = bytes[8 + i];
    return labels;
}

inline void write_idx_images(const std::string& path, std::size_t rows, std::size_t cols,
                             const std::vector<std::uint8_t>& pixels) {
    if (rows == 0 || cols == 0 || pixels.size() % (rows * cols) != 0)
        throw FormatError("write images: payload is not a whole number of images");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    detail::write_u32_be(out, kIdxImageMagic);
    detail::write_u32_be(out, std::uint32_t(pixels.size() / (rows * cols)));
    detail::write_u32_be(out, std::uint32_t(rows));
    detail::write_u32_be(out, std::uint32_t(cols));
    out.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));
}

inline void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    detail::write_u32_be(out, kIdxLabelMagic);
    detail::write_u32_be(out, std::uint32_t(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), std::streamsize(labels.size()));
}

struct Dataset {
    std::size_t rows = 0, cols = 0;
    std::vector<Vector> images;
    std::vector<std::size_t> labels;
    std::size_t size() const { return images.size(); }
};

inline Dataset load_dataset(const std::string& images_path, const std::string& labels_path,
                            bool binarize = false) {
    ImageSet set = load_idx_images(images_path, binarize);
    auto labels = load_idx_labels(labels_path);
    if (labels.size() != set.images.size())
        throw FormatError("image count " + std::to_string(set.images.size()) +
                          " does not match label count " + std::to_string(labels.size()));
    return Dataset{set.rows, set.cols, std::move(set.images), std::move(labels)};
}

inline Vector one_hot(std::size_t index, std::size_t size) {
    if (index >= size) throw RangeError("one_hot: index outside range");
    Vector v(size, 0.0);
    v[index] = 1.0;
    return v;
}

/// Seeded Fisher-Yates shuffle of 0..n-1.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = std::size_t(rng.next_below(std::uint64_t(i)));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

/// Splits a labeled dataset into shuffled minibatches with one-hot targets.
/// A trailing partial batch is kept (100 samples at batch 16 gives 7 batches,
/// the last of size 4). A batch size above the dataset size yields a single
/// batch of the whole set and a note in *warning when provided.
inline std::vector<Batch> make_batches(const Dataset& data, std::size_t classes,
                                       std::size_t batch_size, Rng& rng, bool shuffle = true,
                                       std::string* warning = nullptr) {
    if (batch_size == 0) throw ConfigError("batches: batch size must be positive");
    if (data.size() == 0) throw RangeError("batches: empty dataset");
    if (batch_size > data.size()) {
        if (warning)
            *warning = "batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                       std::to_string(data.size()) + "; producing one short batch";
        batch_size = data.size();
    }
    std::vector<std::size_t> order;
    if (shuffle) {
        order = shuffled_indices(data.size(), rng);
    } else {
        order.resize(data.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    }
    std::vector<Batch> batches;
    for (std::size_t at = 0; at < order.size(); at += batch_size) {
        const std::size_t take = std::min(batch_size, order.size() - at);
        Batch b;
        b.x.reserve(take);
        b.y.reserve(take);
        for (std::size_t k = 0; k < take; ++k) {
            const std::size_t i = order[at + k];
            b.x.push_back(data.images[i]);
            b.y.push_back(one_hot(data.labels[i], classes));
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

/// A text corpus mapped to a dense symbol stream over its sorted distinct
/// bytes: "abab" has vocabulary [a, b] and stream [0, 1, 0, 1].
struct CharCorpus {
    std::string text;
    std::vector<char> vocab;
    std::vector<std::size_t> stream;

    static CharCorpus from_string(std::string s) {
        if (s.empty()) throw RangeError("corpus: empty text");
        CharCorpus c;
        c.text = std::move(s);
        std::vector<bool> seen(256, false);
        for (unsigned char ch : c.text) seen[ch] = true;
        for (std::size_t v = 0; v < 256; ++v)
            if (seen[v]) c.vocab.push_back(char(v));
        std::vector<std::size_t> lookup(256, 0);
        for (std::size_t i = 0; i < c.vocab.size(); ++i)
            lookup[std::size_t(static_cast<unsigned char>(c.vocab[i]))] = i;
        c.stream.reserve(c.text.size());
        for (unsigned char ch : c.text) c.stream.push_back(lookup[ch]);
        return c;
    }

    static CharCorpus from_file(const std::string& path) {
        const auto bytes = detail::read_file_bytes(path);
        return from_string(std::string(bytes.begin(), bytes.end()));
    }

    std::size_t vocab_size() const { return vocab.size(); }

    std::string decode(const std::vector<std::size_t>& indices) const {
        std::string s;
        s.reserve(indices.size());
        for (std::size_t i : indices) {
            if (i >= vocab.size()) throw RangeError("corpus: symbol index outside vocabulary");
            s.push_back(vocab[i]);
        }
        return s;
    }
};

/// Contiguous non-overlapping training window over a symbol stream. Only the
/// first size-1 positions can start a step because each step needs the next
/// symbol as its target.
struct CharWindow {
    std::size_t begin = 0;
    std::size_t len = 0; // live steps, <= the window length used for batching
};

inline std::vector<CharWindow> make_char_windows(std::size_t stream_size, std::size_t seq_len) {
    if (seq_len == 0) throw ConfigError("windows: sequence length must be positive");
    if (stream_size < 2) throw RangeError("windows: stream too short to form any step");
    std::vector<CharWindow> w;
    const std::size_t usable = stream_size - 1;
    for (std::size_t at = 0; at < usable; at += seq_len)
        w.push_back({at, std::min(seq_len, usable - at)});
    return w;
}

struct SequenceExample {
    std::vector<Vector> inputs;  // seq_len one-hot vectors, zero past the live part
    std::vector<Vector> targets; // next-symbol one-hots, zero past the live part
    Mask mask;                   // 1 on live steps, 0 on padding
};

/// One-hot materialization of a window, padded to seq_len with masked steps.
inline SequenceExample materialize_window(const std::vector<std::size_t>& stream,
                                          std::size_t vocab, const CharWindow& w,
                                          std::size_t seq_len) {
    if (w.len == 0 || w.len > seq_len || w.begin + w.len >= stream.size() + 1)
        throw RangeError("window: outside the stream");
    SequenceExample ex;
    ex.inputs.reserve(seq_len);
    ex.targets.reserve(seq_len);
    ex.mask.assign(seq_len, 0);
    for (std::size_t t = 0; t < seq_len; ++t) {
        if (t < w.len) {
            ex.inputs.push_back(one_hot(stream[w.begin + t], vocab));
            ex.targets.push_back(one_hot(stream[w.begin + t + 1], vocab));
            ex.mask[t] = 1;
        } else {
            ex.inputs.push_back(Vector(vocab, 0.0));
            ex.targets.push_back(Vector(vocab, 0.0));
        }
    }
    return ex;
}

/// Shuffled window batches for one epoch over a character stream.
inline std::vector<std::vector<CharWindow>> char_batches(std::size_t stream_size,
                                                         std::size_t seq_len,
                                                         std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) throw ConfigError("batches: batch size must be positive");
    auto windows = make_char_windows(stream_size, seq_len);
    const auto order = shuffled_indices(windows.size(), rng);
    std::vector<std::vector<CharWindow>> batches;
    for (std::size_t at = 0; at < order.size(); at += batch_size) {
        const std::size_t take = std::min(batch_size, order.size() - at);
        std::vector<CharWindow> b;
        b.reserve(take);
        for (std::size_t k = 0; k < take; ++k) b.push_back(windows[order[at + k]]);
        batches.push_back(std::move(b));
    }
    return batches;
}

} // namespace shardgrad
