// SPDX-License-Identifier: Apache-2.0
// Writes a synthetic digit dataset (IDX pairs) and a synthetic text corpus
// so the CLI can be exercised without downloading anything:
//   make_dataset <outdir> [train_count=10000] [test_count=2000] [corpus_kb=120]
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "shardgrad/shardgrad.hpp"

int main(int argc, char** argv) {
    using namespace shardgrad;
    if (argc < 2) {
        std::cerr << "usage: make_dataset <outdir> [train_count] [test_count] [corpus_kb]\n";
        return 2;
    }
    const std::string dir = argv[1];
    const std::size_t train_n = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 10000;
    const std::size_t test_n = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 2000;
    const std::size_t corpus_kb = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 120;
    try {
        std::filesystem::create_directories(dir);
        const SyntheticDigits train = synth_digits(train_n, 1);
        const SyntheticDigits test = synth_digits(test_n, 2);
        write_idx_images(dir + "/train-images.idx", train.rows, train.cols, train.pixels);
        write_idx_labels(dir + "/train-labels.idx", train.labels);
        write_idx_images(dir + "/test-images.idx", test.rows, test.cols, test.pixels);
        write_idx_labels(dir + "/test-labels.idx", test.labels);
        const std::string corpus = synth_corpus(corpus_kb * 1024, 7);
        std::ofstream out(dir + "/corpus.txt", std::ios::binary);
        out << corpus;
        std::cout << "wrote " << train_n << " train + " << test_n << " test images and a "
                  << corpus.size() << "-byte corpus under " << dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
