// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "flextraj/rng.hpp"
#include "flextraj/tensor.hpp"

namespace flextraj {

inline std::vector<std::string> tokenize_caption(std::string_view caption, std::size_t max_tokens = 16) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : caption) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    if (words.size() > max_tokens) words.resize(max_tokens);
    return words;
}

/// Hashing text encoder: every word maps to a fixed pseudo-random unit-scale
/// vector seeded by (seed, word). No vocabulary, no learned weights.
template <typename T>
Mat<T> embed_caption(std::string_view caption, int width, std::uint64_t seed) {
    auto words = tokenize_caption(caption);
    Mat<T> out(static_cast<Eigen::Index>(words.size()), width);
    for (std::size_t i = 0; i < words.size(); ++i) {
        Rng rng(derive_seed(seed, words[i]));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int j = 0; j < width; ++j) out(static_cast<Eigen::Index>(i), j) = static_cast<T>(normal(rng));
    }
    return out;
}

}  // namespace flextraj
