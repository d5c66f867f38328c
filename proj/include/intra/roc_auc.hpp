#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "intra/errors.hpp"

namespace intra {

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Sort-based: walks tie groups in ascending score order
/// and counts, for every positive, the negatives strictly below plus half the
/// negatives tied with it. Counting is exact in integers.
template <class Score, class Label>
double roc_auc(std::span<const Score> scores, std::span<const Label> labels) {
    if (scores.size() != labels.size()) throw ShapeError("roc_auc: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) + " labels");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::uint64_t pos = 0, neg = 0;
    unsigned __int128 twice_u = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::uint64_t gp = 0, gn = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]]) ++gp;
            else ++gn;
            ++j;
        }
        twice_u += static_cast<unsigned __int128>(gp) * (2 * neg + gn);
        pos += gp;
        neg += gn;
        i = j;
    }
    if (pos == 0 || neg == 0) throw ValueError("roc_auc: labels contain a single class");
    // Both operands are exact in double for any realistic input size, so
    // the result is the correctly rounded quotient.
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

template <class Score, class Label>
double roc_auc(const std::vector<Score>& scores, const std::vector<Label>& labels) {
    return roc_auc(std::span<const Score>(scores), std::span<const Label>(labels));
}

}  // namespace intra
