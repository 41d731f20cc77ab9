#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "deminet/losses.hpp"

namespace deminet {

/// Rank-sum AUC with ties counted as one half. O(m log m).
inline double auc(std::span<const real> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
    const std::size_t m = scores.size();
    std::size_t pos = 0;
    for (int y : labels) pos += y ? 1 : 0;
    const std::size_t neg = m - pos;
    if (pos == 0 || neg == 0) throw ContractError("auc: undefined for single-class input");
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Sum of (1-based, tie-averaged) ranks of positives, doubled to stay integral.
    long double rank2_sum = 0;
    for (std::size_t i = 0; i < m;) {
        std::size_t j = i;
        while (j < m && scores[order[j]] == scores[order[i]]) ++j;
        const long double avg2 = static_cast<long double>(i + 1 + j);  // 2 * mean rank of the tie block
        for (std::size_t q = i; q < j; ++q)
            if (labels[order[q]]) rank2_sum += avg2;
        i = j;
    }
    const long double u = rank2_sum / 2 - static_cast<long double>(pos) * (pos + 1) / 2;
    return static_cast<double>(u / (static_cast<long double>(pos) * neg));
}

/// Mean clamped binary cross-entropy.
inline double log_loss(std::span<const real> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionError("log_loss: scores and labels differ in length");
    if (scores.empty()) throw ContractError("log_loss: empty input");
    double s = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) s += ce_loss(scores[i], labels[i]);
    return s / static_cast<double>(scores.size());
}

}  // namespace deminet
