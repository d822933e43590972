// SPDX-License-Identifier: Apache-2.0
#include "dvx/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace dvx {

std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& truths) {
    if (scores.size() != truths.size()) {
        throw std::invalid_argument("average_precision: scores/truths length mismatch");
    }
    const int m = static_cast<int>(scores.size());
    int n_pos = 0;
    for (int t : truths) {
        if (t != 0 && t != 1) {
            throw std::invalid_argument("average_precision: truths must be binary");
        }
        n_pos += t;
    }
    if (n_pos == 0) return std::nullopt;

    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    int hits = 0;
    for (int rank = 0; rank < m; ++rank) {
        if (truths[order[rank]] == 1) {
            ++hits;
            ap += static_cast<double>(hits) / (rank + 1);
        }
    }
    return ap / n_pos;
}

std::vector<std::optional<double>> per_class_ap(const ScoredPredictions& preds) {
    const int m = preds.rows();
    std::vector<std::optional<double>> out(preds.classes);
    std::vector<double> s(m);
    std::vector<int> t(m);
    for (int c = 0; c < preds.classes; ++c) {
        for (int i = 0; i < m; ++i) {
            s[i] = preds.score(i, c);
            t[i] = preds.truth(i, c);
        }
        out[c] = average_precision(s, t);
    }
    return out;
}

double mean_ap(const ScoredPredictions& preds) {
    const auto aps = per_class_ap(preds);
    double sum = 0.0;
    int defined = 0;
    for (const auto& ap : aps) {
        if (ap.has_value()) {
            sum += *ap;
            ++defined;
        }
    }
    if (defined == 0) {
        throw std::invalid_argument("mean_ap: no class has a positive truth");
    }
    return sum / defined;
}

}  // namespace dvx
