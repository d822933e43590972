// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

namespace dvx {

/// Scores and binary truths for M samples over C classes, row-major.
struct ScoredPredictions {
    int classes = 0;
    std::vector<double> scores;
    std::vector<int> truths;

    int rows() const { return classes == 0 ? 0 : static_cast<int>(truths.size()) / classes; }
    double score(int m, int c) const { return scores[static_cast<std::size_t>(m) * classes + c]; }
    int truth(int m, int c) const { return truths[static_cast<std::size_t>(m) * classes + c]; }
};

/// Discrete average precision: sort by score descending (ties broken by
/// original index ascending) and average precision at each positive hit.
/// Returns nullopt when there is no positive truth.
std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& truths);

std::vector<std::optional<double>> per_class_ap(const ScoredPredictions& preds);

/// Mean of the defined per-class APs; throws when no class has a positive.
double mean_ap(const ScoredPredictions& preds);

}  // namespace dvx
