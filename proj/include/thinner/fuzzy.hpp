// SPDX-License-Identifier: Apache-2.0
//
// Quantile-anchored fuzzy membership and alpha-cut partition of token
// importance scores into a protected set and a pruning-candidate set.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace thinner::fuzzy {

/// Lower/upper membership anchors, the 0.25 and 0.75 score quantiles.
struct Anchors {
    double a = 0.0;
    double b = 0.0;
};

inline constexpr double kLowerQuantile = 0.25;
inline constexpr double kUpperQuantile = 0.75;
inline constexpr double kDefaultAlphaImportant = 0.01;
inline constexpr double kDefaultAlphaUnimportant = 0.9;

/// Quantile with linear interpolation between adjacent order statistics:
/// position q * (N - 1) in the sorted sample.
double quantile(std::span<const double> values, double q);

Anchors quantile_anchors(std::span<const double> scores);

double importance_membership(double s, double a, double b);
double unimportance_membership(double s, double a, double b);

/// Indices whose membership is at least alpha, in ascending order.
std::vector<std::size_t> alpha_cut(std::span<const double> memberships, double alpha);

/// Fuzzy view of one layer's scores. Index sets are local positions into
/// `scores` (i.e. into the layer's retained embedded tokens); combination
/// tokens never have a score and so never appear here.
struct ImportanceProfile {
    std::vector<double> scores;
    double a = 0.0;
    double b = 0.0;
    std::vector<double> importance;
    std::vector<double> unimportance;
    std::vector<std::size_t> protected_set;  // I - U
    std::vector<std::size_t> candidates;     // (I - U)^c
};

/// Builds the profile with anchors taken from `scores` themselves.
ImportanceProfile partition(std::span<const double> scores,
                            double alpha_important = kDefaultAlphaImportant,
                            double alpha_unimportant = kDefaultAlphaUnimportant);

/// Same, with anchors supplied by the caller (e.g. quantiles pooled across heads).
ImportanceProfile partition(std::span<const double> scores, Anchors anchors,
                            double alpha_important = kDefaultAlphaImportant,
                            double alpha_unimportant = kDefaultAlphaUnimportant);

} // namespace thinner::fuzzy
