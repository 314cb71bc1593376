// SPDX-License-Identifier: Apache-2.0
#include "thinner/fuzzy.hpp"

#include "thinner/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace thinner::fuzzy {

namespace {

void check_anchors(double a, double b) {
    if (a > b) {
        throw ParameterError("fuzzy membership: anchor a=" + std::to_string(a) +
                             " exceeds b=" + std::to_string(b));
    }
}

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw ParameterError("alpha_cut: alpha must lie in (0, 1], got " + std::to_string(alpha));
    }
}

} // namespace

double quantile(std::span<const double> values, double q) {
    if (values.empty()) throw ParameterError("quantile: empty score list");
    if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("quantile: q outside [0, 1]");
    std::vector<double> sorted(values.begin(), values.end());
    for (double v : sorted) {
        if (!std::isfinite(v)) throw ParameterError("quantile: non-finite score");
    }
    std::sort(sorted.begin(), sorted.end());
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Anchors quantile_anchors(std::span<const double> scores) {
    return {quantile(scores, kLowerQuantile), quantile(scores, kUpperQuantile)};
}

// With a == b the "s >= b" branch wins, so every tied score is fully important.
double importance_membership(double s, double a, double b) {
    check_anchors(a, b);
    if (s >= b) return 1.0;
    if (s <= a) return 0.0;
    return (s - a) / (b - a);
}

double unimportance_membership(double s, double a, double b) {
    check_anchors(a, b);
    if (s >= b) return 0.0;
    if (s <= a) return 1.0;
    // Written as 1 - importance so the pair sums to exactly one.
    return 1.0 - (s - a) / (b - a);
}

std::vector<std::size_t> alpha_cut(std::span<const double> memberships, double alpha) {
    check_alpha(alpha);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < memberships.size(); ++i) {
        if (memberships[i] >= alpha) out.push_back(i);
    }
    return out;
}

ImportanceProfile partition(std::span<const double> scores, double alpha_important,
                            double alpha_unimportant) {
    return partition(scores, quantile_anchors(scores), alpha_important, alpha_unimportant);
}

ImportanceProfile partition(std::span<const double> scores, Anchors anchors,
                            double alpha_important, double alpha_unimportant) {
    check_anchors(anchors.a, anchors.b);
    check_alpha(alpha_important);
    check_alpha(alpha_unimportant);

    ImportanceProfile profile;
    profile.scores.assign(scores.begin(), scores.end());
    profile.a = anchors.a;
    profile.b = anchors.b;
    profile.importance.reserve(scores.size());
    profile.unimportance.reserve(scores.size());
    for (double s : scores) {
        profile.importance.push_back(importance_membership(s, anchors.a, anchors.b));
        profile.unimportance.push_back(unimportance_membership(s, anchors.a, anchors.b));
    }

    const auto important = alpha_cut(profile.importance, alpha_important);
    const auto unimportant = alpha_cut(profile.unimportance, alpha_unimportant);
    std::set_difference(important.begin(), important.end(), unimportant.begin(), unimportant.end(),
                        std::back_inserter(profile.protected_set));
    std::size_t next = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (next < profile.protected_set.size() && profile.protected_set[next] == i) {
            ++next;
        } else {
            profile.candidates.push_back(i);
        }
    }
    return profile;
}

} // namespace thinner::fuzzy
