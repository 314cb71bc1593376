// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "thinner/errors.hpp"
#include "thinner/fuzzy.hpp"

#include <algorithm>
#include <random>
#include <set>

using namespace thinner;
using namespace thinner::fuzzy;

namespace {

// Order-statistic oracle: sorted[floor(h)] + (h - floor(h)) * (sorted[ceil(h)] - sorted[floor(h)]).
double oracle_quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = static_cast<std::size_t>(std::ceil(h));
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> random_scores(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> s(n);
    for (auto& x : s) x = u(rng);
    return s;
}

} // namespace

TEST_CASE("quantile anchors") {
    const std::vector<double> constant = {0.1, 0.1, 0.1, 0.1};
    const Anchors c = quantile_anchors(constant);
    CHECK(c.a == 0.1);
    CHECK(c.b == 0.1);

    const std::vector<double> two = {0.0, 1.0};
    const Anchors t = quantile_anchors(two);
    CHECK(t.a == 0.25);
    CHECK(t.b == 0.75);

    CHECK_THROWS_AS(quantile_anchors(std::vector<double>{}), ParameterError);
}

TEST_CASE("quantiles agree with the order-statistic oracle and bracket the median") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto s = random_scores(rng, 1 + rng() % 40);
        const Anchors an = quantile_anchors(s);
        CHECK(an.a == doctest::Approx(oracle_quantile(s, 0.25)).epsilon(1e-15));
        CHECK(an.b == doctest::Approx(oracle_quantile(s, 0.75)).epsilon(1e-15));
        const double median = quantile(s, 0.5);
        CHECK(an.a <= median);
        CHECK(median <= an.b);
    }
}

TEST_CASE("importance membership branches") {
    CHECK(importance_membership(0.2, 0.2, 0.6) == 0.0);
    CHECK(importance_membership(0.4, 0.2, 0.6) == doctest::Approx(0.5));
    CHECK(importance_membership(0.6, 0.2, 0.6) == 1.0);
    CHECK(importance_membership(-5.0, 0.2, 0.6) == 0.0);
    CHECK(importance_membership(5.0, 0.2, 0.6) == 1.0);
    CHECK_THROWS_AS(importance_membership(0.3, 0.6, 0.2), ParameterError);
}

TEST_CASE("unimportance membership branches") {
    CHECK(unimportance_membership(0.1, 0.2, 0.6) == 1.0);
    CHECK(unimportance_membership(0.4, 0.2, 0.6) == doctest::Approx(0.5));
    CHECK(unimportance_membership(0.7, 0.2, 0.6) == 0.0);
    CHECK_THROWS_AS(unimportance_membership(0.3, 0.6, 0.2), ParameterError);
}

TEST_CASE("degenerate anchors: tokens at or above the anchor are fully important") {
    CHECK(importance_membership(0.5, 0.5, 0.5) == 1.0);
    CHECK(unimportance_membership(0.5, 0.5, 0.5) == 0.0);
    CHECK(importance_membership(0.4, 0.5, 0.5) == 0.0);
    CHECK(unimportance_membership(0.4, 0.5, 0.5) == 1.0);
}

TEST_CASE("alpha cuts") {
    CHECK(alpha_cut(std::vector<double>{0.0, 0.5, 1.0}, 1.0) == std::vector<std::size_t>{2});
    CHECK(alpha_cut(std::vector<double>{0.0, 0.005, 0.02}, 0.01) == std::vector<std::size_t>{2});
    CHECK(alpha_cut(std::vector<double>{0.0, 0.0, 0.0}, 0.9).empty());
    CHECK_THROWS_AS(alpha_cut(std::vector<double>{0.5}, 0.0), ParameterError);
    CHECK_THROWS_AS(alpha_cut(std::vector<double>{0.5}, 1.5), ParameterError);
}

TEST_CASE("constant scores protect every token, so nothing is pruned") {
    const std::vector<double> s(6, 0.25);
    const ImportanceProfile p = partition(s);
    CHECK(p.protected_set.size() == 6);
    CHECK(p.candidates.empty());
}

TEST_CASE("clear quartile spread: partition matches direct evaluation") {
    const std::vector<double> s = {0.9, 0.8, 0.02, 0.01, 0.05, 0.03, 0.04, 0.5};
    const ImportanceProfile p = partition(s, 0.01, 0.9);

    const double a = oracle_quantile(s, 0.25);
    const double b = oracle_quantile(s, 0.75);
    std::set<std::size_t> important, unimportant;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double imp = s[i] <= a ? 0.0 : s[i] >= b ? 1.0 : (s[i] - a) / (b - a);
        const double unimp = s[i] <= a ? 1.0 : s[i] >= b ? 0.0 : (b - s[i]) / (b - a);
        if (imp >= 0.01) important.insert(i);
        if (unimp >= 0.9) unimportant.insert(i);
    }
    std::vector<std::size_t> expected;
    std::set_difference(important.begin(), important.end(), unimportant.begin(), unimportant.end(),
                        std::back_inserter(expected));
    CHECK(p.protected_set == expected);
    // The top-quartile tokens are protected.
    for (std::size_t i : {0u, 1u}) CHECK(std::count(p.protected_set.begin(), p.protected_set.end(), i) == 1);
    CHECK(p.a == doctest::Approx(a));
    CHECK(p.b == doctest::Approx(b));
}

TEST_CASE("partition properties on random score vectors") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 30;
        const auto s = random_scores(rng, n);
        const ImportanceProfile p = partition(s);
        CHECK(p.a <= p.b);
        std::vector<bool> seen(n, false);
        for (std::size_t i : p.protected_set) seen[i] = true;
        for (std::size_t i : p.candidates) {
            CHECK_FALSE(seen[i]);
            seen[i] = true;
        }
        CHECK(std::all_of(seen.begin(), seen.end(), [](bool v) { return v; }));
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(p.importance[i] + p.unimportance[i] == 1.0);
            CHECK(p.importance[i] >= 0.0);
            CHECK(p.importance[i] <= 1.0);
        }
    }
}

TEST_CASE("memberships are monotone in the score") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        auto s = random_scores(rng, 20);
        const Anchors an = quantile_anchors(s);
        std::sort(s.begin(), s.end());
        for (std::size_t i = 1; i < s.size(); ++i) {
            CHECK(importance_membership(s[i], an.a, an.b) >= importance_membership(s[i - 1], an.a, an.b));
            CHECK(unimportance_membership(s[i], an.a, an.b) <= unimportance_membership(s[i - 1], an.a, an.b));
        }
    }
}

TEST_CASE("partition is invariant to positive affine rescaling") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> scale(0.1, 10.0);
    std::uniform_real_distribution<double> shift(-5.0, 5.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto s = random_scores(rng, 2 + rng() % 30);
        const double k = scale(rng);
        const double c = shift(rng);
        std::vector<double> t(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) t[i] = k * s[i] + c;
        const ImportanceProfile p = partition(s);
        const ImportanceProfile q = partition(t);
        CHECK(p.protected_set == q.protected_set);
        CHECK(p.candidates == q.candidates);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(p.importance[i] == doctest::Approx(q.importance[i]).epsilon(1e-9));
    }
}

TEST_CASE("caller-supplied anchors are used as given") {
    const std::vector<double> s = {0.1, 0.2, 0.3};
    const ImportanceProfile p = partition(s, Anchors{0.0, 1.0}, 0.25, 0.75);
    CHECK(p.a == 0.0);
    CHECK(p.b == 1.0);
    CHECK(p.importance[2] == doctest::Approx(0.3));
    // I = {2} (0.3 >= 0.25); U = {0, 1} (0.9, 0.8 >= 0.75; 0.7 is not).
    CHECK(p.protected_set == std::vector<std::size_t>{2});
    CHECK(p.candidates == std::vector<std::size_t>{0, 1});
    CHECK_THROWS_AS(partition(s, Anchors{0.5, 0.1}), ParameterError);
}
