// SPDX-License-Identifier: Apache-2.0
#include "thinner/combiner.hpp"

#include "thinner/errors.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace thinner {

double sample_gumbel(std::mt19937_64& rng) {
    // u in (0, 1): drop exact zeros so both logs stay finite.
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    double u = 0.0;
    while (u <= 0.0) u = uniform(rng);
    return -std::log(-std::log(u));
}

Tensor similarity(const Tensor& combo, const Tensor& embedded, const CombinerWeights& w,
                  GumbelNoise noise, double ln_eps) {
    if (combo.rank() != 2 || combo.rows() == 0) {
        throw ParameterError("similarity: need at least one combination token");
    }
    if (embedded.rank() != 2 || embedded.cols() != combo.cols() || combo.cols() != w.width()) {
        throw DimensionError("similarity: combo " + shape_str(combo.shape()) + " and embedded " +
                             shape_str(embedded.shape()) + " disagree with width " +
                             std::to_string(w.width()));
    }
    const std::size_t m = combo.rows();
    const std::size_t n = embedded.rows();
    const Tensor q = linear(layer_norm(combo, w.combo_ln_gain, w.combo_ln_bias, ln_eps), w.wq, w.bq);
    const Tensor k = linear(layer_norm(embedded, w.embed_ln_gain, w.embed_ln_bias, ln_eps), w.wk, w.bk);
    // logits laid out n x m so the softmax over combination tokens is a row softmax.
    Tensor logits = matmul_nt(k, q);
    if (noise.enabled()) {
        std::vector<double> g(n * m);
        if (noise.per_pair) {
            for (auto& v : g) v = sample_gumbel(*noise.rng);
        } else {
            std::vector<double> per_combo(m);
            for (auto& v : per_combo) v = sample_gumbel(*noise.rng);
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < m; ++i) g[j * m + i] = per_combo[i];
        }
        logits = add(logits, Tensor::from({n, m}, std::move(g)));
    }
    return transpose(softmax_rows(logits));
}

Tensor argmax_one_hot(const Tensor& sim) {
    const std::size_t m = sim.rows();
    const std::size_t n = sim.cols();
    std::vector<double> hard(m * n, 0.0);
    const auto s = sim.data();
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < m; ++i) {
            if (s[i * n + j] > s[best * n + j]) best = i;
        }
        hard[best * n + j] = 1.0;
    }
    return Tensor::from({m, n}, std::move(hard));
}

AssignmentMatrix hard_assign(const Tensor& sim) {
    if (sim.rank() != 2) throw DimensionError("hard_assign: expected m x n similarity");
    return {sim, straight_through(argmax_one_hot(sim), sim)};
}

Tensor combine(const Tensor& assignment, const Tensor& embedded, const Tensor& combo,
               const CombinerWeights& w) {
    if (assignment.rank() != 2 || assignment.rows() != combo.rows() ||
        assignment.cols() != embedded.rows()) {
        throw DimensionError("combine: assignment " + shape_str(assignment.shape()) +
                             " does not match combo " + shape_str(combo.shape()) + " and embedded " +
                             shape_str(embedded.shape()));
    }
    const Tensor values = linear(embedded, w.wv, w.bv);
    const Tensor merged = div_rows_guarded(matmul(assignment, values), row_sums(assignment));
    return add(combo, matmul(merged, w.wo));
}

Tensor combining_module(const Tensor& embedded, const Tensor& combo, const CombinerWeights& w,
                        GumbelNoise noise, AssignMode mode, double ln_eps) {
    const Tensor sim = similarity(combo, embedded, w, noise, ln_eps);
    const Tensor assignment = mode == AssignMode::hard ? hard_assign(sim).hard : sim;
    return combine(assignment, embedded, combo, w);
}

} // namespace thinner
