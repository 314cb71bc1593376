// SPDX-License-Identifier: Apache-2.0
//
// Token combining: embedded tokens are hard-assigned to combination tokens
// through a Gumbel-perturbed similarity and merged into them by mean.
#pragma once

#include "thinner/tensor.hpp"

#include <cstddef>
#include <random>

namespace thinner {

struct CombinerWeights {
    Tensor combo_ln_gain, combo_ln_bias;  // LN applied to combination tokens
    Tensor embed_ln_gain, embed_ln_bias;  // LN applied to embedded tokens
    Tensor wq, wk, wv, wo;
    Tensor bq, bk, bv;  // undefined unless biases are enabled

    std::size_t width() const { return wq.rows(); }
};

/// Gumbel(0, 1) perturbation of the similarity logits. Disabled means plain
/// softmax; when enabled the caller owns the generator.
struct GumbelNoise {
    std::mt19937_64* rng = nullptr;
    /// One sample per (combination, embedded) pair instead of one per combination token.
    bool per_pair = false;

    static GumbelNoise disabled() { return {}; }
    bool enabled() const noexcept { return rng != nullptr; }
};

double sample_gumbel(std::mt19937_64& rng);

struct AssignmentMatrix {
    Tensor sim;   // m x n_kept, columns are distributions over combination tokens
    Tensor hard;  // forward one-hot columns, gradient routed straight through to sim
};

/// Column-wise softmax over combination tokens of LN'd, projected dot products.
Tensor similarity(const Tensor& combo, const Tensor& embedded, const CombinerWeights& w,
                  GumbelNoise noise = GumbelNoise::disabled(), double ln_eps = 1e-5);

/// One-hot of each column's argmax (lowest combination index wins ties).
Tensor argmax_one_hot(const Tensor& sim);

AssignmentMatrix hard_assign(const Tensor& sim);

/// Residual plus output-projected mean of the value-projected embedded
/// tokens assigned to each combination token. `assignment` is any m x n
/// weight matrix (hard or soft).
Tensor combine(const Tensor& assignment, const Tensor& embedded, const Tensor& combo,
               const CombinerWeights& w);

inline Tensor combine(const AssignmentMatrix& assignment, const Tensor& embedded,
                      const Tensor& combo, const CombinerWeights& w) {
    return combine(assignment.hard, embedded, combo, w);
}

enum class AssignMode {
    hard,  // straight-through one-hot (default)
    soft,  // Sim used directly; differentiable end to end, for gradient checks
};

/// Similarity, assignment and merge. Returns the m updated combination tokens.
Tensor combining_module(const Tensor& embedded, const Tensor& combo, const CombinerWeights& w,
                        GumbelNoise noise = GumbelNoise::disabled(),
                        AssignMode mode = AssignMode::hard, double ln_eps = 1e-5);

} // namespace thinner
