// SPDX-License-Identifier: Apache-2.0
//
// Multi-head self-attention whose key/value rows shrink layer by layer.
//
// Row layout of every block input: the n embedded-token states first, then
// the m combination-token states. Queries are never pruned; keys and values
// are gathered from the retained embedded positions plus all combination
// tokens.
#pragma once

#include "thinner/fuzzy.hpp"
#include "thinner/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace thinner {

/// Retained key/value positions for one layer.
struct TokenSet {
    std::vector<std::size_t> embedded;  // sorted positions into the embedded rows
    std::size_t combo_count = 0;
    std::size_t layer = 1;

    static TokenSet all(std::size_t n_embedded, std::size_t combo_count, std::size_t layer = 1);

    std::size_t size() const noexcept { return embedded.size() + combo_count; }
    /// Row indices into a block input with `n_embedded` embedded rows.
    std::vector<std::size_t> key_rows(std::size_t n_embedded) const;
};

struct AttentionBlockWeights {
    std::size_t heads = 1;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gain, ln1_bias;
    Tensor ff1_w, ff1_b, ff2_w, ff2_b;
    Tensor ln2_gain, ln2_bias;

    std::size_t width() const { return wq.rows(); }
    std::size_t head_width() const { return width() / heads; }
    std::size_t ff_width() const { return ff1_w.cols(); }
};

/// Whether K/V projections run over every token state before the kept rows
/// are gathered, or only over the gathered rows. Numerically identical;
/// they differ in multiply-accumulate count.
enum class KvProjection { before_gather, after_gather };

struct AttentionOptions {
    KvProjection kv_projection = KvProjection::before_gather;
    bool attention_residual = true;
    bool fuzzy = true;
    double alpha_important = fuzzy::kDefaultAlphaImportant;
    double alpha_unimportant = fuzzy::kDefaultAlphaUnimportant;
    double ln_eps = 1e-5;
};

struct AttentionOutput {
    Tensor out;
    /// Importance profile over `kept.embedded` (local positions), for the next layer.
    fuzzy::ImportanceProfile profile;
    std::vector<Tensor> head_probs;
    /// Per-head embedded-column scores, pooled for the quantile anchors.
    std::vector<std::vector<double>> head_scores;
};

/// softmax(q k^T / sqrt(scale_width)) over rows.
Tensor attention_probs(const Tensor& q, const Tensor& k, std::size_t scale_width);

/// Column means of one head's probabilities over the first `embedded_cols`
/// key columns. Only rows listed in `query_rows` contribute (all when empty).
std::vector<double> head_importance(const Tensor& probs, std::size_t embedded_cols,
                                    std::span<const std::size_t> query_rows = {});

/// Per-token scores averaged across heads.
std::vector<double> importance_scores(std::span<const Tensor> probs_per_head,
                                      std::size_t embedded_cols,
                                      std::span<const std::size_t> query_rows = {});

/// floor(t * p), clamped to at least one token.
std::size_t preserved_count(std::size_t t, double p);

/// Keeps every protected token, then fills up to `t_next` with the
/// highest-scoring candidates (ties to the lower original position).
/// `scores`/`profile` are indexed by position within `current.embedded`.
TokenSet select_tokens(std::span<const double> scores, const fuzzy::ImportanceProfile& profile,
                       std::size_t t_next, const TokenSet& current);

/// Pruned multi-head attention plus the importance profile of this layer.
/// `query_rows` lists the rows that count as real queries for scoring
/// (padding excluded); empty means every row.
AttentionOutput ftp_attention(const Tensor& x, const AttentionBlockWeights& weights,
                              const TokenSet& kept, const AttentionOptions& options = {},
                              std::span<const std::size_t> query_rows = {});

/// Attention, optional residual + LN, then LN(FF(h) + h).
AttentionOutput block_forward(const Tensor& x, const AttentionBlockWeights& weights,
                              const TokenSet& kept, const AttentionOptions& options = {},
                              std::span<const std::size_t> query_rows = {});

} // namespace thinner
