// SPDX-License-Identifier: Apache-2.0
#include "thinner/pruning_attention.hpp"

#include "thinner/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace thinner {

TokenSet TokenSet::all(std::size_t n_embedded, std::size_t combo_count, std::size_t layer) {
    TokenSet set;
    set.embedded.resize(n_embedded);
    std::iota(set.embedded.begin(), set.embedded.end(), std::size_t{0});
    set.combo_count = combo_count;
    set.layer = layer;
    return set;
}

std::vector<std::size_t> TokenSet::key_rows(std::size_t n_embedded) const {
    std::vector<std::size_t> rows;
    rows.reserve(size());
    for (std::size_t pos : embedded) {
        if (pos >= n_embedded) {
            throw IndexError("TokenSet: embedded position " + std::to_string(pos) +
                             " out of range for " + std::to_string(n_embedded) + " tokens");
        }
        rows.push_back(pos);
    }
    for (std::size_t i = 0; i < combo_count; ++i) rows.push_back(n_embedded + i);
    return rows;
}

Tensor attention_probs(const Tensor& q, const Tensor& k, std::size_t scale_width) {
    if (q.rank() != 2 || k.rank() != 2 || q.cols() != k.cols()) {
        throw DimensionError("attention_probs: query " + shape_str(q.shape()) + " and key " +
                             shape_str(k.shape()) + " feature widths disagree");
    }
    if (scale_width == 0) throw ParameterError("attention_probs: zero scale width");
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(scale_width));
    return softmax_rows(scale(matmul_nt(q, k), inv_sqrt));
}

std::vector<double> head_importance(const Tensor& probs, std::size_t embedded_cols,
                                    std::span<const std::size_t> query_rows) {
    const std::size_t n_cols = probs.cols();
    if (embedded_cols > n_cols) throw DimensionError("head_importance: too many embedded columns");
    std::vector<double> scores(embedded_cols, 0.0);
    const auto data = probs.data();
    std::size_t counted = 0;
    auto add_row = [&](std::size_t r) {
        if (r >= probs.rows()) throw IndexError("head_importance: query row out of range");
        for (std::size_t j = 0; j < embedded_cols; ++j) scores[j] += data[r * n_cols + j];
        ++counted;
    };
    if (query_rows.empty()) {
        for (std::size_t r = 0; r < probs.rows(); ++r) add_row(r);
    } else {
        for (std::size_t r : query_rows) add_row(r);
    }
    if (counted == 0) throw DimensionError("head_importance: no query rows");
    for (auto& s : scores) s /= static_cast<double>(counted);
    return scores;
}

std::vector<double> importance_scores(std::span<const Tensor> probs_per_head,
                                      std::size_t embedded_cols,
                                      std::span<const std::size_t> query_rows) {
    if (probs_per_head.empty()) throw ParameterError("importance_scores: empty head list");
    std::vector<double> mean(embedded_cols, 0.0);
    for (const auto& probs : probs_per_head) {
        if (probs.shape() != probs_per_head.front().shape()) {
            throw DimensionError("importance_scores: heads disagree in shape");
        }
        const auto s = head_importance(probs, embedded_cols, query_rows);
        for (std::size_t j = 0; j < embedded_cols; ++j) mean[j] += s[j];
    }
    for (auto& v : mean) v /= static_cast<double>(probs_per_head.size());
    return mean;
}

std::size_t preserved_count(std::size_t t, double p) {
    if (!(p > 0.0 && p <= 1.0)) {
        throw ParameterError("preserved_count: preservation ratio must lie in (0, 1], got " +
                             std::to_string(p));
    }
    if (t == 0) throw ParameterError("preserved_count: token count must be positive");
    const auto kept = static_cast<std::size_t>(std::floor(static_cast<double>(t) * p));
    return std::max<std::size_t>(kept, 1);
}

TokenSet select_tokens(std::span<const double> scores, const fuzzy::ImportanceProfile& profile,
                       std::size_t t_next, const TokenSet& current) {
    const std::size_t t = current.embedded.size();
    if (scores.size() != t || profile.scores.size() != t) {
        throw ParameterError("select_tokens: " + std::to_string(scores.size()) + " scores for " +
                             std::to_string(t) + " retained tokens");
    }
    if (t_next > t) {
        throw ParameterError("select_tokens: budget " + std::to_string(t_next) + " exceeds " +
                             std::to_string(t) + " retained tokens");
    }
    std::vector<bool> keep(t, false);
    for (std::size_t local : profile.protected_set) {
        if (local >= t) throw ParameterError("select_tokens: protected index out of range");
        keep[local] = true;
    }
    std::size_t budget = t_next > profile.protected_set.size() ? t_next - profile.protected_set.size() : 0;

    std::vector<std::size_t> ranked;
    ranked.reserve(t);
    for (std::size_t i = 0; i < t; ++i) {
        if (!keep[i]) ranked.push_back(i);
    }
    // Positions are sorted, so a lower local index is a lower original position.
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](std::size_t lhs, std::size_t rhs) { return scores[lhs] > scores[rhs]; });
    for (std::size_t i = 0; i < ranked.size() && budget > 0; ++i, --budget) keep[ranked[i]] = true;

    TokenSet next;
    next.combo_count = current.combo_count;
    next.layer = current.layer + 1;
    for (std::size_t i = 0; i < t; ++i) {
        if (keep[i]) next.embedded.push_back(current.embedded[i]);
    }
    return next;
}

AttentionOutput ftp_attention(const Tensor& x, const AttentionBlockWeights& weights,
                              const TokenSet& kept, const AttentionOptions& options,
                              std::span<const std::size_t> query_rows) {
    const std::size_t d = weights.width();
    if (x.rank() != 2 || x.cols() != d) {
        throw DimensionError("ftp_attention: input " + shape_str(x.shape()) +
                             " does not match model width " + std::to_string(d));
    }
    if (x.rows() < kept.combo_count) throw DimensionError("ftp_attention: fewer rows than combination tokens");
    const std::size_t n_embedded = x.rows() - kept.combo_count;
    const auto rows = kept.key_rows(n_embedded);
    if (rows.empty()) throw DimensionError("ftp_attention: empty key set");

    const Tensor q = linear(x, weights.wq, weights.bq);
    Tensor k;
    Tensor v;
    if (options.kv_projection == KvProjection::before_gather) {
        k = gather_rows(linear(x, weights.wk, weights.bk), rows);
        v = gather_rows(linear(x, weights.wv, weights.bv), rows);
    } else {
        const Tensor xs = gather_rows(x, rows);
        k = linear(xs, weights.wk, weights.bk);
        v = linear(xs, weights.wv, weights.bv);
    }

    const std::size_t dh = weights.head_width();
    AttentionOutput result;
    std::vector<Tensor> contexts;
    contexts.reserve(weights.heads);
    for (std::size_t h = 0; h < weights.heads; ++h) {
        const Tensor probs = attention_probs(slice_cols(q, h * dh, (h + 1) * dh),
                                             slice_cols(k, h * dh, (h + 1) * dh), dh);
        contexts.push_back(matmul(probs, slice_cols(v, h * dh, (h + 1) * dh)));
        result.head_scores.push_back(head_importance(probs, kept.embedded.size(), query_rows));
        result.head_probs.push_back(probs);
    }
    result.out = linear(concat_cols(contexts), weights.wo, weights.bo);

    const std::size_t t = kept.embedded.size();
    if (t > 0) {
        std::vector<double> scores(t, 0.0);
        std::vector<double> pooled;
        pooled.reserve(t * weights.heads);
        for (const auto& hs : result.head_scores) {
            for (std::size_t j = 0; j < t; ++j) scores[j] += hs[j];
            pooled.insert(pooled.end(), hs.begin(), hs.end());
        }
        for (auto& s : scores) s /= static_cast<double>(weights.heads);
        result.profile = fuzzy::partition(scores, fuzzy::quantile_anchors(pooled),
                                          options.alpha_important, options.alpha_unimportant);
        if (!options.fuzzy) {
            // Plain top-k: nothing is protected.
            result.profile.candidates.resize(t);
            std::iota(result.profile.candidates.begin(), result.profile.candidates.end(), std::size_t{0});
            result.profile.protected_set.clear();
        }
    }
    return result;
}

AttentionOutput block_forward(const Tensor& x, const AttentionBlockWeights& weights,
                              const TokenSet& kept, const AttentionOptions& options,
                              std::span<const std::size_t> query_rows) {
    AttentionOutput attn = ftp_attention(x, weights, kept, options, query_rows);
    Tensor h = attn.out;
    if (options.attention_residual) {
        h = layer_norm(add(x, h), weights.ln1_gain, weights.ln1_bias, options.ln_eps);
    }
    const Tensor ff = linear(gelu(linear(h, weights.ff1_w, weights.ff1_b)), weights.ff2_w, weights.ff2_b);
    attn.out = layer_norm(add(ff, h), weights.ln2_gain, weights.ln2_bias, options.ln_eps);
    return attn;
}

} // namespace thinner
