// SPDX-License-Identifier: Apache-2.0
#include "thinner/cost_model.hpp"

#include "thinner/errors.hpp"
#include "thinner/pruning_attention.hpp"

#include <algorithm>
#include <cmath>

namespace thinner::cost {

std::uint64_t LayerCost::macs() const noexcept {
    return q_projection + kv_projection + scores + context + output_projection + feed_forward +
           combiner_projection + combiner_similarity + combiner_merge;
}

LayerCost layer_flops(std::size_t n_q, std::size_t n_kv, std::size_t d, std::size_t h,
                      std::size_t ff_width, const Convention& convention) {
    if (n_q == 0 || n_kv == 0 || d == 0 || h == 0 || ff_width == 0) {
        throw ParameterError("layer_flops: extents must be positive");
    }
    using u64 = std::uint64_t;
    LayerCost c;
    c.kind = LayerKind::block;
    c.n_q = n_q;
    c.n_kv = n_kv;
    const u64 nq = n_q, nkv = n_kv, dd = d, ff = ff_width;
    const u64 projected = convention.kv_projection == KvProjection::before_gather ? nq : nkv;
    c.q_projection = nq * dd * dd;
    c.kv_projection = 2 * projected * dd * dd;
    c.scores = nq * nkv * dd;
    c.context = nq * nkv * dd;
    c.output_projection = nq * dd * dd;
    c.feed_forward = 2 * nq * dd * ff;
    // x, Q, K, V, per-head probabilities, context, attention out, FF hidden, block out
    c.activation_elements = static_cast<double>(nq * dd * 5 + 2 * nkv * dd + h * nq * nkv + nq * ff);
    return c;
}

LayerCost combiner_flops(std::size_t m, std::size_t n_kept, std::size_t d) {
    if (m == 0 || d == 0) throw ParameterError("combiner_flops: extents must be positive");
    using u64 = std::uint64_t;
    LayerCost c;
    c.kind = LayerKind::combiner;
    c.n_q = m;
    c.n_kv = n_kept;
    const u64 mm = m, nk = n_kept, dd = d;
    c.combiner_projection = mm * dd * dd + 2 * nk * dd * dd + mm * dd * dd;
    c.combiner_similarity = mm * nk * dd;
    c.combiner_merge = mm * nk * dd;
    // tokens in, combos in, q, k, v, sim, hard assignment, merged, out
    c.activation_elements = static_cast<double>(3 * nk * dd + 4 * mm * dd + 2 * mm * nk);
    return c;
}

std::vector<std::size_t> ideal_schedule(const ModelConfig& config, std::size_t n) {
    std::vector<std::size_t> schedule;
    std::size_t t = n;
    bool combined = false;
    for (std::size_t l = 1; l <= config.n_layers; ++l) {
        if (combined) {
            schedule.push_back(0);
            continue;
        }
        schedule.push_back(t);
        if (l == config.placement) {
            combined = true;
            continue;
        }
        const bool next_pruned = l < config.n_layers && (config.placement == 0 || l + 1 <= config.placement);
        if (config.pruning_enabled() && next_pruned) t = preserved_count(t, config.preservation);
    }
    return schedule;
}

namespace {

struct Totals {
    std::vector<LayerCost> layers;
    std::uint64_t macs = 0;
    double peak = 0.0;
    double total = 0.0;
};

Totals accumulate(const ModelConfig& config, std::size_t n, const Convention& convention) {
    Totals out;
    const auto schedule = ideal_schedule(config, n);
    const std::size_t m = config.active_combo_tokens();
    bool combined = false;
    for (std::size_t l = 1; l <= config.n_layers; ++l) {
        LayerCost c;
        if (l == config.placement) {
            c = combiner_flops(m, schedule[l - 1], config.d);
            combined = true;
        } else if (combined) {
            c = layer_flops(m, m, config.d, config.heads, config.ff_width(), convention);
        } else {
            c = layer_flops(n + m, schedule[l - 1] + m, config.d, config.heads, config.ff_width(), convention);
        }
        out.macs += c.macs();
        out.peak = std::max(out.peak, c.activation_elements);
        out.total += c.activation_elements;
        out.layers.push_back(c);
    }
    return out;
}

} // namespace

CostReport model_cost(const ModelConfig& config, const Convention& convention) {
    config.validate();
    const std::size_t n = config.max_seq;
    const Totals ours = accumulate(config, n, convention);
    const Totals dense = accumulate(with_variant(config, Variant::dense), n, convention);

    const double bytes = static_cast<double>(convention.bytes_per_element * convention.batch);
    CostReport r;
    r.layers = ours.layers;
    r.schedule = ideal_schedule(config, n);
    r.total_macs = ours.macs;
    r.total_flops = convention.flops_per_mac * static_cast<double>(ours.macs);
    r.dense_flops = convention.flops_per_mac * static_cast<double>(dense.macs);
    r.ratio_vs_dense = r.total_flops / r.dense_flops;
    r.dense_over_this = r.dense_flops / r.total_flops;
    r.peak_activation_bytes = ours.peak * bytes;
    r.total_activation_bytes = ours.total * bytes;
    r.dense_peak_activation_bytes = dense.peak * bytes;
    r.dense_total_activation_bytes = dense.total * bytes;
    r.memory_ratio_vs_dense = r.total_activation_bytes / r.dense_total_activation_bytes;
    return r;
}

SweepRow cost_row(const ModelConfig& base, const std::string& axis, double value,
                  const Convention& convention) {
    SweepRow row;
    row.axis = axis;
    row.value = value;
    row.config = base;
    if (axis == "placement") {
        row.config.placement = static_cast<std::size_t>(value);
    } else if (axis == "p") {
        row.config.preservation = value;
    } else if (axis == "m") {
        row.config.combo_tokens = static_cast<std::size_t>(value);
    } else {
        throw ParameterError("sweep: unknown axis '" + axis + "' (expected p, placement or m)");
    }
    row.report = model_cost(row.config, convention);
    return row;
}

std::vector<SweepRow> sweep(const ModelConfig& base, const Convention& convention) {
    std::vector<SweepRow> rows;
    for (std::size_t placement = 5; placement <= std::min<std::size_t>(12, base.n_layers); ++placement) {
        rows.push_back(cost_row(base, "placement", static_cast<double>(placement), convention));
    }
    for (double p : {0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6}) {
        rows.push_back(cost_row(base, "p", p, convention));
    }
    return rows;
}

} // namespace thinner::cost
