// SPDX-License-Identifier: Apache-2.0
//
// Analytical multiply-accumulate, FLOP and activation-memory accounting.
//
// Counting rules (one multiply-accumulate = two FLOPs; softmax, layer norm,
// activation and elementwise costs are not counted):
//
//   attention block, n_q query rows, n_kv key/value rows, width d, FF width f
//     Q projection        n_q  * d * d
//     K, V projections    2 * n_p * d * d   n_p = n_q (project, then gather)
//                                           n_p = n_kv (gather, then project)
//     scores Q K^T        n_q * n_kv * d    (summed over heads)
//     context P V         n_q * n_kv * d
//     output projection   n_q * d * d
//     feed-forward        2 * n_q * d * f
//
//   combining module, m combination tokens, n_k merged embedded tokens
//     W_q on combos       m * d * d
//     W_k, W_v on tokens  2 * n_k * d * d
//     similarity          m * n_k * d
//     merge HA (W_v e)    m * n_k * d
//     W_o                 m * d * d
//
// The dense baseline is the same width/depth encoder over n tokens with no
// pruning, no combination tokens and no combining module.
#pragma once

#include "thinner/config.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace thinner::cost {

struct Convention {
    KvProjection kv_projection = KvProjection::before_gather;
    double flops_per_mac = 2.0;
    std::size_t bytes_per_element = 4;  // fp32 activations
    std::size_t batch = 16;
};

enum class LayerKind { block, combiner };

struct LayerCost {
    LayerKind kind = LayerKind::block;
    std::size_t n_q = 0;
    std::size_t n_kv = 0;
    std::uint64_t q_projection = 0;
    std::uint64_t kv_projection = 0;
    std::uint64_t scores = 0;
    std::uint64_t context = 0;
    std::uint64_t output_projection = 0;
    std::uint64_t feed_forward = 0;
    std::uint64_t combiner_projection = 0;
    std::uint64_t combiner_similarity = 0;
    std::uint64_t combiner_merge = 0;
    double activation_elements = 0.0;  // per example

    std::uint64_t macs() const noexcept;
    double flops(const Convention& c = {}) const noexcept { return c.flops_per_mac * static_cast<double>(macs()); }
};

LayerCost layer_flops(std::size_t n_q, std::size_t n_kv, std::size_t d, std::size_t h,
                      std::size_t ff_width, const Convention& convention = {});

LayerCost combiner_flops(std::size_t m, std::size_t n_kept, std::size_t d);

/// Embedded key/value token count per layer under the ideal schedule
/// t1 = n, t(l+1) = floor(t(l) * p). The combining layer reports the tokens
/// it merges; layers after it report zero.
std::vector<std::size_t> ideal_schedule(const ModelConfig& config, std::size_t n);

struct CostReport {
    std::vector<LayerCost> layers;
    std::vector<std::size_t> schedule;
    std::uint64_t total_macs = 0;
    double total_flops = 0.0;
    double dense_flops = 0.0;
    double ratio_vs_dense = 1.0;   // this / dense
    double dense_over_this = 1.0;  // dense / this
    double peak_activation_bytes = 0.0;
    double total_activation_bytes = 0.0;
    double dense_peak_activation_bytes = 0.0;
    double dense_total_activation_bytes = 0.0;
    double memory_ratio_vs_dense = 1.0;  // total activation bytes, this / dense
};

/// Cost of `config` at sequence length `config.max_seq`.
CostReport model_cost(const ModelConfig& config, const Convention& convention = {});

struct SweepRow {
    std::string axis;
    double value = 0.0;
    ModelConfig config;
    CostReport report;
};

SweepRow cost_row(const ModelConfig& base, const std::string& axis, double value,
                  const Convention& convention = {});

/// Placements 5..12 (clamped to the layer count) and p in {0.95, 0.9, ..., 0.6}.
std::vector<SweepRow> sweep(const ModelConfig& base, const Convention& convention = {});

} // namespace thinner::cost
