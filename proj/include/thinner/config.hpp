// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "thinner/pruning_attention.hpp"

#include <cstddef>
#include <cstdint>
#include <string>

#include "json.hpp"

namespace thinner {

/// Hyperparameters of one classifier. `placement` is the 1-based layer the
/// combining module replaces; 0 disables the module (and the combination
/// tokens with it).
struct ModelConfig {
    std::size_t n_layers = 4;
    std::size_t d = 64;
    std::size_t heads = 4;
    std::size_t ff_mult = 4;
    std::size_t max_seq = 128;
    std::size_t combo_tokens = 8;
    double preservation = 0.9;
    std::size_t placement = 3;
    double alpha_important = 0.01;
    double alpha_unimportant = 0.9;
    std::size_t vocab_size = 2000;
    std::size_t num_classes = 2;
    std::int32_t pad_id = 0;

    bool fuzzy = true;
    bool gumbel = true;
    bool gumbel_per_pair = false;
    bool attention_residual = true;
    bool combiner_bias = false;
    KvProjection kv_projection = KvProjection::before_gather;
    double dropout = 0.0;
    double ln_eps = 1e-5;
    double init_std = 0.02;

    /// Throws ParameterError naming the offending field.
    void validate() const;

    bool combining_enabled() const noexcept { return placement != 0; }
    std::size_t active_combo_tokens() const noexcept { return combining_enabled() ? combo_tokens : 0; }
    bool pruning_enabled() const noexcept { return preservation < 1.0; }
    std::size_t ff_width() const noexcept { return ff_mult * d; }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// The four ablation variants expressible from one config.
enum class Variant { dense, pruned, combined, pruned_combined };
ModelConfig with_variant(ModelConfig base, Variant v);
std::string variant_name(Variant v);

} // namespace thinner
