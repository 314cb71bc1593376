// SPDX-License-Identifier: Apache-2.0
//
// Token-pruned transformer classifier with an optional token combining
// module replacing one encoder layer.
#pragma once

#include "thinner/combiner.hpp"
#include "thinner/config.hpp"
#include "thinner/pruning_attention.hpp"
#include "thinner/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace thinner {

using TokenId = std::int32_t;

struct LayerTrace {
    std::size_t layer = 0;
    enum class Kind { pruned_block, combiner, plain_block } kind = Kind::pruned_block;
    std::size_t embedded_keys = 0;  // embedded tokens used as keys/values (or merged, for the combiner)
    std::size_t total_keys = 0;     // plus combination tokens
    std::size_t protected_count = 0;
    std::uint64_t macs = 0;
};

struct ForwardResult {
    Tensor logits;  // {1, num_classes}
    std::vector<LayerTrace> layers;
    std::uint64_t head_macs = 0;
};

struct Example {
    std::vector<TokenId> ids;
    std::size_t label = 0;
};

class Model {
public:
    static Model build(const ModelConfig& config, std::uint64_t seed);

    // Parameters are shared handles, so copies would alias; use clone().
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelConfig& config() const noexcept { return config_; }

    /// Evaluation-mode forward: no Gumbel noise, no dropout. Safe to call
    /// concurrently on a shared model while no thread is training it.
    ForwardResult infer(std::span<const TokenId> ids) const;

    /// Training-mode forward: Gumbel noise and dropout draw from the model's generator.
    ForwardResult forward_train(std::span<const TokenId> ids);

    /// Forward with explicit mode and assignment, for diagnostics and gradient checks.
    ForwardResult forward(std::span<const TokenId> ids, bool train_mode, std::mt19937_64* rng,
                          AssignMode assign = AssignMode::hard) const;

    /// Parameters in a stable order under stable names.
    const std::vector<std::pair<std::string, Tensor>>& parameters() const noexcept { return params_; }
    Tensor parameter(const std::string& name) const;
    std::size_t parameter_count() const;
    void zero_grad();

    std::mt19937_64& rng() noexcept { return rng_; }
    const std::mt19937_64& rng() const noexcept { return rng_; }
    std::uint64_t step() const noexcept { return step_; }
    void set_step(std::uint64_t step) noexcept { step_ = step; }

    /// Deep copy of every parameter (graph-free).
    Model clone() const;

private:
    Model() = default;
    void bind();
    Tensor& add_param(const std::string& name, Tensor t);

    ModelConfig config_;
    std::vector<std::pair<std::string, Tensor>> params_;

    Tensor token_embedding_, position_embedding_, embed_ln_gain_, embed_ln_bias_;
    Tensor combo_tokens_;
    std::vector<std::optional<AttentionBlockWeights>> blocks_;  // index l-1; empty at the placement layer
    std::optional<CombinerWeights> combiner_;
    Tensor head_w_, head_b_;

    std::mt19937_64 rng_;
    std::uint64_t step_ = 0;

    friend Model load_checkpoint(const std::filesystem::path& path);
};

// ---- training -------------------------------------------------------------

/// Linear warm-up to `base_lr` over `warmup_steps`, then linear decay to
/// zero at `total_steps`.
struct LinearSchedule {
    double base_lr = 1e-3;
    std::uint64_t warmup_steps = 0;
    std::uint64_t total_steps = 1;

    double lr(std::uint64_t step) const;
};

class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(Model& model, double lr);
    std::uint64_t updates() const noexcept { return t_; }

private:
    double beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// One optimizer step on a batch; returns the mean cross-entropy.
double train_step(Model& model, std::span<const Example> batch, Adam& optimizer,
                  const LinearSchedule& schedule);

/// Mean cross-entropy in evaluation mode, no gradients.
double mean_loss(const Model& model, std::span<const Example> data);

// ---- evaluation -----------------------------------------------------------

struct Metrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
};

/// Single-label metrics. Macro F1 averages per-class F1 over classes that
/// occur in either the labels or the predictions.
Metrics classification_metrics(std::span<const std::size_t> truth,
                               std::span<const std::size_t> predicted);

std::size_t predict(const Model& model, std::span<const TokenId> ids);
Metrics evaluate(const Model& model, std::span<const Example> data);

// ---- checkpoints ----------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

} // namespace thinner
