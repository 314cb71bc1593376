// SPDX-License-Identifier: Apache-2.0
#include "thinner/model.hpp"

#include "thinner/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

namespace thinner {

namespace {

// BERT-style truncated normal: resample anything beyond two standard deviations.
Tensor truncated_normal(Shape shape, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) {
        double z = normal(rng);
        while (std::abs(z) > 2.0) z = normal(rng);
        v = z * std;
    }
    return Tensor::from(std::move(shape), std::move(values), true);
}

std::string layer_prefix(std::size_t l) { return "layer" + std::to_string(l) + "."; }

} // namespace

Tensor& Model::add_param(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, std::move(t));
    return params_.back().second;
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model model;
    model.config_ = config;
    model.rng_.seed(seed);
    auto& rng = model.rng_;
    const std::size_t d = config.d;
    const std::size_t f = config.ff_width();
    const double sd = config.init_std;
    auto normal = [&](Shape s) { return truncated_normal(std::move(s), sd, rng); };
    auto zeros = [](Shape s) { return Tensor::zeros(std::move(s), true); };
    auto ones = [](Shape s) { return Tensor::full(std::move(s), 1.0, true); };

    model.add_param("embed.token", normal({config.vocab_size, d}));
    model.add_param("embed.position", normal({config.max_seq, d}));
    model.add_param("embed.ln.gain", ones({d}));
    model.add_param("embed.ln.bias", zeros({d}));
    if (config.combining_enabled()) model.add_param("combo.tokens", normal({config.combo_tokens, d}));

    for (std::size_t l = 1; l <= config.n_layers; ++l) {
        const std::string p = layer_prefix(l);
        if (l == config.placement) {
            const std::string c = p + "combiner.";
            model.add_param(c + "combo_ln.gain", ones({d}));
            model.add_param(c + "combo_ln.bias", zeros({d}));
            model.add_param(c + "embed_ln.gain", ones({d}));
            model.add_param(c + "embed_ln.bias", zeros({d}));
            model.add_param(c + "wq", normal({d, d}));
            model.add_param(c + "wk", normal({d, d}));
            model.add_param(c + "wv", normal({d, d}));
            model.add_param(c + "wo", normal({d, d}));
            if (config.combiner_bias) {
                model.add_param(c + "bq", zeros({d}));
                model.add_param(c + "bk", zeros({d}));
                model.add_param(c + "bv", zeros({d}));
            }
            continue;
        }
        model.add_param(p + "wq", normal({d, d}));
        model.add_param(p + "bq", zeros({d}));
        model.add_param(p + "wk", normal({d, d}));
        model.add_param(p + "bk", zeros({d}));
        model.add_param(p + "wv", normal({d, d}));
        model.add_param(p + "bv", zeros({d}));
        model.add_param(p + "wo", normal({d, d}));
        model.add_param(p + "bo", zeros({d}));
        model.add_param(p + "ln1.gain", ones({d}));
        model.add_param(p + "ln1.bias", zeros({d}));
        model.add_param(p + "ff1.w", normal({d, f}));
        model.add_param(p + "ff1.b", zeros({f}));
        model.add_param(p + "ff2.w", normal({f, d}));
        model.add_param(p + "ff2.b", zeros({d}));
        model.add_param(p + "ln2.gain", ones({d}));
        model.add_param(p + "ln2.bias", zeros({d}));
    }
    model.add_param("head.w", normal({d, config.num_classes}));
    model.add_param("head.b", zeros({config.num_classes}));
    model.bind();
    return model;
}

void Model::bind() {
    std::map<std::string, Tensor> by_name(params_.begin(), params_.end());
    auto need = [&](const std::string& name) -> Tensor {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("model: missing parameter '" + name + "'");
        return it->second;
    };
    auto maybe = [&](const std::string& name) -> Tensor {
        auto it = by_name.find(name);
        return it == by_name.end() ? Tensor() : it->second;
    };
    token_embedding_ = need("embed.token");
    position_embedding_ = need("embed.position");
    embed_ln_gain_ = need("embed.ln.gain");
    embed_ln_bias_ = need("embed.ln.bias");
    combo_tokens_ = config_.combining_enabled() ? need("combo.tokens") : Tensor();
    blocks_.assign(config_.n_layers, std::nullopt);
    combiner_.reset();
    for (std::size_t l = 1; l <= config_.n_layers; ++l) {
        const std::string p = layer_prefix(l);
        if (l == config_.placement) {
            const std::string c = p + "combiner.";
            CombinerWeights w;
            w.combo_ln_gain = need(c + "combo_ln.gain");
            w.combo_ln_bias = need(c + "combo_ln.bias");
            w.embed_ln_gain = need(c + "embed_ln.gain");
            w.embed_ln_bias = need(c + "embed_ln.bias");
            w.wq = need(c + "wq");
            w.wk = need(c + "wk");
            w.wv = need(c + "wv");
            w.wo = need(c + "wo");
            w.bq = maybe(c + "bq");
            w.bk = maybe(c + "bk");
            w.bv = maybe(c + "bv");
            combiner_ = std::move(w);
            continue;
        }
        AttentionBlockWeights w;
        w.heads = config_.heads;
        w.wq = need(p + "wq");
        w.bq = need(p + "bq");
        w.wk = need(p + "wk");
        w.bk = need(p + "bk");
        w.wv = need(p + "wv");
        w.bv = need(p + "bv");
        w.wo = need(p + "wo");
        w.bo = need(p + "bo");
        w.ln1_gain = need(p + "ln1.gain");
        w.ln1_bias = need(p + "ln1.bias");
        w.ff1_w = need(p + "ff1.w");
        w.ff1_b = need(p + "ff1.b");
        w.ff2_w = need(p + "ff2.w");
        w.ff2_b = need(p + "ff2.b");
        w.ln2_gain = need(p + "ln2.gain");
        w.ln2_bias = need(p + "ln2.bias");
        blocks_[l - 1] = std::move(w);
    }
    head_w_ = need("head.w");
    head_b_ = need("head.b");
}

Tensor Model::parameter(const std::string& name) const {
    for (const auto& [n, t] : params_) {
        if (n == name) return t;
    }
    throw ParameterError("model: no parameter named '" + name + "'");
}

std::size_t Model::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [_, t] : params_) total += t.size();
    return total;
}

void Model::zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
}

Model Model::clone() const {
    Model copy;
    copy.config_ = config_;
    copy.rng_ = rng_;
    copy.step_ = step_;
    for (const auto& [name, t] : params_) copy.add_param(name, t.detach());
    copy.bind();
    return copy;
}

ForwardResult Model::infer(std::span<const TokenId> ids) const {
    return forward(ids, false, nullptr);
}

ForwardResult Model::forward_train(std::span<const TokenId> ids) {
    return forward(ids, true, &rng_);
}

ForwardResult Model::forward(std::span<const TokenId> ids, bool train_mode, std::mt19937_64* rng,
                             AssignMode assign) const {
    const ModelConfig& cfg = config_;
    const std::size_t n = std::min(ids.size(), cfg.max_seq);
    std::vector<std::size_t> rows(n);
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < n; ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg.vocab_size) {
            throw VocabularyError("forward: token id " + std::to_string(ids[i]) + " at position " +
                                  std::to_string(i) + " outside vocabulary of " +
                                  std::to_string(cfg.vocab_size));
        }
        rows[i] = static_cast<std::size_t>(ids[i]);
        if (ids[i] != cfg.pad_id) valid.push_back(i);
    }
    if (valid.empty()) throw DataError("forward: input has no non-padding tokens");

    const bool dropout = train_mode && cfg.dropout > 0.0 && rng != nullptr;
    auto maybe_dropout = [&](const Tensor& x) {
        if (!dropout) return x;
        std::bernoulli_distribution keep(1.0 - cfg.dropout);
        std::vector<double> mask(x.size());
        for (auto& v : mask) v = keep(*rng) ? 1.0 / (1.0 - cfg.dropout) : 0.0;
        return apply_mask(x, mask);
    };

    std::vector<std::size_t> positions(n);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    Tensor x = add(index_rows(token_embedding_, rows), gather_rows(position_embedding_, positions));
    x = maybe_dropout(layer_norm(x, embed_ln_gain_, embed_ln_bias_, cfg.ln_eps));

    const std::size_t m = cfg.active_combo_tokens();
    if (m > 0) x = concat_rows(x, combo_tokens_);

    AttentionOptions opts;
    opts.kv_projection = cfg.kv_projection;
    opts.attention_residual = cfg.attention_residual;
    opts.fuzzy = cfg.fuzzy;
    opts.alpha_important = cfg.alpha_important;
    opts.alpha_unimportant = cfg.alpha_unimportant;
    opts.ln_eps = cfg.ln_eps;

    std::vector<std::size_t> query_rows = valid;
    for (std::size_t i = 0; i < m; ++i) query_rows.push_back(n + i);

    TokenSet kept;
    kept.embedded = valid;
    kept.combo_count = m;
    kept.layer = 1;
    bool combined = false;

    ForwardResult result;
    for (std::size_t l = 1; l <= cfg.n_layers; ++l) {
        LayerTrace trace;
        trace.layer = l;
        const std::uint64_t macs_before = mac_count();
        if (l == cfg.placement) {
            trace.kind = LayerTrace::Kind::combiner;
            trace.embedded_keys = kept.embedded.size();
            trace.total_keys = kept.embedded.size() + m;
            const Tensor embedded = gather_rows(slice_rows(x, 0, n), kept.embedded);
            const Tensor combo = slice_rows(x, n, n + m);
            GumbelNoise noise;
            if (train_mode && cfg.gumbel && rng != nullptr) {
                noise.rng = rng;
                noise.per_pair = cfg.gumbel_per_pair;
            }
            x = combining_module(embedded, combo, *combiner_, noise, assign, cfg.ln_eps);
            combined = true;
        } else if (combined) {
            trace.kind = LayerTrace::Kind::plain_block;
            trace.total_keys = m;
            x = block_forward(x, *blocks_[l - 1], TokenSet::all(0, m, l), opts).out;
        } else {
            trace.kind = LayerTrace::Kind::pruned_block;
            trace.embedded_keys = kept.embedded.size();
            trace.total_keys = kept.size();
            kept.layer = l;
            AttentionOutput out = block_forward(x, *blocks_[l - 1], kept, opts, query_rows);
            x = out.out;
            const bool next_pruned = l < cfg.n_layers && (cfg.placement == 0 || l + 1 <= cfg.placement);
            if (cfg.pruning_enabled() && next_pruned) {
                trace.protected_count = out.profile.protected_set.size();
                const std::size_t budget = preserved_count(kept.embedded.size(), cfg.preservation);
                kept = select_tokens(out.profile.scores, out.profile, budget, kept);
            }
        }
        trace.macs = mac_count() - macs_before;
        result.layers.push_back(trace);
    }

    Tensor pooled = combined ? mean_rows(x) : mean_rows(gather_rows(x, valid));
    pooled = maybe_dropout(pooled);
    const std::uint64_t head_before = mac_count();
    result.logits = linear(pooled, head_w_, head_b_);
    result.head_macs = mac_count() - head_before;
    return result;
}

// ---- training -------------------------------------------------------------

double LinearSchedule::lr(std::uint64_t step) const {
    if (step < warmup_steps) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps) return base_lr;
    const double remaining = static_cast<double>(total_steps) - static_cast<double>(step);
    return base_lr * std::max(0.0, remaining / static_cast<double>(total_steps - warmup_steps));
}

void Adam::step(Model& model, double lr) {
    auto& params = model.parameters();
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].second.size(), 0.0);
            v_[i].assign(params[i].second.size(), 0.0);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i].second;
        if (!p.has_grad()) continue;
        auto w = p.mutable_data();
        const auto g = p.grad();
        for (std::size_t k = 0; k < w.size(); ++k) {
            m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
            v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
            const double mhat = m_[i][k] / c1;
            const double vhat = v_[i][k] / c2;
            w[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

double train_step(Model& model, std::span<const Example> batch, Adam& optimizer,
                  const LinearSchedule& schedule) {
    if (batch.empty()) throw ParameterError("train_step: empty batch");
    for (const auto& ex : batch) {
        if (ex.label >= model.config().num_classes) {
            throw DataError("train_step: label " + std::to_string(ex.label) + " out of range for " +
                            std::to_string(model.config().num_classes) + " classes");
        }
    }
    model.zero_grad();
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) {
        const ForwardResult out = model.forward_train(ex.ids);
        const Tensor loss = cross_entropy_with_logits(out.logits, ex.label);
        total += loss.item();
        scale(loss, inv).backward();
    }
    optimizer.step(model, schedule.lr(model.step()));
    model.set_step(model.step() + 1);
    return total * inv;
}

double mean_loss(const Model& model, std::span<const Example> data) {
    if (data.empty()) throw ParameterError("mean_loss: empty dataset");
    NoGradGuard guard;
    double total = 0.0;
    for (const auto& ex : data) {
        total += cross_entropy_with_logits(model.infer(ex.ids).logits, ex.label).item();
    }
    return total / static_cast<double>(data.size());
}

// ---- evaluation -----------------------------------------------------------

Metrics classification_metrics(std::span<const std::size_t> truth,
                               std::span<const std::size_t> predicted) {
    if (truth.empty()) throw ParameterError("evaluate: empty dataset");
    if (truth.size() != predicted.size()) throw ParameterError("evaluate: label/prediction count mismatch");
    std::size_t classes = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        classes = std::max({classes, truth[i] + 1, predicted[i] + 1});
    }
    std::vector<double> tp(classes, 0.0), fp(classes, 0.0), fn(classes, 0.0);
    std::vector<bool> seen(classes, false);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        seen[truth[i]] = seen[predicted[i]] = true;
        if (truth[i] == predicted[i]) {
            ++correct;
            tp[truth[i]] += 1.0;
        } else {
            fp[predicted[i]] += 1.0;
            fn[truth[i]] += 1.0;
        }
    }
    Metrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
    double f1_sum = 0.0;
    std::size_t counted = 0;
    double tp_all = 0.0, fp_all = 0.0, fn_all = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        tp_all += tp[c];
        fp_all += fp[c];
        fn_all += fn[c];
        if (!seen[c]) continue;
        const double denom = 2.0 * tp[c] + fp[c] + fn[c];
        f1_sum += denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
        ++counted;
    }
    m.macro_f1 = f1_sum / static_cast<double>(counted);
    m.micro_f1 = 2.0 * tp_all / (2.0 * tp_all + fp_all + fn_all);
    return m;
}

std::size_t predict(const Model& model, std::span<const TokenId> ids) {
    NoGradGuard guard;
    const Tensor out = model.infer(ids).logits;
    const auto logits = out.data();
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

Metrics evaluate(const Model& model, std::span<const Example> data) {
    if (data.empty()) throw ParameterError("evaluate: empty dataset");
    std::vector<std::size_t> truth;
    std::vector<std::size_t> predicted;
    truth.reserve(data.size());
    predicted.reserve(data.size());
    for (const auto& ex : data) {
        truth.push_back(ex.label);
        predicted.push_back(predict(model, ex.ids));
    }
    return classification_metrics(truth, predicted);
}

} // namespace thinner
