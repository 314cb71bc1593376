// SPDX-License-Identifier: Apache-2.0
#include "thinner/config.hpp"

#include "thinner/errors.hpp"

#include <string>

namespace thinner {

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
    throw ParameterError("ModelConfig." + field + ": " + why);
}

} // namespace

void ModelConfig::validate() const {
    if (n_layers == 0) bad_field("n_layers", "must be at least 1");
    if (d == 0) bad_field("d", "must be positive");
    if (heads == 0) bad_field("heads", "must be positive");
    if (d % heads != 0) bad_field("heads", "d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
    if (ff_mult == 0) bad_field("ff_mult", "must be positive");
    if (max_seq == 0) bad_field("max_seq", "must be positive");
    if (combo_tokens == 0) bad_field("combo_tokens", "must be at least 1");
    if (!(preservation > 0.0 && preservation <= 1.0)) bad_field("preservation", "must lie in (0, 1]");
    if (placement > n_layers) bad_field("placement", "must be 0 (disabled) or in [1, n_layers]");
    if (!(alpha_important > 0.0 && alpha_important <= 1.0)) bad_field("alpha_important", "must lie in (0, 1]");
    if (!(alpha_unimportant > 0.0 && alpha_unimportant <= 1.0)) bad_field("alpha_unimportant", "must lie in (0, 1]");
    if (vocab_size < 2) bad_field("vocab_size", "must hold at least pad and unknown ids");
    if (num_classes < 2) bad_field("num_classes", "must be at least 2");
    if (pad_id < 0 || static_cast<std::size_t>(pad_id) >= vocab_size) bad_field("pad_id", "outside vocabulary");
    if (!(dropout >= 0.0 && dropout < 1.0)) bad_field("dropout", "must lie in [0, 1)");
    if (!(ln_eps > 0.0)) bad_field("ln_eps", "must be positive");
    if (!(init_std > 0.0)) bad_field("init_std", "must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{
        {"n_layers", c.n_layers},
        {"d", c.d},
        {"heads", c.heads},
        {"ff_mult", c.ff_mult},
        {"max_seq", c.max_seq},
        {"combo_tokens", c.combo_tokens},
        {"preservation", c.preservation},
        {"placement", c.placement},
        {"alpha_important", c.alpha_important},
        {"alpha_unimportant", c.alpha_unimportant},
        {"vocab_size", c.vocab_size},
        {"num_classes", c.num_classes},
        {"pad_id", c.pad_id},
        {"fuzzy", c.fuzzy},
        {"gumbel", c.gumbel},
        {"gumbel_per_pair", c.gumbel_per_pair},
        {"attention_residual", c.attention_residual},
        {"combiner_bias", c.combiner_bias},
        {"kv_projection", c.kv_projection == KvProjection::before_gather ? "before_gather" : "after_gather"},
        {"dropout", c.dropout},
        {"ln_eps", c.ln_eps},
        {"init_std", c.init_std},
    };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    static const nlohmann::json known = ModelConfig{};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ParameterError("ModelConfig: unknown field '" + key + "'");
    }
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception& e) {
            bad_field(key, e.what());
        }
    };
    get("n_layers", c.n_layers);
    get("d", c.d);
    get("heads", c.heads);
    get("ff_mult", c.ff_mult);
    get("max_seq", c.max_seq);
    get("combo_tokens", c.combo_tokens);
    get("preservation", c.preservation);
    get("placement", c.placement);
    get("alpha_important", c.alpha_important);
    get("alpha_unimportant", c.alpha_unimportant);
    get("vocab_size", c.vocab_size);
    get("num_classes", c.num_classes);
    get("pad_id", c.pad_id);
    get("fuzzy", c.fuzzy);
    get("gumbel", c.gumbel);
    get("gumbel_per_pair", c.gumbel_per_pair);
    get("attention_residual", c.attention_residual);
    get("combiner_bias", c.combiner_bias);
    get("dropout", c.dropout);
    get("ln_eps", c.ln_eps);
    get("init_std", c.init_std);
    if (j.contains("kv_projection")) {
        const auto s = j.at("kv_projection").get<std::string>();
        if (s == "before_gather") {
            c.kv_projection = KvProjection::before_gather;
        } else if (s == "after_gather") {
            c.kv_projection = KvProjection::after_gather;
        } else {
            bad_field("kv_projection", "expected before_gather or after_gather, got " + s);
        }
    }
}

ModelConfig with_variant(ModelConfig base, Variant v) {
    switch (v) {
    case Variant::dense:
        base.preservation = 1.0;
        base.placement = 0;
        break;
    case Variant::pruned:
        base.placement = 0;
        break;
    case Variant::combined:
        base.preservation = 1.0;
        break;
    case Variant::pruned_combined:
        break;
    }
    return base;
}

std::string variant_name(Variant v) {
    switch (v) {
    case Variant::dense: return "dense";
    case Variant::pruned: return "ours-PF";
    case Variant::combined: return "ours-C";
    case Variant::pruned_combined: return "ours-PFC";
    }
    return "unknown";
}

} // namespace thinner
