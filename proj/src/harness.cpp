// SPDX-License-Identifier: Apache-2.0
#include "thinner/harness.hpp"

#include "thinner/errors.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace thinner {

// ---- config serialization -------------------------------------------------

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* section, const char* key, T& field) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string(section) + "." + key + ": " + e.what());
    }
}

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const char* section) {
    if (!j.is_object()) throw ParameterError(std::string(section) + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ParameterError(std::string(section) + ": unknown field '" + key + "'");
    }
}

} // namespace

void to_json(nlohmann::json& j, const DataConfig& c) {
    j = nlohmann::json{
        {"source", c.source},       {"task", c.task},
        {"train_size", c.train_size}, {"test_size", c.test_size},
        {"seq_len", c.seq_len},     {"positive_fraction", c.positive_fraction},
        {"path", c.path},           {"test_path", c.test_path},
        {"format", c.format},       {"mapping", c.mapping},
        {"val_fraction", c.val_fraction},
    };
}

void from_json(const nlohmann::json& j, DataConfig& c) {
    reject_unknown(j, DataConfig{}, "data");
    read_field(j, "data", "source", c.source);
    read_field(j, "data", "task", c.task);
    read_field(j, "data", "train_size", c.train_size);
    read_field(j, "data", "test_size", c.test_size);
    read_field(j, "data", "seq_len", c.seq_len);
    read_field(j, "data", "positive_fraction", c.positive_fraction);
    read_field(j, "data", "path", c.path);
    read_field(j, "data", "test_path", c.test_path);
    read_field(j, "data", "format", c.format);
    read_field(j, "data", "mapping", c.mapping);
    read_field(j, "data", "val_fraction", c.val_fraction);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"warmup_fraction", c.warmup_fraction}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    reject_unknown(j, TrainConfig{}, "train");
    read_field(j, "train", "epochs", c.epochs);
    read_field(j, "train", "batch_size", c.batch_size);
    read_field(j, "train", "lr", c.lr);
    read_field(j, "train", "warmup_fraction", c.warmup_fraction);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"name", c.name}, {"seed", c.seed}, {"model", c.model}, {"data", c.data}, {"train", c.train}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    reject_unknown(j, RunConfig{}, "config");
    read_field(j, "config", "name", c.name);
    read_field(j, "config", "seed", c.seed);
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("data")) c.data = j.at("data").get<DataConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ParameterError("cannot open config " + path.string());
    RunConfig c;
    try {
        c = nlohmann::json::parse(is, nullptr, true, true).get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError("config " + path.string() + ": " + e.what());
    }
    const auto base = path.parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).string();
    };
    resolve(c.data.path);
    resolve(c.data.test_path);
    resolve(c.data.mapping);
    return c;
}

// ---- data -----------------------------------------------------------------

namespace {

// Independent streams derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Dataset load_data(const RunConfig& config) {
    const DataConfig& dc = config.data;
    if (dc.source == "synth") {
        SynthOptions opt;
        opt.kind = parse_synth_kind(dc.task);
        opt.seq_len = dc.seq_len;
        opt.positive_fraction = dc.positive_fraction;
        opt.size = dc.train_size;
        opt.seed = derive_seed(config.seed, 1);
        Dataset data = synth_task(opt);
        split_train_val(data, dc.val_fraction, derive_seed(config.seed, 2));
        opt.size = dc.test_size;
        opt.seed = derive_seed(config.seed, 3);
        Dataset test = synth_task(opt);
        for (auto& ex : test.examples) {
            ex.split = Split::test;
            data.examples.push_back(std::move(ex));
        }
        return data;
    }
    if (dc.source == "file") {
        if (dc.path.empty()) throw ParameterError("data.path is required for file data");
        IngestOptions opt;
        opt.val_fraction = dc.val_fraction;
        opt.seed = derive_seed(config.seed, 2);
        if (!dc.mapping.empty()) opt.mapping = load_mapping(dc.mapping);
        const InputFormat format = parse_format(dc.format);
        Dataset data = ingest(dc.path, format, opt);
        if (!dc.test_path.empty()) {
            Dataset test = ingest(dc.test_path, format, opt);
            if (test.class_count() > data.class_count()) data.label_names = test.label_names;
            for (auto& ex : test.examples) {
                ex.split = Split::test;
                data.examples.push_back(std::move(ex));
            }
        }
        return data;
    }
    throw ParameterError("data.source must be synth or file, got '" + dc.source + "'");
}

} // namespace

PreparedData prepare_data(const RunConfig& config) {
    const Dataset data = load_data(config);
    const auto train = data.subset(Split::train);
    const auto val = data.subset(Split::val);
    const auto test = data.subset(Split::test);
    if (train.empty()) throw DataError("dataset has no train examples");
    if (val.empty()) throw DataError("dataset has no validation examples");
    if (test.empty()) throw DataError("dataset has no test examples");
    PreparedData out;
    out.vocab = Vocabulary::build(train, config.model.vocab_size);
    out.train = encode(train, out.vocab, config.model.max_seq);
    out.val = encode(val, out.vocab, config.model.max_seq);
    out.test = encode(test, out.vocab, config.model.max_seq);
    out.num_classes = data.class_count();
    return out;
}

// ---- runs -----------------------------------------------------------------

namespace {

std::string variant_of(const ModelConfig& c) {
    if (c.pruning_enabled() && c.combining_enabled()) return variant_name(Variant::pruned_combined);
    if (c.pruning_enabled()) return variant_name(Variant::pruned);
    if (c.combining_enabled()) return variant_name(Variant::combined);
    return variant_name(Variant::dense);
}

std::string kind_name(LayerTrace::Kind k) {
    switch (k) {
    case LayerTrace::Kind::pruned_block: return "pruned_block";
    case LayerTrace::Kind::combiner: return "combiner";
    case LayerTrace::Kind::plain_block: return "plain_block";
    }
    return "pruned_block";
}

std::vector<LayerTokens> token_trace(const Model& model, const std::vector<Example>& data) {
    NoGradGuard guard;
    std::vector<LayerTokens> trace;
    for (const auto& ex : data) {
        const ForwardResult out = model.infer(ex.ids);
        if (trace.empty()) {
            for (const auto& l : out.layers) {
                LayerTokens t;
                t.layer = l.layer;
                t.kind = kind_name(l.kind);
                t.min_total_keys = l.total_keys;
                t.max_total_keys = l.total_keys;
                trace.push_back(t);
            }
        }
        for (std::size_t i = 0; i < out.layers.size(); ++i) {
            trace[i].mean_embedded_keys += static_cast<double>(out.layers[i].embedded_keys);
            trace[i].mean_total_keys += static_cast<double>(out.layers[i].total_keys);
            trace[i].min_total_keys = std::min(trace[i].min_total_keys, out.layers[i].total_keys);
            trace[i].max_total_keys = std::max(trace[i].max_total_keys, out.layers[i].total_keys);
        }
    }
    for (auto& t : trace) {
        t.mean_embedded_keys /= static_cast<double>(data.size());
        t.mean_total_keys /= static_cast<double>(data.size());
    }
    return trace;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw Error("write failed for " + path.string());
}

void write_artifacts(const RunArtifacts& a, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "report.json", report_to_json(a.report).dump(2) + "\n");
    std::string vocab;
    for (const auto& w : a.vocab.words()) vocab += w + "\n";
    write_text(dir / "vocab.txt", vocab);
    if (a.model) save_checkpoint(*a.model, dir / "checkpoint.bin");
}

} // namespace

RunArtifacts run_prepared(const RunConfig& input, const PreparedData& data) {
    const auto start = std::chrono::steady_clock::now();
    RunConfig config = input;
    config.model.num_classes = std::max<std::size_t>(2, data.num_classes);
    if (config.train.batch_size == 0) throw ParameterError("train.batch_size must be positive");
    if (!(config.train.lr >= 0.0)) throw ParameterError("train.lr must be non-negative");
    if (!(config.train.warmup_fraction >= 0.0 && config.train.warmup_fraction <= 1.0)) {
        throw ParameterError("train.warmup_fraction must lie in [0, 1]");
    }

    RunArtifacts out;
    out.vocab = data.vocab;
    RunReport& report = out.report;
    report.config = config;
    report.variant = variant_of(config.model);
    report.vocab_size = data.vocab.size();
    report.train_examples = data.train.size();
    report.val_examples = data.val.size();
    report.test_examples = data.test.size();

    Model model = Model::build(config.model, config.seed);
    const std::size_t batches = (data.train.size() + config.train.batch_size - 1) / config.train.batch_size;
    LinearSchedule schedule;
    schedule.base_lr = config.train.lr;
    schedule.total_steps = std::max<std::uint64_t>(1, config.train.epochs * batches);
    schedule.warmup_steps = static_cast<std::uint64_t>(
        std::llround(config.train.warmup_fraction * static_cast<double>(schedule.total_steps)));
    Adam adam;

    Model best = model.clone();
    report.best_epoch = 0;
    report.best_val_loss = mean_loss(model, data.val);

    std::mt19937_64 order_rng(derive_seed(config.seed, 4));
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Example> batch;
    for (std::size_t epoch = 1; epoch <= config.train.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            batch.clear();
            const std::size_t end = std::min(order.size(), (b + 1) * config.train.batch_size);
            for (std::size_t k = b * config.train.batch_size; k < end; ++k) batch.push_back(data.train[order[k]]);
            loss_sum += train_step(model, batch, adam, schedule) * static_cast<double>(batch.size());
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(data.train.size());
        rec.val_loss = mean_loss(model, data.val);
        rec.val = evaluate(model, data.val);
        if (!std::isfinite(rec.train_loss)) throw DataError("training diverged at epoch " + std::to_string(epoch));
        if (rec.val_loss < report.best_val_loss) {
            report.best_val_loss = rec.val_loss;
            report.best_epoch = epoch;
            best = model.clone();
        }
        report.epochs.push_back(rec);
    }

    report.test = evaluate(best, data.test);
    report.test_loss = mean_loss(best, data.test);
    report.token_trace = token_trace(best, data.test);
    report.cost = cost::model_cost(config.model);
    out.model = std::move(best);
    report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

RunArtifacts run(const RunConfig& config, const std::optional<std::filesystem::path>& out_dir) {
    RunArtifacts a;
    try {
        a = run_prepared(config, prepare_data(config));
    } catch (const Error& e) {
        throw Error("run '" + config.name + "' (seed " + std::to_string(config.seed) + "): " + e.what());
    }
    if (out_dir) write_artifacts(a, *out_dir);
    return a;
}

// ---- report serialization -------------------------------------------------

namespace {

nlohmann::json metrics_json(const Metrics& m) {
    return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"micro_f1", m.micro_f1}};
}

Metrics metrics_from(const nlohmann::json& j) {
    return Metrics{j.at("accuracy").get<double>(), j.at("macro_f1").get<double>(), j.at("micro_f1").get<double>()};
}

nlohmann::json layer_cost_json(const cost::LayerCost& c) {
    return {{"kind", c.kind == cost::LayerKind::block ? "block" : "combiner"},
            {"n_q", c.n_q},
            {"n_kv", c.n_kv},
            {"q_projection", c.q_projection},
            {"kv_projection", c.kv_projection},
            {"scores", c.scores},
            {"context", c.context},
            {"output_projection", c.output_projection},
            {"feed_forward", c.feed_forward},
            {"combiner_projection", c.combiner_projection},
            {"combiner_similarity", c.combiner_similarity},
            {"combiner_merge", c.combiner_merge},
            {"macs", c.macs()},
            {"activation_elements", c.activation_elements}};
}

cost::LayerCost layer_cost_from(const nlohmann::json& j) {
    cost::LayerCost c;
    c.kind = j.at("kind").get<std::string>() == "block" ? cost::LayerKind::block : cost::LayerKind::combiner;
    j.at("n_q").get_to(c.n_q);
    j.at("n_kv").get_to(c.n_kv);
    j.at("q_projection").get_to(c.q_projection);
    j.at("kv_projection").get_to(c.kv_projection);
    j.at("scores").get_to(c.scores);
    j.at("context").get_to(c.context);
    j.at("output_projection").get_to(c.output_projection);
    j.at("feed_forward").get_to(c.feed_forward);
    j.at("combiner_projection").get_to(c.combiner_projection);
    j.at("combiner_similarity").get_to(c.combiner_similarity);
    j.at("combiner_merge").get_to(c.combiner_merge);
    j.at("activation_elements").get_to(c.activation_elements);
    return c;
}

} // namespace

nlohmann::json cost_to_json(const cost::CostReport& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : r.layers) layers.push_back(layer_cost_json(l));
    return {{"layers", layers},
            {"schedule", r.schedule},
            {"total_macs", r.total_macs},
            {"total_flops", r.total_flops},
            {"dense_flops", r.dense_flops},
            {"ratio_vs_dense", r.ratio_vs_dense},
            {"dense_over_this", r.dense_over_this},
            {"peak_activation_bytes", r.peak_activation_bytes},
            {"total_activation_bytes", r.total_activation_bytes},
            {"dense_peak_activation_bytes", r.dense_peak_activation_bytes},
            {"dense_total_activation_bytes", r.dense_total_activation_bytes},
            {"memory_ratio_vs_dense", r.memory_ratio_vs_dense}};
}

nlohmann::json report_to_json(const RunReport& r) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss},
                          {"val", metrics_json(e.val)}});
    }
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& t : r.token_trace) {
        trace.push_back({{"layer", t.layer},
                         {"kind", t.kind},
                         {"mean_embedded_keys", t.mean_embedded_keys},
                         {"mean_total_keys", t.mean_total_keys},
                         {"min_total_keys", t.min_total_keys},
                         {"max_total_keys", t.max_total_keys}});
    }
    return {{"config", r.config},
            {"variant", r.variant},
            {"seed", r.config.seed},
            {"vocab_size", r.vocab_size},
            {"examples", {{"train", r.train_examples}, {"val", r.val_examples}, {"test", r.test_examples}}},
            {"epochs", epochs},
            {"best_epoch", r.best_epoch},
            {"best_val_loss", r.best_val_loss},
            {"test", metrics_json(r.test)},
            {"test_loss", r.test_loss},
            {"token_trace", trace},
            {"cost", cost_to_json(r.cost)},
            {"wall_time_s", r.wall_time_s}};
}

RunReport report_from_json(const nlohmann::json& j) {
    RunReport r;
    try {
        r.config = j.at("config").get<RunConfig>();
        j.at("variant").get_to(r.variant);
        j.at("vocab_size").get_to(r.vocab_size);
        j.at("examples").at("train").get_to(r.train_examples);
        j.at("examples").at("val").get_to(r.val_examples);
        j.at("examples").at("test").get_to(r.test_examples);
        for (const auto& e : j.at("epochs")) {
            EpochRecord rec;
            e.at("epoch").get_to(rec.epoch);
            e.at("train_loss").get_to(rec.train_loss);
            e.at("val_loss").get_to(rec.val_loss);
            rec.val = metrics_from(e.at("val"));
            r.epochs.push_back(rec);
        }
        j.at("best_epoch").get_to(r.best_epoch);
        j.at("best_val_loss").get_to(r.best_val_loss);
        r.test = metrics_from(j.at("test"));
        j.at("test_loss").get_to(r.test_loss);
        for (const auto& t : j.at("token_trace")) {
            LayerTokens lt;
            t.at("layer").get_to(lt.layer);
            t.at("kind").get_to(lt.kind);
            t.at("mean_embedded_keys").get_to(lt.mean_embedded_keys);
            t.at("mean_total_keys").get_to(lt.mean_total_keys);
            t.at("min_total_keys").get_to(lt.min_total_keys);
            t.at("max_total_keys").get_to(lt.max_total_keys);
            r.token_trace.push_back(lt);
        }
        const auto& c = j.at("cost");
        for (const auto& l : c.at("layers")) r.cost.layers.push_back(layer_cost_from(l));
        c.at("schedule").get_to(r.cost.schedule);
        c.at("total_macs").get_to(r.cost.total_macs);
        c.at("total_flops").get_to(r.cost.total_flops);
        c.at("dense_flops").get_to(r.cost.dense_flops);
        c.at("ratio_vs_dense").get_to(r.cost.ratio_vs_dense);
        c.at("dense_over_this").get_to(r.cost.dense_over_this);
        c.at("peak_activation_bytes").get_to(r.cost.peak_activation_bytes);
        c.at("total_activation_bytes").get_to(r.cost.total_activation_bytes);
        c.at("dense_peak_activation_bytes").get_to(r.cost.dense_peak_activation_bytes);
        c.at("dense_total_activation_bytes").get_to(r.cost.dense_total_activation_bytes);
        c.at("memory_ratio_vs_dense").get_to(r.cost.memory_ratio_vs_dense);
        j.at("wall_time_s").get_to(r.wall_time_s);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("run report: ") + e.what());
    }
    return r;
}

bool same_outcome(const RunReport& a, const RunReport& b) {
    auto ja = report_to_json(a);
    auto jb = report_to_json(b);
    ja.erase("wall_time_s");
    jb.erase("wall_time_s");
    return ja == jb;
}

// ---- sweeps ---------------------------------------------------------------

SweepAxis parse_axis(std::string_view s) {
    if (s == "p") return SweepAxis::p;
    if (s == "placement") return SweepAxis::placement;
    if (s == "m") return SweepAxis::m;
    throw ParameterError("unknown sweep axis '" + std::string(s) + "' (expected p, placement or m)");
}

std::string axis_name(SweepAxis a) {
    switch (a) {
    case SweepAxis::p: return "p";
    case SweepAxis::placement: return "placement";
    case SweepAxis::m: return "m";
    }
    return "p";
}

RunConfig with_axis(RunConfig base, SweepAxis axis, double value) {
    auto as_count = [&](const char* what) {
        if (!(value >= 0.0) || value != std::floor(value)) {
            throw ParameterError(std::string(what) + " must be a non-negative integer");
        }
        return static_cast<std::size_t>(value);
    };
    switch (axis) {
    case SweepAxis::p: base.model.preservation = value; break;
    case SweepAxis::placement: base.model.placement = as_count("placement"); break;
    case SweepAxis::m: base.model.combo_tokens = as_count("m"); break;
    }
    return base;
}

namespace {

std::string num(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return ec == std::errc() ? std::string(buf, ptr) : std::to_string(v);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    return out + "\"";
}

std::string join_row(const std::vector<std::string>& fields) {
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) line.push_back(',');
        line += csv_field(fields[i]);
    }
    return line + "\n";
}

} // namespace

const std::vector<std::string>& summary_header() {
    static const std::vector<std::string> header = {
        "axis",          "value",          "status",          "error",
        "variant",       "best_epoch",     "best_val_loss",   "test_loss",
        "test_accuracy", "test_macro_f1",  "test_micro_f1",   "final_total_keys",
        "total_macs",    "total_flops",    "ratio_vs_dense",  "dense_over_this",
        "peak_activation_bytes", "memory_ratio_vs_dense"};
    return header;
}

std::string summary_csv(SweepAxis axis, const std::vector<SweepResult>& results) {
    std::string out = join_row(summary_header());
    for (const auto& r : results) {
        std::vector<std::string> row = {axis_name(axis), num(r.value), r.ok ? "ok" : "failed", r.error};
        if (r.report) {
            const RunReport& rep = *r.report;
            row.insert(row.end(), {rep.variant, std::to_string(rep.best_epoch), num(rep.best_val_loss),
                                   num(rep.test_loss), num(rep.test.accuracy), num(rep.test.macro_f1),
                                   num(rep.test.micro_f1),
                                   rep.token_trace.empty() ? "" : num(rep.token_trace.back().mean_total_keys)});
        } else {
            row.insert(row.end(), 8, "");
        }
        if (r.cost) {
            const auto& c = *r.cost;
            row.insert(row.end(), {std::to_string(c.total_macs), num(c.total_flops), num(c.ratio_vs_dense),
                                   num(c.dense_over_this), num(c.peak_activation_bytes),
                                   num(c.memory_ratio_vs_dense)});
        } else {
            row.insert(row.end(), 6, "");
        }
        out += join_row(row);
    }
    return out;
}

std::size_t sweep_threads() {
    if (const char* env = std::getenv("TOKEN_THINNER_THREADS")) {
        std::size_t v = 0;
        const std::string_view s(env);
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec == std::errc() && ptr == s.data() + s.size() && v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<SweepResult> sweep(const RunConfig& base, SweepAxis axis, const std::vector<double>& values,
                               const std::optional<std::filesystem::path>& out_dir, std::size_t threads) {
    std::vector<SweepResult> results(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) results[i].value = values[i];

    std::optional<PreparedData> data;
    std::string data_error;
    try {
        data = prepare_data(base);
    } catch (const Error& e) {
        data_error = e.what();
    }

    std::mutex writer;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < values.size(); i = next++) {
            SweepResult& r = results[i];
            try {
                const RunConfig cfg = with_axis(base, axis, values[i]);
                r.cost = cost::model_cost(cfg.model);
                if (!data) throw DataError(data_error);
                RunArtifacts a = run_prepared(cfg, *data);
                r.report = a.report;
                r.ok = true;
                if (out_dir) {
                    std::lock_guard lock(writer);
                    write_artifacts(a, *out_dir / (axis_name(axis) + "_" + num(values[i])));
                }
            } catch (const std::exception& e) {
                r.ok = false;
                r.error = e.what();
            }
        }
    };
    if (threads == 0) threads = sweep_threads();
    threads = std::max<std::size_t>(1, std::min(threads, values.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        write_text(*out_dir / "summary.csv", summary_csv(axis, results));
    }
    return results;
}

// ---- cost tables ----------------------------------------------------------

const std::vector<std::string>& cost_header() {
    static const std::vector<std::string> header = {
        "axis",        "value",        "n_layers",   "d",
        "heads",       "max_seq",      "combo_tokens", "preservation",
        "placement",   "total_macs",   "total_flops", "dense_flops",
        "ratio_vs_dense", "dense_over_this", "peak_activation_bytes", "dense_peak_activation_bytes",
        "total_activation_bytes", "memory_ratio_vs_dense", "schedule"};
    return header;
}

std::string cost_csv(const std::vector<cost::SweepRow>& rows) {
    std::string out = join_row(cost_header());
    for (const auto& row : rows) {
        const auto& c = row.config;
        const auto& r = row.report;
        std::string schedule;
        for (std::size_t i = 0; i < r.schedule.size(); ++i) {
            if (i) schedule.push_back(' ');
            schedule += std::to_string(r.schedule[i]);
        }
        out += join_row({row.axis, num(row.value), std::to_string(c.n_layers), std::to_string(c.d),
                         std::to_string(c.heads), std::to_string(c.max_seq), std::to_string(c.combo_tokens),
                         num(c.preservation), std::to_string(c.placement), std::to_string(r.total_macs),
                         num(r.total_flops), num(r.dense_flops), num(r.ratio_vs_dense), num(r.dense_over_this),
                         num(r.peak_activation_bytes), num(r.dense_peak_activation_bytes),
                         num(r.total_activation_bytes), num(r.memory_ratio_vs_dense), schedule});
    }
    return out;
}

} // namespace thinner
