// SPDX-License-Identifier: Apache-2.0
//
// token_thinner: dataset ingestion, synthetic tasks, training, evaluation,
// cost tables and ablation sweeps.
#include "thinner/cost_model.hpp"
#include "thinner/dataset.hpp"
#include "thinner/errors.hpp"
#include "thinner/harness.hpp"
#include "thinner/model.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace thinner;

namespace {

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os << text;
}

Vocabulary read_vocab(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open vocabulary " + path.string());
    std::vector<std::string> words;
    std::string line;
    while (std::getline(is, line)) words.push_back(line);
    if (words.size() < 2 || words[0] != "[pad]" || words[1] != "[unk]") {
        throw FormatError("vocabulary " + path.string() + " must start with [pad] and [unk]");
    }
    return Vocabulary::from_words(std::vector<std::string>(words.begin() + 2, words.end()));
}

nlohmann::json metrics_json(const Metrics& m) {
    return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"micro_f1", m.micro_f1}};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Token pruning and combining transformer workbench"};
    app.require_subcommand(1);

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "Validate a CSV/JSONL dataset and write it with split tags");
    std::string ingest_input, ingest_format = "csv", ingest_mapping, ingest_out;
    std::uint64_t ingest_seed = 0;
    double ingest_val = 0.2;
    ingest_cmd->add_option("input", ingest_input, "Dataset file")->required()->check(CLI::ExistingFile);
    ingest_cmd->add_option("--format", ingest_format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));
    ingest_cmd->add_option("--mapping", ingest_mapping, "JSON object mapping string labels to ids");
    ingest_cmd->add_option("--seed", ingest_seed, "Seed for the train/val split");
    ingest_cmd->add_option("--val-fraction", ingest_val, "Fraction of train rows moved to val");
    ingest_cmd->add_option("--out", ingest_out, "Output directory");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic classification dataset");
    SynthOptions synth_opt;
    std::string synth_task_name = "keyword-flag", synth_format = "csv", synth_out = ".";
    synth_cmd->add_option("--task", synth_task_name, "keyword-flag, majority-class or positional-pair")
        ->check(CLI::IsMember({"keyword-flag", "majority-class", "positional-pair"}));
    synth_cmd->add_option("--size", synth_opt.size, "Number of examples");
    synth_cmd->add_option("--seq-len", synth_opt.seq_len, "Maximum words per example");
    synth_cmd->add_option("--seed", synth_opt.seed, "Generator seed");
    synth_cmd->add_option("--positive-fraction", synth_opt.positive_fraction, "Share of label-1 examples");
    synth_cmd->add_option("--format", synth_format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));
    synth_cmd->add_option("--out", synth_out, "Output directory");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train one configuration");
    std::string train_config, train_out;
    std::optional<std::uint64_t> train_seed;
    train_cmd->add_option("--config", train_config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--seed", train_seed, "Override the config seed");
    train_cmd->add_option("--out", train_out, "Output directory")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
    std::string eval_checkpoint, eval_vocab, eval_data, eval_format = "csv", eval_mapping;
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint.bin")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--vocab", eval_vocab, "vocab.txt written by train")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("data", eval_data, "Dataset file; rows tagged test are used if present")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--format", eval_format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));
    eval_cmd->add_option("--mapping", eval_mapping, "JSON object mapping string labels to ids");

    // cost
    auto* cost_cmd = app.add_subcommand("cost", "Analytical FLOPs and activation memory");
    std::string cost_config, cost_out, cost_kv = "before_gather";
    cost_cmd->add_option("--config", cost_config, "Run config (JSON); its model section is used")
        ->check(CLI::ExistingFile);
    cost_cmd->add_option("--kv-projection", cost_kv, "before_gather or after_gather")
        ->check(CLI::IsMember({"before_gather", "after_gather"}));
    cost_cmd->add_option("--out", cost_out, "Output directory for cost.json and cost_sweep.csv");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "One run per axis value");
    std::string sweep_config, sweep_out, sweep_axis = "p";
    std::vector<double> sweep_values;
    std::optional<std::uint64_t> sweep_seed;
    std::size_t sweep_threads_opt = 0;
    sweep_cmd->add_option("--config", sweep_config, "Base run config (JSON)")->required()->check(CLI::ExistingFile);
    sweep_cmd->add_option("--axis", sweep_axis, "p, placement or m")->check(CLI::IsMember({"p", "placement", "m"}));
    sweep_cmd->add_option("--values", sweep_values, "Axis values")->required()->delimiter(',');
    sweep_cmd->add_option("--seed", sweep_seed, "Override the config seed");
    sweep_cmd->add_option("--threads", sweep_threads_opt, "Worker cap (default TOKEN_THINNER_THREADS or all cores)");
    sweep_cmd->add_option("--out", sweep_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest_cmd) {
            IngestOptions opt;
            opt.seed = ingest_seed;
            opt.val_fraction = ingest_val;
            if (!ingest_mapping.empty()) opt.mapping = load_mapping(ingest_mapping);
            const InputFormat format = parse_format(ingest_format);
            const Dataset data = ingest(ingest_input, format, opt);
            nlohmann::json summary = {{"examples", data.examples.size()},
                                      {"classes", data.class_count()},
                                      {"label_names", data.label_names},
                                      {"train", data.count(Split::train)},
                                      {"val", data.count(Split::val)},
                                      {"test", data.count(Split::test)}};
            if (!ingest_out.empty()) {
                fs::create_directories(ingest_out);
                write_dataset(data, fs::path(ingest_out) / ("dataset." + ingest_format), format);
            }
            std::cout << summary.dump(2) << "\n";
        } else if (*synth_cmd) {
            synth_opt.kind = parse_synth_kind(synth_task_name);
            const Dataset data = synth_task(synth_opt);
            fs::create_directories(synth_out);
            const fs::path path = fs::path(synth_out) / (synth_task_name + "." + synth_format);
            write_dataset(data, path, parse_format(synth_format));
            std::cout << "wrote " << data.examples.size() << " examples to " << path.string() << "\n";
        } else if (*train_cmd) {
            RunConfig config = load_run_config(train_config);
            if (train_seed) config.seed = *train_seed;
            const RunArtifacts a = run(config, fs::path(train_out));
            std::cout << "variant " << a.report.variant << ", best epoch " << a.report.best_epoch
                      << ", test accuracy " << a.report.test.accuracy << ", macro F1 " << a.report.test.macro_f1
                      << ", " << a.report.wall_time_s << " s\n"
                      << "report: " << (fs::path(train_out) / "report.json").string() << "\n";
        } else if (*eval_cmd) {
            const Model model = load_checkpoint(eval_checkpoint);
            const Vocabulary vocab = read_vocab(eval_vocab);
            IngestOptions opt;
            opt.val_fraction = 0.0;
            if (!eval_mapping.empty()) opt.mapping = load_mapping(eval_mapping);
            const Dataset data = ingest(eval_data, parse_format(eval_format), opt);
            auto rows = data.subset(Split::test);
            if (rows.empty()) rows = data.examples;
            const auto examples = encode(rows, vocab, model.config().max_seq);
            const Metrics m = evaluate(model, examples);
            nlohmann::json out = metrics_json(m);
            out["examples"] = examples.size();
            out["loss"] = mean_loss(model, examples);
            std::cout << out.dump(2) << "\n";
        } else if (*cost_cmd) {
            ModelConfig model;
            if (!cost_config.empty()) model = load_run_config(cost_config).model;
            cost::Convention conv;
            conv.kv_projection = cost_kv == "after_gather" ? KvProjection::after_gather : KvProjection::before_gather;
            const auto report = cost::model_cost(model, conv);
            const auto rows = cost::sweep(model, conv);
            if (!cost_out.empty()) {
                write_file(fs::path(cost_out) / "cost.json", cost_to_json(report).dump(2) + "\n");
                write_file(fs::path(cost_out) / "cost_sweep.csv", cost_csv(rows));
            }
            std::cout << "FLOPs " << report.total_flops << " (dense " << report.dense_flops << "), ratio_vs_dense "
                      << report.ratio_vs_dense << ", dense_over_this " << report.dense_over_this
                      << ", peak activations " << report.peak_activation_bytes << " bytes\n"
                      << cost_csv(rows);
        } else if (*sweep_cmd) {
            RunConfig config = load_run_config(sweep_config);
            if (sweep_seed) config.seed = *sweep_seed;
            const SweepAxis axis = parse_axis(sweep_axis);
            const auto results = sweep(config, axis, sweep_values, fs::path(sweep_out), sweep_threads_opt);
            std::cout << summary_csv(axis, results);
            for (const auto& r : results) {
                if (!r.ok) return 2;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
