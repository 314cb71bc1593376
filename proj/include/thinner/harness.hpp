// SPDX-License-Identifier: Apache-2.0
//
// Training runs, run reports and ablation sweeps.
#pragma once

#include "thinner/config.hpp"
#include "thinner/cost_model.hpp"
#include "thinner/dataset.hpp"
#include "thinner/model.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace thinner {

/// Where a run gets its examples. `source` is "synth" or "file".
struct DataConfig {
    std::string source = "synth";
    // synth
    std::string task = "keyword-flag";
    std::size_t train_size = 2000;  // before the validation split
    std::size_t test_size = 500;
    std::size_t seq_len = 64;
    double positive_fraction = 0.5;
    // file
    std::string path;
    std::string test_path;  // optional; otherwise rows tagged "test" in `path`
    std::string format = "csv";
    std::string mapping;    // optional label mapping JSON
    // both
    double val_fraction = 0.2;
};

struct TrainConfig {
    std::size_t epochs = 3;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double warmup_fraction = 0.1;
};

struct RunConfig {
    ModelConfig model;
    DataConfig data;
    TrainConfig train;
    std::uint64_t seed = 0;
    std::string name = "run";
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Reads a JSON run config. Relative data paths resolve against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    Metrics val;
};

/// Per-layer key counts averaged over the test split.
struct LayerTokens {
    std::size_t layer = 0;
    std::string kind;
    double mean_embedded_keys = 0.0;
    double mean_total_keys = 0.0;
    std::size_t min_total_keys = 0;
    std::size_t max_total_keys = 0;
};

struct RunReport {
    RunConfig config;
    std::string variant;
    std::size_t vocab_size = 0;
    std::size_t train_examples = 0;
    std::size_t val_examples = 0;
    std::size_t test_examples = 0;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;  // 0 = untrained weights
    double best_val_loss = 0.0;
    Metrics test;
    double test_loss = 0.0;
    std::vector<LayerTokens> token_trace;
    cost::CostReport cost;
    double wall_time_s = 0.0;
};

nlohmann::json report_to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);

/// Reports equal in every field except wall time.
bool same_outcome(const RunReport& a, const RunReport& b);

struct RunArtifacts {
    RunReport report;
    std::optional<Model> model;  // best-validation weights
    Vocabulary vocab;
};

/// Encoded splits ready for training.
struct PreparedData {
    Vocabulary vocab;
    std::vector<Example> train, val, test;
    std::size_t num_classes = 0;
};

PreparedData prepare_data(const RunConfig& config);

/// Trains, keeps the lowest-validation-loss weights, evaluates them on the
/// test split. With `out_dir`, writes report.json, checkpoint.bin and vocab.txt.
RunArtifacts run(const RunConfig& config, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Trains on prepared data; no file output.
RunArtifacts run_prepared(const RunConfig& config, const PreparedData& data);

// ---- sweeps ---------------------------------------------------------------

enum class SweepAxis { p, placement, m };
SweepAxis parse_axis(std::string_view s);
std::string axis_name(SweepAxis a);
RunConfig with_axis(RunConfig base, SweepAxis axis, double value);

struct SweepResult {
    double value = 0.0;
    bool ok = false;
    std::string error;
    std::optional<RunReport> report;
    std::optional<cost::CostReport> cost;
};

/// Column names of the summary CSV, in order.
const std::vector<std::string>& summary_header();
std::string summary_csv(SweepAxis axis, const std::vector<SweepResult>& results);

/// Worker count: TOKEN_THINNER_THREADS if set and positive, else hardware concurrency.
std::size_t sweep_threads();

/// One run per value with the base seed. Failures are recorded and the
/// sweep continues. With `out_dir`, each run writes into `<axis>_<value>/`
/// and summary.csv is written at the end.
std::vector<SweepResult> sweep(const RunConfig& base, SweepAxis axis, const std::vector<double>& values,
                               const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                               std::size_t threads = 0);

// ---- cost tables ----------------------------------------------------------

const std::vector<std::string>& cost_header();
std::string cost_csv(const std::vector<cost::SweepRow>& rows);
nlohmann::json cost_to_json(const cost::CostReport& r);

} // namespace thinner
