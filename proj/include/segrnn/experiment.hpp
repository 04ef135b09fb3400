// Copyright 2026 The SegRNN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "segrnn/data.hpp"
#include "segrnn/model.hpp"
#include "segrnn/training.hpp"

namespace segrnn {

struct DatasetEntry {
  std::string name;
  std::filesystem::path path;
  SplitSpec split;
  std::string frequency;
};

/// Maps dataset names to files and split ratios. Relative paths resolve
/// against the registry file's directory.
class DatasetRegistry {
 public:
  static DatasetRegistry from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static DatasetRegistry load(const std::filesystem::path& path);

  void add(DatasetEntry entry);
  bool contains(std::string_view name) const;
  /// Throws ConfigError listing the registered names.
  const DatasetEntry& find(std::string_view name) const;
  std::vector<std::string> names() const;

 private:
  std::vector<DatasetEntry> entries_;
};

enum class Precision { f64, f32 };

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view name);

struct ExperimentSpec {
  std::string dataset;
  ModelConfig model;
  TrainConfig train;
  /// Runs use seeds train.seed, train.seed + 1, ... unless `seeds` is given.
  std::size_t repeats = 1;
  std::vector<std::uint64_t> seeds;
  /// Keep only the first max_rows timesteps of the series (0 keeps all).
  std::size_t max_rows = 0;
  Precision precision = Precision::f64;
  /// Artifacts are written here when non-empty.
  std::filesystem::path out_dir;

  std::vector<std::uint64_t> run_seeds() const;
  std::vector<std::string> violations() const;
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& tc);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const ExperimentSpec& spec);
/// Missing keys keep the values already in `base`.
ExperimentSpec experiment_spec_from_json(const nlohmann::json& j, ExperimentSpec base = {});

/// Standardized, windowed train/val/test splits of one series.
struct PreparedData {
  WindowDataset train;
  WindowDataset val;
  WindowDataset test;
  Standardizer standardizer;
  SplitRanges ranges;
  std::vector<std::string> channel_names;
};

PreparedData prepare_data(const RawSeries& series, const SplitSpec& split,
                          std::size_t lookback, std::size_t horizon);

struct RunRecord {
  std::uint64_t seed = 0;
  Metrics test;
  double train_seconds_per_epoch = 0.0;
  /// Wall time of the eval-mode pass over the whole test split.
  double inference_seconds = 0.0;
  std::size_t parameter_count = 0;
  TrainHistory history;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};

Summary summarize(const std::vector<double>& values);

struct Report {
  ExperimentSpec spec;
  std::vector<RunRecord> runs;
  Summary mse;
  Summary mae;
  /// Repeat-last-value forecast on the same test windows.
  Metrics baseline;
  std::size_t test_windows = 0;

  /// Recomputes mse/mae from the run rows.
  void aggregate();
};

nlohmann::json to_json(const Report& report);

/// Progress lines (one per epoch and per run); may be empty.
using Logger = std::function<void(const std::string&)>;

/// Train and test every seed on already prepared data.
Report run_experiment(const ExperimentSpec& spec, const PreparedData& data,
                      const Logger& log = {});

/// Load the registered dataset, prepare it and run. Writes report.json and
/// one history CSV per seed when spec.out_dir is set.
Report run_experiment(const ExperimentSpec& spec, const DatasetRegistry& registry,
                      const Logger& log = {});

void write_report(const Report& report, const std::filesystem::path& dir);

enum class AblationAxis { seg_len, decode_mode, lookback, cell, pe };

std::string_view to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(std::string_view name);

struct SweepPoint {
  std::string value;
  ExperimentSpec spec;
};

/// One spec per value, differing from `base` only in the swept field.
/// pe values: "rp+cp", "rp", "cp", "none". Throws ConfigError listing
/// every invalid value before returning anything.
std::vector<SweepPoint> expand_ablation(const ExperimentSpec& base, AblationAxis axis,
                                        const std::vector<std::string>& values);

struct SweepResult {
  AblationAxis axis = AblationAxis::seg_len;
  std::vector<std::string> values;
  std::vector<Report> reports;
};

SweepResult run_ablation(const ExperimentSpec& base, AblationAxis axis,
                         const std::vector<std::string>& values, const PreparedData& data,
                         const Logger& log = {});

/// Resolves the dataset once; writes one report directory per value plus
/// sweep.csv under base.out_dir when set.
SweepResult run_ablation(const ExperimentSpec& base, AblationAxis axis,
                         const std::vector<std::string>& values, const DatasetRegistry& registry,
                         const Logger& log = {});

void write_sweep_csv(const SweepResult& sweep, const std::filesystem::path& path);

struct TimingStats {
  double mean_seconds = 0.0;
  double std_seconds = 0.0;
  std::size_t repeats = 0;
};

/// Wall-clock of eval-mode predict_batch over `batch` random windows,
/// after `warmup` (at least 3) untimed calls.
template <typename T>
TimingStats time_inference(const BasicSegRnnParams<T>& params, const ModelConfig& cfg,
                           std::size_t batch, std::size_t repeats, std::size_t warmup = 3,
                           std::uint64_t seed = 0);

}  // namespace segrnn
