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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "segrnn/checkpoint.hpp"
#include "segrnn/experiment.hpp"

using namespace segrnn;
namespace fs = std::filesystem;

namespace {

RawSeries sine_series(std::size_t rows, std::size_t channels) {
  RawSeries s;
  s.values = Matrix(rows, channels);
  for (std::size_t r = 0; r < rows; ++r) {
    s.timestamps.push_back(std::to_string(r));
    for (std::size_t c = 0; c < channels; ++c) {
      const double t = static_cast<double>(r);
      s.values(r, c) = std::sin(2.0 * std::numbers::pi * t / 12.0 + 0.5 * static_cast<double>(c)) +
                       0.1 * static_cast<double>(c);
    }
  }
  for (std::size_t c = 0; c < channels; ++c) s.channel_names.push_back("ch" + std::to_string(c));
  return s;
}

ExperimentSpec small_spec() {
  ExperimentSpec spec;
  spec.dataset = "sine";
  spec.model.lookback = 24;
  spec.model.horizon = 12;
  spec.model.seg_len = 6;
  spec.model.hidden_dim = 8;
  spec.model.dropout = 0.0;
  spec.train.epochs = 2;
  spec.train.patience = 2;
  spec.train.batch_size = 64;
  spec.train.base_lr = 0.003;
  spec.repeats = 2;
  return spec;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("segrnn_exp_" + name);
  fs::remove_all(dir);
  return dir;
}

void write_csv(const fs::path& path, const RawSeries& s) {
  std::ofstream out(path);
  out << "date";
  for (const auto& n : s.channel_names) out << "," << n;
  out << "\n" << std::setprecision(17);
  for (std::size_t r = 0; r < s.length(); ++r) {
    out << s.timestamps[r];
    for (std::size_t c = 0; c < s.channels(); ++c) out << "," << s.values(r, c);
    out << "\n";
  }
}

}  // namespace

TEST_CASE("prepare_data standardizes with train statistics only") {
  const auto s = sine_series(300, 3);
  const auto d = prepare_data(s, SplitSpec{}, 24, 12);
  CHECK(d.ranges.train == IndexRange{0, 180});
  CHECK(d.train.size() == (180 - 36 + 1) * 3);
  CHECK(d.val.size() == (60 - 36 + 1) * 3);
  CHECK(d.test.size() == (60 - 36 + 1) * 3);
  const auto fit = Standardizer::fit(slice_rows(s.values, d.ranges.train));
  CHECK(d.standardizer.mean() == fit.mean());
  CHECK(d.test.values() == fit.apply(slice_rows(s.values, d.ranges.test)));
  CHECK(d.channel_names == s.channel_names);
  CHECK_THROWS_AS(prepare_data(sine_series(80, 1), SplitSpec{}, 24, 12), ConfigError);
}

TEST_CASE("experiment report schema and aggregate") {
  const auto data = prepare_data(sine_series(300, 2), SplitSpec{}, 24, 12);
  auto spec = small_spec();
  spec.seeds = {5, 5};
  std::vector<std::string> lines;
  const auto report = run_experiment(spec, data, [&](const std::string& l) { lines.push_back(l); });
  CHECK_FALSE(lines.empty());
  REQUIRE(report.runs.size() == 2);
  CHECK(report.runs[0].test.mse == report.runs[1].test.mse);
  CHECK(report.runs[0].test.mae == report.runs[1].test.mae);
  CHECK(report.mse.mean == doctest::Approx(report.runs[0].test.mse));
  CHECK(report.mse.std == doctest::Approx(0.0));
  CHECK(report.test_windows == data.test.size());
  CHECK(report.baseline.mse == repeat_last_baseline(data.test).mse);
  CHECK(report.runs[0].parameter_count == count_parameters(report.spec.model));
  CHECK(report.runs[0].inference_seconds > 0.0);

  const auto j = to_json(report);
  for (const char* key : {"spec", "runs", "aggregate", "baseline_repeat_last", "test_windows"}) {
    CAPTURE(key);
    CHECK(j.contains(key));
  }
  const auto& run = j.at("runs").at(0);
  for (const char* key : {"seed", "mse", "mae", "train_seconds_per_epoch", "inference_seconds",
                          "parameter_count", "best_epoch", "history"}) {
    CAPTURE(key);
    CHECK(run.contains(key));
  }
  CHECK(run.at("history").size() == report.runs[0].history.epochs.size());
}

TEST_CASE("aggregate is the mean and sample std of the rows") {
  Report r;
  for (const double m : {1.0, 2.0, 4.0}) {
    RunRecord rec;
    rec.test = {m, m / 2.0};
    r.runs.push_back(rec);
  }
  r.aggregate();
  CHECK(r.mse.mean == doctest::Approx(7.0 / 3.0));
  CHECK(r.mse.std == doctest::Approx(std::sqrt(((4.0 / 3) * (4.0 / 3) + (1.0 / 3) * (1.0 / 3) +
                                                (5.0 / 3) * (5.0 / 3)) / 2.0)));
  CHECK(r.mae.mean == doctest::Approx(7.0 / 6.0));
  CHECK(summarize({3.0}).std == 0.0);
}

TEST_CASE("different seeds give different runs, float runs") {
  const auto data = prepare_data(sine_series(300, 2), SplitSpec{}, 24, 12);
  auto spec = small_spec();
  spec.train.epochs = 1;
  spec.train.patience = 1;
  const auto a = run_experiment(spec, data);
  CHECK(a.runs[0].seed == 0);
  CHECK(a.runs[1].seed == 1);
  CHECK(a.runs[0].test.mse != a.runs[1].test.mse);
  spec.precision = Precision::f32;
  spec.repeats = 1;
  const auto f = run_experiment(spec, data);
  CHECK(std::abs(f.runs[0].test.mse - a.runs[0].test.mse) <= 1e-3);
}

TEST_CASE("spec JSON roundtrip and overrides") {
  auto spec = small_spec();
  spec.seeds = {3, 9};
  spec.max_rows = 1000;
  spec.precision = Precision::f32;
  spec.train.clip_norm = 2.0;
  spec.out_dir = "runs/x";
  const auto back = experiment_spec_from_json(to_json(spec));
  CHECK(back.dataset == spec.dataset);
  CHECK(back.model == spec.model);
  CHECK(back.train == spec.train);
  CHECK(back.seeds == spec.seeds);
  CHECK(back.max_rows == 1000);
  CHECK(back.precision == Precision::f32);
  CHECK(back.out_dir == spec.out_dir);

  const auto partial = experiment_spec_from_json({{"train", {{"epochs", 4}}}}, spec);
  CHECK(partial.train.epochs == 4);
  CHECK(partial.train.batch_size == spec.train.batch_size);
  CHECK(partial.model == spec.model);

  spec.repeats = 3;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK_THROWS_AS(parse_precision("f16"), ConfigError);
}

TEST_CASE("registry parsing and lookup") {
  const nlohmann::json j = {
      {"datasets",
       {{"a", {{"path", "a.csv"}, {"split", {0.6, 0.2, 0.2}}, {"frequency", "1h"}}},
        {"b", {{"path", "/abs/b.csv"}, {"split", {0.7, 0.1, 0.2}}}}}}};
  const auto reg = DatasetRegistry::from_json(j, "/data/dir");
  CHECK(reg.contains("a"));
  CHECK(reg.find("a").path == fs::path("/data/dir/a.csv"));
  CHECK(reg.find("b").path == fs::path("/abs/b.csv"));
  CHECK(reg.find("b").split.ratios[0] == 0.7);
  try {
    (void)reg.find("c");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("a") != std::string::npos);
    CHECK(msg.find("b") != std::string::npos);
  }
  const nlohmann::json bad = {{"datasets", {{"x", {{"path", "x.csv"}, {"split", {0.5, 0.5}}}}}}};
  CHECK_THROWS_AS(DatasetRegistry::from_json(bad, "."), ConfigError);
  CHECK_THROWS_AS(DatasetRegistry::load("/nonexistent/registry.json"), IoError);

  const auto shipped = DatasetRegistry::load(fs::path(SEGRNN_CONFIG_DIR) / "datasets.json");
  CHECK(shipped.contains("ETTh1"));
  CHECK(shipped.find("ETTh1").split.ratios[0] == 0.6);
}

TEST_CASE("registry experiment writes artifacts") {
  const auto dir = fresh_dir("artifacts");
  fs::create_directories(dir);
  write_csv(dir / "sine.csv", sine_series(300, 2));
  DatasetRegistry reg;
  reg.add({"sine", dir / "sine.csv", SplitSpec{}, "1h"});
  auto spec = small_spec();
  spec.repeats = 1;
  spec.train.epochs = 1;
  spec.train.patience = 1;
  spec.out_dir = dir / "out";
  const auto report = run_experiment(spec, reg);
  CHECK(fs::exists(dir / "out" / "report.json"));
  CHECK(fs::exists(dir / "out" / "history_seed0.csv"));
  CHECK(fs::exists(dir / "out" / "model_seed0.json"));
  const auto cp = load_checkpoint(dir / "out" / "model_seed0.json");
  CHECK(cp.config.num_channels == 2);

  std::ifstream hist(dir / "out" / "history_seed0.csv");
  std::string header;
  std::getline(hist, header);
  CHECK(header == "epoch,train_loss,val_loss,lr,seconds");

  spec.dataset = "missing";
  CHECK_THROWS_AS(run_experiment(spec, reg), ConfigError);
  reg.add({"ghost", dir / "ghost.csv", SplitSpec{}, ""});
  spec.dataset = "ghost";
  CHECK_THROWS_AS(run_experiment(spec, reg), IoError);
  fs::remove_all(dir);
}

TEST_CASE("ablation expansion changes only the swept field") {
  auto base = small_spec();
  base.model.num_channels = 2;
  base.model.use_channel_pe = true;
  base.out_dir = "sweep";
  const auto pts = expand_ablation(base, AblationAxis::seg_len, {"2", "6", "12"});
  REQUIRE(pts.size() == 3);
  for (const auto& p : pts) {
    auto restored = p.spec.model;
    restored.seg_len = base.model.seg_len;
    CHECK(restored == base.model);
    CHECK(p.spec.train == base.train);
  }
  CHECK(pts[2].spec.model.seg_len == 12);
  CHECK(pts[0].spec.out_dir == fs::path("sweep/seg_len_2"));

  const auto pe = expand_ablation(base, AblationAxis::pe, {"rp+cp", "rp", "cp", "none"});
  CHECK(pe[1].spec.model.use_relative_pe);
  CHECK_FALSE(pe[1].spec.model.use_channel_pe);
  CHECK_FALSE(pe[3].spec.model.use_relative_pe);
  CHECK_FALSE(pe[3].spec.model.use_channel_pe);

  const auto modes = expand_ablation(base, AblationAxis::decode_mode, {"pmf", "rmf"});
  CHECK(count_parameters(modes[0].spec.model) == count_parameters(modes[1].spec.model));

  try {
    (void)expand_ablation(base, AblationAxis::seg_len, {"6", "5", "7", "x"});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("seg_len=5") != std::string::npos);
    CHECK(msg.find("seg_len=7") != std::string::npos);
    CHECK(msg.find("seg_len=x") != std::string::npos);
  }
  CHECK_THROWS_AS(expand_ablation(base, AblationAxis::cell, {}), ConfigError);
  CHECK(parse_ablation_axis("decode_mode") == AblationAxis::decode_mode);
  CHECK_THROWS_AS(parse_ablation_axis("depth"), ConfigError);
}

TEST_CASE("invalid sweeps fail before writing anything") {
  const auto dir = fresh_dir("failfast");
  fs::create_directories(dir);
  write_csv(dir / "sine.csv", sine_series(300, 1));
  DatasetRegistry reg;
  reg.add({"sine", dir / "sine.csv", SplitSpec{}, ""});
  auto base = small_spec();
  base.repeats = 1;
  base.out_dir = dir / "out";
  CHECK_THROWS_AS(run_ablation(base, AblationAxis::seg_len, {"6", "5"}, reg), ConfigError);
  CHECK_THROWS_AS(run_ablation(base, AblationAxis::lookback, {"24", "600"}, reg), ConfigError);
  CHECK_FALSE(fs::exists(dir / "out"));
  fs::remove_all(dir);
}

TEST_CASE("sweep over prepared data and its csv") {
  const auto data = prepare_data(sine_series(300, 2), SplitSpec{}, 24, 12);
  auto base = small_spec();
  base.repeats = 1;
  base.train.epochs = 1;
  base.train.patience = 1;
  const auto sweep = run_ablation(base, AblationAxis::cell, {"gru", "lstm"}, data);
  REQUIRE(sweep.reports.size() == 2);
  CHECK(sweep.reports[1].spec.model.cell == CellKind::lstm);
  CHECK(sweep.reports[1].runs[0].parameter_count > sweep.reports[0].runs[0].parameter_count);
  CHECK_THROWS_AS(run_ablation(base, AblationAxis::lookback, {"12"}, data), ConfigError);

  const auto path = fs::temp_directory_path() / "segrnn_sweep.csv";
  write_sweep_csv(sweep, path);
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  std::getline(in, line);
  CHECK(line.rfind("axis,value,mse_mean", 0) == 0);
  while (std::getline(in, line)) {
    CHECK(line.rfind("cell,", 0) == 0);
    ++n;
  }
  CHECK(n == 2);
  fs::remove(path);
}

TEST_CASE("inference timing") {
  ModelConfig cfg;
  cfg.lookback = 48;
  cfg.horizon = 24;
  cfg.seg_len = 12;
  cfg.hidden_dim = 16;
  Rng rng(1);
  const auto p = init_params<double>(cfg, rng);
  const auto one = time_inference<double>(p, cfg, 32, 1);
  CHECK(one.repeats == 1);
  CHECK(one.std_seconds == 0.0);
  CHECK(one.mean_seconds > 0.0);
  const auto many = time_inference<float>(cast_params<float>(p), cfg, 64, 5, 0);
  CHECK(many.repeats == 5);
  CHECK(many.mean_seconds > 0.0);
}
