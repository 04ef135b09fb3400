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

#include "segrnn/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "segrnn/checkpoint.hpp"

namespace segrnn {

namespace {

template <typename V>
V get_or(const nlohmann::json& j, const char* key, V fallback) {
  const auto it = j.find(key);
  return it == j.end() ? fallback : it->template get<V>();
}

std::string join_lines(const std::string& head, const std::vector<std::string>& items) {
  std::string msg = head;
  for (const auto& s : items) msg += "\n  - " + s;
  return msg;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ExperimentSpec bind_channels(ExperimentSpec spec, std::size_t channels) {
  spec.model.num_channels = channels;
  return spec;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <typename T>
RunRecord run_one(const ExperimentSpec& spec, std::uint64_t seed, const PreparedData& data,
                  const Logger& log, SegRnnParams* trained) {
  TrainConfig tc = spec.train;
  tc.seed = seed;
  Rng init_rng = Rng(seed).derive(0);
  auto params = cast_params<T>(init_params<double>(spec.model, init_rng));

  EpochCallback on_epoch;
  if (log) {
    on_epoch = [&](const EpochRecord& e) {
      std::ostringstream line;
      line << std::setprecision(6) << "seed " << seed << " epoch " << e.epoch
           << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_mse "
           << e.val_mse << " lr " << e.lr << " (" << std::setprecision(3) << e.seconds << "s)";
      log(line.str());
    };
  }
  auto result = train<T>(data.train, data.val, std::move(params), spec.model, tc, on_epoch);

  RunRecord rec;
  rec.seed = seed;
  rec.history = std::move(result.history);
  double total = 0.0;
  for (const auto& e : rec.history.epochs) total += e.seconds;
  rec.train_seconds_per_epoch = total / static_cast<double>(rec.history.epochs.size());
  const auto start = std::chrono::steady_clock::now();
  rec.test = evaluate<T>(data.test, result.best_params, spec.model, tc.eval_batch);
  rec.inference_seconds = seconds_since(start);
  rec.parameter_count = count_parameters(result.best_params, spec.model);
  if (trained) *trained = cast_params<double>(result.best_params);
  if (log) {
    std::ostringstream line;
    line << std::setprecision(6) << "seed " << seed << " best epoch " << rec.history.best_epoch
         << " test mse " << rec.test.mse << " mae " << rec.test.mae;
    log(line.str());
  }
  return rec;
}

Report run_prepared(const ExperimentSpec& spec, const PreparedData& data, const Logger& log,
                    std::vector<SegRnnParams>* trained) {
  spec.validate();
  Report report;
  report.spec = spec;
  report.baseline = repeat_last_baseline(data.test);
  report.test_windows = data.test.size();
  for (const auto seed : spec.run_seeds()) {
    SegRnnParams best;
    report.runs.push_back(spec.precision == Precision::f32
                              ? run_one<float>(spec, seed, data, log, &best)
                              : run_one<double>(spec, seed, data, log, &best));
    if (trained) trained->push_back(std::move(best));
  }
  report.aggregate();
  return report;
}

void write_artifacts(const Report& report, const std::vector<SegRnnParams>& trained,
                     const std::filesystem::path& dir) {
  write_report(report, dir);
  for (std::size_t i = 0; i < trained.size(); ++i) {
    save_checkpoint(dir / ("model_seed" + std::to_string(report.runs[i].seed) + ".json"),
                    report.spec.model, trained[i]);
  }
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Registry

DatasetRegistry DatasetRegistry::from_json(const nlohmann::json& j,
                                           const std::filesystem::path& base_dir) {
  if (!j.is_object() || !j.contains("datasets") || !j.at("datasets").is_object()) {
    throw ConfigError("dataset registry needs a \"datasets\" object");
  }
  DatasetRegistry reg;
  for (const auto& [name, v] : j.at("datasets").items()) {
    try {
      DatasetEntry e;
      e.name = name;
      e.path = v.at("path").get<std::string>();
      if (e.path.is_relative()) e.path = base_dir / e.path;
      const auto ratios = v.at("split").get<std::vector<double>>();
      if (ratios.size() != 3) throw ConfigError("split of '" + name + "' needs three ratios");
      std::copy(ratios.begin(), ratios.end(), e.split.ratios.begin());
      e.split.validate();
      e.frequency = v.value("frequency", std::string());
      reg.add(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError("bad registry entry '" + name + "': " + ex.what());
    }
  }
  return reg;
}

DatasetRegistry DatasetRegistry::load(const std::filesystem::path& path) {
  return from_json(read_json(path), path.parent_path());
}

void DatasetRegistry::add(DatasetEntry entry) {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const DatasetEntry& e) { return e.name == entry.name; });
  if (it != entries_.end()) {
    *it = std::move(entry);
  } else {
    entries_.push_back(std::move(entry));
  }
}

bool DatasetRegistry::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const DatasetEntry& e) { return e.name == name; });
}

const DatasetEntry& DatasetRegistry::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  std::string known;
  for (const auto& e : entries_) known += (known.empty() ? "" : ", ") + e.name;
  throw ConfigError("unknown dataset '" + std::string(name) + "' (registered: " + known + ")");
}

std::vector<std::string> DatasetRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

// ---------------------------------------------------------------------------
// Specs and serialization

std::string_view to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view name) {
  if (name == "f64" || name == "double") return Precision::f64;
  if (name == "f32" || name == "float") return Precision::f32;
  throw ConfigError("unknown precision '" + std::string(name) + "' (expected f64 or f32)");
}

std::vector<std::uint64_t> ExperimentSpec::run_seeds() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < repeats; ++i) out.push_back(train.seed + i);
  return out;
}

std::vector<std::string> ExperimentSpec::violations() const {
  auto out = model.violations();
  const auto t = train.violations();
  out.insert(out.end(), t.begin(), t.end());
  if (repeats == 0) out.emplace_back("repeats must be >= 1");
  if (!seeds.empty() && seeds.size() != repeats) {
    out.emplace_back("got " + std::to_string(seeds.size()) + " seeds for " +
                     std::to_string(repeats) + " repeats");
  }
  return out;
}

void ExperimentSpec::validate() const {
  const auto v = violations();
  if (!v.empty()) throw ConfigError(join_lines("invalid experiment:", v));
}

nlohmann::json to_json(const TrainConfig& tc) {
  nlohmann::json j = {
      {"epochs", tc.epochs},
      {"base_lr", tc.base_lr},
      {"lr_decay", tc.lr_decay},
      {"decay_start_epoch", tc.decay_start_epoch},
      {"patience", tc.patience},
      {"batch_size", tc.batch_size},
      {"seed", tc.seed},
      {"eval_batch", tc.eval_batch},
  };
  j["clip_norm"] = tc.clip_norm ? nlohmann::json(*tc.clip_norm) : nlohmann::json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  if (!j.is_object()) throw ConfigError("training configuration must be a JSON object");
  try {
    base.epochs = get_or(j, "epochs", base.epochs);
    base.base_lr = get_or(j, "base_lr", base.base_lr);
    base.lr_decay = get_or(j, "lr_decay", base.lr_decay);
    base.decay_start_epoch = get_or(j, "decay_start_epoch", base.decay_start_epoch);
    base.patience = get_or(j, "patience", base.patience);
    base.batch_size = get_or(j, "batch_size", base.batch_size);
    base.seed = get_or(j, "seed", base.seed);
    base.eval_batch = get_or(j, "eval_batch", base.eval_batch);
    if (j.contains("clip_norm")) {
      const auto& c = j.at("clip_norm");
      base.clip_norm = c.is_null() ? std::nullopt : std::optional<double>(c.get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training configuration field: ") + e.what());
  }
  return base;
}

nlohmann::json to_json(const ExperimentSpec& spec) {
  nlohmann::json j = {
      {"dataset", spec.dataset},
      {"model", to_json(spec.model)},
      {"train", to_json(spec.train)},
      {"repeats", spec.repeats},
      {"seeds", spec.run_seeds()},
      {"max_rows", spec.max_rows},
      {"precision", std::string(to_string(spec.precision))},
  };
  if (!spec.out_dir.empty()) j["out"] = spec.out_dir.string();
  return j;
}

ExperimentSpec experiment_spec_from_json(const nlohmann::json& j, ExperimentSpec base) {
  if (!j.is_object()) throw ConfigError("experiment configuration must be a JSON object");
  try {
    base.dataset = get_or(j, "dataset", base.dataset);
    if (j.contains("model")) base.model = model_config_from_json(j.at("model"), base.model);
    if (j.contains("train")) base.train = train_config_from_json(j.at("train"), base.train);
    base.repeats = get_or(j, "repeats", base.repeats);
    base.seeds = get_or(j, "seeds", base.seeds);
    base.max_rows = get_or(j, "max_rows", base.max_rows);
    if (j.contains("precision")) base.precision = parse_precision(j.at("precision").get<std::string>());
    if (j.contains("out")) base.out_dir = j.at("out").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad experiment configuration field: ") + e.what());
  }
  return base;
}

// ---------------------------------------------------------------------------
// Data preparation and runs

PreparedData prepare_data(const RawSeries& series, const SplitSpec& split, std::size_t lookback,
                          std::size_t horizon) {
  PreparedData out;
  out.ranges = chronological_split(series.length(), split, lookback + horizon);
  out.channel_names = series.channel_names;
  out.standardizer =
      Standardizer::fit(slice_rows(series.values, out.ranges.train), series.channel_names);
  const Matrix z = out.standardizer.apply(series.values);
  out.train = WindowDataset(slice_rows(z, out.ranges.train), lookback, horizon);
  out.val = WindowDataset(slice_rows(z, out.ranges.val), lookback, horizon);
  out.test = WindowDataset(slice_rows(z, out.ranges.test), lookback, horizon);
  return out;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (const double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (const double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

void Report::aggregate() {
  std::vector<double> mses, maes;
  for (const auto& r : runs) {
    mses.push_back(r.test.mse);
    maes.push_back(r.test.mae);
  }
  mse = summarize(mses);
  mae = summarize(maes);
}

nlohmann::json to_json(const Report& report) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : report.runs) {
    nlohmann::json history = nlohmann::json::array();
    for (const auto& e : r.history.epochs) {
      history.push_back({{"epoch", e.epoch},
                         {"train_loss", e.train_loss},
                         {"val_loss", e.val_loss},
                         {"val_mse", e.val_mse},
                         {"lr", e.lr},
                         {"seconds", e.seconds}});
    }
    runs.push_back({{"seed", r.seed},
                    {"mse", r.test.mse},
                    {"mae", r.test.mae},
                    {"train_seconds_per_epoch", r.train_seconds_per_epoch},
                    {"inference_seconds", r.inference_seconds},
                    {"parameter_count", r.parameter_count},
                    {"best_epoch", r.history.best_epoch},
                    {"stopped_early", r.history.stopped_early},
                    {"history", std::move(history)}});
  }
  return {{"spec", to_json(report.spec)},
          {"test_windows", report.test_windows},
          {"runs", std::move(runs)},
          {"aggregate",
           {{"mse_mean", report.mse.mean},
            {"mse_std", report.mse.std},
            {"mae_mean", report.mae.mean},
            {"mae_std", report.mae.std}}},
          {"baseline_repeat_last", {{"mse", report.baseline.mse}, {"mae", report.baseline.mae}}}};
}

void write_report(const Report& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  write_text(dir / "report.json", to_json(report).dump(2) + "\n");
  for (const auto& r : report.runs) {
    write_history_csv(dir / ("history_seed" + std::to_string(r.seed) + ".csv"), r.history);
  }
}

Report run_experiment(const ExperimentSpec& spec, const PreparedData& data, const Logger& log) {
  return run_prepared(bind_channels(spec, data.train.channels()), data, log, nullptr);
}

namespace {

PreparedData load_prepared(const ExperimentSpec& spec, const DatasetRegistry& registry) {
  const auto& entry = registry.find(spec.dataset);
  if (!std::filesystem::exists(entry.path)) {
    throw IoError("dataset file '" + entry.path.string() + "' for '" + entry.name +
                  "' does not exist");
  }
  const RawSeries series = prefix(load_csv(entry.path), spec.max_rows);
  return prepare_data(series, entry.split, spec.model.lookback, spec.model.horizon);
}

}  // namespace

Report run_experiment(const ExperimentSpec& spec, const DatasetRegistry& registry,
                      const Logger& log) {
  spec.validate();
  const PreparedData data = load_prepared(spec, registry);
  const ExperimentSpec bound = bind_channels(spec, data.train.channels());
  bound.validate();
  std::vector<SegRnnParams> trained;
  Report report = run_prepared(bound, data, log, &trained);
  if (!spec.out_dir.empty()) write_artifacts(report, trained, spec.out_dir);
  return report;
}

// ---------------------------------------------------------------------------
// Ablations

std::string_view to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::seg_len: return "seg_len";
    case AblationAxis::decode_mode: return "decode_mode";
    case AblationAxis::lookback: return "lookback";
    case AblationAxis::cell: return "cell";
    case AblationAxis::pe: return "pe";
  }
  return "?";
}

AblationAxis parse_ablation_axis(std::string_view name) {
  for (const auto a : {AblationAxis::seg_len, AblationAxis::decode_mode, AblationAxis::lookback,
                       AblationAxis::cell, AblationAxis::pe}) {
    if (to_string(a) == name) return a;
  }
  if (name == "seg-len") return AblationAxis::seg_len;
  if (name == "decode-mode") return AblationAxis::decode_mode;
  throw ConfigError("unknown ablation axis '" + std::string(name) +
                    "' (expected seg_len, decode_mode, lookback, cell or pe)");
}

namespace {

std::size_t parse_count(const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError("'" + v + "' is not a count");
  return static_cast<std::size_t>(n);
}

void apply_axis(ExperimentSpec& spec, AblationAxis axis, const std::string& value) {
  switch (axis) {
    case AblationAxis::seg_len: spec.model.seg_len = parse_count(value); break;
    case AblationAxis::lookback: spec.model.lookback = parse_count(value); break;
    case AblationAxis::decode_mode: spec.model.decode_mode = parse_decode_mode(value); break;
    case AblationAxis::cell: spec.model.cell = parse_cell_kind(value); break;
    case AblationAxis::pe: {
      std::string v = value;
      std::transform(v.begin(), v.end(), v.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (v == "rp+cp") {
        spec.model.use_relative_pe = true;
        spec.model.use_channel_pe = true;
      } else if (v == "rp") {
        spec.model.use_relative_pe = true;
        spec.model.use_channel_pe = false;
      } else if (v == "cp") {
        spec.model.use_relative_pe = false;
        spec.model.use_channel_pe = true;
      } else if (v == "none") {
        spec.model.use_relative_pe = false;
        spec.model.use_channel_pe = false;
      } else {
        throw ConfigError("unknown pe variant '" + value + "' (expected rp+cp, rp, cp or none)");
      }
      break;
    }
  }
}

}  // namespace

std::vector<SweepPoint> expand_ablation(const ExperimentSpec& base, AblationAxis axis,
                                        const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("ablation needs at least one value");
  std::vector<SweepPoint> points;
  std::vector<std::string> problems;
  for (const auto& v : values) {
    ExperimentSpec spec = base;
    try {
      apply_axis(spec, axis, v);
      for (const auto& msg : spec.violations()) {
        problems.push_back(std::string(to_string(axis)) + "=" + v + ": " + msg);
      }
    } catch (const ConfigError& e) {
      problems.push_back(std::string(to_string(axis)) + "=" + v + ": " + e.what());
    }
    if (!spec.out_dir.empty()) {
      spec.out_dir = base.out_dir / (std::string(to_string(axis)) + "_" + sanitize(v));
    }
    points.push_back({v, std::move(spec)});
  }
  if (!problems.empty()) throw ConfigError(join_lines("invalid ablation values:", problems));
  return points;
}

SweepResult run_ablation(const ExperimentSpec& base, AblationAxis axis,
                         const std::vector<std::string>& values, const PreparedData& data,
                         const Logger& log) {
  const auto points =
      expand_ablation(bind_channels(base, data.train.channels()), axis, values);
  SweepResult sweep;
  sweep.axis = axis;
  for (const auto& p : points) {
    if (p.spec.model.lookback != data.train.lookback()) {
      throw ConfigError("lookback sweeps need per-value data; use the registry overload");
    }
    if (log) log(std::string(to_string(axis)) + " = " + p.value);
    sweep.values.push_back(p.value);
    sweep.reports.push_back(run_prepared(p.spec, data, log, nullptr));
  }
  return sweep;
}

SweepResult run_ablation(const ExperimentSpec& base, AblationAxis axis,
                         const std::vector<std::string>& values, const DatasetRegistry& registry,
                         const Logger& log) {
  base.validate();
  const auto& entry = registry.find(base.dataset);
  if (!std::filesystem::exists(entry.path)) {
    throw IoError("dataset file '" + entry.path.string() + "' does not exist");
  }
  const RawSeries series = prefix(load_csv(entry.path), base.max_rows);
  const auto points = expand_ablation(bind_channels(base, series.channels()), axis, values);
  for (const auto& p : points) {
    chronological_split(series.length(), entry.split, p.spec.model.lookback + p.spec.model.horizon);
  }

  SweepResult sweep;
  sweep.axis = axis;
  std::vector<std::vector<SegRnnParams>> trained;
  for (const auto& p : points) {
    if (log) log(std::string(to_string(axis)) + " = " + p.value);
    const PreparedData data =
        prepare_data(series, entry.split, p.spec.model.lookback, p.spec.model.horizon);
    trained.emplace_back();
    sweep.values.push_back(p.value);
    sweep.reports.push_back(run_prepared(p.spec, data, log, &trained.back()));
  }
  if (!base.out_dir.empty()) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      write_artifacts(sweep.reports[i], trained[i], points[i].spec.out_dir);
    }
    write_sweep_csv(sweep, base.out_dir / "sweep.csv");
  }
  return sweep;
}

void write_sweep_csv(const SweepResult& sweep, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "axis,value,mse_mean,mse_std,mae_mean,mae_std,baseline_mse,train_seconds_per_epoch,"
         "inference_seconds_mean,inference_seconds_std,parameter_count\n"
      << std::setprecision(10);
  for (std::size_t i = 0; i < sweep.reports.size(); ++i) {
    const auto& r = sweep.reports[i];
    std::vector<double> train_s, infer_s;
    for (const auto& run : r.runs) {
      train_s.push_back(run.train_seconds_per_epoch);
      infer_s.push_back(run.inference_seconds);
    }
    const auto ts = summarize(train_s);
    const auto is = summarize(infer_s);
    out << to_string(sweep.axis) << ',' << sweep.values[i] << ',' << r.mse.mean << ','
        << r.mse.std << ',' << r.mae.mean << ',' << r.mae.std << ',' << r.baseline.mse << ','
        << ts.mean << ',' << is.mean << ',' << is.std << ','
        << (r.runs.empty() ? 0 : r.runs.front().parameter_count) << '\n';
  }
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  write_text(path, out.str());
}

// ---------------------------------------------------------------------------
// Timing

template <typename T>
TimingStats time_inference(const BasicSegRnnParams<T>& params, const ModelConfig& cfg,
                           std::size_t batch, std::size_t repeats, std::size_t warmup,
                           std::uint64_t seed) {
  if (batch == 0 || repeats == 0) throw ConfigError("timing needs batch and repeats >= 1");
  cfg.validate();
  check_shapes(params, cfg);
  Rng rng(seed);
  BasicMatrix<T> x(batch, cfg.lookback);
  for (T& v : x.values()) v = static_cast<T>(rng.normal());
  std::vector<std::size_t> channels(batch);
  for (std::size_t i = 0; i < batch; ++i) channels[i] = i % cfg.num_channels;

  double sink = 0.0;
  for (std::size_t i = 0; i < std::max<std::size_t>(warmup, 3); ++i) {
    sink += static_cast<double>(predict_batch(params, cfg, x, channels)[0]);
  }
  std::vector<double> times;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const auto y = predict_batch(params, cfg, x, channels);
    times.push_back(seconds_since(start));
    sink += static_cast<double>(y[0]);
  }
  if (!std::isfinite(sink)) throw ConsistencyError("non-finite prediction while timing");
  const auto s = summarize(times);
  return {s.mean, s.std, repeats};
}

template TimingStats time_inference<double>(const SegRnnParams&, const ModelConfig&, std::size_t,
                                            std::size_t, std::size_t, std::uint64_t);
template TimingStats time_inference<float>(const BasicSegRnnParams<float>&, const ModelConfig&,
                                           std::size_t, std::size_t, std::size_t, std::uint64_t);

}  // namespace segrnn
