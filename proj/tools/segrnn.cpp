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

// segrnn: train, evaluate, sweep and verify SegRNN forecasters.
//
// Exit codes: 0 success, 1 failed check, 2 invalid configuration or
// arguments, 3 I/O error.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "segrnn/checkpoint.hpp"
#include "segrnn/experiment.hpp"
#include "segrnn/training.hpp"

#ifndef SEGRNN_CONFIG_DIR
#define SEGRNN_CONFIG_DIR "configs"
#endif

namespace {

using namespace segrnn;

constexpr int kExitCheckFailed = 1;
constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;

/// Flags shared by train, ablate and evaluate. Values only apply when the
/// flag was given on the command line.
struct SpecFlags {
  std::string config;
  std::string registry = std::string(SEGRNN_CONFIG_DIR) + "/datasets.json";
  std::string dataset;
  std::size_t lookback = 0, horizon = 0, seg_len = 0, hidden_dim = 0;
  std::string decode_mode, cell, channel_pe = "auto", precision;
  double dropout = 0.0, lr = 0.0;
  std::size_t batch_size = 0, epochs = 0, patience = 0, repeats = 0, max_rows = 0;
  std::uint64_t seed = 0;
  std::string out;
  bool quiet = false;

  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app) {
    auto add = [&](const std::string& name, auto& target, const std::string& help) {
      options.emplace_back(name, app->add_option(name, target, help));
    };
    app->add_option("--config", config, "JSON experiment file; explicit flags override it");
    app->add_option("--registry", registry, "dataset registry JSON")->capture_default_str();
    add("--dataset", dataset, "registered dataset name");
    add("--lookback", lookback, "look-back length L");
    add("--horizon", horizon, "forecast horizon H");
    add("--seg-len", seg_len, "segment length w");
    add("--hidden-dim", hidden_dim, "hidden size d (even)");
    add("--decode-mode", decode_mode, "pmf or rmf");
    add("--cell", cell, "gru, rnn or lstm");
    add("--dropout", dropout, "dropout rate before the prediction head");
    add("--batch-size", batch_size, "training batch size");
    add("--lr", lr, "base learning rate");
    add("--epochs", epochs, "maximum epochs");
    add("--patience", patience, "early-stopping patience");
    add("--seed", seed, "first seed");
    add("--repeats", repeats, "number of seeds");
    add("--max-rows", max_rows, "use only the first N timesteps");
    add("--precision", precision, "f64 or f32");
    add("--out", out, "output directory for reports, histories and checkpoints");
    app->add_option("--channel-pe", channel_pe, "auto, on or off (auto: on when C > 1)")
        ->check(CLI::IsMember({"auto", "on", "off"}))
        ->capture_default_str();
    app->add_flag("--quiet", quiet, "suppress per-epoch progress");
  }

  bool given(const std::string& name) const {
    for (const auto& [n, opt] : options) {
      if (n == name) return opt->count() > 0;
    }
    return false;
  }
};

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in '" + path + "': " + e.what());
  }
}

/// Channel count from the header row of a dataset file.
std::size_t header_channels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  const auto commas = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (commas == 0) throw DataError(path.string() + ": header has no channel columns");
  return commas;
}

/// Defaults < config file < explicit flags.
ExperimentSpec build_spec(const SpecFlags& f, const DatasetRegistry& registry) {
  ExperimentSpec spec;
  if (!f.config.empty()) spec = experiment_spec_from_json(read_json_file(f.config), spec);
  if (f.given("--dataset")) spec.dataset = f.dataset;
  if (f.given("--lookback")) spec.model.lookback = f.lookback;
  if (f.given("--horizon")) spec.model.horizon = f.horizon;
  if (f.given("--seg-len")) spec.model.seg_len = f.seg_len;
  if (f.given("--hidden-dim")) spec.model.hidden_dim = f.hidden_dim;
  if (f.given("--decode-mode")) spec.model.decode_mode = parse_decode_mode(f.decode_mode);
  if (f.given("--cell")) spec.model.cell = parse_cell_kind(f.cell);
  if (f.given("--dropout")) spec.model.dropout = f.dropout;
  if (f.given("--batch-size")) spec.train.batch_size = f.batch_size;
  if (f.given("--lr")) spec.train.base_lr = f.lr;
  if (f.given("--epochs")) {
    spec.train.epochs = f.epochs;
    if (!f.given("--patience")) spec.train.patience = std::min(spec.train.patience, f.epochs);
  }
  if (f.given("--patience")) spec.train.patience = f.patience;
  if (f.given("--seed")) spec.train.seed = f.seed;
  if (f.given("--repeats")) {
    spec.repeats = f.repeats;
    spec.seeds.clear();
  }
  if (f.given("--max-rows")) spec.max_rows = f.max_rows;
  if (f.given("--precision")) spec.precision = parse_precision(f.precision);
  if (f.given("--out")) spec.out_dir = f.out;
  if (spec.dataset.empty()) throw ConfigError("no dataset given (use --dataset or --config)");

  const std::size_t channels = header_channels(registry.find(spec.dataset).path);
  spec.model.num_channels = channels;
  if (f.channel_pe == "on") {
    spec.model.use_channel_pe = true;
  } else if (f.channel_pe == "off") {
    spec.model.use_channel_pe = false;
  } else if (f.channel_pe == "auto" && (f.config.empty() || f.given("--dataset"))) {
    spec.model.use_channel_pe = channels > 1;
  }
  spec.validate();
  return spec;
}

Logger make_logger(bool quiet) {
  if (quiet) return {};
  return [](const std::string& line) { std::cerr << line << '\n'; };
}

void print_report(const Report& r) {
  std::cout << std::setprecision(6) << "dataset " << r.spec.dataset << "  L=" << r.spec.model.lookback
            << " H=" << r.spec.model.horizon << " w=" << r.spec.model.seg_len
            << " d=" << r.spec.model.hidden_dim << " cell=" << to_string(r.spec.model.cell)
            << " decode=" << to_string(r.spec.model.decode_mode) << '\n';
  for (const auto& run : r.runs) {
    std::cout << "  seed " << run.seed << ": mse " << run.test.mse << "  mae " << run.test.mae
              << "  best epoch " << run.history.best_epoch << "  " << run.train_seconds_per_epoch
              << " s/epoch\n";
  }
  std::cout << "  mean mse " << r.mse.mean << " (std " << r.mse.std << ")  mean mae " << r.mae.mean
            << " (std " << r.mae.std << ")\n"
            << "  repeat-last baseline: mse " << r.baseline.mse << "  mae " << r.baseline.mae
            << '\n';
}

std::vector<std::string> split_list(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& item : raw) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (!part.empty()) out.push_back(part);
    }
  }
  return out;
}

int run_gradcheck(std::size_t cases, std::uint64_t seed, double eps, double tol,
                  const std::string& out) {
  Rng rng(seed);
  const CellKind cells[] = {CellKind::gru, CellKind::rnn, CellKind::lstm};
  const DecodeMode modes[] = {DecodeMode::pmf, DecodeMode::rmf};
  double worst = 0.0;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < cases; ++i) {
    const CellKind cell = cells[i % 3];
    const DecodeMode mode = modes[(i / 3) % 2];
    const auto c = random_grad_check_case(rng, cell, mode);
    const auto r = grad_check_detailed(c.params, c.sample, c.cfg, eps);
    worst = std::max(worst, r.max_relative_error);
    std::cout << std::setprecision(3) << "case " << std::setw(2) << i << "  " << to_string(cell)
              << '/' << to_string(mode) << "  L=" << c.cfg.lookback << " w=" << c.cfg.seg_len
              << " d=" << c.cfg.hidden_dim << " H=" << c.cfg.horizon << " C="
              << c.cfg.num_channels << "  max rel err " << r.max_relative_error << " ("
              << r.worst_tensor << '[' << r.worst_index << "], " << r.checked << " params)\n";
    rows.push_back({{"cell", to_string(cell)},
                    {"decode_mode", to_string(mode)},
                    {"config", to_json(c.cfg)},
                    {"max_relative_error", r.max_relative_error},
                    {"worst_tensor", r.worst_tensor}});
  }
  const bool ok = worst <= tol;
  std::cout << "max relative error " << worst << (ok ? " <= " : " > ") << tol << '\n';
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream f(std::filesystem::path(out) / "gradcheck.json");
    if (!f) throw IoError("cannot write gradcheck.json under '" + out + "'");
    f << nlohmann::json{{"eps", eps}, {"tolerance", tol}, {"max_relative_error", worst},
                        {"cases", rows}}
             .dump(2)
      << '\n';
  }
  return ok ? 0 : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SegRNN long-term forecasting: training, evaluation, ablations and checks"};
  app.require_subcommand(1);

  SpecFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train and test on a registered dataset");
  train_flags.attach(train_cmd);

  SpecFlags eval_flags;
  std::string checkpoint;
  auto* eval_cmd = app.add_subcommand("evaluate", "test a saved checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();
  eval_cmd->add_option("--dataset", eval_flags.dataset, "registered dataset name")->required();
  eval_cmd->add_option("--registry", eval_flags.registry, "dataset registry JSON")
      ->capture_default_str();
  eval_cmd->add_option("--max-rows", eval_flags.max_rows, "use only the first N timesteps");

  SpecFlags ablate_flags;
  std::string axis;
  std::vector<std::string> values;
  auto* ablate_cmd = app.add_subcommand("ablate", "sweep one configuration axis");
  ablate_flags.attach(ablate_cmd);
  ablate_cmd->add_option("--axis", axis, "seg_len, decode_mode, lookback, cell or pe")->required();
  ablate_cmd->add_option("--values", values, "comma separated values")->required();

  std::size_t gc_cases = 20;
  std::uint64_t gc_seed = 0;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  std::string gc_out;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check on random small models");
  gc_cmd->add_option("--cases", gc_cases, "random configurations")->capture_default_str();
  gc_cmd->add_option("--seed", gc_seed, "seed")->capture_default_str();
  gc_cmd->add_option("--eps", gc_eps, "central difference step")->capture_default_str();
  gc_cmd->add_option("--tol", gc_tol, "maximum relative error")->capture_default_str();
  gc_cmd->add_option("--out", gc_out, "directory for gradcheck.json");

  ModelConfig pc;
  std::string pc_cell = "gru", pc_pe = "auto";
  bool pc_no_rp = false;
  auto* pc_cmd = app.add_subcommand("params-count", "count learnable parameters of a configuration");
  pc_cmd->add_option("--lookback", pc.lookback, "look-back length L")->capture_default_str();
  pc_cmd->add_option("--horizon", pc.horizon, "forecast horizon H")->capture_default_str();
  pc_cmd->add_option("--seg-len", pc.seg_len, "segment length w")->capture_default_str();
  pc_cmd->add_option("--hidden-dim", pc.hidden_dim, "hidden size d")->capture_default_str();
  pc_cmd->add_option("--channels", pc.num_channels, "channel count C")->capture_default_str();
  pc_cmd->add_option("--cell", pc_cell, "gru, rnn or lstm")->capture_default_str();
  pc_cmd->add_option("--channel-pe", pc_pe, "auto, on or off")
      ->check(CLI::IsMember({"auto", "on", "off"}))
      ->capture_default_str();
  pc_cmd->add_flag("--no-relative-pe", pc_no_rp, "drop the relative-position table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*train_cmd) {
      const auto registry = DatasetRegistry::load(train_flags.registry);
      const auto spec = build_spec(train_flags, registry);
      const auto report = run_experiment(spec, registry, make_logger(train_flags.quiet));
      print_report(report);
      if (!spec.out_dir.empty()) std::cout << "wrote " << spec.out_dir.string() << '\n';
      return 0;
    }
    if (*eval_cmd) {
      const auto registry = DatasetRegistry::load(eval_flags.registry);
      const auto cp = load_checkpoint(checkpoint);
      const auto& entry = registry.find(eval_flags.dataset);
      const auto series = prefix(load_csv(entry.path), eval_flags.max_rows);
      if (series.channels() != cp.config.num_channels) {
        throw ConfigError("checkpoint expects " + std::to_string(cp.config.num_channels) +
                          " channels, dataset has " + std::to_string(series.channels()));
      }
      const auto data = prepare_data(series, entry.split, cp.config.lookback, cp.config.horizon);
      const auto m = evaluate<double>(data.test, cp.params, cp.config);
      const auto base = repeat_last_baseline(data.test);
      std::cout << nlohmann::json{{"dataset", entry.name},
                                  {"test_windows", data.test.size()},
                                  {"mse", m.mse},
                                  {"mae", m.mae},
                                  {"baseline_repeat_last", {{"mse", base.mse}, {"mae", base.mae}}}}
                       .dump(2)
                << '\n';
      return 0;
    }
    if (*ablate_cmd) {
      const auto registry = DatasetRegistry::load(ablate_flags.registry);
      const auto spec = build_spec(ablate_flags, registry);
      const auto sweep = run_ablation(spec, parse_ablation_axis(axis), split_list(values), registry,
                                      make_logger(ablate_flags.quiet));
      for (std::size_t i = 0; i < sweep.values.size(); ++i) {
        std::cout << "== " << to_string(sweep.axis) << " = " << sweep.values[i] << '\n';
        print_report(sweep.reports[i]);
      }
      if (!spec.out_dir.empty()) std::cout << "wrote " << (spec.out_dir / "sweep.csv").string() << '\n';
      return 0;
    }
    if (*gc_cmd) return run_gradcheck(gc_cases, gc_seed, gc_eps, gc_tol, gc_out);
    if (*pc_cmd) {
      pc.cell = parse_cell_kind(pc_cell);
      pc.use_channel_pe = pc_pe == "on" || (pc_pe == "auto" && pc.num_channels > 1);
      pc.use_relative_pe = !pc_no_rp;
      pc.validate();
      std::cout << count_parameters(pc) << '\n';
      return 0;
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitValidation;
}
