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

#include "segrnn/checkpoint.hpp"

#include <fstream>
#include <map>

namespace segrnn {

namespace {

constexpr const char* kFormatTag = "segrnn-checkpoint";

template <typename V>
V get_or(const nlohmann::json& j, const char* key, V fallback) {
  const auto it = j.find(key);
  return it == j.end() ? fallback : it->template get<V>();
}

}  // namespace

nlohmann::json to_json(const ModelConfig& cfg) {
  return {
      {"lookback", cfg.lookback},
      {"horizon", cfg.horizon},
      {"seg_len", cfg.seg_len},
      {"hidden_dim", cfg.hidden_dim},
      {"cell", std::string(to_string(cfg.cell))},
      {"dropout", cfg.dropout},
      {"use_channel_pe", cfg.use_channel_pe},
      {"use_relative_pe", cfg.use_relative_pe},
      {"num_channels", cfg.num_channels},
      {"decode_mode", std::string(to_string(cfg.decode_mode))},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base) {
  if (!j.is_object()) throw ConfigError("model configuration must be a JSON object");
  try {
    base.lookback = get_or(j, "lookback", base.lookback);
    base.horizon = get_or(j, "horizon", base.horizon);
    base.seg_len = get_or(j, "seg_len", base.seg_len);
    base.hidden_dim = get_or(j, "hidden_dim", base.hidden_dim);
    if (j.contains("cell")) base.cell = parse_cell_kind(j.at("cell").get<std::string>());
    base.dropout = get_or(j, "dropout", base.dropout);
    base.use_channel_pe = get_or(j, "use_channel_pe", base.use_channel_pe);
    base.use_relative_pe = get_or(j, "use_relative_pe", base.use_relative_pe);
    base.num_channels = get_or(j, "num_channels", base.num_channels);
    if (j.contains("decode_mode")) {
      base.decode_mode = parse_decode_mode(j.at("decode_mode").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model configuration field: ") + e.what());
  }
  return base;
}

nlohmann::json checkpoint_to_json(const ModelConfig& cfg, const SegRnnParams& params) {
  check_shapes(params, cfg);
  nlohmann::json tensors = nlohmann::json::object();
  params.visit([&](std::string_view name, const Matrix& m) {
    tensors[std::string(name)] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.to_vector()}};
  });
  return {{"format", kFormatTag},
          {"version", kCheckpointVersion},
          {"config", to_json(cfg)},
          {"tensors", std::move(tensors)}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", std::string()) != kFormatTag) {
    throw IoError("not a segrnn checkpoint");
  }
  const int version = j.value("version", 0);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint cp;
  cp.config = model_config_from_json(j.at("config"));
  cp.config.validate();
  cp.params = zero_params<double>(cp.config);

  const nlohmann::json& tensors = j.at("tensors");
  std::size_t seen = 0;
  cp.params.visit([&](std::string_view name, Matrix& m) {
    const auto it = tensors.find(std::string(name));
    if (it == tensors.end()) throw ShapeError("checkpoint is missing tensor '" + std::string(name) + "'");
    const auto rows = it->at("rows").get<std::size_t>();
    const auto cols = it->at("cols").get<std::size_t>();
    if (rows != m.rows() || cols != m.cols()) {
      throw ShapeError("checkpoint tensor '" + std::string(name) + "' has shape " +
                       std::to_string(rows) + "x" + std::to_string(cols) + ", configuration implies " +
                       m.shape_string());
    }
    m = Matrix(rows, cols, it->at("data").get<std::vector<double>>());
    if (!all_finite(m)) throw DataError("checkpoint tensor '" + std::string(name) + "' is not finite");
    ++seen;
  });
  if (seen != tensors.size()) {
    throw ShapeError("checkpoint has " + std::to_string(tensors.size()) +
                     " tensors, configuration implies " + std::to_string(seen));
  }
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const SegRnnParams& params) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << checkpoint_to_json(cfg, params).dump();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint '" + path.string() + "': " + e.what());
  }
  try {
    return checkpoint_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint '" + path.string() + "': " + e.what());
  }
}

}  // namespace segrnn
