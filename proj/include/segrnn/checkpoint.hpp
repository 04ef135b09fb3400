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

#include <filesystem>

#include "json.hpp"
#include "segrnn/model.hpp"

namespace segrnn {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing keys keep the values already in `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

struct Checkpoint {
  ModelConfig config;
  SegRnnParams params;
};

/// JSON container: format tag, version, the model configuration and every
/// tensor as {name: {rows, cols, data}}.
nlohmann::json checkpoint_to_json(const ModelConfig& cfg, const SegRnnParams& params);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const SegRnnParams& params);
/// Validates the format tag, version and every tensor shape against the
/// stored configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace segrnn
