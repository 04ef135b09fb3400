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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segrnn/data.hpp"
#include "segrnn/matrix.hpp"
#include "segrnn/model.hpp"

namespace segrnn {

struct TrainConfig {
  std::size_t epochs = 30;
  double base_lr = 1e-3;
  double lr_decay = 0.8;
  std::size_t decay_start_epoch = 3;
  std::size_t patience = 10;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  /// Global L2 gradient clipping; off when unset.
  std::optional<double> clip_norm;
  /// Rows per forward pass during validation and testing.
  std::size_t eval_batch = 1024;

  std::vector<std::string> violations() const;
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

/// Mean absolute elementwise difference.
template <typename T>
double mae_loss(const BasicMatrix<T>& pred, const BasicMatrix<T>& target);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
};

template <typename T>
Metrics metrics(const BasicMatrix<T>& pred, const BasicMatrix<T>& target);

template <typename T>
struct GradientResult {
  double loss = 0.0;
  BasicSegRnnParams<T> grads;
};

/// Mean MAE over a batch and its exact gradient. x: n x L, y: n x H.
template <typename T>
GradientResult<T> compute_gradients(const BasicMatrix<T>& x, const BasicMatrix<T>& y,
                                    std::span<const std::size_t> channels,
                                    const BasicSegRnnParams<T>& params, const ModelConfig& cfg,
                                    Mode mode, Rng* rng);

GradientResult<double> compute_gradients(std::span<const WindowSample> batch,
                                         const SegRnnParams& params, const ModelConfig& cfg,
                                         Mode mode = Mode::train, Rng* rng = nullptr);

template <typename T>
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  BasicSegRnnParams<T> m;
  BasicSegRnnParams<T> v;
  std::uint64_t t = 0;
};

template <typename T>
AdamState<T> make_adam_state(const BasicSegRnnParams<T>& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

/// One bias-corrected Adam update of every tensor in place.
template <typename T>
void adam_step(BasicSegRnnParams<T>& params, const BasicSegRnnParams<T>& grads,
               AdamState<T>& state, double lr);

/// Scales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before scaling.
template <typename T>
double clip_global_norm(BasicSegRnnParams<T>& grads, double max_norm);

/// Learning rate of a 1-based epoch.
double lr_at(std::size_t epoch, const TrainConfig& tc);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // MAE
  double val_mse = 0.0;
  double lr = 0.0;
  double seconds = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based, 0 before any epoch
  bool stopped_early = false;

  double best_val_loss() const;
  bool operator==(const TrainHistory&) const = default;
};

/// Columns: epoch,train_loss,val_loss,lr,seconds.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

template <typename T>
struct TrainResult {
  BasicSegRnnParams<T> best_params;
  TrainHistory history;
};

/// Called after every epoch.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch Adam with per-epoch validation, early stopping on validation
/// MAE and best-weights restoration.
template <typename T>
TrainResult<T> train(const WindowDataset& train_set, const WindowDataset& val_set,
                     BasicSegRnnParams<T> params, const ModelConfig& cfg, const TrainConfig& tc,
                     const EpochCallback& on_epoch = {});

/// Eval-mode metrics over every window of a dataset.
template <typename T>
Metrics evaluate(const WindowDataset& data, const BasicSegRnnParams<T>& params,
                 const ModelConfig& cfg, std::size_t eval_batch = 1024);

/// Metrics of the forecast that repeats each window's last look-back value.
Metrics repeat_last_baseline(const WindowDataset& data);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Central finite differences with step eps on every parameter against the
/// analytic gradient of the single-sample MAE.
GradCheckResult grad_check_detailed(const SegRnnParams& params, const WindowSample& sample,
                                    const ModelConfig& cfg, double eps);

double grad_check(const SegRnnParams& params, const WindowSample& sample, const ModelConfig& cfg,
                  double eps);

struct GradCheckCase {
  ModelConfig cfg;
  SegRnnParams params;
  WindowSample sample;
};

/// A small random instance: L <= 16, w in {2, 4}, d in {4, 8}, H <= 8,
/// C <= 2, dropout off, every tensor (biases included) drawn uniformly.
GradCheckCase random_grad_check_case(Rng& rng, CellKind cell, DecodeMode mode);

}  // namespace segrnn
