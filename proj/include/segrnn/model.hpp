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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segrnn/cells.hpp"
#include "segrnn/matrix.hpp"

namespace segrnn {

/// PMF decodes every output segment from the final encoder state in one
/// parallel cell step; RMF feeds each predicted segment back as the next input.
enum class DecodeMode { pmf, rmf };
enum class Mode { train, eval };

std::string_view to_string(DecodeMode mode);
DecodeMode parse_decode_mode(std::string_view name);

struct ModelConfig {
  std::size_t lookback = 720;
  std::size_t horizon = 96;
  std::size_t seg_len = 48;
  std::size_t hidden_dim = 512;
  CellKind cell = CellKind::gru;
  double dropout = 0.0;
  /// Channel half of the positional embedding. Must be off for univariate data.
  bool use_channel_pe = false;
  /// Relative-position half of the positional embedding.
  bool use_relative_pe = true;
  std::size_t num_channels = 1;
  DecodeMode decode_mode = DecodeMode::pmf;

  /// Input segments (encoder iterations).
  std::size_t num_segments() const { return lookback / seg_len; }
  /// Output segments.
  std::size_t num_out_segments() const { return horizon / seg_len; }
  std::size_t half_dim() const { return hidden_dim / 2; }

  std::vector<std::string> violations() const;
  /// Throws ConfigError listing every violation.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Checkpoint name of a cell gate tensor, e.g. "cell.update.weight".
std::string_view cell_tensor_name(CellKind kind, std::size_t gate, bool weight);

/// Learnable parameters. Linear maps are stored (out, in) and applied as
/// x W^T + b, like the cell gates.
template <typename T>
struct BasicSegRnnParams {
  BasicMatrix<T> proj_weight;  // hidden_dim x seg_len
  BasicMatrix<T> proj_bias;    // 1 x hidden_dim
  BasicCellParams<T> cell;     // input hidden_dim, hidden hidden_dim
  BasicMatrix<T> rp_table;     // out segments x hidden_dim/2, empty when disabled
  BasicMatrix<T> cp_table;     // channels x hidden_dim/2, empty when disabled
  BasicMatrix<T> pred_weight;  // seg_len x hidden_dim
  BasicMatrix<T> pred_bias;    // 1 x seg_len

  /// Calls f(name, tensor) for every learnable tensor in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    visit([&](std::string_view, const BasicMatrix<T>& m) { total += m.size(); });
    return total;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f(std::string_view("projection.weight"), self.proj_weight);
    f(std::string_view("projection.bias"), self.proj_bias);
    for (std::size_t g = 0; g < self.cell.weights.size(); ++g) {
      f(cell_tensor_name(self.cell.kind, g, true), self.cell.weights[g]);
      f(cell_tensor_name(self.cell.kind, g, false), self.cell.biases[g]);
    }
    if (!self.rp_table.empty()) f(std::string_view("pe.relative"), self.rp_table);
    if (!self.cp_table.empty()) f(std::string_view("pe.channel"), self.cp_table);
    f(std::string_view("prediction.weight"), self.pred_weight);
    f(std::string_view("prediction.bias"), self.pred_bias);
  }
};

using SegRnnParams = BasicSegRnnParams<double>;

/// Random initialization: fan-in uniform weights and tables, zero biases.
template <typename T = double>
BasicSegRnnParams<T> init_params(const ModelConfig& cfg, Rng& rng);

/// Zero tensors with the shapes `cfg` implies (also the zero gradient).
template <typename T = double>
BasicSegRnnParams<T> zero_params(const ModelConfig& cfg);

template <typename T>
BasicSegRnnParams<T> zeros_like(const BasicSegRnnParams<T>& p);

/// Throws ShapeError naming the first tensor whose shape disagrees with cfg.
template <typename T>
void check_shapes(const BasicSegRnnParams<T>& p, const ModelConfig& cfg);

template <typename To, typename From>
BasicSegRnnParams<To> cast_params(const BasicSegRnnParams<From>& p) {
  BasicSegRnnParams<To> out;
  out.proj_weight = cast<To>(p.proj_weight);
  out.proj_bias = cast<To>(p.proj_bias);
  out.cell.kind = p.cell.kind;
  out.cell.input_dim = p.cell.input_dim;
  out.cell.hidden_dim = p.cell.hidden_dim;
  for (const auto& w : p.cell.weights) out.cell.weights.push_back(cast<To>(w));
  for (const auto& b : p.cell.biases) out.cell.biases.push_back(cast<To>(b));
  out.rp_table = cast<To>(p.rp_table);
  out.cp_table = cast<To>(p.cp_table);
  out.pred_weight = cast<To>(p.pred_weight);
  out.pred_bias = cast<To>(p.pred_bias);
  return out;
}

/// Total learnable scalars implied by a configuration.
std::size_t count_parameters(const ModelConfig& cfg);

template <typename T>
std::size_t count_parameters(const BasicSegRnnParams<T>& p, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Single-window stages

template <typename T>
struct NormAnchor {
  T last_value{};
};

template <typename T>
struct Normalized {
  std::vector<T> values;
  NormAnchor<T> anchor;
};

/// Subtracts the window's last value from every entry.
template <typename T>
Normalized<T> instance_normalize(std::span<const T> x);

template <typename T>
std::vector<T> instance_denormalize(std::span<const T> y_norm, NormAnchor<T> anchor);

/// Row j holds x[j*w, (j+1)*w).
template <typename T>
BasicMatrix<T> segment_partition(std::span<const T> x, std::size_t seg_len);

template <typename T>
struct EncodeResult {
  BasicCellState<T> state;
  std::vector<BasicStepCache<T>> caches;
  /// ReLU(segment projection), one row per segment.
  BasicMatrix<T> projected;
  std::size_t iterations = 0;
};

/// Partition, project + ReLU, and run the cell over the segments from a zero state.
template <typename T>
EncodeResult<T> encode(std::span<const T> x_norm, const BasicSegRnnParams<T>& params,
                       const ModelConfig& cfg);

/// Positional embedding [rp_j, cp_channel] (disabled halves are zeros).
template <typename T>
BasicMatrix<T> build_pe(std::size_t segment, std::size_t channel,
                        const BasicSegRnnParams<T>& params, const ModelConfig& cfg);

template <typename T>
struct DropoutResult {
  BasicMatrix<T> values;
  /// Per-entry multiplier (0 or 1/(1-rate)); empty when dropout was the identity.
  BasicMatrix<T> mask;
};

/// Inverted dropout. Identity in eval mode or at rate 0.
template <typename T>
DropoutResult<T> dropout_with_mask(const BasicMatrix<T>& v, double rate, Mode mode, Rng* rng);

template <typename T>
BasicMatrix<T> dropout(const BasicMatrix<T>& v, double rate, Mode mode, Rng* rng) {
  return dropout_with_mask(v, rate, mode, rng).values;
}

/// One decoder cell step (PMF: all segments stacked; RMF: one segment).
template <typename T>
struct DecodeStep {
  BasicStepCache<T> cache;
  BasicMatrix<T> dropped;
  BasicMatrix<T> mask;
  /// RMF only: the previous predicted segment fed back, and its ReLU projection.
  BasicMatrix<T> feedback_source;
  BasicMatrix<T> feedback_projected;
};

template <typename T>
struct DecodeTrace {
  std::vector<DecodeStep<T>> steps;
  /// Normalized-space forecasts, one row per sequence.
  BasicMatrix<T> y_norm;
};

/// Parallel decoding for a batch: rows of `state` are the encoder outputs,
/// channels[b] selects the channel embedding of row b.
template <typename T>
DecodeTrace<T> decode_pmf(const BasicCellState<T>& state, std::span<const std::size_t> channels,
                          const BasicSegRnnParams<T>& params, const ModelConfig& cfg, Mode mode,
                          Rng* rng);

/// Recurrent decoding for a batch. `first_input` (rows x hidden_dim) is the
/// first decoder input, normally the projected last look-back segment.
template <typename T>
DecodeTrace<T> decode_rmf(const BasicCellState<T>& state, const BasicMatrix<T>& first_input,
                          const BasicSegRnnParams<T>& params, const ModelConfig& cfg, Mode mode,
                          Rng* rng);

/// Full pipeline for one window: normalize, encode, decode, denormalize.
template <typename T>
std::vector<T> predict(std::span<const T> x, std::size_t channel,
                       const BasicSegRnnParams<T>& params, const ModelConfig& cfg, Mode mode,
                       Rng* rng);

// ---------------------------------------------------------------------------
// Batched pipeline with a tape for backpropagation

template <typename T>
struct ForwardTape {
  std::size_t batch = 0;
  std::vector<std::size_t> channels;
  /// Normalized segments stacked step-major: row j*batch + b is segment j of sequence b.
  BasicMatrix<T> segments;
  /// ReLU projection of `segments`, same row order.
  BasicMatrix<T> projected;
  std::vector<BasicStepCache<T>> encoder;
  DecodeMode decode_mode = DecodeMode::pmf;
  DecodeTrace<T> decode;
};

template <typename T>
struct ForwardOutput {
  BasicMatrix<T> prediction;  // batch x horizon, denormalized
  ForwardTape<T> tape;
};

/// inputs: batch x lookback raw windows. rng is required in train mode when dropout > 0.
template <typename T>
ForwardOutput<T> forward(const BasicSegRnnParams<T>& params, const ModelConfig& cfg,
                         const BasicMatrix<T>& inputs, std::span<const std::size_t> channels,
                         Mode mode, Rng* rng);

/// Gradient of a scalar loss w.r.t. every parameter given d loss / d prediction.
template <typename T>
BasicSegRnnParams<T> backward(const BasicSegRnnParams<T>& params, const ModelConfig& cfg,
                              const ForwardTape<T>& tape, const BasicMatrix<T>& d_prediction);

/// Eval-mode predictions for a batch of windows.
template <typename T>
BasicMatrix<T> predict_batch(const BasicSegRnnParams<T>& params, const ModelConfig& cfg,
                             const BasicMatrix<T>& inputs, std::span<const std::size_t> channels);

}  // namespace segrnn
