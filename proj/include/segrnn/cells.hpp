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
#include <string_view>
#include <vector>

#include "segrnn/matrix.hpp"

namespace segrnn {

enum class CellKind { gru, rnn, lstm };

std::string_view to_string(CellKind kind);
CellKind parse_cell_kind(std::string_view name);

/// Number of gate blocks for a cell kind: GRU 3 (update, reset, candidate),
/// RNN 1, LSTM 4 (input, forget, cell, output).
std::size_t gate_count(CellKind kind);

/// Weights of one recurrent cell.
///
/// Every gate computes act(W_g [h_{t-1}, x_t] + b_g): the weight matrix has
/// shape (hidden_dim, hidden_dim + input_dim) with the hidden-state columns
/// first. Biases are 1 x hidden_dim rows. The same layout holds gradients.
template <typename T>
struct BasicCellParams {
  CellKind kind = CellKind::gru;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::vector<BasicMatrix<T>> weights;
  std::vector<BasicMatrix<T>> biases;

  std::size_t parameter_count() const;
  /// Throws ConsistencyError if the gate tensors do not match the declared dims.
  void check() const;
};

using CellParams = BasicCellParams<double>;

template <typename T>
BasicCellParams<T> make_cell(CellKind kind, std::size_t input_dim, std::size_t hidden_dim,
                             Rng& rng);

/// All-zero parameters (also the zero gradient).
template <typename T>
BasicCellParams<T> zero_cell(CellKind kind, std::size_t input_dim, std::size_t hidden_dim);

/// Recurrent state. `cell` is used by LSTM only and is empty otherwise.
/// Rows index independent sequences.
template <typename T>
struct BasicCellState {
  BasicMatrix<T> hidden;
  BasicMatrix<T> cell;
};

template <typename T>
BasicCellState<T> zero_state(CellKind kind, std::size_t batch, std::size_t hidden_dim);

/// Saved intermediates of one cell step.
template <typename T>
struct BasicStepCache {
  CellKind kind = CellKind::gru;
  BasicMatrix<T> input;
  BasicMatrix<T> prev_hidden;
  BasicMatrix<T> prev_cell;  // LSTM
  /// Post-activation gate values in gate order.
  std::vector<BasicMatrix<T>> gates;
  /// GRU: r_t * h_{t-1}. LSTM: tanh(c_t).
  BasicMatrix<T> aux;
};

template <typename T>
struct StepResult {
  BasicCellState<T> state;
  BasicStepCache<T> cache;
};

template <typename T>
struct StepGradient {
  BasicMatrix<T> input;
  BasicCellState<T> prev_state;
};

/// One recurrent step for a batch of rows.
template <typename T>
StepResult<T> cell_forward(const BasicCellParams<T>& p, const BasicMatrix<T>& input,
                           const BasicCellState<T>& prev);

/// Backward through one step given the upstream gradient of the produced
/// state. Parameter gradients are added into `grads`.
template <typename T>
StepGradient<T> cell_backward(const BasicCellParams<T>& p, const BasicStepCache<T>& cache,
                              const BasicCellState<T>& upstream, BasicCellParams<T>& grads);

/// Inference-only step where many rows share few distinct states and inputs:
/// output row i continues row state_row[i] of `shared` with row input_row[i]
/// of `inputs`. Equal to cell_forward on the gathered matrices, but each
/// hidden-state product that does not depend on the input is formed once per
/// shared row.
template <typename T>
BasicCellState<T> cell_forward_gathered(const BasicCellParams<T>& p,
                                        const BasicCellState<T>& shared,
                                        const BasicMatrix<T>& inputs,
                                        std::span<const std::size_t> state_row,
                                        std::span<const std::size_t> input_row);

template <typename T>
struct SequenceResult {
  BasicCellState<T> final_state;
  std::vector<BasicStepCache<T>> caches;
};

template <typename T>
struct SequenceGradient {
  std::vector<BasicMatrix<T>> inputs;
  BasicCellState<T> initial_state;
};

/// Chained cell_forward over `inputs`, starting from `initial`.
template <typename T>
SequenceResult<T> sequence_forward(const BasicCellParams<T>& p,
                                   std::span<const BasicMatrix<T>> inputs,
                                   const BasicCellState<T>& initial);

/// Backpropagation through time. Parameter gradients are summed over steps
/// into `grads`.
template <typename T>
SequenceGradient<T> sequence_backward(const BasicCellParams<T>& p,
                                      std::span<const BasicStepCache<T>> caches,
                                      const BasicCellState<T>& upstream_final,
                                      BasicCellParams<T>& grads);

}  // namespace segrnn
