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

#include "segrnn/cells.hpp"

#include <cmath>
#include <string>

namespace segrnn {

namespace {

template <typename T>
BasicMatrix<T> gate_preactivation(const BasicMatrix<T>& joined, const BasicMatrix<T>& weight,
                                  const BasicMatrix<T>& bias) {
  BasicMatrix<T> out = matmul_nt(joined, weight);
  add_row_bias(out, bias);
  return out;
}

template <typename T>
void check_step_inputs(const BasicCellParams<T>& p, const BasicMatrix<T>& input,
                       const BasicCellState<T>& prev) {
  if (input.cols() != p.input_dim) {
    throw ShapeError("cell input has " + std::to_string(input.cols()) + " columns, expected " +
                     std::to_string(p.input_dim));
  }
  require_same_shape(prev.hidden.rows(), prev.hidden.cols(), input.rows(), p.hidden_dim,
                     "cell hidden state");
  if (p.kind == CellKind::lstm) {
    require_same_shape(prev.cell.rows(), prev.cell.cols(), input.rows(), p.hidden_dim,
                       "lstm cell state");
  }
}

// Adds the gradient of `pre` (d loss / d preactivation) for gate g: weight and
// bias gradients, and the contribution to d[h, x].
template <typename T>
void backprop_gate(const BasicCellParams<T>& p, std::size_t g, const BasicMatrix<T>& dpre,
                   const BasicMatrix<T>& joined, BasicMatrix<T>& djoined,
                   BasicCellParams<T>& grads) {
  accumulate_tn(dpre, joined, grads.weights[g]);
  accumulate_column_sums(dpre, grads.biases[g]);
  accumulate_nn(dpre, p.weights[g], djoined);
}

template <typename T>
StepGradient<T> split_joined(const BasicMatrix<T>& djoined, std::size_t hidden_dim,
                             std::size_t input_dim) {
  StepGradient<T> out;
  out.prev_state.hidden = column_block(djoined, 0, hidden_dim);
  out.input = column_block(djoined, hidden_dim, input_dim);
  return out;
}

template <typename T>
StepResult<T> gru_forward(const BasicCellParams<T>& p, const BasicMatrix<T>& x,
                          const BasicCellState<T>& prev) {
  const BasicMatrix<T>& h = prev.hidden;
  const BasicMatrix<T> joined = hconcat(h, x);
  BasicMatrix<T> z = apply_activation(gate_preactivation(joined, p.weights[0], p.biases[0]),
                                      Activation::sigmoid);
  BasicMatrix<T> r = apply_activation(gate_preactivation(joined, p.weights[1], p.biases[1]),
                                      Activation::sigmoid);
  BasicMatrix<T> rh(h.rows(), h.cols());
  for (std::size_t i = 0; i < rh.size(); ++i) rh[i] = r[i] * h[i];
  BasicMatrix<T> cand = apply_activation(
      gate_preactivation(hconcat(rh, x), p.weights[2], p.biases[2]), Activation::tanh);

  StepResult<T> out;
  out.state.hidden = BasicMatrix<T>(h.rows(), h.cols());
  for (std::size_t i = 0; i < h.size(); ++i) {
    out.state.hidden[i] = (T{1} - z[i]) * h[i] + z[i] * cand[i];
  }
  out.cache.kind = CellKind::gru;
  out.cache.input = x;
  out.cache.prev_hidden = h;
  out.cache.gates = {std::move(z), std::move(r), std::move(cand)};
  out.cache.aux = std::move(rh);
  return out;
}

template <typename T>
StepGradient<T> gru_backward(const BasicCellParams<T>& p, const BasicStepCache<T>& c,
                             const BasicMatrix<T>& dh, BasicCellParams<T>& grads) {
  const BasicMatrix<T>& h = c.prev_hidden;
  const BasicMatrix<T>& z = c.gates[0];
  const BasicMatrix<T>& r = c.gates[1];
  const BasicMatrix<T>& cand = c.gates[2];
  const std::size_t n = h.size();

  BasicMatrix<T> dh_prev(h.rows(), h.cols());
  BasicMatrix<T> dz_pre(h.rows(), h.cols());
  BasicMatrix<T> dc_pre(h.rows(), h.cols());
  for (std::size_t i = 0; i < n; ++i) {
    dh_prev[i] = dh[i] * (T{1} - z[i]);
    dz_pre[i] = dh[i] * (cand[i] - h[i]) * z[i] * (T{1} - z[i]);
    dc_pre[i] = dh[i] * z[i] * (T{1} - cand[i] * cand[i]);
  }

  // Candidate gate sees [r * h, x].
  BasicMatrix<T> dcand_joined(h.rows(), p.hidden_dim + p.input_dim);
  backprop_gate(p, 2, dc_pre, hconcat(c.aux, c.input), dcand_joined, grads);

  BasicMatrix<T> dr_pre(h.rows(), h.cols());
  for (std::size_t row = 0; row < h.rows(); ++row) {
    for (std::size_t k = 0; k < p.hidden_dim; ++k) {
      const std::size_t i = row * p.hidden_dim + k;
      const T drh = dcand_joined(row, k);
      dh_prev[i] += drh * r[i];
      dr_pre[i] = drh * h[i] * r[i] * (T{1} - r[i]);
    }
  }

  const BasicMatrix<T> joined = hconcat(h, c.input);
  BasicMatrix<T> djoined(h.rows(), p.hidden_dim + p.input_dim);
  backprop_gate(p, 0, dz_pre, joined, djoined, grads);
  backprop_gate(p, 1, dr_pre, joined, djoined, grads);

  StepGradient<T> out;
  out.input = BasicMatrix<T>(h.rows(), p.input_dim);
  out.prev_state.hidden = std::move(dh_prev);
  for (std::size_t row = 0; row < h.rows(); ++row) {
    for (std::size_t k = 0; k < p.hidden_dim; ++k) {
      out.prev_state.hidden(row, k) += djoined(row, k);
    }
    for (std::size_t k = 0; k < p.input_dim; ++k) {
      out.input(row, k) = djoined(row, p.hidden_dim + k) + dcand_joined(row, p.hidden_dim + k);
    }
  }
  return out;
}

template <typename T>
StepResult<T> rnn_forward(const BasicCellParams<T>& p, const BasicMatrix<T>& x,
                          const BasicCellState<T>& prev) {
  const BasicMatrix<T> joined = hconcat(prev.hidden, x);
  BasicMatrix<T> h = apply_activation(gate_preactivation(joined, p.weights[0], p.biases[0]),
                                      Activation::tanh);
  StepResult<T> out;
  out.state.hidden = h;
  out.cache.kind = CellKind::rnn;
  out.cache.input = x;
  out.cache.prev_hidden = prev.hidden;
  out.cache.gates = {std::move(h)};
  return out;
}

template <typename T>
StepGradient<T> rnn_backward(const BasicCellParams<T>& p, const BasicStepCache<T>& c,
                             const BasicMatrix<T>& dh, BasicCellParams<T>& grads) {
  const BasicMatrix<T>& h = c.gates[0];
  BasicMatrix<T> dpre(h.rows(), h.cols());
  for (std::size_t i = 0; i < h.size(); ++i) dpre[i] = dh[i] * (T{1} - h[i] * h[i]);
  BasicMatrix<T> djoined(h.rows(), p.hidden_dim + p.input_dim);
  backprop_gate(p, 0, dpre, hconcat(c.prev_hidden, c.input), djoined, grads);
  return split_joined(djoined, p.hidden_dim, p.input_dim);
}

template <typename T>
StepResult<T> lstm_forward(const BasicCellParams<T>& p, const BasicMatrix<T>& x,
                           const BasicCellState<T>& prev) {
  const BasicMatrix<T> joined = hconcat(prev.hidden, x);
  auto gate = [&](std::size_t g, Activation act) {
    return apply_activation(gate_preactivation(joined, p.weights[g], p.biases[g]), act);
  };
  BasicMatrix<T> in = gate(0, Activation::sigmoid);
  BasicMatrix<T> forget = gate(1, Activation::sigmoid);
  BasicMatrix<T> cand = gate(2, Activation::tanh);
  BasicMatrix<T> outg = gate(3, Activation::sigmoid);

  const std::size_t n = in.size();
  StepResult<T> out;
  out.state.cell = BasicMatrix<T>(in.rows(), in.cols());
  for (std::size_t i = 0; i < n; ++i) {
    out.state.cell[i] = forget[i] * prev.cell[i] + in[i] * cand[i];
  }
  BasicMatrix<T> tanh_cell = apply_activation(out.state.cell, Activation::tanh);
  out.state.hidden = BasicMatrix<T>(in.rows(), in.cols());
  for (std::size_t i = 0; i < n; ++i) out.state.hidden[i] = outg[i] * tanh_cell[i];

  out.cache.kind = CellKind::lstm;
  out.cache.input = x;
  out.cache.prev_hidden = prev.hidden;
  out.cache.prev_cell = prev.cell;
  out.cache.gates = {std::move(in), std::move(forget), std::move(cand), std::move(outg)};
  out.cache.aux = std::move(tanh_cell);
  return out;
}

template <typename T>
StepGradient<T> lstm_backward(const BasicCellParams<T>& p, const BasicStepCache<T>& c,
                              const BasicCellState<T>& upstream, BasicCellParams<T>& grads) {
  const BasicMatrix<T>& in = c.gates[0];
  const BasicMatrix<T>& forget = c.gates[1];
  const BasicMatrix<T>& cand = c.gates[2];
  const BasicMatrix<T>& outg = c.gates[3];
  const BasicMatrix<T>& tc = c.aux;
  const BasicMatrix<T>& dh = upstream.hidden;
  const bool has_dc = !upstream.cell.empty();
  const std::size_t n = in.size();

  BasicMatrix<T> d_in(in.rows(), in.cols()), d_forget(in.rows(), in.cols()),
      d_cand(in.rows(), in.cols()), d_out(in.rows(), in.cols()), dc_prev(in.rows(), in.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const T dc = (has_dc ? upstream.cell[i] : T{0}) + dh[i] * outg[i] * (T{1} - tc[i] * tc[i]);
    d_out[i] = dh[i] * tc[i] * outg[i] * (T{1} - outg[i]);
    d_in[i] = dc * cand[i] * in[i] * (T{1} - in[i]);
    d_forget[i] = dc * c.prev_cell[i] * forget[i] * (T{1} - forget[i]);
    d_cand[i] = dc * in[i] * (T{1} - cand[i] * cand[i]);
    dc_prev[i] = dc * forget[i];
  }

  const BasicMatrix<T> joined = hconcat(c.prev_hidden, c.input);
  BasicMatrix<T> djoined(in.rows(), p.hidden_dim + p.input_dim);
  backprop_gate(p, 0, d_in, joined, djoined, grads);
  backprop_gate(p, 1, d_forget, joined, djoined, grads);
  backprop_gate(p, 2, d_cand, joined, djoined, grads);
  backprop_gate(p, 3, d_out, joined, djoined, grads);

  StepGradient<T> out = split_joined(djoined, p.hidden_dim, p.input_dim);
  out.prev_state.cell = std::move(dc_prev);
  return out;
}

}  // namespace

std::string_view to_string(CellKind kind) {
  switch (kind) {
    case CellKind::gru: return "gru";
    case CellKind::rnn: return "rnn";
    case CellKind::lstm: return "lstm";
  }
  return "unknown";
}

CellKind parse_cell_kind(std::string_view name) {
  if (name == "gru" || name == "GRU") return CellKind::gru;
  if (name == "rnn" || name == "RNN") return CellKind::rnn;
  if (name == "lstm" || name == "LSTM") return CellKind::lstm;
  throw ConfigError("unknown cell kind '" + std::string(name) + "' (expected gru, rnn or lstm)");
}

std::size_t gate_count(CellKind kind) {
  switch (kind) {
    case CellKind::gru: return 3;
    case CellKind::rnn: return 1;
    case CellKind::lstm: return 4;
  }
  return 0;
}

template <typename T>
std::size_t BasicCellParams<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& w : weights) total += w.size();
  for (const auto& b : biases) total += b.size();
  return total;
}

template <typename T>
void BasicCellParams<T>::check() const {
  const std::size_t gates = gate_count(kind);
  if (weights.size() != gates || biases.size() != gates) {
    throw ConsistencyError("cell of kind " + std::string(to_string(kind)) + " needs " +
                           std::to_string(gates) + " gate tensors");
  }
  for (std::size_t g = 0; g < gates; ++g) {
    if (weights[g].rows() != hidden_dim || weights[g].cols() != hidden_dim + input_dim) {
      throw ConsistencyError("gate weight " + std::to_string(g) + " has shape " +
                             weights[g].shape_string());
    }
    if (biases[g].rows() != 1 || biases[g].cols() != hidden_dim) {
      throw ConsistencyError("gate bias " + std::to_string(g) + " has shape " +
                             biases[g].shape_string());
    }
  }
}

template <typename T>
BasicCellParams<T> make_cell(CellKind kind, std::size_t input_dim, std::size_t hidden_dim,
                             Rng& rng) {
  BasicCellParams<T> p = zero_cell<T>(kind, input_dim, hidden_dim);
  for (auto& w : p.weights) w = init_uniform<T>(hidden_dim, hidden_dim + input_dim, rng);
  return p;
}

template <typename T>
BasicCellParams<T> zero_cell(CellKind kind, std::size_t input_dim, std::size_t hidden_dim) {
  BasicCellParams<T> p;
  p.kind = kind;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  const std::size_t gates = gate_count(kind);
  p.weights.assign(gates, BasicMatrix<T>(hidden_dim, hidden_dim + input_dim));
  p.biases.assign(gates, BasicMatrix<T>(1, hidden_dim));
  return p;
}

template <typename T>
BasicCellState<T> zero_state(CellKind kind, std::size_t batch, std::size_t hidden_dim) {
  BasicCellState<T> s;
  s.hidden = BasicMatrix<T>(batch, hidden_dim);
  if (kind == CellKind::lstm) s.cell = BasicMatrix<T>(batch, hidden_dim);
  return s;
}

template <typename T>
StepResult<T> cell_forward(const BasicCellParams<T>& p, const BasicMatrix<T>& input,
                           const BasicCellState<T>& prev) {
  check_step_inputs(p, input, prev);
  switch (p.kind) {
    case CellKind::gru: return gru_forward(p, input, prev);
    case CellKind::rnn: return rnn_forward(p, input, prev);
    case CellKind::lstm: return lstm_forward(p, input, prev);
  }
  throw ConfigError("unknown cell kind");
}

template <typename T>
StepGradient<T> cell_backward(const BasicCellParams<T>& p, const BasicStepCache<T>& cache,
                              const BasicCellState<T>& upstream, BasicCellParams<T>& grads) {
  if (cache.kind != p.kind || cache.gates.size() != gate_count(p.kind)) {
    throw ConsistencyError("step cache was produced by a different cell kind");
  }
  if (cache.input.cols() != p.input_dim || cache.prev_hidden.cols() != p.hidden_dim) {
    throw ConsistencyError("step cache dimensions do not match the cell parameters");
  }
  if (grads.kind != p.kind || grads.weights.size() != p.weights.size()) {
    throw ConsistencyError("gradient accumulator does not match the cell parameters");
  }
  require_same_shape(upstream.hidden, cache.prev_hidden, "upstream hidden gradient");
  switch (p.kind) {
    case CellKind::gru: return gru_backward(p, cache, upstream.hidden, grads);
    case CellKind::rnn: return rnn_backward(p, cache, upstream.hidden, grads);
    case CellKind::lstm: return lstm_backward(p, cache, upstream, grads);
  }
  throw ConfigError("unknown cell kind");
}

template <typename T>
BasicCellState<T> cell_forward_gathered(const BasicCellParams<T>& p,
                                        const BasicCellState<T>& shared,
                                        const BasicMatrix<T>& inputs,
                                        std::span<const std::size_t> state_row,
                                        std::span<const std::size_t> input_row) {
  const std::size_t rows = state_row.size();
  const std::size_t d = p.hidden_dim;
  if (input_row.size() != rows) {
    throw ShapeError("cell_forward_gathered: " + std::to_string(state_row.size()) +
                     " state indices vs " + std::to_string(input_row.size()) + " input indices");
  }
  if (inputs.cols() != p.input_dim || shared.hidden.cols() != d) {
    throw ShapeError("cell_forward_gathered: inputs " + inputs.shape_string() + " or state " +
                     shared.hidden.shape_string() + " do not match the cell");
  }
  if (p.kind == CellKind::lstm) {
    require_same_shape(shared.cell, shared.hidden, "lstm cell state");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (state_row[i] >= shared.hidden.rows() || input_row[i] >= inputs.rows()) {
      throw BoundsError("cell_forward_gathered: row index out of range at " + std::to_string(i));
    }
  }

  const std::size_t gates = gate_count(p.kind);
  std::vector<BasicMatrix<T>> from_h(gates), from_x(gates);
  for (std::size_t g = 0; g < gates; ++g) {
    from_x[g] = gate_preactivation(inputs, column_block(p.weights[g], d, p.input_dim), p.biases[g]);
    // The GRU candidate sees r * h, which differs per output row.
    if (p.kind == CellKind::gru && g == 2) continue;
    from_h[g] = matmul_nt(shared.hidden, column_block(p.weights[g], 0, d));
  }
  auto pre = [&](std::size_t g, std::size_t i, std::size_t k) {
    return from_h[g](state_row[i], k) + from_x[g](input_row[i], k);
  };

  BasicCellState<T> out;
  out.hidden = BasicMatrix<T>(rows, d);
  switch (p.kind) {
    case CellKind::rnn:
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t k = 0; k < d; ++k) out.hidden(i, k) = std::tanh(pre(0, i, k));
      }
      break;
    case CellKind::lstm:
      out.cell = BasicMatrix<T>(rows, d);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
          const T c = sigmoid(pre(1, i, k)) * shared.cell(state_row[i], k) +
                      sigmoid(pre(0, i, k)) * std::tanh(pre(2, i, k));
          out.cell(i, k) = c;
          out.hidden(i, k) = sigmoid(pre(3, i, k)) * std::tanh(c);
        }
      }
      break;
    case CellKind::gru: {
      BasicMatrix<T> z(rows, d), rh(rows, d);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
          z(i, k) = sigmoid(pre(0, i, k));
          rh(i, k) = sigmoid(pre(1, i, k)) * shared.hidden(state_row[i], k);
        }
      }
      const BasicMatrix<T> cand_h = matmul_nt(rh, column_block(p.weights[2], 0, d));
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
          const T cand = std::tanh(cand_h(i, k) + from_x[2](input_row[i], k));
          const T h = shared.hidden(state_row[i], k);
          out.hidden(i, k) = (T{1} - z(i, k)) * h + z(i, k) * cand;
        }
      }
      break;
    }
  }
  return out;
}

template <typename T>
SequenceResult<T> sequence_forward(const BasicCellParams<T>& p,
                                   std::span<const BasicMatrix<T>> inputs,
                                   const BasicCellState<T>& initial) {
  if (inputs.empty()) throw ConfigError("sequence_forward needs at least one input step");
  SequenceResult<T> out;
  out.caches.reserve(inputs.size());
  BasicCellState<T> state = initial;
  for (const auto& x : inputs) {
    StepResult<T> step = cell_forward(p, x, state);
    state = std::move(step.state);
    out.caches.push_back(std::move(step.cache));
  }
  out.final_state = std::move(state);
  return out;
}

template <typename T>
SequenceGradient<T> sequence_backward(const BasicCellParams<T>& p,
                                      std::span<const BasicStepCache<T>> caches,
                                      const BasicCellState<T>& upstream_final,
                                      BasicCellParams<T>& grads) {
  if (caches.empty()) throw ConsistencyError("sequence_backward called with no cached steps");
  SequenceGradient<T> out;
  out.inputs.resize(caches.size());
  BasicCellState<T> upstream = upstream_final;
  for (std::size_t t = caches.size(); t-- > 0;) {
    StepGradient<T> step = cell_backward(p, caches[t], upstream, grads);
    out.inputs[t] = std::move(step.input);
    upstream = std::move(step.prev_state);
  }
  out.initial_state = std::move(upstream);
  return out;
}

#define SEGRNN_INSTANTIATE_CELLS(T)                                                          \
  template struct BasicCellParams<T>;                                                       \
  template BasicCellParams<T> make_cell<T>(CellKind, std::size_t, std::size_t, Rng&);       \
  template BasicCellParams<T> zero_cell<T>(CellKind, std::size_t, std::size_t);             \
  template BasicCellState<T> zero_state<T>(CellKind, std::size_t, std::size_t);             \
  template StepResult<T> cell_forward(const BasicCellParams<T>&, const BasicMatrix<T>&,     \
                                      const BasicCellState<T>&);                            \
  template StepGradient<T> cell_backward(const BasicCellParams<T>&, const BasicStepCache<T>&, \
                                         const BasicCellState<T>&, BasicCellParams<T>&);    \
  template BasicCellState<T> cell_forward_gathered(                                         \
      const BasicCellParams<T>&, const BasicCellState<T>&, const BasicMatrix<T>&,            \
      std::span<const std::size_t>, std::span<const std::size_t>);                          \
  template SequenceResult<T> sequence_forward(const BasicCellParams<T>&,                    \
                                              std::span<const BasicMatrix<T>>,              \
                                              const BasicCellState<T>&);                    \
  template SequenceGradient<T> sequence_backward(const BasicCellParams<T>&,                 \
                                                 std::span<const BasicStepCache<T>>,        \
                                                 const BasicCellState<T>&, BasicCellParams<T>&);

SEGRNN_INSTANTIATE_CELLS(double)
SEGRNN_INSTANTIATE_CELLS(float)
SEGRNN_INSTANTIATE_CELLS(long double)

#undef SEGRNN_INSTANTIATE_CELLS

}  // namespace segrnn
