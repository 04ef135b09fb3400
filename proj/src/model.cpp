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

#include "segrnn/model.hpp"

#include <sstream>

namespace segrnn {

namespace {

template <typename T>
BasicMatrix<T> linear(const BasicMatrix<T>& x, const BasicMatrix<T>& weight,
                      const BasicMatrix<T>& bias) {
  BasicMatrix<T> out = matmul_nt(x, weight);
  add_row_bias(out, bias);
  return out;
}

template <typename T>
void relu_in_place(BasicMatrix<T>& m) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!(m[i] > T{0})) m[i] = T{0};
  }
}

// Gradient of a ReLU output: zero where the forward output was clamped.
template <typename T>
void relu_backward_in_place(BasicMatrix<T>& grad, const BasicMatrix<T>& output) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(output[i] > T{0})) grad[i] = T{0};
  }
}

// Subtracts each row's last value; the removed values go to `anchors`.
template <typename T>
BasicMatrix<T> normalize_rows(const BasicMatrix<T>& inputs, std::vector<T>& anchors) {
  BasicMatrix<T> out(inputs.rows(), inputs.cols());
  anchors.resize(inputs.rows());
  for (std::size_t b = 0; b < inputs.rows(); ++b) {
    const auto row = inputs.row(b);
    anchors[b] = row.back();
    for (std::size_t t = 0; t < inputs.cols(); ++t) out(b, t) = row[t] - anchors[b];
  }
  return out;
}

template <typename T>
void add_anchors(BasicMatrix<T>& y, const std::vector<T>& anchors) {
  for (std::size_t b = 0; b < y.rows(); ++b) {
    for (std::size_t t = 0; t < y.cols(); ++t) y(b, t) += anchors[b];
  }
}

// Repeats every row block of `m` `times` times: result row j*rows + b = m row b.
template <typename T>
BasicMatrix<T> tile_rows(const BasicMatrix<T>& m, std::size_t times) {
  BasicMatrix<T> out(m.rows() * times, m.cols());
  for (std::size_t j = 0; j < times; ++j) {
    std::copy(m.values().begin(), m.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(j * m.size()));
  }
  return out;
}

// Sums the `times` stacked row blocks of m back into one block.
template <typename T>
BasicMatrix<T> fold_rows(const BasicMatrix<T>& m, std::size_t times) {
  const std::size_t rows = m.rows() / times;
  BasicMatrix<T> out(rows, m.cols());
  for (std::size_t j = 0; j < times; ++j) {
    const T* src = m.data() + j * rows * m.cols();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += src[i];
  }
  return out;
}

template <typename T>
BasicCellState<T> tile_state(const BasicCellState<T>& s, std::size_t times) {
  BasicCellState<T> out;
  out.hidden = tile_rows(s.hidden, times);
  if (!s.cell.empty()) out.cell = tile_rows(s.cell, times);
  return out;
}

void check_channels(std::span<const std::size_t> channels, std::size_t rows,
                    const ModelConfig& cfg) {
  if (channels.size() != rows) {
    throw ShapeError("got " + std::to_string(channels.size()) + " channel indices for " +
                     std::to_string(rows) + " rows");
  }
  for (const std::size_t c : channels) {
    if (c >= cfg.num_channels) {
      throw BoundsError("channel index " + std::to_string(c) + " out of range [0, " +
                        std::to_string(cfg.num_channels) + ")");
    }
  }
}

// Segments of a batch of normalized windows, stacked step-major.
template <typename T>
BasicMatrix<T> stack_segments(const BasicMatrix<T>& normalized, std::size_t seg_len) {
  const std::size_t batch = normalized.rows();
  const std::size_t n = normalized.cols() / seg_len;
  BasicMatrix<T> out(n * batch, seg_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < n; ++j) {
      const T* src = normalized.data() + b * normalized.cols() + j * seg_len;
      std::copy(src, src + seg_len, out.data() + (j * batch + b) * seg_len);
    }
  }
  return out;
}

template <typename T>
struct BatchEncoding {
  BasicMatrix<T> segments;
  BasicMatrix<T> projected;
  SequenceResult<T> sequence;
};

template <typename T>
BatchEncoding<T> encode_batch(const BasicMatrix<T>& normalized, const BasicSegRnnParams<T>& params,
                              const ModelConfig& cfg) {
  const std::size_t batch = normalized.rows();
  const std::size_t n = cfg.num_segments();
  BatchEncoding<T> enc;
  enc.segments = stack_segments(normalized, cfg.seg_len);
  enc.projected = linear(enc.segments, params.proj_weight, params.proj_bias);
  relu_in_place(enc.projected);
  std::vector<BasicMatrix<T>> steps;
  steps.reserve(n);
  for (std::size_t j = 0; j < n; ++j) steps.push_back(row_block(enc.projected, j * batch, batch));
  enc.sequence = sequence_forward<T>(params.cell, steps,
                                     zero_state<T>(cfg.cell, batch, cfg.hidden_dim));
  return enc;
}

// Writes segment rows (stacked step-major, `batch` rows per segment) into y.
template <typename T>
void scatter_segment(const BasicMatrix<T>& seg, std::size_t segment, std::size_t row_offset,
                     std::size_t seg_len, BasicMatrix<T>& y) {
  const std::size_t batch = y.rows();
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = seg.data() + (row_offset + b) * seg_len;
    std::copy(src, src + seg_len, y.data() + b * y.cols() + segment * seg_len);
  }
}

template <typename T>
BasicMatrix<T> gather_segment(const BasicMatrix<T>& y, std::size_t segment, std::size_t seg_len) {
  BasicMatrix<T> out(y.rows(), seg_len);
  for (std::size_t b = 0; b < y.rows(); ++b) {
    const T* src = y.data() + b * y.cols() + segment * seg_len;
    std::copy(src, src + seg_len, out.data() + b * seg_len);
  }
  return out;
}

template <typename T>
void require_rng(Mode mode, double rate, const Rng* rng) {
  if (mode == Mode::train && rate > 0.0 && rng == nullptr) {
    throw ConfigError("train-mode dropout requires a random stream");
  }
}

// Decoder output head: dropout then the prediction layer.
template <typename T>
BasicMatrix<T> prediction_head(const BasicMatrix<T>& hidden, const BasicSegRnnParams<T>& params,
                               const ModelConfig& cfg, Mode mode, Rng* rng, DecodeStep<T>& step) {
  DropoutResult<T> dr = dropout_with_mask(hidden, cfg.dropout, mode, rng);
  BasicMatrix<T> out = linear(dr.values, params.pred_weight, params.pred_bias);
  step.dropped = std::move(dr.values);
  step.mask = std::move(dr.mask);
  return out;
}

// Backward through prediction_head; returns d loss / d hidden.
template <typename T>
BasicMatrix<T> prediction_head_backward(const BasicMatrix<T>& d_out, const DecodeStep<T>& step,
                                        const BasicSegRnnParams<T>& params,
                                        BasicSegRnnParams<T>& grads) {
  accumulate_tn(d_out, step.dropped, grads.pred_weight);
  accumulate_column_sums(d_out, grads.pred_bias);
  BasicMatrix<T> d_hidden = matmul(d_out, params.pred_weight);
  if (!step.mask.empty()) {
    for (std::size_t i = 0; i < d_hidden.size(); ++i) d_hidden[i] *= step.mask[i];
  }
  return d_hidden;
}

}  // namespace

std::string_view to_string(DecodeMode mode) {
  return mode == DecodeMode::pmf ? "pmf" : "rmf";
}

DecodeMode parse_decode_mode(std::string_view name) {
  if (name == "pmf" || name == "PMF") return DecodeMode::pmf;
  if (name == "rmf" || name == "RMF") return DecodeMode::rmf;
  throw ConfigError("unknown decode mode '" + std::string(name) + "' (expected pmf or rmf)");
}

std::vector<std::string> ModelConfig::violations() const {
  std::vector<std::string> out;
  auto fail = [&](std::string msg) { out.push_back(std::move(msg)); };
  if (lookback == 0) fail("lookback must be >= 1");
  if (horizon == 0) fail("horizon must be >= 1");
  if (seg_len == 0) {
    fail("seg_len must be >= 1");
  } else {
    if (lookback % seg_len != 0) {
      fail("lookback " + std::to_string(lookback) + " is not divisible by seg_len " +
           std::to_string(seg_len));
    }
    if (horizon % seg_len != 0) {
      fail("horizon " + std::to_string(horizon) + " is not divisible by seg_len " +
           std::to_string(seg_len));
    }
  }
  if (hidden_dim < 2 || hidden_dim % 2 != 0) {
    fail("hidden_dim must be even and >= 2 (got " + std::to_string(hidden_dim) + ")");
  }
  if (num_channels == 0) fail("num_channels must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (use_channel_pe && num_channels == 1) {
    fail("channel positional embedding must be disabled for univariate data");
  }
  return out;
}

void ModelConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream msg;
  msg << "invalid model configuration:";
  for (const auto& s : v) msg << "\n  - " << s;
  throw ConfigError(msg.str());
}

std::string_view cell_tensor_name(CellKind kind, std::size_t gate, bool weight) {
  static constexpr std::string_view gru_w[] = {"cell.update.weight", "cell.reset.weight",
                                               "cell.candidate.weight"};
  static constexpr std::string_view gru_b[] = {"cell.update.bias", "cell.reset.bias",
                                               "cell.candidate.bias"};
  static constexpr std::string_view lstm_w[] = {"cell.input.weight", "cell.forget.weight",
                                                "cell.cell.weight", "cell.output.weight"};
  static constexpr std::string_view lstm_b[] = {"cell.input.bias", "cell.forget.bias",
                                                "cell.cell.bias", "cell.output.bias"};
  if (gate >= gate_count(kind)) throw BoundsError("gate index out of range");
  switch (kind) {
    case CellKind::gru: return weight ? gru_w[gate] : gru_b[gate];
    case CellKind::lstm: return weight ? lstm_w[gate] : lstm_b[gate];
    case CellKind::rnn: return weight ? "cell.hidden.weight" : "cell.hidden.bias";
  }
  return "cell.unknown";
}

template <typename T>
BasicSegRnnParams<T> zero_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.hidden_dim;
  BasicSegRnnParams<T> p;
  p.proj_weight = BasicMatrix<T>(d, cfg.seg_len);
  p.proj_bias = BasicMatrix<T>(1, d);
  p.cell = zero_cell<T>(cfg.cell, d, d);
  if (cfg.use_relative_pe) p.rp_table = BasicMatrix<T>(cfg.num_out_segments(), cfg.half_dim());
  if (cfg.use_channel_pe) p.cp_table = BasicMatrix<T>(cfg.num_channels, cfg.half_dim());
  p.pred_weight = BasicMatrix<T>(cfg.seg_len, d);
  p.pred_bias = BasicMatrix<T>(1, cfg.seg_len);
  return p;
}

template <typename T>
BasicSegRnnParams<T> init_params(const ModelConfig& cfg, Rng& rng) {
  BasicSegRnnParams<T> p = zero_params<T>(cfg);
  const std::size_t d = cfg.hidden_dim;
  p.proj_weight = init_uniform<T>(d, cfg.seg_len, rng);
  p.cell = make_cell<T>(cfg.cell, d, d, rng);
  if (cfg.use_relative_pe) p.rp_table = init_uniform<T>(cfg.num_out_segments(), cfg.half_dim(), rng);
  if (cfg.use_channel_pe) p.cp_table = init_uniform<T>(cfg.num_channels, cfg.half_dim(), rng);
  p.pred_weight = init_uniform<T>(cfg.seg_len, d, rng);
  return p;
}

template <typename T>
BasicSegRnnParams<T> zeros_like(const BasicSegRnnParams<T>& p) {
  BasicSegRnnParams<T> out = p;
  out.visit([](std::string_view, BasicMatrix<T>& m) { m.set_zero(); });
  return out;
}

template <typename T>
void check_shapes(const BasicSegRnnParams<T>& p, const ModelConfig& cfg) {
  const BasicSegRnnParams<T> expected = zero_params<T>(cfg);
  std::vector<std::pair<std::string, std::string>> want;
  expected.visit([&](std::string_view name, const BasicMatrix<T>& m) {
    want.emplace_back(std::string(name), m.shape_string());
  });
  std::size_t i = 0;
  bool mismatch = false;
  std::string detail;
  p.visit([&](std::string_view name, const BasicMatrix<T>& m) {
    if (mismatch) return;
    if (i >= want.size() || want[i].first != name || want[i].second != m.shape_string()) {
      mismatch = true;
      detail = "tensor '" + std::string(name) + "' has shape " + m.shape_string();
      if (i < want.size()) detail += ", expected '" + want[i].first + "' " + want[i].second;
    }
    ++i;
  });
  if (!mismatch && i != want.size()) {
    mismatch = true;
    detail = "expected " + std::to_string(want.size()) + " tensors, found " + std::to_string(i);
  }
  if (!mismatch && (p.cell.kind != cfg.cell)) {
    mismatch = true;
    detail = "cell kind does not match configuration";
  }
  if (mismatch) throw ShapeError("parameters do not match configuration: " + detail);
}

std::size_t count_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.hidden_dim;
  const std::size_t w = cfg.seg_len;
  std::size_t total = d * w + d;                          // projection
  total += gate_count(cfg.cell) * (d * (2 * d) + d);      // cell gates
  if (cfg.use_relative_pe) total += cfg.num_out_segments() * cfg.half_dim();
  if (cfg.use_channel_pe) total += cfg.num_channels * cfg.half_dim();
  total += w * d + w;                                     // prediction
  return total;
}

template <typename T>
std::size_t count_parameters(const BasicSegRnnParams<T>& p, const ModelConfig& cfg) {
  check_shapes(p, cfg);
  return p.parameter_count();
}

template <typename T>
Normalized<T> instance_normalize(std::span<const T> x) {
  if (x.empty()) throw ConfigError("instance_normalize: empty input window");
  Normalized<T> out;
  out.anchor.last_value = x.back();
  out.values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = x[i] - out.anchor.last_value;
  return out;
}

template <typename T>
std::vector<T> instance_denormalize(std::span<const T> y_norm, NormAnchor<T> anchor) {
  std::vector<T> out(y_norm.size());
  for (std::size_t i = 0; i < y_norm.size(); ++i) out[i] = y_norm[i] + anchor.last_value;
  return out;
}

template <typename T>
BasicMatrix<T> segment_partition(std::span<const T> x, std::size_t seg_len) {
  if (seg_len == 0 || x.size() % seg_len != 0) {
    throw ConfigError("segment_partition: length " + std::to_string(x.size()) +
                      " is not divisible by segment length " + std::to_string(seg_len));
  }
  return BasicMatrix<T>(x.size() / seg_len, seg_len, std::vector<T>(x.begin(), x.end()));
}

template <typename T>
EncodeResult<T> encode(std::span<const T> x_norm, const BasicSegRnnParams<T>& params,
                       const ModelConfig& cfg) {
  if (x_norm.size() != cfg.lookback) {
    throw ShapeError("encode: window length " + std::to_string(x_norm.size()) +
                     " does not match lookback " + std::to_string(cfg.lookback));
  }
  BasicMatrix<T> row(1, x_norm.size(), std::vector<T>(x_norm.begin(), x_norm.end()));
  BatchEncoding<T> enc = encode_batch(row, params, cfg);
  EncodeResult<T> out;
  out.iterations = enc.sequence.caches.size();
  out.state = std::move(enc.sequence.final_state);
  out.caches = std::move(enc.sequence.caches);
  out.projected = std::move(enc.projected);
  return out;
}

template <typename T>
BasicMatrix<T> build_pe(std::size_t segment, std::size_t channel,
                        const BasicSegRnnParams<T>& params, const ModelConfig& cfg) {
  if (segment >= cfg.num_out_segments()) {
    throw BoundsError("segment index " + std::to_string(segment) + " out of range [0, " +
                      std::to_string(cfg.num_out_segments()) + ")");
  }
  if (channel >= cfg.num_channels) {
    throw BoundsError("channel index " + std::to_string(channel) + " out of range [0, " +
                      std::to_string(cfg.num_channels) + ")");
  }
  const std::size_t half = cfg.half_dim();
  BasicMatrix<T> pe(1, cfg.hidden_dim);
  if (cfg.use_relative_pe) {
    std::copy_n(params.rp_table.row(segment).begin(), half, pe.data());
  }
  if (cfg.use_channel_pe) {
    std::copy_n(params.cp_table.row(channel).begin(), half, pe.data() + half);
  }
  return pe;
}

template <typename T>
DropoutResult<T> dropout_with_mask(const BasicMatrix<T>& v, double rate, Mode mode, Rng* rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return {v, {}};
  if (rng == nullptr) throw ConfigError("train-mode dropout requires a random stream");
  DropoutResult<T> out{BasicMatrix<T>(v.rows(), v.cols()), BasicMatrix<T>(v.rows(), v.cols())};
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T m = rng->uniform() < rate ? T{0} : keep_scale;
    out.mask[i] = m;
    out.values[i] = v[i] * m;
  }
  return out;
}

template <typename T>
DecodeTrace<T> decode_pmf(const BasicCellState<T>& state, std::span<const std::size_t> channels,
                          const BasicSegRnnParams<T>& params, const ModelConfig& cfg, Mode mode,
                          Rng* rng) {
  const std::size_t batch = state.hidden.rows();
  const std::size_t m = cfg.num_out_segments();
  const std::size_t half = cfg.half_dim();
  check_channels(channels, batch, cfg);
  require_rng<T>(mode, cfg.dropout, rng);

  // Row j*batch + b: embedding of segment j for sequence b.
  BasicMatrix<T> pe(m * batch, cfg.hidden_dim);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t b = 0; b < batch; ++b) {
      T* dst = pe.data() + (j * batch + b) * cfg.hidden_dim;
      if (cfg.use_relative_pe) std::copy_n(params.rp_table.row(j).begin(), half, dst);
      if (cfg.use_channel_pe) std::copy_n(params.cp_table.row(channels[b]).begin(), half, dst + half);
    }
  }

  DecodeTrace<T> trace;
  trace.steps.resize(1);
  DecodeStep<T>& step = trace.steps.front();
  StepResult<T> res = cell_forward(params.cell, pe, tile_state(state, m));
  const BasicMatrix<T> segs = prediction_head(res.state.hidden, params, cfg, mode, rng, step);
  step.cache = std::move(res.cache);

  trace.y_norm = BasicMatrix<T>(batch, cfg.horizon);
  for (std::size_t j = 0; j < m; ++j) scatter_segment(segs, j, j * batch, cfg.seg_len, trace.y_norm);
  return trace;
}

template <typename T>
DecodeTrace<T> decode_rmf(const BasicCellState<T>& state, const BasicMatrix<T>& first_input,
                          const BasicSegRnnParams<T>& params, const ModelConfig& cfg, Mode mode,
                          Rng* rng) {
  const std::size_t batch = state.hidden.rows();
  const std::size_t m = cfg.num_out_segments();
  require_same_shape(first_input.rows(), first_input.cols(), batch, cfg.hidden_dim,
                     "decode_rmf first input");
  require_rng<T>(mode, cfg.dropout, rng);

  DecodeTrace<T> trace;
  trace.steps.resize(m);
  trace.y_norm = BasicMatrix<T>(batch, cfg.horizon);
  BasicCellState<T> carry = state;
  BasicMatrix<T> input = first_input;
  for (std::size_t j = 0; j < m; ++j) {
    DecodeStep<T>& step = trace.steps[j];
    StepResult<T> res = cell_forward(params.cell, input, carry);
    BasicMatrix<T> seg = prediction_head(res.state.hidden, params, cfg, mode, rng, step);
    step.cache = std::move(res.cache);
    carry = std::move(res.state);
    scatter_segment(seg, j, 0, cfg.seg_len, trace.y_norm);
    if (j + 1 < m) {
      BasicMatrix<T> next = linear(seg, params.proj_weight, params.proj_bias);
      relu_in_place(next);
      trace.steps[j + 1].feedback_source = std::move(seg);
      trace.steps[j + 1].feedback_projected = next;
      input = std::move(next);
    }
  }
  return trace;
}

template <typename T>
ForwardOutput<T> forward(const BasicSegRnnParams<T>& params, const ModelConfig& cfg,
                         const BasicMatrix<T>& inputs, std::span<const std::size_t> channels,
                         Mode mode, Rng* rng) {
  if (inputs.cols() != cfg.lookback) {
    throw ShapeError("forward: inputs have " + std::to_string(inputs.cols()) +
                     " columns, lookback is " + std::to_string(cfg.lookback));
  }
  if (inputs.rows() == 0) throw ShapeError("forward: empty batch");
  const std::size_t batch = inputs.rows();
  check_channels(channels, batch, cfg);

  std::vector<T> anchors;
  const BasicMatrix<T> normalized = normalize_rows(inputs, anchors);

  ForwardOutput<T> out;
  ForwardTape<T>& tape = out.tape;
  tape.batch = batch;
  tape.channels.assign(channels.begin(), channels.end());
  tape.decode_mode = cfg.decode_mode;

  BatchEncoding<T> enc = encode_batch(normalized, params, cfg);
  if (cfg.decode_mode == DecodeMode::pmf) {
    tape.decode = decode_pmf(enc.sequence.final_state, channels, params, cfg, mode, rng);
  } else {
    const std::size_t last = cfg.num_segments() - 1;
    tape.decode = decode_rmf(enc.sequence.final_state, row_block(enc.projected, last * batch, batch),
                             params, cfg, mode, rng);
  }
  tape.segments = std::move(enc.segments);
  tape.projected = std::move(enc.projected);
  tape.encoder = std::move(enc.sequence.caches);

  out.prediction = tape.decode.y_norm;
  add_anchors(out.prediction, anchors);
  return out;
}

template <typename T>
BasicSegRnnParams<T> backward(const BasicSegRnnParams<T>& params, const ModelConfig& cfg,
                              const ForwardTape<T>& tape, const BasicMatrix<T>& d_prediction) {
  const std::size_t batch = tape.batch;
  const std::size_t m = cfg.num_out_segments();
  const std::size_t n = cfg.num_segments();
  const std::size_t d = cfg.hidden_dim;
  const std::size_t half = cfg.half_dim();
  require_same_shape(d_prediction.rows(), d_prediction.cols(), batch, cfg.horizon,
                     "backward: prediction gradient");
  if (tape.encoder.size() != n || tape.decode_mode != cfg.decode_mode) {
    throw ConsistencyError("forward tape does not match the model configuration");
  }

  BasicSegRnnParams<T> grads = zeros_like(params);
  // Denormalization adds a constant, so d y_norm == d prediction.
  BasicCellState<T> d_encoder_state = zero_state<T>(cfg.cell, batch, d);
  // Extra gradient on the projected last look-back segment (RMF first input).
  BasicMatrix<T> d_last_projected;

  if (tape.decode_mode == DecodeMode::pmf) {
    const DecodeStep<T>& step = tape.decode.steps.front();
    BasicMatrix<T> d_segs(m * batch, cfg.seg_len);
    for (std::size_t j = 0; j < m; ++j) {
      const BasicMatrix<T> g = gather_segment(d_prediction, j, cfg.seg_len);
      std::copy(g.values().begin(), g.values().end(),
                d_segs.values().begin() + static_cast<std::ptrdiff_t>(j * g.size()));
    }
    BasicCellState<T> upstream;
    upstream.hidden = prediction_head_backward(d_segs, step, params, grads);
    const StepGradient<T> sg = cell_backward(params.cell, step.cache, upstream, grads.cell);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = sg.input.data() + (j * batch + b) * d;
        if (cfg.use_relative_pe) {
          T* rp = grads.rp_table.data() + j * half;
          for (std::size_t k = 0; k < half; ++k) rp[k] += src[k];
        }
        if (cfg.use_channel_pe) {
          T* cp = grads.cp_table.data() + tape.channels[b] * half;
          for (std::size_t k = 0; k < half; ++k) cp[k] += src[half + k];
        }
      }
    }
    d_encoder_state.hidden = fold_rows(sg.prev_state.hidden, m);
    if (!sg.prev_state.cell.empty()) d_encoder_state.cell = fold_rows(sg.prev_state.cell, m);
  } else {
    BasicCellState<T> carry = zero_state<T>(cfg.cell, batch, d);
    // Pending gradient on the predicted segment j from later feedback steps.
    BasicMatrix<T> d_feedback(batch, cfg.seg_len);
    for (std::size_t j = m; j-- > 0;) {
      const DecodeStep<T>& step = tape.decode.steps[j];
      BasicMatrix<T> d_seg = gather_segment(d_prediction, j, cfg.seg_len);
      if (j + 1 < m) add_in_place(d_seg, d_feedback);
      BasicCellState<T> upstream;
      upstream.hidden = prediction_head_backward(d_seg, step, params, grads);
      add_in_place(upstream.hidden, carry.hidden);
      upstream.cell = carry.cell;
      StepGradient<T> sg = cell_backward(params.cell, step.cache, upstream, grads.cell);
      carry = std::move(sg.prev_state);
      if (j > 0) {
        BasicMatrix<T> d_pre = std::move(sg.input);
        relu_backward_in_place(d_pre, step.feedback_projected);
        accumulate_tn(d_pre, step.feedback_source, grads.proj_weight);
        accumulate_column_sums(d_pre, grads.proj_bias);
        d_feedback = matmul(d_pre, params.proj_weight);
      } else {
        d_last_projected = std::move(sg.input);
      }
    }
    d_encoder_state = std::move(carry);
  }

  SequenceGradient<T> enc_grad = sequence_backward<T>(params.cell, tape.encoder, d_encoder_state,
                                                      grads.cell);
  if (!d_last_projected.empty()) add_in_place(enc_grad.inputs.back(), d_last_projected);

  BasicMatrix<T> d_projected(n * batch, d);
  for (std::size_t j = 0; j < n; ++j) {
    std::copy(enc_grad.inputs[j].values().begin(), enc_grad.inputs[j].values().end(),
              d_projected.values().begin() + static_cast<std::ptrdiff_t>(j * batch * d));
  }
  relu_backward_in_place(d_projected, tape.projected);
  accumulate_tn(d_projected, tape.segments, grads.proj_weight);
  accumulate_column_sums(d_projected, grads.proj_bias);
  return grads;
}

template <typename T>
BasicMatrix<T> predict_batch(const BasicSegRnnParams<T>& params, const ModelConfig& cfg,
                             const BasicMatrix<T>& inputs, std::span<const std::size_t> channels) {
  if (cfg.decode_mode == DecodeMode::rmf || inputs.cols() != cfg.lookback || inputs.rows() == 0) {
    return forward(params, cfg, inputs, channels, Mode::eval, nullptr).prediction;
  }
  const std::size_t batch = inputs.rows();
  const std::size_t m = cfg.num_out_segments();
  check_channels(channels, batch, cfg);
  std::vector<T> anchors;
  const BasicMatrix<T> normalized = normalize_rows(inputs, anchors);
  const BatchEncoding<T> enc = encode_batch(normalized, params, cfg);

  // Distinct embeddings: row j * k + c for segment j and channel slot c.
  const std::size_t k = cfg.use_channel_pe ? cfg.num_channels : 1;
  const std::size_t half = cfg.half_dim();
  BasicMatrix<T> table(m * k, cfg.hidden_dim);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t c = 0; c < k; ++c) {
      T* dst = table.data() + (j * k + c) * cfg.hidden_dim;
      if (cfg.use_relative_pe) std::copy_n(params.rp_table.row(j).begin(), half, dst);
      if (cfg.use_channel_pe) std::copy_n(params.cp_table.row(c).begin(), half, dst + half);
    }
  }
  std::vector<std::size_t> state_row(m * batch), input_row(m * batch);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t b = 0; b < batch; ++b) {
      state_row[j * batch + b] = b;
      input_row[j * batch + b] = j * k + (cfg.use_channel_pe ? channels[b] : 0);
    }
  }
  const BasicCellState<T> h =
      cell_forward_gathered(params.cell, enc.sequence.final_state, table, state_row, input_row);
  const BasicMatrix<T> segs = linear(h.hidden, params.pred_weight, params.pred_bias);
  BasicMatrix<T> out(batch, cfg.horizon);
  for (std::size_t j = 0; j < m; ++j) scatter_segment(segs, j, j * batch, cfg.seg_len, out);
  add_anchors(out, anchors);
  return out;
}

template <typename T>
std::vector<T> predict(std::span<const T> x, std::size_t channel,
                       const BasicSegRnnParams<T>& params, const ModelConfig& cfg, Mode mode,
                       Rng* rng) {
  if (x.size() != cfg.lookback) {
    throw ShapeError("predict: window length " + std::to_string(x.size()) +
                     " does not match lookback " + std::to_string(cfg.lookback));
  }
  const BasicMatrix<T> row(1, x.size(), std::vector<T>(x.begin(), x.end()));
  const std::size_t channels[] = {channel};
  return forward(params, cfg, row, channels, mode, rng).prediction.to_vector();
}

#define SEGRNN_INSTANTIATE_MODEL(T)                                                           \
  template BasicSegRnnParams<T> init_params<T>(const ModelConfig&, Rng&);                    \
  template BasicSegRnnParams<T> zero_params<T>(const ModelConfig&);                          \
  template BasicSegRnnParams<T> zeros_like(const BasicSegRnnParams<T>&);                     \
  template void check_shapes(const BasicSegRnnParams<T>&, const ModelConfig&);              \
  template std::size_t count_parameters(const BasicSegRnnParams<T>&, const ModelConfig&);    \
  template Normalized<T> instance_normalize(std::span<const T>);                             \
  template std::vector<T> instance_denormalize(std::span<const T>, NormAnchor<T>);           \
  template BasicMatrix<T> segment_partition(std::span<const T>, std::size_t);                \
  template EncodeResult<T> encode(std::span<const T>, const BasicSegRnnParams<T>&,           \
                                  const ModelConfig&);                                       \
  template BasicMatrix<T> build_pe(std::size_t, std::size_t, const BasicSegRnnParams<T>&,    \
                                   const ModelConfig&);                                      \
  template DropoutResult<T> dropout_with_mask(const BasicMatrix<T>&, double, Mode, Rng*);    \
  template DecodeTrace<T> decode_pmf(const BasicCellState<T>&, std::span<const std::size_t>, \
                                     const BasicSegRnnParams<T>&, const ModelConfig&, Mode,  \
                                     Rng*);                                                  \
  template DecodeTrace<T> decode_rmf(const BasicCellState<T>&, const BasicMatrix<T>&,       \
                                     const BasicSegRnnParams<T>&, const ModelConfig&, Mode,  \
                                     Rng*);                                                  \
  template ForwardOutput<T> forward(const BasicSegRnnParams<T>&, const ModelConfig&,         \
                                    const BasicMatrix<T>&, std::span<const std::size_t>,     \
                                    Mode, Rng*);                                             \
  template BasicSegRnnParams<T> backward(const BasicSegRnnParams<T>&, const ModelConfig&,    \
                                         const ForwardTape<T>&, const BasicMatrix<T>&);      \
  template BasicMatrix<T> predict_batch(const BasicSegRnnParams<T>&, const ModelConfig&,     \
                                        const BasicMatrix<T>&, std::span<const std::size_t>); \
  template std::vector<T> predict(std::span<const T>, std::size_t,                           \
                                  const BasicSegRnnParams<T>&, const ModelConfig&, Mode, Rng*);

SEGRNN_INSTANTIATE_MODEL(double)
SEGRNN_INSTANTIATE_MODEL(float)
SEGRNN_INSTANTIATE_MODEL(long double)

#undef SEGRNN_INSTANTIATE_MODEL

}  // namespace segrnn
