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

#include "segrnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

namespace segrnn {

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  if (epochs == 0) out.emplace_back("epochs must be >= 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) out.emplace_back("base_lr must be positive");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) out.emplace_back("lr_decay must lie in (0, 1]");
  if (decay_start_epoch == 0) out.emplace_back("decay_start_epoch must be >= 1");
  if (patience == 0) out.emplace_back("patience must be >= 1");
  if (patience > epochs) out.emplace_back("patience must not exceed epochs");
  if (batch_size == 0) out.emplace_back("batch_size must be >= 1");
  if (eval_batch == 0) out.emplace_back("eval_batch must be >= 1");
  if (clip_norm && !(*clip_norm > 0.0)) out.emplace_back("clip_norm must be positive when set");
  return out;
}

void TrainConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid training config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

template <typename T>
double mae_loss(const BasicMatrix<T>& pred, const BasicMatrix<T>& target) {
  require_same_shape(pred, target, "mae_loss");
  if (pred.empty()) throw ShapeError("mae_loss of empty matrices");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s += std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
  }
  return s / static_cast<double>(pred.size());
}

template <typename T>
Metrics metrics(const BasicMatrix<T>& pred, const BasicMatrix<T>& target) {
  require_same_shape(pred, target, "metrics");
  if (pred.empty()) throw ShapeError("metrics of empty matrices");
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    se += d * d;
    ae += std::abs(d);
  }
  const auto n = static_cast<double>(pred.size());
  return {se / n, ae / n};
}

template <typename T>
GradientResult<T> compute_gradients(const BasicMatrix<T>& x, const BasicMatrix<T>& y,
                                    std::span<const std::size_t> channels,
                                    const BasicSegRnnParams<T>& params, const ModelConfig& cfg,
                                    Mode mode, Rng* rng) {
  if (x.rows() == 0) throw ConfigError("compute_gradients needs a non-empty batch");
  if (y.rows() != x.rows() || y.cols() != cfg.horizon) {
    throw ShapeError("targets " + y.shape_string() + " do not match " +
                     std::to_string(x.rows()) + " windows of horizon " +
                     std::to_string(cfg.horizon));
  }
  auto out = forward(params, cfg, x, channels, mode, rng);
  GradientResult<T> result;
  result.loss = mae_loss(out.prediction, y);
  BasicMatrix<T> d_pred(y.rows(), y.cols());
  const T scale = T{1} / static_cast<T>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T diff = out.prediction[i] - y[i];
    d_pred[i] = diff > T{0} ? scale : (diff < T{0} ? -scale : T{0});
  }
  result.grads = backward(params, cfg, out.tape, d_pred);
  return result;
}

GradientResult<double> compute_gradients(std::span<const WindowSample> batch,
                                         const SegRnnParams& params, const ModelConfig& cfg,
                                         Mode mode, Rng* rng) {
  if (batch.empty()) throw ConfigError("compute_gradients needs a non-empty batch");
  Matrix x(batch.size(), cfg.lookback);
  Matrix y(batch.size(), cfg.horizon);
  std::vector<std::size_t> channels(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    if (s.x.size() != cfg.lookback || s.y.size() != cfg.horizon) {
      throw ShapeError("sample " + std::to_string(i) + " has lengths " +
                       std::to_string(s.x.size()) + "/" + std::to_string(s.y.size()) +
                       ", config expects " + std::to_string(cfg.lookback) + "/" +
                       std::to_string(cfg.horizon));
    }
    std::copy(s.x.begin(), s.x.end(), x.row(i).begin());
    std::copy(s.y.begin(), s.y.end(), y.row(i).begin());
    channels[i] = s.channel;
  }
  return compute_gradients<double>(x, y, channels, params, cfg, mode, rng);
}

template <typename T>
void adam_step(BasicSegRnnParams<T>& params, const BasicSegRnnParams<T>& grads,
               AdamState<T>& state, double lr) {
  using S = AdamState<T>;
  std::vector<BasicMatrix<T>*> p, m, v;
  std::vector<const BasicMatrix<T>*> g;
  params.visit([&](std::string_view, BasicMatrix<T>& t) { p.push_back(&t); });
  state.m.visit([&](std::string_view, BasicMatrix<T>& t) { m.push_back(&t); });
  state.v.visit([&](std::string_view, BasicMatrix<T>& t) { v.push_back(&t); });
  grads.visit([&](std::string_view, const BasicMatrix<T>& t) { g.push_back(&t); });
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw ShapeError("adam_step: gradient/state tensor count differs from parameters");
  }
  for (std::size_t k = 0; k < p.size(); ++k) {
    require_same_shape(*p[k], *g[k], "adam_step gradient");
    require_same_shape(*p[k], *m[k], "adam_step first moment");
    require_same_shape(*p[k], *v[k], "adam_step second moment");
  }

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(S::beta1, t);
  const double c2 = 1.0 - std::pow(S::beta2, t);
  for (std::size_t k = 0; k < p.size(); ++k) {
    T* pw = p[k]->data();
    T* mw = m[k]->data();
    T* vw = v[k]->data();
    const T* gw = g[k]->data();
    for (std::size_t i = 0; i < p[k]->size(); ++i) {
      const double gi = static_cast<double>(gw[i]);
      const double mi = S::beta1 * static_cast<double>(mw[i]) + (1.0 - S::beta1) * gi;
      const double vi = S::beta2 * static_cast<double>(vw[i]) + (1.0 - S::beta2) * gi * gi;
      mw[i] = static_cast<T>(mi);
      vw[i] = static_cast<T>(vi);
      const double step = lr * (mi / c1) / (std::sqrt(vi / c2) + S::epsilon);
      pw[i] = static_cast<T>(static_cast<double>(pw[i]) - step);
    }
  }
}

template <typename T>
double clip_global_norm(BasicSegRnnParams<T>& grads, double max_norm) {
  double sq = 0.0;
  grads.visit([&](std::string_view, const BasicMatrix<T>& t) {
    for (const T x : t.values()) sq += static_cast<double>(x) * static_cast<double>(x);
  });
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto s = static_cast<T>(max_norm / norm);
    grads.visit([&](std::string_view, BasicMatrix<T>& t) {
      for (T& x : t.values()) x *= s;
    });
  }
  return norm;
}

double lr_at(std::size_t epoch, const TrainConfig& tc) {
  if (epoch <= tc.decay_start_epoch) return tc.base_lr;
  return tc.base_lr * std::pow(tc.lr_decay, static_cast<double>(epoch - tc.decay_start_epoch));
}

double TrainHistory::best_val_loss() const {
  if (best_epoch == 0 || best_epoch > epochs.size()) {
    return std::numeric_limits<double>::infinity();
  }
  return epochs[best_epoch - 1].val_loss;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "epoch,train_loss,val_loss,lr,seconds\n" << std::setprecision(17);
  for (const auto& e : history.epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << ',' << e.seconds
        << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

namespace {

struct EvalSums {
  double se = 0.0;
  double ae = 0.0;
  std::size_t count = 0;
};

template <typename T>
EvalSums eval_sums(const WindowDataset& data, const BasicSegRnnParams<T>& params,
                   const ModelConfig& cfg, std::size_t eval_batch) {
  EvalSums sums;
  BasicMatrix<T> x, y;
  std::vector<std::size_t> channels, idx;
  for (std::size_t begin = 0; begin < data.size(); begin += eval_batch) {
    const std::size_t n = std::min(eval_batch, data.size() - begin);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), begin);
    data.fill_batch<T>(idx, x, y, channels);
    const auto pred = predict_batch(params, cfg, x, channels);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = static_cast<double>(pred[i]) - static_cast<double>(y[i]);
      sums.se += d * d;
      sums.ae += std::abs(d);
    }
    sums.count += pred.size();
  }
  return sums;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

template <typename T>
Metrics evaluate(const WindowDataset& data, const BasicSegRnnParams<T>& params,
                 const ModelConfig& cfg, std::size_t eval_batch) {
  if (data.empty()) throw ConfigError("cannot evaluate on an empty dataset");
  if (eval_batch == 0) throw ConfigError("eval_batch must be >= 1");
  const auto s = eval_sums(data, params, cfg, eval_batch);
  const auto n = static_cast<double>(s.count);
  return {s.se / n, s.ae / n};
}

Metrics repeat_last_baseline(const WindowDataset& data) {
  if (data.empty()) throw ConfigError("cannot evaluate on an empty dataset");
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto s = data.sample(i);
    const double last = s.x.back();
    for (const double v : s.y) {
      se += (v - last) * (v - last);
      ae += std::abs(v - last);
    }
  }
  const auto n = static_cast<double>(data.size() * data.horizon());
  return {se / n, ae / n};
}

template <typename T>
TrainResult<T> train(const WindowDataset& train_set, const WindowDataset& val_set,
                     BasicSegRnnParams<T> params, const ModelConfig& cfg, const TrainConfig& tc,
                     const EpochCallback& on_epoch) {
  tc.validate();
  cfg.validate();
  check_shapes(params, cfg);
  if (train_set.empty() || val_set.empty()) {
    throw ConfigError("training needs non-empty train and validation splits");
  }
  for (const WindowDataset* d : {&train_set, &val_set}) {
    if (d->lookback() != cfg.lookback || d->horizon() != cfg.horizon) {
      throw ConfigError("dataset windows do not match the model's lookback/horizon");
    }
    if (d->channels() > cfg.num_channels) {
      throw ConfigError("dataset has more channels than the model's channel table");
    }
  }

  const Rng root(tc.seed);
  Rng shuffle_rng = root.derive(1);
  Rng dropout_rng = root.derive(2);

  TrainResult<T> result;
  result.best_params = params;
  auto adam = make_adam_state(params);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  BasicMatrix<T> x, y;
  std::vector<std::size_t> channels;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, tc);
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
      const std::size_t n = std::min(tc.batch_size, order.size() - begin);
      train_set.fill_batch<T>(std::span(order).subspan(begin, n), x, y, channels);
      auto g = compute_gradients(x, y, channels, params, cfg, Mode::train, &dropout_rng);
      if (tc.clip_norm) clip_global_norm(g.grads, *tc.clip_norm);
      adam_step(params, g.grads, adam, lr);
      loss_sum += g.loss;
      ++batches;
    }

    const auto val = eval_sums(val_set, params, cfg, tc.eval_batch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_loss = val.ae / static_cast<double>(val.count);
    rec.val_mse = val.se / static_cast<double>(val.count);
    rec.lr = lr;
    rec.seconds = seconds_since(start);
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < best) {
      best = rec.val_loss;
      result.history.best_epoch = epoch;
      result.best_params = params;
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      result.history.stopped_early = epoch < tc.epochs;
      break;
    }
  }
  return result;
}

GradCheckResult grad_check_detailed(const SegRnnParams& params, const WindowSample& sample,
                                    const ModelConfig& cfg, double eps) {
  if (cfg.dropout != 0.0) throw ConfigError("grad_check requires dropout 0");
  if (!(eps > 0.0)) throw ConfigError("grad_check step must be positive");
  const std::span<const WindowSample> one(&sample, 1);
  const auto analytic = compute_gradients(one, params, cfg, Mode::eval, nullptr);

  // The difference quotient is taken in extended precision so its rounding
  // noise stays far below the tolerance even where the gradient is zero.
  using Wide = long double;
  auto probe = cast_params<Wide>(params);
  std::vector<std::pair<std::string_view, BasicMatrix<Wide>*>> tensors;
  probe.visit([&](std::string_view name, BasicMatrix<Wide>& t) { tensors.emplace_back(name, &t); });
  std::vector<const Matrix*> grads;
  analytic.grads.visit([&](std::string_view, const Matrix& t) { grads.push_back(&t); });

  const auto x = BasicMatrix<Wide>::row_vector({sample.x.begin(), sample.x.end()});
  const auto y = BasicMatrix<Wide>::row_vector({sample.y.begin(), sample.y.end()});
  const std::size_t channel = sample.channel;
  auto loss = [&] {
    const auto pred = predict_batch(probe, cfg, x, std::span(&channel, 1));
    Wide s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - y[i]);
    return s / static_cast<Wide>(pred.size());
  };

  GradCheckResult out;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    BasicMatrix<Wide>& t = *tensors[k].second;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const Wide saved = t[i];
      t[i] = saved + static_cast<Wide>(eps);
      const Wide up = loss();
      t[i] = saved - static_cast<Wide>(eps);
      const Wide down = loss();
      t[i] = saved;
      const auto fd = static_cast<double>((up - down) / (2 * static_cast<Wide>(eps)));
      const double a = (*grads[k])[i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
      ++out.checked;
      if (rel > out.max_relative_error) {
        out.max_relative_error = rel;
        out.worst_tensor = std::string(tensors[k].first);
        out.worst_index = i;
      }
    }
  }
  return out;
}

double grad_check(const SegRnnParams& params, const WindowSample& sample, const ModelConfig& cfg,
                  double eps) {
  return grad_check_detailed(params, sample, cfg, eps).max_relative_error;
}

GradCheckCase random_grad_check_case(Rng& rng, CellKind cell, DecodeMode mode) {
  GradCheckCase c;
  ModelConfig& cfg = c.cfg;
  cfg.seg_len = rng.below(2) == 0 ? 2 : 4;
  cfg.lookback = cfg.seg_len * (1 + rng.below(16 / cfg.seg_len));
  cfg.horizon = cfg.seg_len * (1 + rng.below(8 / cfg.seg_len));
  cfg.hidden_dim = rng.below(2) == 0 ? 4 : 8;
  cfg.cell = cell;
  cfg.decode_mode = mode;
  cfg.dropout = 0.0;
  cfg.num_channels = 1 + rng.below(2);
  cfg.use_channel_pe = cfg.num_channels > 1;
  cfg.use_relative_pe = true;
  cfg.validate();

  c.params = init_params<double>(cfg, rng);
  c.params.visit([&](std::string_view, Matrix& t) {
    for (double& v : t.values()) v = rng.uniform(-0.5, 0.5);
  });
  c.sample.x.resize(cfg.lookback);
  c.sample.y.resize(cfg.horizon);
  for (double& v : c.sample.x) v = rng.normal();
  for (double& v : c.sample.y) v = c.sample.x.back() + rng.normal();
  c.sample.channel = rng.below(cfg.num_channels);
  return c;
}

#define SEGRNN_INSTANTIATE_TRAINING(T)                                                          \
  template double mae_loss<T>(const BasicMatrix<T>&, const BasicMatrix<T>&);                    \
  template Metrics metrics<T>(const BasicMatrix<T>&, const BasicMatrix<T>&);                    \
  template GradientResult<T> compute_gradients<T>(                                              \
      const BasicMatrix<T>&, const BasicMatrix<T>&, std::span<const std::size_t>,               \
      const BasicSegRnnParams<T>&, const ModelConfig&, Mode, Rng*);                             \
  template void adam_step<T>(BasicSegRnnParams<T>&, const BasicSegRnnParams<T>&,                \
                             AdamState<T>&, double);                                            \
  template double clip_global_norm<T>(BasicSegRnnParams<T>&, double);                           \
  template TrainResult<T> train<T>(const WindowDataset&, const WindowDataset&,                  \
                                   BasicSegRnnParams<T>, const ModelConfig&, const TrainConfig&, \
                                   const EpochCallback&);                                       \
  template Metrics evaluate<T>(const WindowDataset&, const BasicSegRnnParams<T>&,               \
                               const ModelConfig&, std::size_t);

SEGRNN_INSTANTIATE_TRAINING(double)
SEGRNN_INSTANTIATE_TRAINING(float)

}  // namespace segrnn
