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

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "segrnn/training.hpp"

using namespace segrnn;

namespace {

ModelConfig small(std::size_t L, std::size_t H, std::size_t w, std::size_t d, std::size_t C = 1) {
  ModelConfig cfg;
  cfg.lookback = L;
  cfg.horizon = H;
  cfg.seg_len = w;
  cfg.hidden_dim = d;
  cfg.num_channels = C;
  cfg.use_channel_pe = C > 1;
  cfg.dropout = 0.0;
  return cfg;
}

SegRnnParams random_params(const ModelConfig& cfg, Rng& rng) {
  SegRnnParams p = init_params<double>(cfg, rng);
  p.visit([&](std::string_view, Matrix& t) {
    for (double& v : t.values()) v = rng.uniform(-0.5, 0.5);
  });
  return p;
}

WindowSample random_sample(const ModelConfig& cfg, std::size_t channel, Rng& rng) {
  WindowSample s;
  s.channel = channel;
  for (std::size_t i = 0; i < cfg.lookback; ++i) s.x.push_back(rng.normal());
  for (std::size_t i = 0; i < cfg.horizon; ++i) s.y.push_back(s.x.back() + rng.normal());
  return s;
}

/// Single-sample MAE through predict in extended precision.
long double loss_ld(const BasicSegRnnParams<long double>& p, const ModelConfig& cfg,
                    const WindowSample& s) {
  const std::vector<long double> x(s.x.begin(), s.x.end());
  const auto pred = predict<long double>(x, s.channel, p, cfg, Mode::eval, nullptr);
  long double sum = 0.0L;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - s.y[i]);
  return sum / static_cast<long double>(pred.size());
}

Matrix sine_series(std::size_t rows, std::size_t channels) {
  Matrix m(rows, channels);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double t = static_cast<double>(r);
      m(r, c) = std::sin(2.0 * std::numbers::pi * t / 24.0 + static_cast<double>(c)) +
                0.3 * std::sin(2.0 * std::numbers::pi * t / 7.0);
    }
  }
  return m;
}

}  // namespace

TEST_CASE("mae and metrics on hand values") {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{0, 2}, {5, 4}};
  CHECK(mae_loss(a, b) == doctest::Approx(0.75));
  CHECK(mae_loss(a, a) == 0.0);
  const auto m = metrics(Matrix{{3.0}}, Matrix{{0.0}});
  CHECK(m.mse == 9.0);
  CHECK(m.mae == 3.0);
  CHECK_THROWS_AS(mae_loss(Matrix(1, 2), Matrix(2, 1)), ShapeError);

  Rng rng(1);
  Matrix p(7, 5), t(7, 5);
  for (double& v : p.values()) v = rng.normal();
  for (double& v : t.values()) v = rng.normal();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - t[i]);
  CHECK(mae_loss(p, t) == doctest::Approx(sum / 35.0).epsilon(1e-14));
}

TEST_CASE("zero loss gives zero gradients") {
  const auto cfg = small(8, 4, 4, 4);
  const auto z = zero_params<double>(cfg);
  WindowSample s;
  s.x.assign(8, 1.25);
  s.y.assign(4, 1.25);
  const std::vector<WindowSample> batch{s};
  const auto g = compute_gradients(batch, z, cfg, Mode::eval);
  CHECK(g.loss == 0.0);
  g.grads.visit([](std::string_view, const Matrix& t) {
    for (const double v : t.values()) CHECK(v == 0.0);
  });
}

TEST_CASE("analytic gradients match an independent finite-difference oracle") {
  Rng rng(2);
  for (const auto cell : {CellKind::gru, CellKind::rnn, CellKind::lstm}) {
    for (const auto mode : {DecodeMode::pmf, DecodeMode::rmf}) {
      auto cfg = small(8, 6, 2, 4, 2);
      cfg.cell = cell;
      cfg.decode_mode = mode;
      const auto p = random_params(cfg, rng);
      const auto s = random_sample(cfg, 1, rng);
      const std::vector<WindowSample> batch{s};
      const auto g = compute_gradients(batch, p, cfg, Mode::eval);

      std::vector<const Matrix*> grads;
      g.grads.visit([&](std::string_view, const Matrix& t) { grads.push_back(&t); });
      auto pl = cast_params<long double>(p);
      std::vector<BasicMatrix<long double>*> tensors;
      pl.visit([&](std::string_view, BasicMatrix<long double>& t) { tensors.push_back(&t); });
      REQUIRE(tensors.size() == grads.size());

      const long double eps = 1e-6L;
      double worst = 0.0;
      for (std::size_t k = 0; k < tensors.size(); ++k) {
        for (std::size_t i = 0; i < tensors[k]->size(); i += 3) {
          long double& v = tensors[k]->values()[i];
          const long double keep = v;
          v = keep + eps;
          const long double up = loss_ld(pl, cfg, s);
          v = keep - eps;
          const long double down = loss_ld(pl, cfg, s);
          v = keep;
          const double fd = static_cast<double>((up - down) / (2.0L * eps));
          const double an = grads[k]->values()[i];
          worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
        }
      }
      CAPTURE(to_string(cell));
      CAPTURE(to_string(mode));
      CHECK(worst <= 1e-4);
    }
  }
}

TEST_CASE("grad_check over random small configurations") {
  Rng rng(3);
  for (const auto cell : {CellKind::gru, CellKind::rnn, CellKind::lstm}) {
    for (const auto mode : {DecodeMode::pmf, DecodeMode::rmf}) {
      for (int trial = 0; trial < 3; ++trial) {
        const auto c = random_grad_check_case(rng, cell, mode);
        const auto r = grad_check_detailed(c.params, c.sample, c.cfg, 1e-5);
        CAPTURE(r.worst_tensor);
        CHECK(r.max_relative_error <= 1e-4);
        CHECK(r.checked == c.params.parameter_count());
      }
    }
  }
}

TEST_CASE("grad_check on the single-segment degenerate case") {
  const auto cfg = small(4, 4, 4, 4);
  Rng rng(4);
  const auto p = random_params(cfg, rng);
  const auto s = random_sample(cfg, 0, rng);
  const double coarse = grad_check(p, s, cfg, 1e-5);
  const double fine = grad_check(p, s, cfg, 5e-6);
  CHECK(coarse <= 1e-6);
  CHECK(fine <= 1e-6);
  auto with_dropout = cfg;
  with_dropout.dropout = 0.1;
  CHECK_THROWS_AS(grad_check(p, s, with_dropout, 1e-5), ConfigError);
}

TEST_CASE("a duplicated batch has the same mean loss and gradient") {
  const auto cfg = small(8, 8, 4, 6);
  Rng rng(5);
  const auto p = random_params(cfg, rng);
  const auto s = random_sample(cfg, 0, rng);
  const std::vector<WindowSample> one{s}, two{s, s};
  const auto a = compute_gradients(one, p, cfg, Mode::eval);
  const auto b = compute_gradients(two, p, cfg, Mode::eval);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
  std::vector<const Matrix*> ga, gb;
  a.grads.visit([&](std::string_view, const Matrix& t) { ga.push_back(&t); });
  b.grads.visit([&](std::string_view, const Matrix& t) { gb.push_back(&t); });
  for (std::size_t k = 0; k < ga.size(); ++k) {
    for (std::size_t i = 0; i < ga[k]->size(); ++i) {
      CHECK(std::abs((*ga[k])[i] - (*gb[k])[i]) <= 1e-14);
    }
  }
}

TEST_CASE("adam step values") {
  const auto cfg = small(4, 4, 4, 2);
  auto p = zero_params<double>(cfg);
  auto state = make_adam_state(p);
  auto g = zeros_like(p);

  adam_step(p, g, state, 0.1);
  CHECK(state.t == 1);
  p.visit([](std::string_view, const Matrix& t) {
    for (const double v : t.values()) CHECK(v == 0.0);
  });

  auto q = zero_params<double>(cfg);
  auto fresh = make_adam_state(q);
  g.pred_bias(0, 0) = 1.0;
  adam_step(q, g, fresh, 0.1);
  CHECK(q.pred_bias(0, 0) == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(q.pred_bias(0, 1) == 0.0);

  // Identical starting points and gradients evolve identically.
  auto r = zero_params<double>(cfg);
  auto r_state = make_adam_state(r);
  auto q2 = zero_params<double>(cfg);
  auto q2_state = make_adam_state(q2);
  Rng rng(6);
  for (int step = 0; step < 5; ++step) {
    auto grads = zeros_like(r);
    grads.visit([&](std::string_view, Matrix& t) {
      for (double& v : t.values()) v = rng.normal();
    });
    adam_step(r, grads, r_state, 0.01);
    adam_step(q2, grads, q2_state, 0.01);
  }
  std::vector<const Matrix*> a, b;
  r.visit([&](std::string_view, const Matrix& t) { a.push_back(&t); });
  q2.visit([&](std::string_view, const Matrix& t) { b.push_back(&t); });
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(*a[k] == *b[k]);

  auto other = zero_params<double>(small(4, 4, 4, 4));
  CHECK_THROWS_AS(adam_step(other, g, fresh, 0.1), ShapeError);
}

TEST_CASE("global norm clipping") {
  const auto cfg = small(4, 4, 4, 2);
  auto g = zero_params<double>(cfg);
  g.pred_bias(0, 0) = 3.0;
  g.proj_bias(0, 1) = 4.0;
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g.pred_bias(0, 0) == doctest::Approx(0.6));
  CHECK(g.proj_bias(0, 1) == doctest::Approx(0.8));
  CHECK(clip_global_norm(g, 10.0) == doctest::Approx(1.0));
  CHECK(g.pred_bias(0, 0) == doctest::Approx(0.6));
}

TEST_CASE("learning rate schedule") {
  TrainConfig tc;
  tc.base_lr = 0.001;
  CHECK(lr_at(1, tc) == 0.001);
  CHECK(lr_at(3, tc) == 0.001);
  CHECK(lr_at(4, tc) == doctest::Approx(0.0008).epsilon(1e-12));
  CHECK(lr_at(6, tc) == doctest::Approx(0.000512).epsilon(1e-12));
  for (std::size_t e = 1; e < 40; ++e) CHECK(lr_at(e + 1, tc) <= lr_at(e, tc));
}

TEST_CASE("train config validation") {
  CHECK(TrainConfig{}.violations().empty());
  TrainConfig tc;
  tc.epochs = 5;
  tc.patience = 6;
  tc.batch_size = 0;
  CHECK(tc.violations().size() == 2);
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("early stopping restores the best weights") {
  const auto cfg = small(8, 4, 4, 4);
  const WindowDataset train_set(sine_series(60, 1), 8, 4);
  const WindowDataset val_set(sine_series(30, 1), 8, 4);
  Rng rng(7);
  const auto start = init_params<double>(cfg, rng);
  TrainConfig tc;
  tc.epochs = 5;
  tc.patience = 1;
  tc.base_lr = 1e-300;
  tc.batch_size = 8;
  const auto result = train<double>(train_set, val_set, start, cfg, tc);
  CHECK(result.history.epochs.size() == 2);
  CHECK(result.history.best_epoch == 1);
  CHECK(result.history.stopped_early);
  std::vector<const Matrix*> a, b;
  start.visit([&](std::string_view, const Matrix& t) { a.push_back(&t); });
  result.best_params.visit([&](std::string_view, const Matrix& t) { b.push_back(&t); });
  // Epoch-1 weights differ from the start only by steps of order base_lr.
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k]->size(); ++i) CHECK(std::abs((*a[k])[i] - (*b[k])[i]) <= 1e-290);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto cfg = small(24, 12, 6, 8, 2);
  cfg.dropout = 0.2;
  const WindowDataset train_set(sine_series(200, 2), 24, 12);
  const WindowDataset val_set(sine_series(80, 2), 24, 12);
  TrainConfig tc;
  tc.epochs = 3;
  tc.patience = 3;
  tc.batch_size = 32;
  tc.seed = 11;
  Rng r1(1), r2(1);
  auto a = train<double>(train_set, val_set, init_params<double>(cfg, r1), cfg, tc);
  auto b = train<double>(train_set, val_set, init_params<double>(cfg, r2), cfg, tc);
  for (auto* h : {&a.history, &b.history}) {
    for (auto& e : h->epochs) e.seconds = 0.0;
  }
  CHECK(a.history == b.history);
  std::vector<const Matrix*> pa, pb;
  a.best_params.visit([&](std::string_view, const Matrix& t) { pa.push_back(&t); });
  b.best_params.visit([&](std::string_view, const Matrix& t) { pb.push_back(&t); });
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(*pa[k] == *pb[k]);
}

TEST_CASE("training fits a clean periodic signal") {
  const auto cfg = small(48, 24, 12, 16, 2);
  const Matrix series = sine_series(900, 2);
  const WindowDataset train_set(slice_rows(series, {0, 600}), 48, 24);
  const WindowDataset val_set(slice_rows(series, {600, 900}), 48, 24);
  Rng rng(8);
  const auto start = init_params<double>(cfg, rng);
  const double before = evaluate<double>(val_set, start, cfg).mse;
  TrainConfig tc;
  tc.epochs = 8;
  tc.patience = 8;
  tc.batch_size = 32;
  tc.base_lr = 0.005;
  std::size_t calls = 0;
  const auto result =
      train<double>(train_set, val_set, start, cfg, tc, [&](const EpochRecord&) { ++calls; });
  CHECK(calls == result.history.epochs.size());
  const double after = evaluate<double>(val_set, result.best_params, cfg).mse;
  CHECK(after < 0.5 * before);
  CHECK(after < repeat_last_baseline(val_set).mse);
  CHECK(result.history.best_val_loss() ==
        doctest::Approx(evaluate<double>(val_set, result.best_params, cfg).mae));
}

TEST_CASE("float training runs and evaluation matches double closely") {
  const auto cfg = small(24, 12, 6, 8);
  const WindowDataset data(sine_series(120, 1), 24, 12);
  Rng rng(9);
  const auto p = init_params<double>(cfg, rng);
  const auto d = evaluate<double>(data, p, cfg, 7);
  const auto f = evaluate<float>(data, cast_params<float>(p), cfg, 1024);
  CHECK(std::abs(d.mse - f.mse) <= 1e-5);
}
