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
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "segrnn/data.hpp"

using namespace segrnn;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / ("segrnn_data_" + name);
  std::ofstream(path) << body;
  return path;
}

Matrix ramp(std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = static_cast<double>(100 * c + r);
  }
  return m;
}

}  // namespace

TEST_CASE("load_csv reads a small fixture exactly") {
  const auto path = write_temp("fixture.csv",
                               "date,a,b\n"
                               "t0,1.5,-2\n"
                               "t1, 3 ,4e-1\r\n"
                               "\n"
                               "t2,0,7\n");
  const auto s = load_csv(path);
  CHECK(s.length() == 3);
  CHECK(s.channels() == 2);
  CHECK(s.channel_names == std::vector<std::string>{"a", "b"});
  CHECK(s.timestamps == std::vector<std::string>{"t0", "t1", "t2"});
  CHECK(s.values == Matrix{{1.5, -2}, {3, 0.4}, {0, 7}});
  std::filesystem::remove(path);
}

TEST_CASE("load_csv errors") {
  CHECK_THROWS_AS(load_csv("/nonexistent/segrnn.csv"), IoError);

  const auto empty = write_temp("empty.csv", "");
  CHECK_THROWS_AS(load_csv(empty), DataError);

  const auto header_only = write_temp("header.csv", "date,a\n");
  CHECK_THROWS_AS(load_csv(header_only), DataError);

  const auto ragged = write_temp("ragged.csv", "date,a,b\nt0,1,2\nt1,3\n");
  try {
    (void)load_csv(ragged);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }

  const auto bad = write_temp("bad.csv", "date,a,b\nt0,1,2\nt1,3,oops\n");
  try {
    (void)load_csv(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("b") != std::string::npos);
    CHECK(msg.find("oops") != std::string::npos);
  }
  for (const auto& p : {empty, header_only, ragged, bad}) std::filesystem::remove(p);
}

TEST_CASE("bundled ETTh1 file") {
  const auto path = std::filesystem::path(SEGRNN_DATA_DIR) / "ETTh1.csv";
  if (!std::filesystem::exists(path)) return;
  const auto s = load_csv(path);
  CHECK(s.length() == 17420);
  CHECK(s.channels() == 7);
  CHECK(s.channel_names.back() == "OT");
  CHECK(prefix(s, 100).length() == 100);
  CHECK(prefix(s, 0).length() == 17420);
}

TEST_CASE("chronological split sizes") {
  const auto r = chronological_split(10, SplitSpec{});
  CHECK(r.train == IndexRange{0, 6});
  CHECK(r.val == IndexRange{6, 8});
  CHECK(r.test == IndexRange{8, 10});

  const auto e = chronological_split(17420, SplitSpec{});
  CHECK(e.train.size() == 10452);
  CHECK(e.val.size() == 3484);
  CHECK(e.test.size() == 3484);

  const auto w = chronological_split(52696, SplitSpec{{0.7, 0.1, 0.2}});
  CHECK(w.train.size() == 36887);
  CHECK(w.val.size() == 5269);
  CHECK(w.test.size() == 10540);

  CHECK_THROWS_AS(chronological_split(100, SplitSpec{}, 30), ConfigError);
  const SplitSpec short_sum{{0.5, 0.2, 0.2}};
  const SplitSpec no_val{{1.0, 0.0, 0.0}};
  CHECK_THROWS_AS(short_sum.validate(), ConfigError);
  CHECK_THROWS_AS(no_val.validate(), ConfigError);
}

TEST_CASE("split ranges partition the series") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 30 + rng.below(5000);
    const double a = rng.uniform(0.2, 0.6), b = rng.uniform(0.1, 0.3);
    const SplitSpec spec{{a, b, 1.0 - a - b}};
    const auto r = chronological_split(n, spec);
    CHECK(r.train.begin == 0);
    CHECK(r.train.end == r.val.begin);
    CHECK(r.val.end == r.test.begin);
    CHECK(r.test.end == n);
    CHECK(r.train.size() + r.val.size() + r.test.size() == n);
    CHECK(r.train.size() == static_cast<std::size_t>(std::floor(static_cast<double>(n) * a + 1e-9)));
  }
}

TEST_CASE("standardizer") {
  const Matrix two{{0}, {2}};
  const auto s = Standardizer::fit(two);
  CHECK(s.mean()[0] == 1.0);
  CHECK(s.stddev()[0] == 1.0);
  CHECK(s.apply(two) == Matrix{{-1}, {1}});

  Rng rng(2);
  Matrix train(500, 3);
  for (double& v : train.values()) v = rng.normal() * 4.0 + 7.0;
  const auto fit = Standardizer::fit(train);
  const auto z = fit.apply(train);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t r = 0; r < 500; ++r) mean += z(r, c);
    mean /= 500.0;
    for (std::size_t r = 0; r < 500; ++r) sq += (z(r, c) - mean) * (z(r, c) - mean);
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(std::abs(std::sqrt(sq / 500.0) - 1.0) <= 1e-12);
  }
  const auto back = fit.invert(z);
  for (std::size_t i = 0; i < train.size(); ++i) CHECK(std::abs(back[i] - train[i]) <= 1e-12);

  CHECK_THROWS_AS(fit.apply(Matrix(2, 2)), ShapeError);
  CHECK_THROWS_AS(Standardizer::fit(Matrix(1, 2)), DataError);
}

TEST_CASE("standardizer names a constant channel") {
  Matrix m{{1, 5}, {2, 5}, {3, 5}};
  const std::vector<std::string> names{"load", "flat"};
  try {
    (void)Standardizer::fit(m, names);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("flat") != std::string::npos);
  }
}

TEST_CASE("statistics ignore rows outside the train split") {
  Rng rng(3);
  Matrix all(100, 2);
  for (double& v : all.values()) v = rng.normal();
  const auto r = chronological_split(100, SplitSpec{});
  const auto before = Standardizer::fit(slice_rows(all, r.train));
  for (std::size_t row = r.val.begin; row < r.test.end; ++row) all(row, 0) += 1000.0;
  const auto after = Standardizer::fit(slice_rows(all, r.train));
  CHECK(before.mean() == after.mean());
  CHECK(before.stddev() == after.stddev());
  CHECK_THROWS_AS(slice_rows(all, IndexRange{90, 101}), BoundsError);
}

TEST_CASE("window counts") {
  CHECK(make_windows(ramp(20, 3), 5, 4).size() == (20 - 5 - 4 + 1) * 3);
  CHECK(make_windows(ramp(9, 3), 5, 4).size() == 3);
  CHECK(make_windows(ramp(10, 2), 5, 4).size() == 4);
  CHECK(WindowDataset(ramp(20, 3), 5, 4).size() == 36);
  CHECK_THROWS_AS(WindowDataset(ramp(8, 3), 5, 4), ConfigError);
}

TEST_CASE("windows slice the right rows") {
  const Matrix m = ramp(12, 2);
  const auto windows = make_windows(m, 4, 3);
  const WindowDataset ds(m, 4, 3);
  REQUIRE(windows.size() == ds.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    CHECK(w.origin == i / 2);
    CHECK(w.channel == i % 2);
    for (std::size_t t = 0; t < 4; ++t) CHECK(w.x[t] == m(w.origin + t, w.channel));
    for (std::size_t t = 0; t < 3; ++t) CHECK(w.y[t] == m(w.origin + 4 + t, w.channel));
    const auto s = ds.sample(i);
    CHECK(s.x == w.x);
    CHECK(s.y == w.y);
  }

  const std::vector<std::size_t> idx{5, 0, 3};
  Matrix x, y;
  std::vector<std::size_t> ch;
  ds.fill_batch<double>(idx, x, y, ch);
  CHECK(x.rows() == 3);
  CHECK(y.cols() == 3);
  CHECK(ch == std::vector<std::size_t>{1, 0, 1});
  CHECK(std::vector<double>(x.row(0).begin(), x.row(0).end()) == windows[5].x);
}

TEST_CASE("windows never cross split boundaries") {
  Matrix all(200, 2);
  for (std::size_t r = 0; r < 200; ++r) {
    for (std::size_t c = 0; c < 2; ++c) all(r, c) = static_cast<double>(r);
  }
  const auto ranges = chronological_split(200, SplitSpec{}, 16);
  for (const auto& range : {ranges.train, ranges.val, ranges.test}) {
    for (const auto& w : make_windows(slice_rows(all, range), 8, 8)) {
      std::set<double> rows(w.x.begin(), w.x.end());
      rows.insert(w.y.begin(), w.y.end());
      CHECK(*rows.begin() >= static_cast<double>(range.begin));
      CHECK(*rows.rbegin() < static_cast<double>(range.end));
    }
  }
}
