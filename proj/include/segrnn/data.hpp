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

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "segrnn/matrix.hpp"

namespace segrnn {

/// A multivariate series as read from disk: one row per timestep.
struct RawSeries {
  std::vector<std::string> timestamps;
  Matrix values;  // T x C
  std::vector<std::string> channel_names;

  std::size_t length() const { return values.rows(); }
  std::size_t channels() const { return values.cols(); }
};

/// Reads a CSV with a header row whose first column is an opaque timestamp
/// and whose remaining columns are numeric channels.
RawSeries load_csv(const std::filesystem::path& path);

/// First `rows` timesteps of a series (the whole series if shorter).
RawSeries prefix(const RawSeries& series, std::size_t rows);

struct SplitSpec {
  std::array<double, 3> ratios{0.6, 0.2, 0.2};

  void validate() const;
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

struct SplitRanges {
  IndexRange train;
  IndexRange val;
  IndexRange test;
};

/// Contiguous chronological train/val/test ranges of sizes floor(T*r) for
/// train and val, the remainder for test. Every split must hold at least
/// `min_length` rows.
SplitRanges chronological_split(std::size_t length, const SplitSpec& spec,
                                std::size_t min_length = 1);

/// Rows [range.begin, range.end) of m.
Matrix slice_rows(const Matrix& m, IndexRange range);

/// Per-channel z-score with population standard deviation.
class Standardizer {
 public:
  Standardizer() = default;
  Standardizer(std::vector<double> mean, std::vector<double> stddev);

  /// Fits on `train` (rows x channels). Throws DataError naming any
  /// constant channel.
  static Standardizer fit(const Matrix& train, std::span<const std::string> channel_names = {});

  Matrix apply(const Matrix& values) const;
  Matrix invert(const Matrix& values) const;

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return stddev_; }

 private:
  std::vector<double> mean_;
  std::vector<double> stddev_;
};

/// One channel-independent training pair.
struct WindowSample {
  std::vector<double> x;  // look-back, length L
  std::vector<double> y;  // horizon, length H, starts right after x
  std::size_t channel = 0;
  std::size_t origin = 0;  // row index of x[0] in the source
};

/// Every (start, channel) window of a split, materialized. Ordered by start,
/// then channel.
std::vector<WindowSample> make_windows(const Matrix& values, std::size_t lookback,
                                       std::size_t horizon, std::size_t stride = 1);

/// Lazy view of the same windows as make_windows over one split; batches
/// are assembled on demand.
class WindowDataset {
 public:
  WindowDataset() = default;
  WindowDataset(Matrix values, std::size_t lookback, std::size_t horizon, std::size_t stride = 1);

  std::size_t size() const { return starts_ * values_.cols(); }
  bool empty() const { return size() == 0; }
  std::size_t lookback() const { return lookback_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t channels() const { return values_.cols(); }
  const Matrix& values() const { return values_; }

  std::size_t origin(std::size_t index) const { return (index / values_.cols()) * stride_; }
  std::size_t channel(std::size_t index) const { return index % values_.cols(); }
  WindowSample sample(std::size_t index) const;

  /// Fills x (n x L), y (n x H) and channels for the given sample indices.
  template <typename T>
  void fill_batch(std::span<const std::size_t> indices, BasicMatrix<T>& x, BasicMatrix<T>& y,
                  std::vector<std::size_t>& channels) const;

 private:
  Matrix values_;
  std::size_t lookback_ = 0;
  std::size_t horizon_ = 0;
  std::size_t stride_ = 1;
  std::size_t starts_ = 0;
};

}  // namespace segrnn
