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

#include "segrnn/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string_view>

namespace segrnn {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

std::size_t window_starts(std::size_t length, std::size_t lookback, std::size_t horizon,
                          std::size_t stride) {
  if (lookback == 0 || horizon == 0 || stride == 0) {
    throw ConfigError("window lookback, horizon and stride must be >= 1");
  }
  if (length < lookback + horizon) {
    throw ConfigError("split of length " + std::to_string(length) +
                      " is too short for lookback " + std::to_string(lookback) +
                      " + horizon " + std::to_string(horizon));
  }
  return (length - lookback - horizon) / stride + 1;
}

}  // namespace

RawSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");

  RawSeries series;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (!have_header) {
      if (fields.size() < 2) {
        throw DataError(path.string() + ": header needs a date column and at least one channel");
      }
      for (std::size_t c = 1; c < fields.size(); ++c) series.channel_names.emplace_back(fields[c]);
      have_header = true;
      continue;
    }
    if (fields.size() != series.channel_names.size() + 1) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(series.channel_names.size() + 1));
    }
    series.timestamps.emplace_back(fields[0]);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const std::string_view f = fields[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw DataError(path.string() + ": cannot parse '" + std::string(f) + "' at line " +
                        std::to_string(line_no) + ", column " + std::to_string(c + 1) + " (" +
                        series.channel_names[c - 1] + ")");
      }
      values.push_back(v);
    }
  }
  if (!have_header) throw DataError(path.string() + ": empty file");
  if (series.timestamps.empty()) throw DataError(path.string() + ": no data rows");
  series.values = Matrix(series.timestamps.size(), series.channel_names.size(), std::move(values));
  return series;
}

RawSeries prefix(const RawSeries& series, std::size_t rows) {
  if (rows == 0 || rows >= series.length()) return series;
  RawSeries out;
  out.channel_names = series.channel_names;
  out.timestamps.assign(series.timestamps.begin(),
                        series.timestamps.begin() + static_cast<std::ptrdiff_t>(rows));
  out.values = slice_rows(series.values, {0, rows});
  return out;
}

void SplitSpec::validate() const {
  double sum = 0.0;
  for (const double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must all be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1 (got " + std::to_string(sum) + ")");
  }
}

SplitRanges chronological_split(std::size_t length, const SplitSpec& spec, std::size_t min_length) {
  spec.validate();
  // The epsilon absorbs representation error such as 0.7 * 10 = 6.999...
  auto part = [&](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(length) * r + 1e-9));
  };
  const std::size_t train = part(spec.ratios[0]);
  const std::size_t val = part(spec.ratios[1]);
  SplitRanges out{{0, train}, {train, train + val}, {train + val, length}};
  const std::pair<const char*, IndexRange> named[] = {
      {"train", out.train}, {"validation", out.val}, {"test", out.test}};
  for (const auto& [name, range] : named) {
    if (range.size() < min_length) {
      throw ConfigError(std::string(name) + " split has " + std::to_string(range.size()) +
                        " rows, needs at least " + std::to_string(min_length));
    }
  }
  return out;
}

Matrix slice_rows(const Matrix& m, IndexRange range) {
  if (range.begin > range.end || range.end > m.rows()) {
    throw BoundsError("row range [" + std::to_string(range.begin) + ", " + std::to_string(range.end) +
                      ") outside a " + m.shape_string() + " matrix");
  }
  return row_block(m, range.begin, range.size());
}

Standardizer::Standardizer(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), stddev_(std::move(stddev)) {
  if (mean_.size() != stddev_.size()) throw ShapeError("standardizer mean/std length mismatch");
}

Standardizer Standardizer::fit(const Matrix& train, std::span<const std::string> channel_names) {
  if (train.rows() < 2) throw DataError("standardizer needs at least 2 rows to fit");
  const std::size_t channels = train.cols();
  std::vector<double> mean(channels, 0.0), stddev(channels, 0.0);
  const auto rows = static_cast<double>(train.rows());
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < train.rows(); ++r) s += train(r, c);
    mean[c] = s / rows;
    double ss = 0.0;
    for (std::size_t r = 0; r < train.rows(); ++r) {
      const double dev = train(r, c) - mean[c];
      ss += dev * dev;
    }
    stddev[c] = std::sqrt(ss / rows);
    if (!(stddev[c] > 0.0)) {
      const std::string name = c < channel_names.size() ? channel_names[c] : "#" + std::to_string(c);
      throw DataError("channel " + name + " is constant on the training split");
    }
  }
  return Standardizer(std::move(mean), std::move(stddev));
}

Matrix Standardizer::apply(const Matrix& values) const {
  if (values.cols() != mean_.size()) throw ShapeError("standardizer channel count mismatch");
  Matrix out(values.rows(), values.cols());
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) {
      out(r, c) = (values(r, c) - mean_[c]) / stddev_[c];
    }
  }
  return out;
}

Matrix Standardizer::invert(const Matrix& values) const {
  if (values.cols() != mean_.size()) throw ShapeError("standardizer channel count mismatch");
  Matrix out(values.rows(), values.cols());
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) {
      out(r, c) = values(r, c) * stddev_[c] + mean_[c];
    }
  }
  return out;
}

std::vector<WindowSample> make_windows(const Matrix& values, std::size_t lookback,
                                       std::size_t horizon, std::size_t stride) {
  const WindowDataset ds(values, lookback, horizon, stride);
  std::vector<WindowSample> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(ds.sample(i));
  return out;
}

WindowDataset::WindowDataset(Matrix values, std::size_t lookback, std::size_t horizon,
                             std::size_t stride)
    : values_(std::move(values)),
      lookback_(lookback),
      horizon_(horizon),
      stride_(stride),
      starts_(window_starts(values_.rows(), lookback, horizon, stride)) {}

WindowSample WindowDataset::sample(std::size_t index) const {
  if (index >= size()) throw BoundsError("window index " + std::to_string(index) + " out of range");
  WindowSample s;
  s.origin = origin(index);
  s.channel = channel(index);
  s.x.resize(lookback_);
  s.y.resize(horizon_);
  for (std::size_t t = 0; t < lookback_; ++t) s.x[t] = values_(s.origin + t, s.channel);
  for (std::size_t t = 0; t < horizon_; ++t) s.y[t] = values_(s.origin + lookback_ + t, s.channel);
  return s;
}

template <typename T>
void WindowDataset::fill_batch(std::span<const std::size_t> indices, BasicMatrix<T>& x,
                               BasicMatrix<T>& y, std::vector<std::size_t>& channels) const {
  const std::size_t n = indices.size();
  if (x.rows() != n || x.cols() != lookback_) x = BasicMatrix<T>(n, lookback_);
  if (y.rows() != n || y.cols() != horizon_) y = BasicMatrix<T>(n, horizon_);
  channels.resize(n);
  const std::size_t stride = values_.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = indices[i];
    if (idx >= size()) throw BoundsError("window index " + std::to_string(idx) + " out of range");
    const std::size_t c = channel(idx);
    const double* src = values_.data() + origin(idx) * stride + c;
    T* xr = x.data() + i * lookback_;
    T* yr = y.data() + i * horizon_;
    for (std::size_t t = 0; t < lookback_; ++t) xr[t] = static_cast<T>(src[t * stride]);
    for (std::size_t t = 0; t < horizon_; ++t) {
      yr[t] = static_cast<T>(src[(lookback_ + t) * stride]);
    }
    channels[i] = c;
  }
}

template void WindowDataset::fill_batch<double>(std::span<const std::size_t>, Matrix&, Matrix&,
                                                std::vector<std::size_t>&) const;
template void WindowDataset::fill_batch<float>(std::span<const std::size_t>, MatrixF&, MatrixF&,
                                               std::vector<std::size_t>&) const;

}  // namespace segrnn
