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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segrnn/errors.hpp"

namespace segrnn {

// Dense row-major matrix. A row vector of length n is a 1 x n matrix.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match shape " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows);

  static BasicMatrix row_vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return BasicMatrix(1, n, std::move(values));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<T> to_vector() const { return data_; }
  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  void set_zero() noexcept { std::fill(data_.begin(), data_.end(), T{0}); }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

/// Seeded pseudo-random stream. Identical seeds give identical streams on
/// every run; draws are derived from raw 64-bit outputs so results do not
/// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  double normal();

  /// Independent stream derived from this seed; does not advance this stream.
  Rng derive(std::uint64_t stream) const;

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

enum class Activation { sigmoid, tanh, relu };

/// Logistic function, split on sign so exp never overflows.
template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

/// Optimized product a * b.
template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

/// Plain triple-loop product; the correctness reference for matmul.
template <typename T>
BasicMatrix<T> matmul_reference(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

/// a * b^T
template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

/// out += a^T * b
template <typename T>
void accumulate_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b, BasicMatrix<T>& out);

/// out += a * b
template <typename T>
void accumulate_nn(const BasicMatrix<T>& a, const BasicMatrix<T>& b, BasicMatrix<T>& out);

template <typename T>
BasicMatrix<T> apply_activation(const BasicMatrix<T>& m, Activation kind);

/// Adds a 1 x cols bias row to every row of m.
template <typename T>
void add_row_bias(BasicMatrix<T>& m, const BasicMatrix<T>& bias);

/// out(0, c) += sum_r m(r, c)
template <typename T>
void accumulate_column_sums(const BasicMatrix<T>& m, BasicMatrix<T>& out);

/// Horizontal concatenation [a, b]; both must have the same row count.
template <typename T>
BasicMatrix<T> hconcat(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

/// Columns [begin, begin + count) of m.
template <typename T>
BasicMatrix<T> column_block(const BasicMatrix<T>& m, std::size_t begin, std::size_t count);

/// Rows [begin, begin + count) of m.
template <typename T>
BasicMatrix<T> row_block(const BasicMatrix<T>& m, std::size_t begin, std::size_t count);

/// a += b (same shape)
template <typename T>
void add_in_place(BasicMatrix<T>& a, const BasicMatrix<T>& b);

/// Fan-in scaled uniform initialization in [-1/sqrt(cols), 1/sqrt(cols)].
template <typename T = double>
BasicMatrix<T> init_uniform(std::size_t rows, std::size_t cols, Rng& rng);

template <typename To, typename From>
BasicMatrix<To> cast(const BasicMatrix<From>& m) {
  std::vector<To> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = static_cast<To>(m[i]);
  return BasicMatrix<To>(m.rows(), m.cols(), std::move(out));
}

template <typename T>
bool all_finite(const BasicMatrix<T>& m);

void require_same_shape(std::size_t ar, std::size_t ac, std::size_t br, std::size_t bc,
                        const char* what);

template <typename T>
void require_same_shape(const BasicMatrix<T>& a, const BasicMatrix<T>& b, const char* what) {
  require_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), what);
}

}  // namespace segrnn
