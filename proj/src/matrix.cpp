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

#include "segrnn/matrix.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace segrnn {

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMajor<T>> as_eigen(BasicMatrix<T>& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

template <typename T>
Eigen::Map<const RowMajor<T>> as_eigen(const BasicMatrix<T>& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

[[noreturn]] void throw_product_mismatch(const char* op, std::size_t ar, std::size_t ac,
                                         std::size_t br, std::size_t bc) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + std::to_string(ar) + "x" +
                   std::to_string(ac) + " and " + std::to_string(br) + "x" +
                   std::to_string(bc));
}

}  // namespace

template <typename T>
BasicMatrix<T>::BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged initializer for matrix");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

__extension__ using u128 = unsigned __int128;

std::size_t Rng::below(std::size_t n) {
  // Lemire's multiply-shift with rejection; unbiased.
  const std::uint64_t bound = n;
  u128 product = static_cast<u128>(engine_()) * bound;
  auto low = static_cast<std::uint64_t>(product);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      product = static_cast<u128>(engine_()) * bound;
      low = static_cast<std::uint64_t>(product);
    }
  }
  return static_cast<std::size_t>(product >> 64);
}

double Rng::normal() {
  // Box-Muller; the second variate is discarded to keep the stream stateless.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

Rng Rng::derive(std::uint64_t stream) const {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return Rng(z ^ (z >> 31));
}

void require_same_shape(std::size_t ar, std::size_t ac, std::size_t br, std::size_t bc,
                        const char* what) {
  if (ar != br || ac != bc) {
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(ar) + "x" +
                     std::to_string(ac) + " vs " + std::to_string(br) + "x" +
                     std::to_string(bc));
  }
}

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) throw_product_mismatch("matmul", a.rows(), a.cols(), b.rows(), b.cols());
  BasicMatrix<T> out(a.rows(), b.cols());
  if (a.cols() == 0) return out;
  as_eigen(out).noalias() = as_eigen(a) * as_eigen(b);
  return out;
}

template <typename T>
BasicMatrix<T> matmul_reference(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw_product_mismatch("matmul_reference", a.rows(), a.cols(), b.rows(), b.cols());
  }
  BasicMatrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      T acc{0};
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) throw_product_mismatch("matmul_nt", a.rows(), a.cols(), b.cols(), b.rows());
  BasicMatrix<T> out(a.rows(), b.rows());
  if (a.cols() == 0) return out;
  as_eigen(out).noalias() = as_eigen(a) * as_eigen(b).transpose();
  return out;
}

template <typename T>
void accumulate_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b, BasicMatrix<T>& out) {
  if (a.rows() != b.rows()) throw_product_mismatch("accumulate_tn", a.cols(), a.rows(), b.rows(), b.cols());
  require_same_shape(out.rows(), out.cols(), a.cols(), b.cols(), "accumulate_tn output");
  if (a.rows() == 0) return;
  as_eigen(out).noalias() += as_eigen(a).transpose() * as_eigen(b);
}

template <typename T>
void accumulate_nn(const BasicMatrix<T>& a, const BasicMatrix<T>& b, BasicMatrix<T>& out) {
  if (a.cols() != b.rows()) throw_product_mismatch("accumulate_nn", a.rows(), a.cols(), b.rows(), b.cols());
  require_same_shape(out.rows(), out.cols(), a.rows(), b.cols(), "accumulate_nn output");
  if (a.cols() == 0) return;
  as_eigen(out).noalias() += as_eigen(a) * as_eigen(b);
}

template <typename T>
BasicMatrix<T> apply_activation(const BasicMatrix<T>& m, Activation kind) {
  BasicMatrix<T> out(m.rows(), m.cols());
  const std::size_t n = m.size();
  switch (kind) {
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid(m[i]);
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(m[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = m[i] > T{0} ? m[i] : T{0};
      break;
  }
  return out;
}

template <typename T>
void add_row_bias(BasicMatrix<T>& m, const BasicMatrix<T>& bias) {
  require_same_shape(bias.rows(), bias.cols(), 1, m.cols(), "add_row_bias");
  for (std::size_t r = 0; r < m.rows(); ++r) {
    T* row = m.data() + r * m.cols();
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += bias[c];
  }
}

template <typename T>
void accumulate_column_sums(const BasicMatrix<T>& m, BasicMatrix<T>& out) {
  require_same_shape(out.rows(), out.cols(), 1, m.cols(), "accumulate_column_sums");
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const T* row = m.data() + r * m.cols();
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += row[c];
  }
}

template <typename T>
BasicMatrix<T> hconcat(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("hconcat: row count mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  BasicMatrix<T> out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
    std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

template <typename T>
BasicMatrix<T> column_block(const BasicMatrix<T>& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.cols()) throw BoundsError("column_block out of range for " + m.shape_string());
  BasicMatrix<T> out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto src = m.row(r).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

template <typename T>
BasicMatrix<T> row_block(const BasicMatrix<T>& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.rows()) throw BoundsError("row_block out of range for " + m.shape_string());
  const auto first = m.values().begin() + static_cast<std::ptrdiff_t>(begin * m.cols());
  return BasicMatrix<T>(count, m.cols(),
                        std::vector<T>(first, first + static_cast<std::ptrdiff_t>(count * m.cols())));
}

template <typename T>
void add_in_place(BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  require_same_shape(a, b, "add_in_place");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
BasicMatrix<T> init_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw ConfigError("init_uniform: rows and cols must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  BasicMatrix<T> out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(rng.uniform(-bound, bound));
  return out;
}

template <typename T>
bool all_finite(const BasicMatrix<T>& m) {
  for (const T v : m.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

#define SEGRNN_INSTANTIATE_MATRIX(T)                                                        \
  template class BasicMatrix<T>;                                                           \
  template BasicMatrix<T> matmul(const BasicMatrix<T>&, const BasicMatrix<T>&);           \
  template BasicMatrix<T> matmul_reference(const BasicMatrix<T>&, const BasicMatrix<T>&); \
  template BasicMatrix<T> matmul_nt(const BasicMatrix<T>&, const BasicMatrix<T>&);        \
  template void accumulate_tn(const BasicMatrix<T>&, const BasicMatrix<T>&, BasicMatrix<T>&); \
  template void accumulate_nn(const BasicMatrix<T>&, const BasicMatrix<T>&, BasicMatrix<T>&); \
  template BasicMatrix<T> apply_activation(const BasicMatrix<T>&, Activation);             \
  template void add_row_bias(BasicMatrix<T>&, const BasicMatrix<T>&);                      \
  template void accumulate_column_sums(const BasicMatrix<T>&, BasicMatrix<T>&);            \
  template BasicMatrix<T> hconcat(const BasicMatrix<T>&, const BasicMatrix<T>&);          \
  template BasicMatrix<T> column_block(const BasicMatrix<T>&, std::size_t, std::size_t);  \
  template BasicMatrix<T> row_block(const BasicMatrix<T>&, std::size_t, std::size_t);     \
  template void add_in_place(BasicMatrix<T>&, const BasicMatrix<T>&);                      \
  template BasicMatrix<T> init_uniform<T>(std::size_t, std::size_t, Rng&);                 \
  template bool all_finite(const BasicMatrix<T>&);

SEGRNN_INSTANTIATE_MATRIX(double)
SEGRNN_INSTANTIATE_MATRIX(float)
SEGRNN_INSTANTIATE_MATRIX(long double)

#undef SEGRNN_INSTANTIATE_MATRIX

}  // namespace segrnn
