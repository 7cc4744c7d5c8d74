// Copyright 2026 The ivfnet Authors
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

// Dense numeric primitives shared by every module. All training-time math
// runs in double precision; summation order is fixed (left to right) so
// results are reproducible bit for bit.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace ivfnet {

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// m * v. Throws DimensionError when m.cols() != v.size().
Vector matvec(const Matrix& m, std::span<const double> v);

/// m^T * v. Throws DimensionError when m.rows() != v.size().
Vector matvec_transposed(const Matrix& m, std::span<const double> v);

/// m += scale * a b^T.
void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b,
               double scale = 1.0);

Vector relu(std::span<const double> v);

/// Max-subtracted softmax; the result is a valid probability vector for any
/// finite input.
Vector softmax(std::span<const double> z);

/// Shannon entropy in bits, -sum p log2 p with 0 log 0 := 0.
double entropy_bits(std::span<const double> p);

/// Index of the largest entry; exact ties go to the smallest index.
/// Throws PreconditionError on empty input.
std::size_t argmax_tiebreak(std::span<const double> v);

double squared_distance(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> v);

/// Entries nonnegative and summing to one within `tol`.
bool is_prob_vector(std::span<const double> p, double tol = 1e-6);

/// A vector of the discrete set of one-hot vectors of length `size`.
struct OneHot {
  std::size_t index = 0;
  std::size_t size = 0;

  Vector dense() const;
  friend bool operator==(const OneHot&, const OneHot&) = default;
};

/// Seeded pseudo-random stream. The engine is mt19937_64, whose output
/// sequence is fixed by the standard; the conversions to real numbers are
/// done here rather than through <random> distributions, whose output is
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::size_t below(std::size_t n);
  /// Standard normal (Box-Muller).
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Rng seeded_rng(std::uint64_t seed);

/// Mixes a base seed with a stream id so sub-tasks get independent streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Runs fn(i) for i in [0, n) on up to `threads` threads using contiguous
/// static chunks. fn must only write to per-index state.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace ivfnet
