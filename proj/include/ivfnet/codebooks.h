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

// Lloyd k-means, vector quantization and product quantization. These give
// the coarse quantizer of an inverted file and the constituent codebooks
// used to encode residuals.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ivfnet/core_math.h"
#include "ivfnet/feature_set.h"

namespace ivfnet {

using CodeIndex = std::uint16_t;

enum class KMeansInit { kPlusPlus, kRandomPoints };

struct KMeansConfig {
  std::size_t n_clusters = 1;
  int max_iters = 50;
  double tol = 1e-4;  // relative objective change
  std::uint64_t seed = 0;
  KMeansInit init = KMeansInit::kPlusPlus;
  int threads = 1;
};

struct KMeansReport {
  /// Objective (sum of squared distances to the nearest centroid) after
  /// initialization and after each accepted Lloyd iteration.
  std::vector<double> objective_history;
  int iterations = 0;
  double final_error = 0.0;
  /// Relative objective increase of a step that was rejected as converged,
  /// 0 when none was.
  double rejected_increase = 0.0;
};

/// N centroids of dimension d.
class Codebook {
 public:
  Codebook() = default;
  explicit Codebook(Matrix centroids) : centroids_(std::move(centroids)) {}

  std::size_t size() const noexcept { return centroids_.rows(); }
  std::size_t dim() const noexcept { return centroids_.cols(); }
  std::span<const double> centroid(std::size_t k) const { return centroids_.row(k); }
  const Matrix& centroids() const noexcept { return centroids_; }

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  Matrix centroids_;
};

Codebook kmeans_train(const Matrix& data, const KMeansConfig& cfg, KMeansReport* report = nullptr);
Codebook kmeans_train(const FeatureSet& data, const KMeansConfig& cfg,
                      KMeansReport* report = nullptr);

/// Nearest centroid, lowest index on ties.
std::size_t vq_assign(std::span<const double> x, const Codebook& cb);

/// x - d_n.
Vector residual(std::span<const double> x, const Codebook& cb, std::size_t n);

/// Splits d coordinates into M contiguous ranges of near-equal size; the
/// remainder goes to the leading ranges. Returns the M+1 boundaries.
std::vector<std::size_t> split_dims(std::size_t d, std::size_t M);

/// M constituent codebooks of K sub-codewords each, acting on disjoint
/// contiguous coordinate ranges.
class ProductCodebook {
 public:
  ProductCodebook() = default;
  ProductCodebook(std::vector<std::size_t> offsets, std::vector<Codebook> sub_codebooks);

  std::size_t M() const noexcept { return sub_.size(); }
  std::size_t K() const noexcept { return sub_.empty() ? 0 : sub_.front().size(); }
  std::size_t dim() const noexcept { return offsets_.empty() ? 0 : offsets_.back(); }
  std::size_t offset(std::size_t m) const { return offsets_[m]; }
  std::size_t sub_dim(std::size_t m) const { return offsets_[m + 1] - offsets_[m]; }
  const std::vector<std::size_t>& offsets() const noexcept { return offsets_; }
  const Codebook& sub_codebook(std::size_t m) const { return sub_[m]; }

  friend bool operator==(const ProductCodebook&, const ProductCodebook&) = default;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<Codebook> sub_;
};

struct PQCode {
  std::vector<CodeIndex> indices;
  friend bool operator==(const PQCode&, const PQCode&) = default;
};

/// Runs k-means independently on each coordinate sub-range. The seed of
/// block m is derived from cfg.seed and m.
ProductCodebook pq_train(const Matrix& residuals, std::size_t M, std::size_t K,
                         const KMeansConfig& cfg);

PQCode pq_encode(std::span<const double> r, const ProductCodebook& pcb);

/// Concatenation of the selected sub-codewords.
Vector pq_decode(std::span<const CodeIndex> code, const ProductCodebook& pcb);
inline Vector pq_decode(const PQCode& code, const ProductCodebook& pcb) {
  return pq_decode(code.indices, pcb);
}

}  // namespace ivfnet
