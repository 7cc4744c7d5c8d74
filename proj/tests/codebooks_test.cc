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

#include "ivfnet/codebooks.h"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <limits>

#include "ivfnet/errors.h"

namespace ivfnet {
namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1, double hi = 1) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

std::size_t brute_force_nearest(std::span<const double> x, const Codebook& cb) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cb.size(); ++k) {
    double d = 0;
    for (std::size_t j = 0; j < x.size(); ++j) d += (x[j] - cb.centroid(k)[j]) * (x[j] - cb.centroid(k)[j]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

TEST(KMeans, SeparatedBlobsRecoverMeans) {
  Rng rng(1);
  Matrix data(1000, 2);
  std::array<double, 2> sum0{}, sum1{};
  for (std::size_t i = 0; i < 1000; ++i) {
    const double c = i < 500 ? 0.0 : 100.0;
    for (std::size_t j = 0; j < 2; ++j) {
      data(i, j) = c + rng.normal();
      (i < 500 ? sum0 : sum1)[j] += data(i, j);
    }
  }
  KMeansConfig cfg;
  cfg.n_clusters = 2;
  cfg.seed = 5;
  const Codebook cb = kmeans_train(data, cfg);
  ASSERT_EQ(cb.size(), 2u);
  const std::size_t low = cb.centroid(0)[0] < cb.centroid(1)[0] ? 0 : 1;
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(cb.centroid(low)[j], sum0[j] / 500, 0.5);
    EXPECT_NEAR(cb.centroid(1 - low)[j], sum1[j] / 500, 0.5);
    EXPECT_NEAR(cb.centroid(low)[j], 0.0, 0.5);
    EXPECT_NEAR(cb.centroid(1 - low)[j], 100.0, 0.5);
  }
}

TEST(KMeans, DistinctPointsAreAFixedPoint) {
  const Matrix data = Matrix::from_rows({{0, 0}, {5, 1}, {-3, 7}, {2, 2}});
  KMeansConfig cfg;
  cfg.n_clusters = 4;
  KMeansReport report;
  const Codebook cb = kmeans_train(data, cfg, &report);
  EXPECT_EQ(report.final_error, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t k = vq_assign(data.row(i), cb);
    EXPECT_EQ(squared_distance(data.row(i), cb.centroid(k)), 0.0);
  }
}

TEST(KMeans, SingleClusterIsTheMean) {
  Rng rng(2);
  const Matrix data = random_matrix(57, 3, rng, -5, 5);
  KMeansConfig cfg;
  const Codebook cb = kmeans_train(data, cfg);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < 57; ++i) mean += data(i, j);
    EXPECT_NEAR(cb.centroid(0)[j], mean / 57, 1e-12);
  }
}

TEST(KMeans, ObjectiveNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Matrix data = random_matrix(300, 4, rng, 0, 10);
    KMeansConfig cfg;
    cfg.n_clusters = 12;
    cfg.seed = seed;
    cfg.tol = 0;
    cfg.init = seed % 2 ? KMeansInit::kRandomPoints : KMeansInit::kPlusPlus;
    KMeansReport report;
    kmeans_train(data, cfg, &report);
    ASSERT_GE(report.objective_history.size(), 1u);
    for (std::size_t i = 1; i < report.objective_history.size(); ++i) {
      EXPECT_LE(report.objective_history[i], report.objective_history[i - 1]);
    }
  }
}

TEST(KMeans, DeterministicForASeed) {
  Rng rng(3);
  const Matrix data = random_matrix(200, 5, rng);
  KMeansConfig cfg;
  cfg.n_clusters = 8;
  cfg.seed = 77;
  EXPECT_EQ(kmeans_train(data, cfg).centroids(), kmeans_train(data, cfg).centroids());
  cfg.threads = 3;
  KMeansConfig serial = cfg;
  serial.threads = 1;
  EXPECT_EQ(kmeans_train(data, cfg).centroids(), kmeans_train(data, serial).centroids());
}

TEST(KMeans, KeepsEveryClusterAlive) {
  // Many duplicate points invite empty clusters.
  Matrix data(60, 1);
  for (std::size_t i = 0; i < 60; ++i) data(i, 0) = i < 50 ? 0.0 : static_cast<double>(i);
  KMeansConfig cfg;
  cfg.n_clusters = 6;
  cfg.init = KMeansInit::kRandomPoints;
  const Codebook cb = kmeans_train(data, cfg);
  std::vector<int> used(6, 0);
  for (std::size_t i = 0; i < 60; ++i) used[vq_assign(data.row(i), cb)]++;
  for (int u : used) EXPECT_GT(u, 0);
}

TEST(KMeans, RejectsBadInput) {
  KMeansConfig cfg;
  cfg.n_clusters = 5;
  EXPECT_THROW(kmeans_train(Matrix(3, 2), cfg), PreconditionError);
  Matrix bad(10, 2);
  bad(3, 1) = std::nan("");
  EXPECT_THROW(kmeans_train(bad, cfg), NumericError);
}

TEST(VqAssign, NearestCentroid) {
  const Codebook cb(Matrix::from_rows({{0, 0}, {10, 10}}));
  EXPECT_EQ(vq_assign(Vector{1, 1}, cb), 0u);
  EXPECT_EQ(vq_assign(Vector{5, 5}, cb), 0u);  // equidistant
  EXPECT_THROW(vq_assign(Vector{1, 1, 1}, cb), DimensionError);
}

TEST(VqAssign, MatchesBruteForce) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const Codebook cb(random_matrix(16, 8, rng));
    Vector x(8);
    for (double& v : x) v = rng.uniform(-1, 1);
    ASSERT_EQ(vq_assign(x, cb), brute_force_nearest(x, cb));
  }
}

TEST(Residual, Subtraction) {
  const Codebook cb(Matrix::from_rows({{1, 1}, {3, 4}}));
  EXPECT_EQ(residual(Vector{3, 4}, cb, 0), (Vector{2, 3}));
  EXPECT_EQ(residual(Vector{3, 4}, cb, 1), (Vector{0, 0}));
  Rng rng(5);
  const Vector x = {rng.uniform(), rng.uniform()};
  const Vector r = residual(x, cb, 1);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(r[j], x[j] - cb.centroid(1)[j]);
  EXPECT_THROW(residual(x, cb, 2), PreconditionError);
}

TEST(SplitDims, ContiguousNearEqual) {
  EXPECT_EQ(split_dims(8, 4), (std::vector<std::size_t>{0, 2, 4, 6, 8}));
  EXPECT_EQ(split_dims(10, 4), (std::vector<std::size_t>{0, 3, 6, 8, 10}));
  EXPECT_THROW(split_dims(3, 4), PreconditionError);
}

TEST(PqTrain, SingleBlockEqualsKMeans) {
  Rng rng(6);
  const Matrix data = random_matrix(200, 6, rng);
  KMeansConfig cfg;
  cfg.seed = 9;
  const ProductCodebook pcb = pq_train(data, 1, 8, cfg);
  KMeansConfig km = cfg;
  km.n_clusters = 8;
  km.seed = derive_seed(cfg.seed, 0);
  EXPECT_EQ(pcb.sub_codebook(0).centroids(), kmeans_train(data, km).centroids());
}

TEST(PqTrain, ScalarQuantizersPerCoordinate) {
  Rng rng(7);
  const Matrix data = random_matrix(100, 3, rng);
  const ProductCodebook pcb = pq_train(data, 3, 2, KMeansConfig{});
  EXPECT_EQ(pcb.M(), 3u);
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_EQ(pcb.sub_dim(m), 1u);
    EXPECT_EQ(pcb.sub_codebook(m).size(), 2u);
  }
}

TEST(PqTrain, BlocksMatchPerHalfKMeans) {
  Rng rng(8);
  Matrix data(400, 4);
  for (std::size_t i = 0; i < 400; ++i) {
    const double a = rng.below(2) ? 20.0 : -20.0;
    const double b = rng.below(2) ? 50.0 : 0.0;
    data(i, 0) = a + rng.normal();
    data(i, 1) = a + rng.normal();
    data(i, 2) = b + rng.normal();
    data(i, 3) = b + rng.normal();
  }
  KMeansConfig cfg;
  cfg.seed = 10;
  const ProductCodebook pcb = pq_train(data, 2, 2, cfg);
  for (std::size_t m = 0; m < 2; ++m) {
    Matrix half(400, 2);
    for (std::size_t i = 0; i < 400; ++i) {
      half(i, 0) = data(i, 2 * m);
      half(i, 1) = data(i, 2 * m + 1);
    }
    KMeansConfig km = cfg;
    km.n_clusters = 2;
    km.seed = derive_seed(cfg.seed, m);
    EXPECT_EQ(pcb.sub_codebook(m).centroids(), kmeans_train(half, km).centroids());
  }
}

ProductCodebook small_pcb(Rng& rng, std::size_t d, std::size_t M, std::size_t K) {
  const auto offsets = split_dims(d, M);
  std::vector<Codebook> subs;
  for (std::size_t m = 0; m < M; ++m) subs.emplace_back(random_matrix(K, offsets[m + 1] - offsets[m], rng));
  return ProductCodebook(offsets, std::move(subs));
}

TEST(PqEncode, StitchedCodewordEncodesExactly) {
  Rng rng(9);
  const ProductCodebook pcb = small_pcb(rng, 6, 3, 5);
  const std::vector<CodeIndex> code = {4, 0, 2};
  const Vector c = pq_decode(code, pcb);
  EXPECT_EQ(pq_encode(c, pcb).indices, code);
}

TEST(PqEncode, MatchesExhaustiveSearch) {
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const ProductCodebook pcb = small_pcb(rng, 4, 2, 4);
    Vector r(4);
    for (double& v : r) v = rng.uniform(-1, 1);
    double best = std::numeric_limits<double>::infinity();
    std::vector<CodeIndex> best_code;
    for (CodeIndex a = 0; a < 4; ++a) {
      for (CodeIndex b = 0; b < 4; ++b) {
        const std::vector<CodeIndex> code = {a, b};
        const double d = squared_distance(r, pq_decode(code, pcb));
        if (d < best) {
          best = d;
          best_code = code;
        }
      }
    }
    ASSERT_EQ(pq_encode(r, pcb).indices, best_code);
  }
}

TEST(PqEncode, ZeroVectorFindsZeroSubCodewords) {
  const ProductCodebook pcb({0, 1, 2}, {Codebook(Matrix::from_rows({{3}, {0}, {-2}})),
                                        Codebook(Matrix::from_rows({{0}, {1}, {5}}))});
  EXPECT_EQ(pq_encode(Vector{0, 0}, pcb).indices, (std::vector<CodeIndex>{1, 0}));
}

TEST(PqEncode, PerBlockOptimal) {
  Rng rng(11);
  const ProductCodebook pcb = small_pcb(rng, 8, 4, 6);
  for (int trial = 0; trial < 100; ++trial) {
    Vector r(8);
    for (double& v : r) v = rng.uniform(-1, 1);
    const PQCode code = pq_encode(r, pcb);
    for (std::size_t m = 0; m < 4; ++m) {
      const auto block = std::span<const double>(r).subspan(pcb.offset(m), pcb.sub_dim(m));
      const double own = squared_distance(block, pcb.sub_codebook(m).centroid(code.indices[m]));
      for (std::size_t k = 0; k < 6; ++k) {
        EXPECT_LE(own, squared_distance(block, pcb.sub_codebook(m).centroid(k)));
      }
    }
  }
}

TEST(PqEncode, NestedCodebooksNeverIncreaseError) {
  Rng rng(12);
  const Matrix big = random_matrix(8, 2, rng);
  for (std::size_t K = 1; K < 8; ++K) {
    Matrix small(K, 2), larger(K + 1, 2);
    for (std::size_t k = 0; k <= K; ++k) {
      for (std::size_t j = 0; j < 2; ++j) {
        if (k < K) small(k, j) = big(k, j);
        larger(k, j) = big(k, j);
      }
    }
    const ProductCodebook a({0, 2}, {Codebook(small)});
    const ProductCodebook b({0, 2}, {Codebook(larger)});
    for (int trial = 0; trial < 50; ++trial) {
      const Vector r = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      EXPECT_LE(squared_distance(r, pq_decode(pq_encode(r, b), b)),
                squared_distance(r, pq_decode(pq_encode(r, a), a)));
    }
  }
}

TEST(PqDecode, SingleBlockReturnsCentroid) {
  Rng rng(13);
  const ProductCodebook pcb = small_pcb(rng, 3, 1, 4);
  const auto c = pcb.sub_codebook(0).centroid(2);
  EXPECT_EQ(pq_decode(std::vector<CodeIndex>{2}, pcb), Vector(c.begin(), c.end()));
}

TEST(PqDecode, EqualsSumOfPaddedCodewords) {
  Rng rng(14);
  const ProductCodebook pcb = small_pcb(rng, 7, 3, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<CodeIndex> code = {static_cast<CodeIndex>(rng.below(4)),
                                         static_cast<CodeIndex>(rng.below(4)),
                                         static_cast<CodeIndex>(rng.below(4))};
    Vector sum(7, 0.0);
    for (std::size_t m = 0; m < 3; ++m) {
      const auto c = pcb.sub_codebook(m).centroid(code[m]);
      for (std::size_t j = 0; j < c.size(); ++j) sum[pcb.offset(m) + j] += c[j];
    }
    EXPECT_EQ(pq_decode(code, pcb), sum);
    EXPECT_EQ(pq_decode(pq_encode(sum, pcb), pcb), sum);
  }
  EXPECT_THROW(pq_decode(std::vector<CodeIndex>{0, 0}, pcb), DimensionError);
  EXPECT_THROW(pq_decode(std::vector<CodeIndex>{0, 9, 0}, pcb), PreconditionError);
}

}  // namespace
}  // namespace ivfnet
