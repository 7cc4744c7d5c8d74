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

#include "ivfnet/adc.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "ivfnet/errors.h"

namespace ivfnet {
namespace {

ProductCodebook random_pcb(Rng& rng, std::size_t d, std::size_t M, std::size_t K) {
  const auto offsets = split_dims(d, M);
  std::vector<Codebook> subs;
  for (std::size_t m = 0; m < M; ++m) {
    Matrix c(K, offsets[m + 1] - offsets[m]);
    for (double& v : c.data()) v = rng.uniform(-1, 1);
    subs.emplace_back(std::move(c));
  }
  return ProductCodebook(offsets, std::move(subs));
}

std::vector<CodeIndex> random_code(Rng& rng, std::size_t M, std::size_t K) {
  std::vector<CodeIndex> code(M);
  for (auto& c : code) c = static_cast<CodeIndex>(rng.below(K));
  return code;
}

TEST(BuildLut, ZeroAtOwnCodeword) {
  Rng rng(1);
  const ProductCodebook pcb = random_pcb(rng, 8, 4, 5);
  const std::vector<CodeIndex> code = {1, 4, 0, 3};
  const DistanceLUT lut = build_lut(pq_decode(code, pcb), pcb);
  for (std::size_t m = 0; m < 4; ++m) EXPECT_EQ(lut.at(m, code[m]), 0.0);
  EXPECT_EQ(adc_distance(lut, code), 0.0);
}

TEST(BuildLut, SymmetricScalarCase) {
  const ProductCodebook pcb({0, 1}, {Codebook(Matrix::from_rows({{0}, {2}}))});
  const DistanceLUT lut = build_lut(Vector{1}, pcb);
  EXPECT_EQ(lut.tables, (std::vector<double>{1, 1}));
}

TEST(BuildLut, EntriesAreBlockDistances) {
  Rng rng(2);
  const ProductCodebook pcb = random_pcb(rng, 4, 2, 4);
  Vector r(4);
  for (double& v : r) v = rng.uniform(-1, 1);
  const DistanceLUT lut = build_lut(r, pcb, 3);
  EXPECT_EQ(lut.bin, 3u);
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t k = 0; k < 4; ++k) {
      const auto c = pcb.sub_codebook(m).centroid(k);
      double d = 0;
      for (std::size_t j = 0; j < 2; ++j) d += (r[2 * m + j] - c[j]) * (r[2 * m + j] - c[j]);
      EXPECT_NEAR(lut.at(m, k), d, 1e-15);
    }
  }
  EXPECT_THROW(build_lut(Vector{1, 2, 3}, pcb), DimensionError);
}

TEST(AdcDistance, TwoLookupsOneAdd) {
  DistanceLUT lut;
  lut.M = 2;
  lut.K = 2;
  lut.tables = {1, 2, 3, 4};
  EXPECT_EQ(adc_distance(lut, std::vector<CodeIndex>{1, 0}), 5.0);
  EXPECT_THROW(adc_distance(lut, std::vector<CodeIndex>{1}), DimensionError);
  EXPECT_THROW(adc_distance(lut, std::vector<CodeIndex>{2, 0}), PreconditionError);
}

TEST(AdcDistance, EqualsDecodedDistance) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const ProductCodebook pcb = random_pcb(rng, 12, 3, 7);
    Vector r(12);
    for (double& v : r) v = rng.uniform(-2, 2);
    const auto code = random_code(rng, 3, 7);
    const double expect = squared_distance(r, pq_decode(code, pcb));
    const double got = adc_distance(build_lut(r, pcb), code);
    ASSERT_NEAR(got, expect, 1e-9 * std::max(expect, 1e-300));
    ASSERT_GE(got, 0.0);
  }
}

TEST(AdcScan, EmptyAndSingleton) {
  Rng rng(4);
  const ProductCodebook pcb = random_pcb(rng, 4, 2, 3);
  const DistanceLUT lut = build_lut(Vector{0.1, 0.2, 0.3, 0.4}, pcb);
  EXPECT_TRUE(adc_scan(lut, std::vector<PQCode>{}).empty());
  const PQCode c{{2, 1}};
  EXPECT_EQ(adc_scan(lut, std::vector<PQCode>{c}), (std::vector<double>{adc_distance(lut, c)}));
  EXPECT_THROW(adc_scan(lut, std::vector<CodeIndex>{1, 2, 0}), DimensionError);
}

TEST(AdcScan, MatchesPerElementDistance) {
  Rng rng(5);
  const ProductCodebook pcb = random_pcb(rng, 16, 4, 16);
  Vector r(16);
  for (double& v : r) v = rng.uniform(-1, 1);
  const DistanceLUT lut = build_lut(r, pcb);
  std::vector<PQCode> codes;
  std::vector<CodeIndex> flat;
  for (int i = 0; i < 1000; ++i) {
    codes.push_back({random_code(rng, 4, 16)});
    flat.insert(flat.end(), codes.back().indices.begin(), codes.back().indices.end());
  }
  const auto scanned = adc_scan(lut, codes);
  EXPECT_EQ(adc_scan(lut, flat), scanned);
  for (std::size_t i = 0; i < codes.size(); ++i) EXPECT_EQ(scanned[i], adc_distance(lut, codes[i]));
}

TEST(AdcScan, RankingMatchesReconstructionDistance) {
  Rng rng(6);
  const ProductCodebook pcb = random_pcb(rng, 8, 4, 8);
  Vector r(8);
  for (double& v : r) v = rng.uniform(-1, 1);
  std::vector<PQCode> codes;
  for (int i = 0; i < 500; ++i) codes.push_back({random_code(rng, 4, 8)});
  const auto adc = adc_scan(build_lut(r, pcb), codes);
  std::vector<double> exact;
  for (const auto& c : codes) exact.push_back(squared_distance(r, pq_decode(c, pcb)));

  auto order = [](const std::vector<double>& d) {
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
    return idx;
  };
  // Compare rankings with rounding-level ties merged.
  const auto oa = order(adc), oe = order(exact);
  for (std::size_t i = 0; i < oa.size(); ++i) {
    EXPECT_NEAR(exact[oa[i]], exact[oe[i]], 1e-12);
  }
}

}  // namespace
}  // namespace ivfnet
