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

// Asymmetric distance computation. A query residual is compared against
// product-quantized database residuals through M per-block tables, so each
// distance costs M look-ups and additions.

#include <cstddef>
#include <span>
#include <vector>

#include "ivfnet/codebooks.h"

namespace ivfnet {

/// tables[m * K + k] = squared distance between block m of the query
/// residual and sub-codeword k of constituent codebook m.
struct DistanceLUT {
  std::size_t M = 0;
  std::size_t K = 0;
  std::vector<double> tables;
  std::size_t bin = 0;

  double at(std::size_t m, std::size_t k) const { return tables[m * K + k]; }
  std::span<const double> block(std::size_t m) const { return {tables.data() + m * K, K}; }
};

DistanceLUT build_lut(std::span<const double> r_query, const ProductCodebook& pcb,
                      std::size_t bin = 0);

double adc_distance(const DistanceLUT& lut, std::span<const CodeIndex> code);
inline double adc_distance(const DistanceLUT& lut, const PQCode& code) {
  return adc_distance(lut, code.indices);
}

/// Distances for `codes`, a flat array of consecutive M-index codes, in
/// input order.
std::vector<double> adc_scan(const DistanceLUT& lut, std::span<const CodeIndex> codes);
std::vector<double> adc_scan(const DistanceLUT& lut, const std::vector<PQCode>& codes);

}  // namespace ivfnet
