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

#include <string>

#include "ivfnet/errors.h"

namespace ivfnet {

DistanceLUT build_lut(std::span<const double> r_query, const ProductCodebook& pcb,
                      std::size_t bin) {
  if (r_query.size() != pcb.dim()) {
    throw DimensionError("build_lut: residual has dim " + std::to_string(r_query.size()) +
                         ", codebook has dim " + std::to_string(pcb.dim()));
  }
  DistanceLUT lut;
  lut.M = pcb.M();
  lut.K = pcb.K();
  lut.bin = bin;
  lut.tables.resize(lut.M * lut.K);
  for (std::size_t m = 0; m < lut.M; ++m) {
    const auto sub = r_query.subspan(pcb.offset(m), pcb.sub_dim(m));
    const Codebook& cb = pcb.sub_codebook(m);
    double* row = lut.tables.data() + m * lut.K;
    for (std::size_t k = 0; k < lut.K; ++k) row[k] = squared_distance(sub, cb.centroid(k));
  }
  return lut;
}

double adc_distance(const DistanceLUT& lut, std::span<const CodeIndex> code) {
  if (code.size() != lut.M) {
    throw DimensionError("adc_distance: code length " + std::to_string(code.size()) +
                         " differs from M = " + std::to_string(lut.M));
  }
  double acc = 0.0;
  const double* row = lut.tables.data();
  for (std::size_t m = 0; m < lut.M; ++m, row += lut.K) {
    if (code[m] >= lut.K) throw PreconditionError("adc_distance: code index out of range");
    acc += row[code[m]];
  }
  return acc;
}

std::vector<double> adc_scan(const DistanceLUT& lut, std::span<const CodeIndex> codes) {
  if (lut.M == 0 || codes.size() % lut.M != 0) {
    throw DimensionError("adc_scan: code array length is not a multiple of M");
  }
  const std::size_t n = codes.size() / lut.M;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = adc_distance(lut, codes.subspan(i * lut.M, lut.M));
  return out;
}

std::vector<double> adc_scan(const DistanceLUT& lut, const std::vector<PQCode>& codes) {
  std::vector<double> out;
  out.reserve(codes.size());
  for (const auto& c : codes) out.push_back(adc_distance(lut, c));
  return out;
}

}  // namespace ivfnet
