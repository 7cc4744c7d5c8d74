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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ivfnet/core_math.h"

namespace ivfnet {

/// `count` feature vectors of dimension `dim`, stored row-major as float32,
/// with optional class labels in [0, class_count).
struct FeatureSet {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<float> values;
  std::optional<std::vector<std::uint32_t>> labels;
  std::uint32_t class_count = 0;

  FeatureSet() = default;
  FeatureSet(std::size_t n, std::size_t d) : count(n), dim(d), values(n * d, 0.0f) {}

  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {values.data() + i * dim, dim}; }

  /// Row i widened to double.
  Vector row_as_double(std::size_t i) const;
  /// All rows widened to a double matrix.
  Matrix to_matrix() const;

  bool has_labels() const { return labels.has_value(); }
  std::uint32_t label(std::size_t i) const { return (*labels)[i]; }

  /// Throws NumericError on non-finite entries and PreconditionError on
  /// inconsistent sizes or out-of-range labels.
  void validate() const;

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

}  // namespace ivfnet
