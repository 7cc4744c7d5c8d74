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

#include "ivfnet/feature_set.h"

#include <cmath>
#include <string>

#include "ivfnet/errors.h"

namespace ivfnet {

Vector FeatureSet::row_as_double(std::size_t i) const {
  const auto r = row(i);
  return Vector(r.begin(), r.end());
}

Matrix FeatureSet::to_matrix() const {
  Matrix m(count, dim);
  for (std::size_t i = 0; i < values.size(); ++i) m.data()[i] = values[i];
  return m;
}

void FeatureSet::validate() const {
  if (values.size() != count * dim) {
    throw PreconditionError("FeatureSet: " + std::to_string(values.size()) +
                            " values for count*dim = " + std::to_string(count * dim));
  }
  for (float v : values) {
    if (!std::isfinite(v)) throw NumericError("FeatureSet: non-finite feature value");
  }
  if (labels) {
    if (labels->size() != count) throw PreconditionError("FeatureSet: label count mismatch");
    for (auto l : *labels) {
      if (l >= class_count) {
        throw PreconditionError("FeatureSet: label " + std::to_string(l) +
                                " outside class_count " + std::to_string(class_count));
      }
    }
  }
}

}  // namespace ivfnet
