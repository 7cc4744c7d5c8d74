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

// Central finite-difference checks of the analytic network gradients.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ivfnet/indexing_net.h"

namespace ivfnet {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  /// Relative errors are taken against max(|analytic|, |numeric|, scale_floor).
  double scale_floor = 1e-3;
};

struct GradCheckResult {
  std::size_t entries = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "<matrix>[r,c] analytic=... numeric=..."

  bool passed() const { return failures == 0; }
};

/// Compares backward() against central differences of batch_objective for
/// every entry of every non-empty matrix. Frozen flags are ignored.
GradCheckResult gradient_check(const std::vector<Vector>& xs,
                               const std::vector<std::uint32_t>& labels,
                               const NetworkParams& params, const NetworkConfig& cfg,
                               const GradCheckOptions& opts = {});

/// A random tiny problem: network, inputs and labels. Instances whose
/// ReLU pre-activations come within `kink_margin` of zero are redrawn so
/// the loss is smooth inside the difference stencil.
struct GradCheckInstance {
  NetworkConfig config;
  NetworkParams params;
  std::vector<Vector> xs;
  std::vector<std::uint32_t> labels;
};

GradCheckInstance make_gradcheck_instance(Objective objective, bool residual,
                                          std::uint64_t seed, double kink_margin = 1e-3);

struct GradSuiteCase {
  Objective objective;
  bool residual;
  std::size_t instances = 0;
  std::size_t failed_instances = 0;
  double max_rel_error = 0.0;
  std::string worst;
};

/// Every objective with and without the residual block, `instances`
/// random instances each.
std::vector<GradSuiteCase> run_gradcheck_suite(std::size_t instances, std::uint64_t seed,
                                               const GradCheckOptions& opts = {});

}  // namespace ivfnet
