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

#include "ivfnet/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ivfnet/errors.h"

namespace ivfnet {

namespace {

double min_abs(const Vector& v) {
  double m = std::numeric_limits<double>::infinity();
  for (double x : v) m = std::min(m, std::abs(x));
  return m;
}

}  // namespace

GradCheckResult gradient_check(const std::vector<Vector>& xs,
                               const std::vector<std::uint32_t>& labels,
                               const NetworkParams& params, const NetworkConfig& cfg,
                               const GradCheckOptions& opts) {
  NetworkParams probe = params;
  probe.frozen.fill(false);

  std::vector<ForwardTrace> traces;
  traces.reserve(xs.size());
  for (const auto& x : xs) traces.push_back(forward(x, probe, cfg, Mode::kTrain));
  const NetworkParams analytic = backward(traces, labels, probe, cfg);

  GradCheckResult result;
  for (std::size_t m = 0; m < kParamCount; ++m) {
    Matrix& w = probe.mats[m];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w.data()[j];
      w.data()[j] = saved + opts.step;
      const double up = batch_objective(xs, labels, probe, cfg);
      w.data()[j] = saved - opts.step;
      const double down = batch_objective(xs, labels, probe, cfg);
      w.data()[j] = saved;

      const double numeric = (up - down) / (2.0 * opts.step);
      const double exact = analytic.mats[m].data()[j];
      const double scale = std::max({std::abs(exact), std::abs(numeric), opts.scale_floor});
      const double rel = std::abs(exact - numeric) / scale;
      ++result.entries;
      if (rel > opts.tolerance) ++result.failures;
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        std::ostringstream os;
        os.precision(12);
        os << kParamNames[m] << "[" << j / w.cols() << "," << j % w.cols()
           << "] analytic=" << exact << " numeric=" << numeric;
        result.worst = os.str();
      }
    }
  }
  return result;
}

GradCheckInstance make_gradcheck_instance(Objective objective, bool residual, std::uint64_t seed,
                                          double kink_margin) {
  constexpr std::size_t kD = 5, kN = 3, kM = 2, kK = 3, kC = 2, kBatch = 4;
  for (std::uint64_t attempt = 0; attempt < 10000; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    GradCheckInstance inst;
    NetworkConfig& cfg = inst.config;
    cfg.variant = Variant::kCustom;
    cfg.d = kD;
    cfg.selector_size = kN;
    cfg.M = kM;
    cfg.K = kK;
    cfg.C = kC;
    cfg.objective = objective;
    cfg.alpha = objective == Objective::kF10 ? 0 : 1;
    cfg.residual_enabled = residual;
    cfg.d_r = residual ? kD : 0;
    cfg.h = residual ? kD : 0;
    cfg.hyper = {rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0),
                 rng.uniform(0.1, 3.0)};
    cfg.validate();

    inst.params = init_params(cfg, rng.next_u64());
    for (auto& m : inst.params.mats) {
      for (double& v : m.data()) v = rng.uniform(-1.0, 1.0);
    }
    for (std::size_t i = 0; i < kBatch; ++i) {
      Vector x(kD);
      for (double& v : x) v = rng.normal();
      inst.xs.push_back(std::move(x));
      inst.labels.push_back(static_cast<std::uint32_t>(rng.below(kC)));
    }

    bool smooth = true;
    for (const auto& x : inst.xs) {
      const ForwardTrace t = forward(x, inst.params, cfg, Mode::kTrain);
      smooth = smooth && min_abs(t.a1) > kink_margin && min_abs(t.a2) > kink_margin &&
               (!residual || min_abs(t.a_r) > kink_margin);
    }
    if (smooth) return inst;
  }
  throw Error("make_gradcheck_instance: could not draw a smooth instance");
}

std::vector<GradSuiteCase> run_gradcheck_suite(std::size_t instances, std::uint64_t seed,
                                               const GradCheckOptions& opts) {
  std::vector<GradSuiteCase> cases;
  std::uint64_t stream = 0;
  for (Objective obj : {Objective::kF11, Objective::kF10, Objective::kF2}) {
    for (bool residual : {false, true}) {
      GradSuiteCase c;
      c.objective = obj;
      c.residual = residual;
      for (std::size_t i = 0; i < instances; ++i) {
        const auto inst = make_gradcheck_instance(obj, residual, derive_seed(seed, stream++));
        const auto r = gradient_check(inst.xs, inst.labels, inst.params, inst.config, opts);
        ++c.instances;
        if (!r.passed()) ++c.failed_instances;
        if (r.max_rel_error >= c.max_rel_error) {
          c.max_rel_error = r.max_rel_error;
          c.worst = r.worst;
        }
      }
      cases.push_back(std::move(c));
    }
  }
  return cases;
}

}  // namespace ivfnet
