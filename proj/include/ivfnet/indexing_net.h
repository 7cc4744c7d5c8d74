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

// The trainable indexing network:
//
//   x ──W1,ReLU──> z' ──softmax──> b~' ──C1,softmax──> s'      (bin selection)
//                                   │
//                          R1,ReLU,R2 (optional residual block)
//                                   v
//   r = Q x - R2 relu(R1 b~')   or   r = x
//   r ──W2,ReLU──> z ──block softmax──> b~ ──C2,softmax──> s   (encoder)
//
// At test time the bin of an item is the argmax of z' and its code is the
// block one-hot projection of z. The classifiers C1 and C2 only exist at
// training time.
//
// The bin-selection block is a block-structured encoder of its own: one
// block of N values for an inverted file, or two blocks of K_sel values for
// an inverted multi-index whose K_sel^2 cells are ranked by
// z'_1[k] + z'_2[l].

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ivfnet/core_math.h"
#include "ivfnet/feature_set.h"
#include "ivfnet/subic_encoder.h"

namespace ivfnet {

enum class Objective : std::uint8_t { kF11 = 0, kF10 = 1, kF2 = 2 };

enum class Variant : std::uint8_t {
  kSubicI = 0,    // no residual, F11: selector and encoder trained independently
  kSubicR = 1,    // residual link, F10, pre-trained selector held fixed
  kSubicJ = 2,    // no residual, F2: joint classification from s' + s
  kSubicImi = 3,  // as kSubicI with a two-block selector
  kCustom = 4,    // any objective / residual combination (gradient checks)
};

std::string_view to_string(Objective o);
std::string_view to_string(Variant v);
Objective objective_from_string(std::string_view s);
Variant variant_from_string(std::string_view s);

struct HyperParams {
  double mu1 = 5.0;
  double gamma1 = 6.0;
  double mu2 = 0.6;
  double gamma2 = 0.9;

  /// All four weights multiplied by f; their ratios are kept.
  HyperParams scaled(double f) const { return {mu1 * f, gamma1 * f, mu2 * f, gamma2 * f}; }

  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

struct NetworkConfig {
  Variant variant = Variant::kSubicI;
  std::size_t d = 0;                // input feature dim
  std::size_t selector_blocks = 1;  // 1 (IVF) or 2 (IMI)
  std::size_t selector_size = 0;    // N, or K_sel per block
  std::size_t M = 0;
  std::size_t K = 0;
  std::size_t C = 0;  // classes
  bool residual_enabled = false;
  std::size_t d_r = 0;  // residual space dim
  std::size_t h = 0;    // residual hidden dim
  int alpha = 1;
  Objective objective = Objective::kF11;
  HyperParams hyper;
  bool l2_normalize_input = false;

  std::size_t selector_width() const { return selector_blocks * selector_size; }
  std::size_t code_width() const { return M * K; }
  std::size_t encoder_input() const { return residual_enabled ? d_r : d; }
  std::uint64_t bin_count() const;

  /// Throws PreconditionError when sizes are invalid or the objective,
  /// alpha and residual switch disagree with the variant.
  void validate() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Variant defaults: residual dims d_r = h = d; the two-block selector uses
/// mu1 = 4, gamma1 = 5.
NetworkConfig make_network_config(Variant variant, std::size_t d, std::size_t selector_size,
                                  std::size_t M, std::size_t K, std::size_t C);

enum ParamId : std::size_t { kW1 = 0, kQ, kR1, kR2, kW2, kC1, kC2, kParamCount };

inline constexpr std::array<std::string_view, kParamCount> kParamNames = {"W1", "Q",  "R1", "R2",
                                                                         "W2", "C1", "C2"};

struct NetworkParams {
  std::array<Matrix, kParamCount> mats;
  std::array<bool, kParamCount> frozen{};

  Matrix& operator[](ParamId id) { return mats[id]; }
  const Matrix& operator[](ParamId id) const { return mats[id]; }

  /// Throws DimensionError when a matrix shape disagrees with cfg.
  void check_shapes(const NetworkConfig& cfg) const;

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)) for every matrix.
NetworkParams init_params(const NetworkConfig& cfg, std::uint64_t seed);

/// Fresh parameters for `cfg` whose W1 and C1 are copied from `pretrained`
/// and frozen.
NetworkParams adopt_bin_selector(const NetworkParams& pretrained, const NetworkConfig& cfg,
                                 std::uint64_t seed);

NetworkParams zeros_like(const NetworkParams& p);

enum class Mode { kTrain, kTest };

struct ForwardTrace {
  Mode mode = Mode::kTest;
  Vector x;        // network input (after optional l2 normalization)
  Vector a1;       // W1 x
  Vector z_prime;  // relu(a1)
  RelaxedBlockCode bt_prime;
  Vector a_r;  // R1 b~'
  Vector v;    // relu(a_r)
  Vector r;
  Vector a2;  // W2 r
  Vector z;   // relu(a2)
  RelaxedBlockCode bt;
  Vector s_prime;  // train only
  Vector s;        // train only
};

/// Throws NumericError when an activation is non-finite.
ForwardTrace forward(std::span<const double> x, const NetworkParams& params,
                     const NetworkConfig& cfg, Mode mode);

/// -log2(max(p[c], 1e-12)) / log2(C).
double cross_entropy(std::span<const double> p, std::size_t c, std::size_t C);

double loss_L1(std::span<const ForwardTrace> traces, std::span<const std::uint32_t> labels,
               int alpha);
/// Uses s' + s as printed (it sums to 2), clamped to [1e-12, 2].
double loss_L2(std::span<const ForwardTrace> traces, std::span<const std::uint32_t> labels);
double loss_omega(std::span<const ForwardTrace> traces, const HyperParams& hyper);
double loss_total(std::span<const ForwardTrace> traces, std::span<const std::uint32_t> labels,
                  const NetworkConfig& cfg);

/// Forward every sample in train mode and evaluate loss_total.
double batch_objective(std::span<const Vector> xs, std::span<const std::uint32_t> labels,
                       const NetworkParams& params, const NetworkConfig& cfg);

/// Exact gradients of scale * loss_total. Frozen matrices get zeros.
NetworkParams backward(std::span<const ForwardTrace> traces, std::span<const std::uint32_t> labels,
                       const NetworkParams& params, const NetworkConfig& cfg, double scale = 1.0);

struct TrainConfig {
  std::size_t batch_size = 200;
  std::size_t num_batches = 1000;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct TrainResult {
  NetworkParams params;
  std::vector<double> loss_log;  // objective of every batch
};

/// Mini-batch SGD with momentum; batches drawn with replacement from the
/// seeded stream. Starts from `initial` when given (its frozen mask is
/// kept), else from init_params. The residual variant requires `initial`
/// with a frozen, pre-trained selector. Throws DivergenceError on a
/// non-finite loss.
TrainResult train(const FeatureSet& data, const NetworkConfig& cfg, const TrainConfig& tcfg,
                  const NetworkParams* initial = nullptr);

/// Test-time outputs for one item.
struct Encoding {
  Vector z_prime;
  Vector z;
  std::uint64_t bin = 0;  // argmax z', or k * K_sel + l for two blocks
  BlockCode code;
};

Encoding encode(std::span<const double> x, const NetworkParams& params, const NetworkConfig& cfg);

/// A trained network with the seed it was trained from.
struct Network {
  NetworkConfig config;
  NetworkParams params;
  std::uint64_t seed = 0;

  friend bool operator==(const Network&, const Network&) = default;
};

}  // namespace ivfnet
