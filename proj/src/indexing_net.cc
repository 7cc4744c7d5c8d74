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

#include "ivfnet/indexing_net.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "ivfnet/errors.h"

namespace ivfnet {

namespace {

constexpr double kInvLn2 = 1.0 / std::numbers::ln2;

void require(bool ok, const std::string& what) {
  if (!ok) throw PreconditionError("NetworkConfig: " + what);
}

void check_finite(const Vector& v, const char* stage) {
  if (!all_finite(v)) throw NumericError(std::string("forward: non-finite activation at ") + stage);
}

Vector softmax_backward(std::span<const double> p, std::span<const double> g) {
  double inner = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) inner += g[k] * p[k];
  Vector out(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = p[k] * (g[k] - inner);
  return out;
}

void mask_relu(Vector& grad, const Vector& pre) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(pre[i] > 0.0)) grad[i] = 0.0;
  }
}

// d/dp of -log2(max(p, floor)) / log2(C).
double cross_entropy_grad(double p, double inv_log2_c) {
  return p < kLogFloor ? 0.0 : -inv_log2_c * kInvLn2 / p;
}

void check_batch(std::span<const ForwardTrace> traces, std::span<const std::uint32_t> labels,
                 const char* who) {
  if (traces.empty()) throw PreconditionError(std::string(who) + ": empty batch");
  if (traces.size() != labels.size()) {
    throw DimensionError(std::string(who) + ": traces and labels differ in length");
  }
  for (const auto& t : traces) {
    if (t.mode != Mode::kTrain || t.s.empty() || t.s_prime.empty()) {
      throw PreconditionError(std::string(who) + ": traces must come from a train-mode forward");
    }
  }
}

void fill_uniform(Matrix& m, double limit, Rng& rng) {
  for (double& v : m.data()) v = rng.uniform(-limit, limit);
}

}  // namespace

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::kF11: return "F11";
    case Objective::kF10: return "F10";
    case Objective::kF2: return "F2";
  }
  return "?";
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kSubicI: return "subic-i";
    case Variant::kSubicR: return "subic-r";
    case Variant::kSubicJ: return "subic-j";
    case Variant::kSubicImi: return "subic-imi";
    case Variant::kCustom: return "custom";
  }
  return "?";
}

Objective objective_from_string(std::string_view s) {
  if (s == "F11") return Objective::kF11;
  if (s == "F10") return Objective::kF10;
  if (s == "F2") return Objective::kF2;
  throw PreconditionError("unknown objective '" + std::string(s) + "'");
}

Variant variant_from_string(std::string_view s) {
  for (Variant v : {Variant::kSubicI, Variant::kSubicR, Variant::kSubicJ, Variant::kSubicImi,
                    Variant::kCustom}) {
    if (to_string(v) == s) return v;
  }
  throw PreconditionError("unknown variant '" + std::string(s) + "'");
}

std::uint64_t NetworkConfig::bin_count() const {
  return selector_blocks == 1 ? std::uint64_t{selector_size}
                              : std::uint64_t{selector_size} * selector_size;
}

void NetworkConfig::validate() const {
  require(d >= 1, "d must be positive");
  require(selector_blocks == 1 || selector_blocks == 2, "selector_blocks must be 1 or 2");
  require(selector_size >= 1, "selector_size must be positive");
  require(M >= 1 && K >= 1, "M and K must be positive");
  require(K <= std::size_t{std::numeric_limits<CodeIndex>::max()} + 1, "K too large");
  require(selector_blocks == 1 || selector_size <= std::numeric_limits<std::uint16_t>::max(),
          "two-block selector size too large");
  require(C >= 2, "at least two classes are required");
  require(!residual_enabled || (d_r >= 1 && h >= 1), "residual dims must be positive");
  require(alpha == 0 || alpha == 1, "alpha must be 0 or 1");
  require(objective != Objective::kF11 || alpha == 1, "F11 requires alpha = 1");
  require(objective != Objective::kF10 || alpha == 0, "F10 requires alpha = 0");
  require(hyper.mu1 >= 0 && hyper.gamma1 >= 0 && hyper.mu2 >= 0 && hyper.gamma2 >= 0,
          "hyper-parameters must be nonnegative");
  switch (variant) {
    case Variant::kSubicI:
      require(objective == Objective::kF11 && !residual_enabled && selector_blocks == 1,
              "subic-i is F11 without residual and with a single-block selector");
      break;
    case Variant::kSubicR:
      require(objective == Objective::kF10 && residual_enabled && selector_blocks == 1,
              "subic-r is F10 with the residual block and a single-block selector");
      break;
    case Variant::kSubicJ:
      require(objective == Objective::kF2 && !residual_enabled && selector_blocks == 1,
              "subic-j is F2 without residual and with a single-block selector");
      break;
    case Variant::kSubicImi:
      require(objective == Objective::kF11 && !residual_enabled && selector_blocks == 2,
              "subic-imi is F11 without residual and with a two-block selector");
      break;
    case Variant::kCustom:
      break;
  }
}

NetworkConfig make_network_config(Variant variant, std::size_t d, std::size_t selector_size,
                                  std::size_t M, std::size_t K, std::size_t C) {
  NetworkConfig cfg;
  cfg.variant = variant;
  cfg.d = d;
  cfg.selector_size = selector_size;
  cfg.M = M;
  cfg.K = K;
  cfg.C = C;
  switch (variant) {
    case Variant::kSubicR:
      cfg.objective = Objective::kF10;
      cfg.alpha = 0;
      cfg.residual_enabled = true;
      cfg.d_r = d;
      cfg.h = d;
      break;
    case Variant::kSubicJ:
      cfg.objective = Objective::kF2;
      cfg.alpha = 0;
      break;
    case Variant::kSubicImi:
      cfg.selector_blocks = 2;
      cfg.hyper.mu1 = 4.0;
      cfg.hyper.gamma1 = 5.0;
      break;
    case Variant::kSubicI:
    case Variant::kCustom:
      break;
  }
  cfg.validate();
  return cfg;
}

void NetworkParams::check_shapes(const NetworkConfig& cfg) const {
  const std::size_t sel = cfg.selector_width();
  const std::size_t code = cfg.code_width();
  const std::size_t dr = cfg.residual_enabled ? cfg.d_r : 0;
  const std::size_t h = cfg.residual_enabled ? cfg.h : 0;
  const std::size_t q_cols = cfg.residual_enabled ? cfg.d : 0;
  const std::size_t r1_cols = cfg.residual_enabled ? sel : 0;
  const std::array<std::pair<std::size_t, std::size_t>, kParamCount> want = {{
      {sel, cfg.d},
      {dr, q_cols},
      {h, r1_cols},
      {dr, h},
      {code, cfg.encoder_input()},
      {cfg.C, sel},
      {cfg.C, code},
  }};
  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (mats[i].rows() != want[i].first || mats[i].cols() != want[i].second) {
      throw DimensionError("NetworkParams: " + std::string(kParamNames[i]) + " is " +
                           std::to_string(mats[i].rows()) + "x" + std::to_string(mats[i].cols()) +
                           ", expected " + std::to_string(want[i].first) + "x" +
                           std::to_string(want[i].second));
    }
  }
}

NetworkParams init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t sel = cfg.selector_width();
  const std::size_t code = cfg.code_width();
  NetworkParams p;
  p[kW1] = Matrix(sel, cfg.d);
  if (cfg.residual_enabled) {
    p[kQ] = Matrix(cfg.d_r, cfg.d);
    p[kR1] = Matrix(cfg.h, sel);
    p[kR2] = Matrix(cfg.d_r, cfg.h);
  }
  p[kW2] = Matrix(code, cfg.encoder_input());
  p[kC1] = Matrix(cfg.C, sel);
  p[kC2] = Matrix(cfg.C, code);
  for (std::size_t i = 0; i < kParamCount; ++i) {
    Matrix& m = p.mats[i];
    if (m.empty()) continue;
    Rng rng(derive_seed(seed, i));
    fill_uniform(m, std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols())), rng);
  }
  return p;
}

NetworkParams adopt_bin_selector(const NetworkParams& pretrained, const NetworkConfig& cfg,
                                 std::uint64_t seed) {
  NetworkParams p = init_params(cfg, seed);
  for (ParamId id : {kW1, kC1}) {
    if (pretrained[id].rows() != p[id].rows() || pretrained[id].cols() != p[id].cols()) {
      throw DimensionError("adopt_bin_selector: pretrained " + std::string(kParamNames[id]) +
                           " has the wrong shape");
    }
    p[id] = pretrained[id];
    p.frozen[id] = true;
  }
  return p;
}

NetworkParams zeros_like(const NetworkParams& p) {
  NetworkParams z;
  for (std::size_t i = 0; i < kParamCount; ++i) z.mats[i] = Matrix(p.mats[i].rows(), p.mats[i].cols());
  z.frozen = p.frozen;
  return z;
}

ForwardTrace forward(std::span<const double> x, const NetworkParams& params,
                     const NetworkConfig& cfg, Mode mode) {
  if (x.size() != cfg.d) {
    throw DimensionError("forward: input has dim " + std::to_string(x.size()) + ", network expects " +
                         std::to_string(cfg.d));
  }
  ForwardTrace t;
  t.mode = mode;
  t.x.assign(x.begin(), x.end());
  if (cfg.l2_normalize_input) {
    const double norm = std::sqrt(dot(t.x, t.x));
    if (norm > 0.0) {
      for (double& v : t.x) v /= norm;
    }
  }
  check_finite(t.x, "input");

  t.a1 = matvec(params[kW1], t.x);
  t.z_prime = relu(t.a1);
  check_finite(t.z_prime, "z'");
  t.bt_prime = block_softmax(t.z_prime, cfg.selector_blocks, cfg.selector_size);

  if (cfg.residual_enabled) {
    t.a_r = matvec(params[kR1], t.bt_prime.values);
    t.v = relu(t.a_r);
    t.r = matvec(params[kQ], t.x);
    const Vector recon = matvec(params[kR2], t.v);
    for (std::size_t i = 0; i < t.r.size(); ++i) t.r[i] -= recon[i];
    check_finite(t.r, "r");
  } else {
    t.r = t.x;
  }

  t.a2 = matvec(params[kW2], t.r);
  t.z = relu(t.a2);
  check_finite(t.z, "z");
  t.bt = block_softmax(t.z, cfg.M, cfg.K);

  if (mode == Mode::kTrain) {
    t.s_prime = softmax(matvec(params[kC1], t.bt_prime.values));
    t.s = softmax(matvec(params[kC2], t.bt.values));
    check_finite(t.s_prime, "s'");
    check_finite(t.s, "s");
  }
  return t;
}

double cross_entropy(std::span<const double> p, std::size_t c, std::size_t C) {
  if (c >= C || c >= p.size()) {
    throw PreconditionError("cross_entropy: class " + std::to_string(c) + " out of range");
  }
  if (C < 2) throw PreconditionError("cross_entropy: at least two classes are required");
  const double q = p[c] < kLogFloor ? kLogFloor : p[c];
  return -std::log2(q) / std::log2(static_cast<double>(C));
}

double loss_L1(std::span<const ForwardTrace> traces, std::span<const std::uint32_t> labels,
               int alpha) {
  check_batch(traces, labels, "loss_L1");
  const std::size_t C = traces.front().s.size();
  double total = 0.0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    double term = cross_entropy(traces[i].s, labels[i], C);
    if (alpha != 0) term += alpha * cross_entropy(traces[i].s_prime, labels[i], C);
    total += term;
  }
  return total / static_cast<double>(traces.size());
}

double loss_L2(std::span<const ForwardTrace> traces, std::span<const std::uint32_t> labels) {
  check_batch(traces, labels, "loss_L2");
  const std::size_t C = traces.front().s.size();
  const double inv_log2_c = 1.0 / std::log2(static_cast<double>(C));
  double total = 0.0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const std::size_t y = labels[i];
    if (y >= C) throw PreconditionError("loss_L2: label out of range");
    double q = traces[i].s_prime[y] + traces[i].s[y];
    q = std::clamp(q, kLogFloor, 2.0);
    total += -std::log2(q) * inv_log2_c;
  }
  return total / static_cast<double>(traces.size());
}

double loss_omega(std::span<const ForwardTrace> traces, const HyperParams& hyper) {
  if (traces.empty()) throw PreconditionError("loss_omega: empty batch");
  std::vector<RelaxedBlockCode> selector;
  std::vector<RelaxedBlockCode> codes;
  selector.reserve(traces.size());
  codes.reserve(traces.size());
  for (const auto& t : traces) {
    selector.push_back(t.bt_prime);
    codes.push_back(t.bt);
  }
  return subic_loss(selector, {hyper.mu1, hyper.gamma1}) +
         subic_loss(codes, {hyper.mu2, hyper.gamma2});
}

double loss_total(std::span<const ForwardTrace> traces, std::span<const std::uint32_t> labels,
                  const NetworkConfig& cfg) {
  double task = 0.0;
  switch (cfg.objective) {
    case Objective::kF11: task = loss_L1(traces, labels, 1); break;
    case Objective::kF10: task = loss_L1(traces, labels, 0); break;
    case Objective::kF2: task = loss_L2(traces, labels); break;
  }
  return task + loss_omega(traces, cfg.hyper);
}

double batch_objective(std::span<const Vector> xs, std::span<const std::uint32_t> labels,
                       const NetworkParams& params, const NetworkConfig& cfg) {
  std::vector<ForwardTrace> traces;
  traces.reserve(xs.size());
  for (const auto& x : xs) traces.push_back(forward(x, params, cfg, Mode::kTrain));
  return loss_total(traces, labels, cfg);
}

NetworkParams backward(std::span<const ForwardTrace> traces, std::span<const std::uint32_t> labels,
                       const NetworkParams& params, const NetworkConfig& cfg, double scale) {
  check_batch(traces, labels, "backward");
  params.check_shapes(cfg);
  const std::size_t B = traces.size();
  const std::size_t C = cfg.C;
  const double inv_log2_c = 1.0 / std::log2(static_cast<double>(C));
  const double per_sample = scale / static_cast<double>(B);

  std::vector<RelaxedBlockCode> selector;
  std::vector<RelaxedBlockCode> codes;
  selector.reserve(B);
  codes.reserve(B);
  for (const auto& t : traces) {
    selector.push_back(t.bt_prime);
    codes.push_back(t.bt);
  }
  const auto sel_reg = subic_loss_grad(selector, {cfg.hyper.mu1, cfg.hyper.gamma1});
  const auto code_reg = subic_loss_grad(codes, {cfg.hyper.mu2, cfg.hyper.gamma2});

  NetworkParams g = zeros_like(params);
  for (std::size_t i = 0; i < B; ++i) {
    const ForwardTrace& t = traces[i];
    const std::size_t y = labels[i];
    if (y >= C) throw PreconditionError("backward: label out of range");

    Vector d_btp = sel_reg[i];
    Vector d_bt = code_reg[i];
    for (double& v : d_btp) v *= scale;
    for (double& v : d_bt) v *= scale;

    Vector d_sp(C, 0.0);
    Vector d_s(C, 0.0);
    switch (cfg.objective) {
      case Objective::kF11:
        d_sp[y] = per_sample * cross_entropy_grad(t.s_prime[y], inv_log2_c);
        d_s[y] = per_sample * cross_entropy_grad(t.s[y], inv_log2_c);
        break;
      case Objective::kF10:
        d_s[y] = per_sample * cross_entropy_grad(t.s[y], inv_log2_c);
        break;
      case Objective::kF2: {
        const double q = t.s_prime[y] + t.s[y];
        const double dq = (q >= kLogFloor && q <= 2.0) ? cross_entropy_grad(q, inv_log2_c) : 0.0;
        d_sp[y] = per_sample * dq;
        d_s[y] = per_sample * dq;
        break;
      }
    }

    if (d_sp[y] != 0.0) {
      const Vector du1 = softmax_backward(t.s_prime, d_sp);
      add_outer(g[kC1], du1, t.bt_prime.values);
      const Vector back = matvec_transposed(params[kC1], du1);
      for (std::size_t k = 0; k < d_btp.size(); ++k) d_btp[k] += back[k];
    }
    {
      const Vector du2 = softmax_backward(t.s, d_s);
      add_outer(g[kC2], du2, t.bt.values);
      const Vector back = matvec_transposed(params[kC2], du2);
      for (std::size_t k = 0; k < d_bt.size(); ++k) d_bt[k] += back[k];
    }

    Vector da2 = block_softmax_backward(t.bt, d_bt);
    mask_relu(da2, t.a2);
    add_outer(g[kW2], da2, t.r);

    if (cfg.residual_enabled) {
      const Vector dr = matvec_transposed(params[kW2], da2);
      add_outer(g[kQ], dr, t.x);
      add_outer(g[kR2], dr, t.v, -1.0);
      Vector da_r = matvec_transposed(params[kR2], dr);
      for (double& v : da_r) v = -v;
      mask_relu(da_r, t.a_r);
      add_outer(g[kR1], da_r, t.bt_prime.values);
      const Vector back = matvec_transposed(params[kR1], da_r);
      for (std::size_t k = 0; k < d_btp.size(); ++k) d_btp[k] += back[k];
    }

    Vector da1 = block_softmax_backward(t.bt_prime, d_btp);
    mask_relu(da1, t.a1);
    add_outer(g[kW1], da1, t.x);
  }

  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (params.frozen[i]) std::fill(g.mats[i].data().begin(), g.mats[i].data().end(), 0.0);
  }
  return g;
}

TrainResult train(const FeatureSet& data, const NetworkConfig& cfg, const TrainConfig& tcfg,
                  const NetworkParams* initial) {
  cfg.validate();
  data.validate();
  if (!data.has_labels()) throw PreconditionError("train: training data needs labels");
  if (data.dim != cfg.d) throw DimensionError("train: feature dim differs from network input dim");
  if (data.count == 0) throw PreconditionError("train: empty training set");
  if (data.class_count > cfg.C) throw PreconditionError("train: labels exceed the class count");
  if (tcfg.batch_size < 1) throw PreconditionError("train: batch_size must be >= 1");
  if (!(tcfg.learning_rate >= 0.0)) throw PreconditionError("train: learning_rate must be >= 0");
  if (cfg.variant == Variant::kSubicR &&
      (initial == nullptr || !initial->frozen[kW1] || !initial->frozen[kC1])) {
    throw PreconditionError("train: subic-r needs a pre-trained bin selection block marked frozen");
  }

  TrainResult result;
  result.params = initial ? *initial : init_params(cfg, derive_seed(tcfg.seed, 0));
  result.params.check_shapes(cfg);
  NetworkParams velocity = zeros_like(result.params);
  Rng sampler(derive_seed(tcfg.seed, 1));

  std::vector<ForwardTrace> traces(tcfg.batch_size);
  std::vector<std::uint32_t> labels(tcfg.batch_size);
  result.loss_log.reserve(tcfg.num_batches);
  for (std::size_t batch = 0; batch < tcfg.num_batches; ++batch) {
    for (std::size_t i = 0; i < tcfg.batch_size; ++i) {
      const std::size_t pick = sampler.below(data.count);
      traces[i] = forward(data.row_as_double(pick), result.params, cfg, Mode::kTrain);
      labels[i] = data.label(pick);
    }
    const double loss = loss_total(traces, labels, cfg);
    if (!std::isfinite(loss)) {
      throw DivergenceError("train: non-finite loss at batch " + std::to_string(batch));
    }
    result.loss_log.push_back(loss);

    const NetworkParams grad = backward(traces, labels, result.params, cfg);
    for (std::size_t m = 0; m < kParamCount; ++m) {
      if (result.params.frozen[m]) continue;
      auto& w = result.params.mats[m].data();
      auto& vel = velocity.mats[m].data();
      const auto& gd = grad.mats[m].data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        vel[j] = tcfg.momentum * vel[j] - tcfg.learning_rate * gd[j];
        w[j] += vel[j];
      }
    }
  }
  return result;
}

Encoding encode(std::span<const double> x, const NetworkParams& params, const NetworkConfig& cfg) {
  ForwardTrace t = forward(x, params, cfg, Mode::kTest);
  Encoding e;
  if (cfg.selector_blocks == 1) {
    e.bin = argmax_tiebreak(t.z_prime);
  } else {
    const BlockCode sel = block_one_hot(t.z_prime, 2, cfg.selector_size);
    e.bin = std::uint64_t{sel.indices[0]} * cfg.selector_size + sel.indices[1];
  }
  e.code = block_one_hot(t.z, cfg.M, cfg.K);
  e.z_prime = std::move(t.z_prime);
  e.z = std::move(t.z);
  return e;
}

}  // namespace ivfnet
