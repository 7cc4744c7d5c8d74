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

#include "ivfnet/subic_encoder.h"

#include <cmath>
#include <numbers>
#include <string>

#include "ivfnet/errors.h"

namespace ivfnet {

namespace {

constexpr double kInvLn2 = 1.0 / std::numbers::ln2;

void check_blocks(std::span<const double> z, std::size_t M, std::size_t K, const char* who) {
  if (M == 0 || K == 0) throw PreconditionError(std::string(who) + ": M and K must be positive");
  if (z.size() != M * K) {
    throw DimensionError(std::string(who) + ": length " + std::to_string(z.size()) +
                         " differs from M*K = " + std::to_string(M * K));
  }
}

void check_batch(std::span<const RelaxedBlockCode> batch, const char* who) {
  if (batch.empty()) throw PreconditionError(std::string(who) + ": empty batch");
  for (const auto& b : batch) {
    if (b.M != batch.front().M || b.K != batch.front().K || b.values.size() != b.M * b.K) {
      throw DimensionError(std::string(who) + ": batch codes differ in shape");
    }
  }
}

// d/dp of -p log2(max(p, floor)).
double neg_plogp_grad(double p) {
  return p < kLogFloor ? -std::log2(kLogFloor) : -(std::log2(p) + kInvLn2);
}

Vector batch_mean(std::span<const RelaxedBlockCode> batch) {
  Vector mean(batch.front().values.size(), 0.0);
  for (const auto& b : batch) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += b.values[i];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& v : mean) v *= inv;
  return mean;
}

}  // namespace

bool RelaxedBlockCode::valid(double tol) const {
  if (values.size() != M * K || M == 0) return false;
  for (std::size_t m = 0; m < M; ++m) {
    if (!is_prob_vector(block(m), tol)) return false;
  }
  return true;
}

Vector BlockCode::dense() const {
  Vector v(M * K, 0.0);
  for (std::size_t m = 0; m < M; ++m) v[m * K + indices[m]] = 1.0;
  return v;
}

RelaxedBlockCode block_softmax(std::span<const double> z, std::size_t M, std::size_t K) {
  check_blocks(z, M, K, "block_softmax");
  RelaxedBlockCode out{M, K, Vector(M * K)};
  for (std::size_t m = 0; m < M; ++m) {
    const Vector p = softmax(z.subspan(m * K, K));
    std::copy(p.begin(), p.end(), out.values.begin() + static_cast<std::ptrdiff_t>(m * K));
  }
  return out;
}

BlockCode block_one_hot(std::span<const double> z, std::size_t M, std::size_t K) {
  check_blocks(z, M, K, "block_one_hot");
  BlockCode out{M, K, std::vector<CodeIndex>(M)};
  for (std::size_t m = 0; m < M; ++m) {
    out.indices[m] = static_cast<CodeIndex>(argmax_tiebreak(z.subspan(m * K, K)));
  }
  return out;
}

double block_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v != 0.0) h -= v * std::log2(v < kLogFloor ? kLogFloor : v);
  }
  return h;
}

double entropy_loss(const RelaxedBlockCode& bt) {
  double total = 0.0;
  for (std::size_t m = 0; m < bt.M; ++m) total += block_entropy(bt.block(m));
  return total;
}

double batch_entropy_loss(std::span<const RelaxedBlockCode> batch) {
  check_batch(batch, "batch_entropy_loss");
  const Vector mean = batch_mean(batch);
  const std::size_t K = batch.front().K;
  double total = 0.0;
  for (std::size_t m = 0; m < batch.front().M; ++m) {
    total += block_entropy(std::span<const double>(mean).subspan(m * K, K));
  }
  return -total;
}

double subic_loss(std::span<const RelaxedBlockCode> batch, const SubicLossParams& p) {
  check_batch(batch, "subic_loss");
  double per_code = 0.0;
  for (const auto& b : batch) per_code += entropy_loss(b);
  return p.mu / static_cast<double>(batch.size()) * per_code + p.gamma * batch_entropy_loss(batch);
}

Vector entropy_loss_grad(const RelaxedBlockCode& bt) {
  Vector g(bt.values.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = neg_plogp_grad(bt.values[i]);
  return g;
}

Vector batch_entropy_loss_grad(std::span<const RelaxedBlockCode> batch) {
  check_batch(batch, "batch_entropy_loss_grad");
  Vector g = batch_mean(batch);
  const double inv = 1.0 / static_cast<double>(batch.size());
  // loss = -sum H(mean); d/d mean = -neg_plogp_grad; mean = avg of members.
  for (double& v : g) v = -neg_plogp_grad(v) * inv;
  return g;
}

std::vector<Vector> subic_loss_grad(std::span<const RelaxedBlockCode> batch,
                                    const SubicLossParams& p) {
  check_batch(batch, "subic_loss_grad");
  const double mu_scale = p.mu / static_cast<double>(batch.size());
  Vector shared(batch.front().values.size(), 0.0);
  if (p.gamma != 0.0) {
    shared = batch_entropy_loss_grad(batch);
    for (double& v : shared) v *= p.gamma;
  }
  std::vector<Vector> grads;
  grads.reserve(batch.size());
  for (const auto& b : batch) {
    Vector g = shared;
    if (mu_scale != 0.0) {
      const Vector e = entropy_loss_grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += mu_scale * e[i];
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

Vector block_softmax_backward(const RelaxedBlockCode& bt, std::span<const double> grad_probs) {
  if (grad_probs.size() != bt.values.size()) throw DimensionError("block_softmax_backward: shape mismatch");
  Vector out(bt.values.size());
  for (std::size_t m = 0; m < bt.M; ++m) {
    const std::size_t lo = m * bt.K;
    double inner = 0.0;
    for (std::size_t k = 0; k < bt.K; ++k) inner += grad_probs[lo + k] * bt.values[lo + k];
    for (std::size_t k = 0; k < bt.K; ++k) {
      out[lo + k] = bt.values[lo + k] * (grad_probs[lo + k] - inner);
    }
  }
  return out;
}

}  // namespace ivfnet
