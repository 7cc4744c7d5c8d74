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

// Block-structured codes. A code of M blocks over K values is, at training
// time, a concatenation of M probability vectors (block softmax of the
// encoder activations) and, at test time, a concatenation of M one-hot
// vectors. The entropy losses pull relaxed blocks towards one-hot vertices
// while keeping the batch-average usage of every value uniform.

#include <cstddef>
#include <span>
#include <vector>

#include "ivfnet/codebooks.h"
#include "ivfnet/core_math.h"

namespace ivfnet {

/// M probability blocks of size K, stored contiguously.
struct RelaxedBlockCode {
  std::size_t M = 0;
  std::size_t K = 0;
  Vector values;

  std::span<const double> block(std::size_t m) const { return {values.data() + m * K, K}; }
  bool valid(double tol = 1e-6) const;
};

/// M one-hot blocks of size K, stored as the active index of each block.
struct BlockCode {
  std::size_t M = 0;
  std::size_t K = 0;
  std::vector<CodeIndex> indices;

  OneHot block(std::size_t m) const { return {indices[m], K}; }
  Vector dense() const;
  friend bool operator==(const BlockCode&, const BlockCode&) = default;
};

struct SubicLossParams {
  double mu = 0.0;
  double gamma = 0.0;
};

/// Probabilities below this are clamped inside logarithms.
inline constexpr double kLogFloor = 1e-12;

RelaxedBlockCode block_softmax(std::span<const double> z, std::size_t M, std::size_t K);

/// Per-block argmax, lowest index on ties.
BlockCode block_one_hot(std::span<const double> z, std::size_t M, std::size_t K);

/// Entropy in bits with log(0) guarded by kLogFloor.
double block_entropy(std::span<const double> p);

/// Sum of the per-block entropies; in [0, M log2 K].
double entropy_loss(const RelaxedBlockCode& bt);

/// Negated sum over blocks of the entropy of the batch-mean block; in
/// [-M log2 K, 0]. Throws PreconditionError on an empty or mixed-shape batch.
double batch_entropy_loss(std::span<const RelaxedBlockCode> batch);

/// (mu / |batch|) sum_i entropy_loss(b_i) + gamma batch_entropy_loss(batch).
double subic_loss(std::span<const RelaxedBlockCode> batch, const SubicLossParams& p);

// Gradients with respect to the relaxed code entries.

/// d entropy_loss / d bt.
Vector entropy_loss_grad(const RelaxedBlockCode& bt);

/// d batch_entropy_loss / d bt_i. The gradient is the same for every member
/// of the batch, so a single vector is returned.
Vector batch_entropy_loss_grad(std::span<const RelaxedBlockCode> batch);

/// d subic_loss / d bt_i for every member i.
std::vector<Vector> subic_loss_grad(std::span<const RelaxedBlockCode> batch,
                                    const SubicLossParams& p);

/// Pulls a gradient with respect to block_softmax outputs back to the logits.
Vector block_softmax_backward(const RelaxedBlockCode& bt, std::span<const double> grad_probs);

}  // namespace ivfnet
