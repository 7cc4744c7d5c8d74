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

#include "ivfnet/codebooks.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ivfnet/errors.h"

namespace ivfnet {

namespace {

struct Assignment {
  std::vector<std::size_t> labels;
  std::vector<double> errors;
  double objective = 0.0;
};

Assignment assign_all(const Matrix& data, const Matrix& centroids, int threads) {
  const std::size_t n = data.rows();
  Assignment a;
  a.labels.resize(n);
  a.errors.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto x = data.row(i);
    std::size_t best = 0;
    double best_d = squared_distance(x, centroids.row(0));
    for (std::size_t k = 1; k < centroids.rows(); ++k) {
      const double d = squared_distance(x, centroids.row(k));
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    a.labels[i] = best;
    a.errors[i] = best_d;
  });
  for (double e : a.errors) a.objective += e;
  return a;
}

Matrix init_random_points(const Matrix& data, std::size_t k, Rng& rng) {
  std::vector<std::size_t> perm(data.rows());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Matrix c(k, data.cols());
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t pick = j + rng.below(perm.size() - j);
    std::swap(perm[j], perm[pick]);
    std::copy(data.row(perm[j]).begin(), data.row(perm[j]).end(), c.row(j).begin());
  }
  return c;
}

Matrix init_plus_plus(const Matrix& data, std::size_t k, Rng& rng) {
  const std::size_t n = data.rows();
  Matrix c(k, data.cols());
  std::vector<bool> chosen(n, false);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());

  std::size_t pick = rng.below(n);
  for (std::size_t j = 0; j < k; ++j) {
    if (j > 0) {
      double total = 0.0;
      for (double v : min_d) total += v;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (min_d[i] <= 0.0) continue;
          acc += min_d[i];
          if (acc > target) {
            pick = i;
            break;
          }
        }
        if (pick == n) {
          // Rounding left target at the very end of the mass.
          for (std::size_t i = n; i-- > 0;) {
            if (min_d[i] > 0.0) {
              pick = i;
              break;
            }
          }
        }
      } else {
        // Every point coincides with a chosen centroid; fall back to an
        // unchosen index so the codebook still has k rows.
        std::vector<std::size_t> free;
        for (std::size_t i = 0; i < n; ++i) {
          if (!chosen[i]) free.push_back(i);
        }
        pick = free[rng.below(free.size())];
      }
    }
    chosen[pick] = true;
    std::copy(data.row(pick).begin(), data.row(pick).end(), c.row(j).begin());
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], squared_distance(data.row(i), c.row(j)));
    }
  }
  return c;
}

Matrix update_centroids(const Matrix& data, const Assignment& a, const Matrix& previous) {
  const std::size_t k = previous.rows();
  const std::size_t d = data.cols();
  Matrix sums(k, d);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const std::size_t label = a.labels[i];
    auto s = sums.row(label);
    const auto x = data.row(i);
    for (std::size_t j = 0; j < d; ++j) s[j] += x[j];
    ++counts[label];
  }
  Matrix next(k, d);
  std::vector<double> err(data.rows(), 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[c]);
    for (std::size_t j = 0; j < d; ++j) next(c, j) = sums(c, j) * inv;
  }
  bool any_empty = false;
  for (std::size_t c = 0; c < k; ++c) any_empty |= counts[c] == 0;
  if (!any_empty) return next;

  // Re-seed each empty cluster at the point with the largest current error.
  for (std::size_t i = 0; i < data.rows(); ++i) {
    err[i] = squared_distance(data.row(i), next.row(a.labels[i]));
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    std::size_t worst = 0;
    for (std::size_t i = 1; i < data.rows(); ++i) {
      if (err[i] > err[worst]) worst = i;
    }
    std::copy(data.row(worst).begin(), data.row(worst).end(), next.row(c).begin());
    err[worst] = 0.0;
  }
  return next;
}

}  // namespace

Codebook kmeans_train(const Matrix& data, const KMeansConfig& cfg, KMeansReport* report) {
  if (cfg.n_clusters < 1) throw PreconditionError("kmeans_train: n_clusters must be >= 1");
  if (cfg.max_iters < 1) throw PreconditionError("kmeans_train: max_iters must be >= 1");
  if (!(cfg.tol >= 0.0)) throw PreconditionError("kmeans_train: tol must be >= 0");
  if (data.rows() < cfg.n_clusters) {
    throw PreconditionError("kmeans_train: " + std::to_string(data.rows()) + " points for " +
                            std::to_string(cfg.n_clusters) + " clusters");
  }
  if (!data.all_finite()) throw NumericError("kmeans_train: non-finite data");

  Rng rng(cfg.seed);
  Matrix centroids = cfg.init == KMeansInit::kPlusPlus
                         ? init_plus_plus(data, cfg.n_clusters, rng)
                         : init_random_points(data, cfg.n_clusters, rng);
  Assignment current = assign_all(data, centroids, cfg.threads);

  KMeansReport local;
  local.objective_history.push_back(current.objective);
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    Matrix next = update_centroids(data, current, centroids);
    Assignment reassigned = assign_all(data, next, cfg.threads);
    // A Lloyd step cannot increase the objective in exact arithmetic; a
    // rounding-level increase means the iteration has converged.
    if (reassigned.objective > current.objective) {
      local.rejected_increase = (reassigned.objective - current.objective) / current.objective;
      break;
    }

    const bool unchanged = reassigned.labels == current.labels;
    const double prev = current.objective;
    centroids = std::move(next);
    current = std::move(reassigned);
    local.objective_history.push_back(current.objective);
    local.iterations = iter + 1;

    if (unchanged) break;
    const double rel = prev > 0.0 ? (prev - current.objective) / prev : 0.0;
    if (rel < cfg.tol) break;
  }
  local.final_error = current.objective;
  if (report) *report = std::move(local);
  return Codebook(std::move(centroids));
}

Codebook kmeans_train(const FeatureSet& data, const KMeansConfig& cfg, KMeansReport* report) {
  return kmeans_train(data.to_matrix(), cfg, report);
}

std::size_t vq_assign(std::span<const double> x, const Codebook& cb) {
  if (x.size() != cb.dim()) {
    throw DimensionError("vq_assign: vector has dim " + std::to_string(x.size()) +
                         ", codebook has dim " + std::to_string(cb.dim()));
  }
  if (cb.size() == 0) throw PreconditionError("vq_assign: empty codebook");
  std::size_t best = 0;
  double best_d = squared_distance(x, cb.centroid(0));
  for (std::size_t k = 1; k < cb.size(); ++k) {
    const double d = squared_distance(x, cb.centroid(k));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

Vector residual(std::span<const double> x, const Codebook& cb, std::size_t n) {
  if (n >= cb.size()) throw PreconditionError("residual: bin " + std::to_string(n) + " out of range");
  if (x.size() != cb.dim()) throw DimensionError("residual: dimension mismatch");
  const auto c = cb.centroid(n);
  Vector r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - c[i];
  return r;
}

std::vector<std::size_t> split_dims(std::size_t d, std::size_t M) {
  if (M < 1 || M > d) {
    throw PreconditionError("split_dims: cannot split " + std::to_string(d) + " coordinates into " +
                            std::to_string(M) + " blocks");
  }
  std::vector<std::size_t> offsets(M + 1, 0);
  const std::size_t base = d / M;
  const std::size_t extra = d % M;
  for (std::size_t m = 0; m < M; ++m) offsets[m + 1] = offsets[m] + base + (m < extra ? 1 : 0);
  return offsets;
}

ProductCodebook::ProductCodebook(std::vector<std::size_t> offsets, std::vector<Codebook> sub)
    : offsets_(std::move(offsets)), sub_(std::move(sub)) {
  if (sub_.empty() || offsets_.size() != sub_.size() + 1 || offsets_.front() != 0) {
    throw PreconditionError("ProductCodebook: offsets do not match sub-codebooks");
  }
  const std::size_t k = sub_.front().size();
  for (std::size_t m = 0; m < sub_.size(); ++m) {
    if (sub_[m].size() != k) throw PreconditionError("ProductCodebook: ragged sub-codebooks");
    if (offsets_[m + 1] <= offsets_[m] || sub_[m].dim() != offsets_[m + 1] - offsets_[m]) {
      throw DimensionError("ProductCodebook: sub-codebook dim disagrees with its range");
    }
  }
  if (k > std::size_t{std::numeric_limits<CodeIndex>::max()} + 1) {
    throw PreconditionError("ProductCodebook: K exceeds the code index range");
  }
}

ProductCodebook pq_train(const Matrix& residuals, std::size_t M, std::size_t K,
                         const KMeansConfig& cfg) {
  if (K < 2) throw PreconditionError("pq_train: K must be >= 2");
  if (K > std::size_t{std::numeric_limits<CodeIndex>::max()} + 1) {
    throw PreconditionError("pq_train: K exceeds the code index range");
  }
  if (residuals.rows() < K) {
    throw PreconditionError("pq_train: " + std::to_string(residuals.rows()) +
                            " residuals, fewer than K = " + std::to_string(K));
  }
  auto offsets = split_dims(residuals.cols(), M);
  std::vector<Codebook> subs;
  subs.reserve(M);
  for (std::size_t m = 0; m < M; ++m) {
    const std::size_t lo = offsets[m];
    const std::size_t width = offsets[m + 1] - lo;
    Matrix part(residuals.rows(), width);
    for (std::size_t i = 0; i < residuals.rows(); ++i) {
      const auto src = residuals.row(i).subspan(lo, width);
      std::copy(src.begin(), src.end(), part.row(i).begin());
    }
    KMeansConfig sub_cfg = cfg;
    sub_cfg.n_clusters = K;
    sub_cfg.seed = derive_seed(cfg.seed, m);
    subs.push_back(kmeans_train(part, sub_cfg));
  }
  return ProductCodebook(std::move(offsets), std::move(subs));
}

PQCode pq_encode(std::span<const double> r, const ProductCodebook& pcb) {
  if (r.size() != pcb.dim()) {
    throw DimensionError("pq_encode: vector has dim " + std::to_string(r.size()) +
                         ", codebook has dim " + std::to_string(pcb.dim()));
  }
  PQCode code;
  code.indices.resize(pcb.M());
  for (std::size_t m = 0; m < pcb.M(); ++m) {
    const auto sub = r.subspan(pcb.offset(m), pcb.sub_dim(m));
    code.indices[m] = static_cast<CodeIndex>(vq_assign(sub, pcb.sub_codebook(m)));
  }
  return code;
}

Vector pq_decode(std::span<const CodeIndex> code, const ProductCodebook& pcb) {
  if (code.size() != pcb.M()) throw DimensionError("pq_decode: code length differs from M");
  Vector out(pcb.dim());
  for (std::size_t m = 0; m < pcb.M(); ++m) {
    if (code[m] >= pcb.K()) {
      throw PreconditionError("pq_decode: index " + std::to_string(code[m]) + " out of range");
    }
    const auto c = pcb.sub_codebook(m).centroid(code[m]);
    std::copy(c.begin(), c.end(), out.begin() + static_cast<std::ptrdiff_t>(pcb.offset(m)));
  }
  return out;
}

}  // namespace ivfnet
