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

#include "ivfnet/ivf_index.h"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "ivfnet/errors.h"

namespace ivfnet {

InvertedIndex::InvertedIndex(IndexKind kind, std::uint64_t bin_count, std::size_t code_size)
    : kind_(kind), bin_count_(bin_count), code_size_(code_size) {
  if (bin_count > std::uint64_t{std::numeric_limits<BinId>::max()} + 1) {
    throw PreconditionError("InvertedIndex: bin count exceeds the bin id range");
  }
  if (kind_ == IndexKind::kIvf) {
    bins_.resize(bin_count);
    for (std::size_t n = 0; n < bins_.size(); ++n) bins_[n].bin_id = static_cast<BinId>(n);
  }
}

std::size_t InvertedIndex::nonempty_bins() const {
  return static_cast<std::size_t>(
      std::count_if(bins_.begin(), bins_.end(), [](const InvertedBin& b) { return b.size() > 0; }));
}

const InvertedBin* InvertedIndex::find(BinId bin) const {
  if (kind_ == IndexKind::kIvf) return bin < bins_.size() ? &bins_[bin] : nullptr;
  auto it = sparse_slots_.find(bin);
  return it == sparse_slots_.end() ? nullptr : &bins_[it->second];
}

std::size_t InvertedIndex::bin_size(BinId bin) const {
  const InvertedBin* b = find(bin);
  return b ? b->size() : 0;
}

InvertedBin& InvertedIndex::slot(BinId bin) {
  if (bin >= bin_count_) {
    throw PreconditionError("InvertedIndex: bin " + std::to_string(bin) + " out of range");
  }
  if (kind_ == IndexKind::kIvf) return bins_[bin];
  auto [it, inserted] = sparse_slots_.try_emplace(bin, bins_.size());
  if (inserted) {
    bins_.emplace_back();
    bins_.back().bin_id = bin;
  }
  return bins_[it->second];
}

void InvertedIndex::add(BinId bin, ImageId id, std::span<const CodeIndex> code) {
  if (total_ == 0 && code_size_ == 0) code_size_ = code.size();
  if (code.size() != code_size_) {
    throw DimensionError("InvertedIndex::add: code length " + std::to_string(code.size()) +
                         " differs from " + std::to_string(code_size_));
  }
  InvertedBin& b = slot(bin);
  b.ids.push_back(id);
  b.codes.insert(b.codes.end(), code.begin(), code.end());
  ++total_;
}

void InvertedIndex::finalize() {
  std::vector<ImageId> all;
  all.reserve(total_);
  for (InvertedBin& b : bins_) {
    if (!std::is_sorted(b.ids.begin(), b.ids.end())) {
      std::vector<std::size_t> perm(b.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::sort(perm.begin(), perm.end(),
                [&b](std::size_t x, std::size_t y) { return b.ids[x] < b.ids[y]; });
      InvertedBin sorted;
      sorted.bin_id = b.bin_id;
      sorted.ids.reserve(b.size());
      sorted.codes.reserve(b.codes.size());
      for (std::size_t p : perm) {
        sorted.ids.push_back(b.ids[p]);
        const auto c = b.code(p, code_size_);
        sorted.codes.insert(sorted.codes.end(), c.begin(), c.end());
      }
      b = std::move(sorted);
    }
    all.insert(all.end(), b.ids.begin(), b.ids.end());
  }
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
    throw PreconditionError("InvertedIndex: an image id appears more than once");
  }
  if (kind_ == IndexKind::kImi) {
    std::erase_if(bins_, [](const InvertedBin& b) { return b.size() == 0; });
    std::sort(bins_.begin(), bins_.end(),
              [](const InvertedBin& x, const InvertedBin& y) { return x.bin_id < y.bin_id; });
    sparse_slots_.clear();
    for (std::size_t i = 0; i < bins_.size(); ++i) sparse_slots_.emplace(bins_[i].bin_id, i);
  }
  total_ = all.size();
}

InvertedIndex InvertedIndex::from_bins(IndexKind kind, std::uint64_t bin_count,
                                       std::size_t code_size, std::vector<InvertedBin> bins) {
  InvertedIndex index(kind, bin_count, code_size);
  for (const InvertedBin& b : bins) {
    if (b.codes.size() != b.ids.size() * code_size) {
      throw DimensionError("InvertedIndex::from_bins: code array length mismatch");
    }
    if (b.bin_id >= bin_count) throw PreconditionError("InvertedIndex::from_bins: bin out of range");
  }
  if (kind == IndexKind::kIvf) {
    if (bins.size() != bin_count) {
      throw PreconditionError("InvertedIndex::from_bins: IVF needs every bin materialized");
    }
    for (std::size_t n = 0; n < bins.size(); ++n) {
      if (bins[n].bin_id != n) throw PreconditionError("InvertedIndex::from_bins: bins out of order");
    }
  }
  index.bins_ = std::move(bins);
  index.total_ = 0;
  for (const auto& b : index.bins_) index.total_ += b.size();
  index.finalize();
  return index;
}

InvertedIndex build_inverted(const FeatureSet& features, IndexKind kind, std::uint64_t bin_count,
                             const AssignFn& assign, const EncodeFn& encode, int threads) {
  features.validate();
  if (features.count > std::size_t{std::numeric_limits<ImageId>::max()}) {
    throw PreconditionError("build_inverted: too many features for 32-bit image ids");
  }
  std::vector<BinId> bins(features.count);
  std::vector<PQCode> codes(features.count);
  parallel_for(features.count, threads, [&](std::size_t i) {
    const Vector x = features.row_as_double(i);
    bins[i] = assign(i, x);
    codes[i] = encode(x, bins[i]);
  });
  InvertedIndex index(kind, bin_count, features.count ? codes.front().indices.size() : 0);
  for (std::size_t i = 0; i < features.count; ++i) {
    index.add(bins[i], static_cast<ImageId>(i), codes[i].indices);
  }
  index.finalize();
  return index;
}

InvertedIndex ivf_build(const FeatureSet& features, const Codebook& coarse, const EncodeFn& encode,
                        int threads) {
  if (features.count > 0 && features.dim != coarse.dim()) {
    throw DimensionError("ivf_build: feature dim differs from coarse codebook dim");
  }
  return build_inverted(
      features, IndexKind::kIvf, coarse.size(),
      [&coarse](std::size_t, std::span<const double> x) {
        return static_cast<BinId>(vq_assign(x, coarse));
      },
      encode, threads);
}

InvertedIndex imi_build(const FeatureSet& features, const ProductCodebook& coarse2,
                        const EncodeFn& encode, int threads) {
  if (coarse2.M() != 2) {
    throw PreconditionError("imi_build: coarse product codebook must have M = 2, got " +
                            std::to_string(coarse2.M()));
  }
  if (features.count > 0 && features.dim != coarse2.dim()) {
    throw DimensionError("imi_build: feature dim differs from coarse codebook dim");
  }
  const std::uint64_t k = coarse2.K();
  return build_inverted(
      features, IndexKind::kImi, k * k,
      [&coarse2, k](std::size_t, std::span<const double> x) {
        const PQCode c = pq_encode(x, coarse2);
        return static_cast<BinId>(c.indices[0] * k + c.indices[1]);
      },
      encode, threads);
}

BinRanking rank_bins_by_distance(std::span<const double> x_query, const Codebook& coarse) {
  if (x_query.size() != coarse.dim()) throw DimensionError("rank_bins_by_distance: dimension mismatch");
  const std::size_t n = coarse.size();
  std::vector<double> dist(n);
  for (std::size_t k = 0; k < n; ++k) dist[k] = squared_distance(x_query, coarse.centroid(k));
  std::vector<BinId> order(n);
  std::iota(order.begin(), order.end(), BinId{0});
  std::sort(order.begin(), order.end(), [&dist](BinId a, BinId b) {
    return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
  });
  BinRanking r;
  r.direction = RankOrder::kAscendingDistance;
  r.order = std::move(order);
  r.pertinence.reserve(n);
  for (BinId b : r.order) r.pertinence.push_back(dist[b]);
  return r;
}

BinRanking rank_bins_by_score(std::span<const double> z_prime) {
  std::vector<BinId> order(z_prime.size());
  std::iota(order.begin(), order.end(), BinId{0});
  std::sort(order.begin(), order.end(), [&z_prime](BinId a, BinId b) {
    return z_prime[a] != z_prime[b] ? z_prime[a] > z_prime[b] : a < b;
  });
  BinRanking r;
  r.direction = RankOrder::kDescendingScore;
  r.order = std::move(order);
  r.pertinence.reserve(z_prime.size());
  for (BinId b : r.order) r.pertinence.push_back(z_prime[b]);
  return r;
}

Shortlist select_shortlist(const BinRanking& ranking, const InvertedIndex& index, std::size_t T) {
  Shortlist s;
  if (T == 0) return s;
  std::size_t last_nonempty = 0;
  for (std::size_t k = 0; k < ranking.order.size(); ++k) {
    const std::size_t n = index.bin_size(ranking.order[k]);
    s.size += n;
    if (n > 0) last_nonempty = k + 1;
    if (s.size >= T) {
      s.B = k + 1;
      s.bin_ids.assign(ranking.order.begin(), ranking.order.begin() + static_cast<std::ptrdiff_t>(s.B));
      return s;
    }
  }
  s.B = last_nonempty;
  s.bin_ids.assign(ranking.order.begin(), ranking.order.begin() + static_cast<std::ptrdiff_t>(s.B));
  return s;
}

MultiSequenceTraversal::MultiSequenceTraversal(Vector cost_a, Vector cost_b)
    : cost_a_(std::move(cost_a)), cost_b_(std::move(cost_b)) {
  if (static_cast<std::uint64_t>(cost_a_.size()) * cost_b_.size() >
      std::uint64_t{std::numeric_limits<BinId>::max()} + 1) {
    throw PreconditionError("MultiSequenceTraversal: grid exceeds the bin id range");
  }
  auto sorted = [](const Vector& c) {
    std::vector<std::uint32_t> idx(c.size());
    std::iota(idx.begin(), idx.end(), std::uint32_t{0});
    std::sort(idx.begin(), idx.end(), [&c](std::uint32_t x, std::uint32_t y) {
      return c[x] != c[y] ? c[x] < c[y] : x < y;
    });
    return idx;
  };
  sorted_a_ = sorted(cost_a_);
  sorted_b_ = sorted(cost_b_);
  if (!cost_a_.empty() && !cost_b_.empty()) push(0, 0);
}

void MultiSequenceTraversal::push(std::uint32_t i, std::uint32_t j) {
  const std::uint32_t a = sorted_a_[i];
  const std::uint32_t b = sorted_b_[j];
  const BinId key = static_cast<BinId>(std::uint64_t{a} * cost_b_.size() + b);
  heap_.push(Node{cost_a_[a] + cost_b_[b], key, i, j});
}

std::optional<MultiSequenceTraversal::Cell> MultiSequenceTraversal::next() {
  if (heap_.empty()) return std::nullopt;
  const Node top = heap_.top();
  heap_.pop();
  // Every cell (i, j) has exactly one predecessor: (i, j-1), or (i-1, 0)
  // on the first column, so each cell is pushed once.
  if (top.j + 1 < sorted_b_.size()) push(top.i, top.j + 1);
  if (top.j == 0 && top.i + 1 < sorted_a_.size()) push(top.i + 1, 0);
  return Cell{top.key, sorted_a_[top.i], sorted_b_[top.j], top.cost};
}

namespace {

BinRanking traverse(MultiSequenceTraversal& traversal, std::size_t limit,
                    const InvertedIndex* index, RankOrder direction) {
  BinRanking r;
  r.direction = direction;
  while (r.order.size() < limit) {
    auto cell = traversal.next();
    if (!cell) break;
    if (index && index->bin_size(cell->key) == 0) continue;
    r.order.push_back(cell->key);
    r.pertinence.push_back(direction == RankOrder::kDescendingScore ? -cell->cost : cell->cost);
  }
  return r;
}

Vector half_distances(std::span<const double> x, const ProductCodebook& coarse2, std::size_t m) {
  const auto sub = x.subspan(coarse2.offset(m), coarse2.sub_dim(m));
  const Codebook& cb = coarse2.sub_codebook(m);
  Vector d(cb.size());
  for (std::size_t k = 0; k < cb.size(); ++k) d[k] = squared_distance(sub, cb.centroid(k));
  return d;
}

void check_imi(std::span<const double> x, const ProductCodebook& coarse2, const char* who) {
  if (coarse2.M() != 2) throw PreconditionError(std::string(who) + ": coarse codebook must have M = 2");
  if (x.size() != coarse2.dim()) throw DimensionError(std::string(who) + ": dimension mismatch");
}

}  // namespace

BinRanking imi_rank_bins(std::span<const double> x_query, const ProductCodebook& coarse2,
                         std::size_t limit, const InvertedIndex* index) {
  check_imi(x_query, coarse2, "imi_rank_bins");
  MultiSequenceTraversal traversal(half_distances(x_query, coarse2, 0),
                                   half_distances(x_query, coarse2, 1));
  return traverse(traversal, limit, index, RankOrder::kAscendingDistance);
}

BinRanking imi_rank_bins_by_score(std::span<const double> score_1,
                                  std::span<const double> score_2, std::size_t limit,
                                  const InvertedIndex* index) {
  Vector neg_1(score_1.size());
  Vector neg_2(score_2.size());
  for (std::size_t k = 0; k < score_1.size(); ++k) neg_1[k] = -score_1[k];
  for (std::size_t k = 0; k < score_2.size(); ++k) neg_2[k] = -score_2[k];
  MultiSequenceTraversal traversal(std::move(neg_1), std::move(neg_2));
  return traverse(traversal, limit, index, RankOrder::kDescendingScore);
}

BinRanking imi_rank_bins_exhaustive(std::span<const double> x_query,
                                    const ProductCodebook& coarse2) {
  check_imi(x_query, coarse2, "imi_rank_bins_exhaustive");
  const Vector d1 = half_distances(x_query, coarse2, 0);
  const Vector d2 = half_distances(x_query, coarse2, 1);
  const std::size_t k = coarse2.K();
  std::vector<double> cost(k * k);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) cost[a * k + b] = d1[a] + d2[b];
  }
  BinRanking r;
  r.direction = RankOrder::kAscendingDistance;
  r.order.resize(k * k);
  std::iota(r.order.begin(), r.order.end(), BinId{0});
  std::sort(r.order.begin(), r.order.end(), [&cost](BinId x, BinId y) {
    return cost[x] != cost[y] ? cost[x] < cost[y] : x < y;
  });
  for (BinId b : r.order) r.pertinence.push_back(cost[b]);
  return r;
}

}  // namespace ivfnet
