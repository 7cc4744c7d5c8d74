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

// Inverted file (IVF) and inverted multi-index (IMI) storage, bin ranking
// and shortlist selection.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <span>
#include <unordered_map>
#include <vector>

#include "ivfnet/codebooks.h"
#include "ivfnet/feature_set.h"

namespace ivfnet {

using BinId = std::uint32_t;
using ImageId = std::uint32_t;

enum class IndexKind : std::uint8_t { kIvf = 0, kImi = 1 };

/// Entries of one bin, sorted by image id. Codes are stored flat,
/// `code_size` indices per entry.
struct InvertedBin {
  BinId bin_id = 0;
  std::vector<ImageId> ids;
  std::vector<CodeIndex> codes;

  std::size_t size() const noexcept { return ids.size(); }
  std::span<const CodeIndex> code(std::size_t i, std::size_t code_size) const {
    return {codes.data() + i * code_size, code_size};
  }

  friend bool operator==(const InvertedBin&, const InvertedBin&) = default;
};

/// A partition of the database into mutually exclusive bins. IVF indexes
/// materialize all `bin_count` bins; IMI indexes keep only the nonempty ones.
class InvertedIndex {
 public:
  InvertedIndex() = default;
  InvertedIndex(IndexKind kind, std::uint64_t bin_count, std::size_t code_size);

  IndexKind kind() const noexcept { return kind_; }
  std::uint64_t bin_count() const noexcept { return bin_count_; }
  std::size_t code_size() const noexcept { return code_size_; }
  /// Total number of indexed images.
  std::size_t size() const noexcept { return total_; }
  std::size_t nonempty_bins() const;

  /// nullptr when the bin is not materialized.
  const InvertedBin* find(BinId bin) const;
  std::size_t bin_size(BinId bin) const;

  /// Materialized bins in ascending bin id order.
  const std::vector<InvertedBin>& bins() const noexcept { return bins_; }

  void add(BinId bin, ImageId id, std::span<const CodeIndex> code);

  /// Sorts every bin by image id, drops empty IMI bins and checks that no
  /// image id appears twice anywhere. Throws PreconditionError on
  /// duplicates.
  void finalize();

  /// Rebuilds an index from stored bins (used by deserialization).
  static InvertedIndex from_bins(IndexKind kind, std::uint64_t bin_count, std::size_t code_size,
                                 std::vector<InvertedBin> bins);

  friend bool operator==(const InvertedIndex& a, const InvertedIndex& b) {
    return a.kind_ == b.kind_ && a.bin_count_ == b.bin_count_ && a.code_size_ == b.code_size_ &&
           a.bins_ == b.bins_;
  }

 private:
  InvertedBin& slot(BinId bin);

  IndexKind kind_ = IndexKind::kIvf;
  std::uint64_t bin_count_ = 0;
  std::size_t code_size_ = 0;
  std::size_t total_ = 0;
  std::vector<InvertedBin> bins_;
  std::unordered_map<BinId, std::size_t> sparse_slots_;
};

using AssignFn = std::function<BinId(std::size_t image, std::span<const double> x)>;
using EncodeFn = std::function<PQCode(std::span<const double> x, BinId bin)>;

/// Assigns and encodes every feature (image id = row index). Assignment
/// and encoding run on `threads` threads; insertion is in id order.
InvertedIndex build_inverted(const FeatureSet& features, IndexKind kind, std::uint64_t bin_count,
                             const AssignFn& assign, const EncodeFn& encode, int threads = 1);

InvertedIndex ivf_build(const FeatureSet& features, const Codebook& coarse, const EncodeFn& encode,
                        int threads = 1);

/// Bin key of cell (k, l) is k * K + l. Requires coarse2.M() == 2.
InvertedIndex imi_build(const FeatureSet& features, const ProductCodebook& coarse2,
                        const EncodeFn& encode, int threads = 1);

enum class RankOrder : std::uint8_t { kAscendingDistance, kDescendingScore };

struct BinRanking {
  std::vector<BinId> order;
  std::vector<double> pertinence;
  RankOrder direction = RankOrder::kAscendingDistance;
};

/// All bins by increasing squared distance to their centroid, lower id on ties.
BinRanking rank_bins_by_distance(std::span<const double> x_query, const Codebook& coarse);

/// All bins by decreasing score, lower id on ties.
BinRanking rank_bins_by_score(std::span<const double> z_prime);

struct Shortlist {
  std::vector<BinId> bin_ids;
  std::size_t B = 0;
  std::size_t size = 0;
};

/// Smallest prefix of the ranking whose cumulative bin size reaches T, so
/// that sum_{k<B} |bin_k| <= T <= sum_{k<=B} |bin_k|. When T exceeds the
/// number of ranked images, the prefix ends at the last nonempty bin.
Shortlist select_shortlist(const BinRanking& ranking, const InvertedIndex& index, std::size_t T);

/// Lazily enumerates cells (a, b) of a two-axis grid by increasing
/// cost_a[a] + cost_b[b], ties broken by the key a * |cost_b| + b. Uses
/// multi-sequence traversal over the two sorted axes.
class MultiSequenceTraversal {
 public:
  struct Cell {
    BinId key = 0;
    std::size_t a = 0;
    std::size_t b = 0;
    double cost = 0.0;
  };

  MultiSequenceTraversal(Vector cost_a, Vector cost_b);

  std::optional<Cell> next();

 private:
  struct Node {
    double cost;
    BinId key;
    std::uint32_t i;  // position in sorted axis a
    std::uint32_t j;  // position in sorted axis b
  };
  struct NodeAfter {
    bool operator()(const Node& x, const Node& y) const {
      return x.cost != y.cost ? x.cost > y.cost : x.key > y.key;
    }
  };

  void push(std::uint32_t i, std::uint32_t j);

  Vector cost_a_;
  Vector cost_b_;
  std::vector<std::uint32_t> sorted_a_;
  std::vector<std::uint32_t> sorted_b_;
  std::priority_queue<Node, std::vector<Node>, NodeAfter> heap_;
};

/// Ranks IMI cells by increasing d_1(k) + d_2(l), the squared distances of
/// the query halves to the coarse sub-codewords, emitting at most `limit`
/// cells. With `index`, empty bins are skipped.
BinRanking imi_rank_bins(std::span<const double> x_query, const ProductCodebook& coarse2,
                         std::size_t limit, const InvertedIndex* index = nullptr);

/// Ranks IMI cells by decreasing score_1[k] + score_2[l].
BinRanking imi_rank_bins_by_score(std::span<const double> score_1,
                                  std::span<const double> score_2, std::size_t limit,
                                  const InvertedIndex* index = nullptr);

/// Full-sort ranking of all K^2 cells; for small K.
BinRanking imi_rank_bins_exhaustive(std::span<const double> x_query,
                                    const ProductCodebook& coarse2);

}  // namespace ivfnet
