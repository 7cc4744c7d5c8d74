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

// Retrieval evaluation, synthetic datasets and feature files.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ivfnet/feature_set.h"
#include "ivfnet/search_engine.h"

namespace ivfnet {

/// For every query, the sorted ids of its relevant database items.
struct RelevanceJudgments {
  std::vector<std::vector<ImageId>> relevant;
};

/// Relevant = same class label. Both sets must be labeled.
RelevanceJudgments judgments_from_labels(const FeatureSet& queries, const FeatureSet& database);

/// Mean over relevant items of the precision at their rank; relevant items
/// missing from the ranking contribute 0. `relevant` must be sorted and
/// nonempty.
double average_precision(std::span<const ImageId> ranked, std::span<const ImageId> relevant);

struct CurvePoint {
  std::size_t B = 0;
  double T_avg = 0.0;
  double mAP = 0.0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

/// One point per B: every query scans its top-B bins. Queries are
/// evaluated on `threads` threads and reduced in query order.
std::vector<CurvePoint> map_at_T(const SearchIndex& index, const FeatureSet& queries,
                                 const RelevanceJudgments& judgments,
                                 std::span<const std::size_t> B_schedule, int threads = 1);

/// mAP and mean bins scanned when every query targets shortlist size T.
struct ShortlistPoint {
  std::size_t T = 0;
  double T_avg = 0.0;
  double B_avg = 0.0;
  double mAP = 0.0;
};

std::vector<ShortlistPoint> map_at_shortlist(const SearchIndex& index, const FeatureSet& queries,
                                             const RelevanceJudgments& judgments,
                                             std::span<const std::size_t> T_schedule,
                                             int threads = 1);

/// 1, 2, 4, ... up to and including max_bins (which is appended when it is
/// not a power of two).
std::vector<std::size_t> power_of_two_schedule(std::size_t max_bins);

/// "B,T_avg,mAP" header and one row per point.
std::string curve_to_csv(std::span<const CurvePoint> curve);

/// Gaussian mixture: class centers uniform in [0, 10]^d, samples
/// center + spread * N(0, I), stored class-major with labels.
FeatureSet synth_dataset(std::size_t classes, std::size_t per_class, std::size_t d, double spread,
                         std::uint64_t seed);

/// Splits a labeled set into (database, queries), taking the last
/// `queries_per_class` items of every class as queries.
std::pair<FeatureSet, FeatureSet> split_queries(const FeatureSet& data,
                                                std::size_t queries_per_class);

/// Rows `ids` of `data`, labels included.
FeatureSet select_rows(const FeatureSet& data, std::span<const std::size_t> ids);

// Feature files: "CIPF" (or "CIPL" with labels), version u32, count u32,
// dim u32, [class_count u32 for CIPL], count*dim float32, [count u32
// labels]. All little-endian.
inline constexpr std::uint32_t kFeatureFileVersion = 1;

void write_features(const FeatureSet& fs, const std::string& path);
FeatureSet read_features(const std::string& path);
std::vector<std::uint8_t> serialize_features(const FeatureSet& fs);
FeatureSet deserialize_features(std::span<const std::uint8_t> bytes);

}  // namespace ivfnet
