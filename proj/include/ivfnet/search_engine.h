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

// End-to-end retrieval pipelines over an inverted index and the BIDX
// container that persists them.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ivfnet/codebooks.h"
#include "ivfnet/feature_set.h"
#include "ivfnet/indexing_net.h"
#include "ivfnet/ivf_index.h"

namespace ivfnet {

enum class Pipeline : std::uint8_t {
  kIvfPq = 0,
  kImiPq = 1,
  kSubicI = 2,
  kSubicJ = 3,
  kSubicR = 4,
  kSubicImi = 5,
};

std::string_view to_string(Pipeline p);
Pipeline pipeline_from_string(std::string_view s);
bool is_learned(Pipeline p);
bool is_multi_index(Pipeline p);
/// The network variant a learned pipeline expects.
Variant pipeline_variant(Pipeline p);

struct PipelineConfig {
  Pipeline pipeline = Pipeline::kIvfPq;
  std::size_t nbins = 0;  // N for inverted files, K_imi per axis for multi-indexes
  std::size_t M = 0;
  std::size_t K = 0;
  std::vector<std::size_t> T_schedule;  // ascending
  std::string models_path;              // codebooks or checkpoint

  /// Throws PreconditionError when a pipeline parameter is missing or the
  /// schedule is not ascending.
  void validate() const;

  /// Canonical "key=value" lines in sorted key order.
  std::string to_text() const;
  static PipelineConfig from_text(std::string_view text);

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

/// "key=value" lines, '#' comments and blank lines ignored. Throws
/// FormatError(kCorrupt) on a malformed or repeated key.
std::map<std::string, std::string> parse_key_values(std::string_view text);

std::string network_config_to_text(const NetworkConfig& cfg);
NetworkConfig network_config_from_text(std::string_view text);

/// Trained models of a pipeline. Which members are set depends on it.
struct ModelBundle {
  std::optional<Codebook> coarse;             // ivf_pq
  std::optional<ProductCodebook> coarse_imi;  // imi_pq
  std::optional<ProductCodebook> pq;          // ivf_pq, imi_pq
  std::optional<Network> net;                 // subic_*

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// Trains the coarse quantizer and the residual product quantizer of an
/// unsupervised pipeline.
ModelBundle train_codebooks(const FeatureSet& train, const PipelineConfig& cfg,
                            const KMeansConfig& base);

struct SearchIndex {
  PipelineConfig config;
  ModelBundle models;
  InvertedIndex inverted;

  std::size_t dim() const;
  RankOrder direction() const;

  friend bool operator==(const SearchIndex&, const SearchIndex&) = default;
};

/// Throws PreconditionError when the models required by the pipeline are
/// missing or inconsistent with the config, DimensionError when the
/// feature dimension disagrees with them.
SearchIndex build_index(const FeatureSet& features, const PipelineConfig& cfg, ModelBundle models,
                        int threads = 1);

struct QueryResult {
  std::vector<ImageId> ranked_ids;
  std::vector<double> scores;
  std::size_t bins_scanned = 0;  // B
  std::size_t candidates = 0;
  RankOrder direction = RankOrder::kAscendingDistance;

  friend bool operator==(const QueryResult&, const QueryResult&) = default;
};

/// Ranks bins, takes the shortlist for target size T and scores it.
QueryResult query(std::span<const double> x, const SearchIndex& index, long long T);

/// Scores every image of the first B ranked bins. Multi-index rankings
/// count only nonempty cells.
QueryResult query_top_bins(std::span<const double> x, const SearchIndex& index, std::size_t B);

/// Scores every indexed image.
QueryResult query_exhaustive(std::span<const double> x, const SearchIndex& index);

/// Bins in ranked order, at most `limit` of them (multi-index rankings
/// skip empty cells).
BinRanking rank_bins(std::span<const double> x, const SearchIndex& index, std::size_t limit);

// BIDX container: "BIDX", version u32, section count u32, then sections of
// tag[4], length u64, payload, FNV-1a-64 of the payload. Sections: CONF
// (pipeline config as canonical text), CBKS (codebooks), MODL (network
// checkpoint), BINS (inverted lists and codes). All little-endian.
inline constexpr std::uint32_t kContainerVersion = 1;

void save_index(const SearchIndex& index, const std::string& path);
SearchIndex load_index(const std::string& path);

/// Same container without the BINS section.
void save_models(const PipelineConfig& cfg, const ModelBundle& models, const std::string& path);
std::pair<PipelineConfig, ModelBundle> load_models(const std::string& path);

std::vector<std::uint8_t> serialize_index(const SearchIndex& index);
SearchIndex deserialize_index(std::span<const std::uint8_t> bytes);

}  // namespace ivfnet
