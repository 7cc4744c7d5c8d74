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

#include "ivfnet/search_engine.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "ivfnet/errors.h"
#include "ivfnet/eval_harness.h"

namespace ivfnet {
namespace {

namespace fs = std::filesystem;

KMeansConfig kmeans(std::uint64_t seed) {
  KMeansConfig k;
  k.seed = seed;
  k.max_iters = 20;
  return k;
}

struct Fixture {
  FeatureSet db;
  FeatureSet queries;
};

Fixture small_data(std::uint64_t seed = 1) {
  const FeatureSet all = synth_dataset(8, 40, 8, 2.0, seed);
  auto [db, qs] = split_queries(all, 3);
  return {std::move(db), std::move(qs)};
}

SearchIndex ivf_index(const FeatureSet& db, std::size_t nbins = 8) {
  const PipelineConfig cfg{Pipeline::kIvfPq, nbins, 4, 8, {}, ""};
  return build_index(db, cfg, train_codebooks(db, cfg, kmeans(3)));
}

SearchIndex imi_index(const FeatureSet& db) {
  const PipelineConfig cfg{Pipeline::kImiPq, 4, 4, 8, {}, ""};
  return build_index(db, cfg, train_codebooks(db, cfg, kmeans(4)));
}

SearchIndex subic_index(const FeatureSet& db, Pipeline p = Pipeline::kSubicI) {
  const Variant v = pipeline_variant(p);
  const std::size_t nbins = is_multi_index(p) ? 3 : 8;
  NetworkConfig nc = make_network_config(v, db.dim, nbins, 4, 8, 8);
  nc.l2_normalize_input = true;
  ModelBundle mb;
  NetworkParams params = init_params(nc, 5);
  if (v == Variant::kSubicR) params.frozen[kW1] = params.frozen[kC1] = true;
  mb.net = Network{nc, params, 5};
  return build_index(db, PipelineConfig{p, nbins, 4, 8, {}, ""}, std::move(mb));
}

std::vector<SearchIndex> all_pipelines(const FeatureSet& db) {
  return {ivf_index(db), imi_index(db), subic_index(db, Pipeline::kSubicI),
          subic_index(db, Pipeline::kSubicJ), subic_index(db, Pipeline::kSubicR),
          subic_index(db, Pipeline::kSubicImi)};
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ivfnet_search_engine_test";
  fs::create_directories(dir);
  return dir / name;
}

TEST(PipelineConfig, TextRoundTrip) {
  const PipelineConfig c{Pipeline::kSubicR, 64, 8, 256, {10, 100, 1000}, "models.bidx"};
  EXPECT_EQ(PipelineConfig::from_text(c.to_text()), c);
  EXPECT_THROW(PipelineConfig::from_text("pipeline=nope\n"), Error);
  PipelineConfig bad = c;
  bad.T_schedule = {5, 3};
  EXPECT_THROW(bad.validate(), PreconditionError);
}

TEST(PipelineConfig, KeyValueParsing) {
  const auto kv = parse_key_values("# comment\n\na=1\nb = two\n");
  EXPECT_EQ(kv.at("a"), "1");
  EXPECT_EQ(kv.at("b"), "two");
  EXPECT_THROW(parse_key_values("a=1\na=2\n"), FormatError);
  EXPECT_THROW(parse_key_values("novalue\n"), FormatError);
}

TEST(PipelineConfig, NetworkConfigTextRoundTrip) {
  NetworkConfig nc = make_network_config(Variant::kSubicR, 16, 8, 4, 16, 10);
  nc.hyper.mu1 = 0.1 + 0.2;
  nc.l2_normalize_input = true;
  EXPECT_EQ(network_config_from_text(network_config_to_text(nc)), nc);
}

TEST(Pipeline, Names) {
  for (Pipeline p : {Pipeline::kIvfPq, Pipeline::kImiPq, Pipeline::kSubicI, Pipeline::kSubicJ,
                     Pipeline::kSubicR, Pipeline::kSubicImi}) {
    EXPECT_EQ(pipeline_from_string(to_string(p)), p);
  }
  EXPECT_EQ(to_string(Pipeline::kIvfPq), "ivf_pq");
  EXPECT_TRUE(is_learned(Pipeline::kSubicJ));
  EXPECT_FALSE(is_learned(Pipeline::kImiPq));
  EXPECT_TRUE(is_multi_index(Pipeline::kSubicImi));
}

TEST(BuildIndex, EveryPipelinePartitionsTheDatabase) {
  const Fixture f = small_data();
  for (const SearchIndex& idx : all_pipelines(f.db)) {
    std::set<ImageId> seen;
    for (const auto& b : idx.inverted.bins()) seen.insert(b.ids.begin(), b.ids.end());
    EXPECT_EQ(seen.size(), f.db.count) << to_string(idx.config.pipeline);
    EXPECT_EQ(idx.inverted.size(), f.db.count);
    EXPECT_EQ(idx.inverted.code_size(), 4u);
  }
}

TEST(BuildIndex, TinyDatabaseIsReconstructedExactly) {
  FeatureSet two(2, 4);
  two.values = {1, 2, 3, 4, -1, 0, 5, 2};
  const PipelineConfig cfg{Pipeline::kIvfPq, 1, 2, 2, {}, ""};
  const SearchIndex idx = build_index(two, cfg, train_codebooks(two, cfg, kmeans(1)));
  for (ImageId i : {0u, 1u}) {
    const QueryResult r = query(two.row_as_double(i), idx, 1);
    EXPECT_EQ(r.ranked_ids, (std::vector<ImageId>{i, 1 - i}));
    EXPECT_NEAR(r.scores[0], 0.0, 1e-12);
  }
}

TEST(BuildIndex, ZeroWeightNetworkPutsEverythingInBinZero) {
  const Fixture f = small_data();
  NetworkConfig nc = make_network_config(Variant::kSubicI, f.db.dim, 8, 4, 8, 8);
  NetworkParams p = init_params(nc, 1);
  p[kW1] = Matrix(p[kW1].rows(), p[kW1].cols());
  ModelBundle mb;
  mb.net = Network{nc, p, 1};
  const SearchIndex idx = build_index(f.db, PipelineConfig{Pipeline::kSubicI, 8, 4, 8, {}, ""}, mb);
  EXPECT_EQ(idx.inverted.bin_size(0), f.db.count);
  EXPECT_EQ(idx.inverted.nonempty_bins(), 1u);
}

TEST(BuildIndex, StoredCodesMatchReencoding) {
  const Fixture f = small_data();
  const SearchIndex idx = subic_index(f.db);
  for (const auto& b : idx.inverted.bins()) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      const Encoding e = encode(f.db.row_as_double(b.ids[i]), idx.models.net->params, idx.models.net->config);
      ASSERT_EQ(e.bin, b.bin_id);
      const auto c = b.code(i, 4);
      ASSERT_TRUE(std::equal(c.begin(), c.end(), e.code.indices.begin()));
    }
  }
}

TEST(BuildIndex, IndependentOfThreadCount) {
  const Fixture f = small_data();
  const SearchIndex a = subic_index(f.db);
  const SearchIndex b = build_index(f.db, a.config, a.models, 4);
  EXPECT_EQ(a, b);
}

TEST(BuildIndex, RejectsMissingOrMismatchedModels) {
  const Fixture f = small_data();
  const PipelineConfig cfg{Pipeline::kIvfPq, 8, 4, 8, {}, ""};
  EXPECT_THROW(build_index(f.db, cfg, ModelBundle{}), PreconditionError);
  const ModelBundle mb = train_codebooks(f.db, cfg, kmeans(1));
  PipelineConfig other = cfg;
  other.nbins = 4;
  EXPECT_THROW(build_index(f.db, other, mb), PreconditionError);
  EXPECT_THROW(build_index(FeatureSet(3, 5), cfg, mb), DimensionError);
}

TEST(Query, QueryEqualToAnIndexedPointRanksItFirst) {
  const Fixture f = small_data();
  const SearchIndex idx = ivf_index(f.db);
  for (std::size_t i : {0u, 17u, 100u}) {
    const QueryResult r = query_exhaustive(f.db.row_as_double(i), idx);
    // Other items may share the PQ reconstruction, so only the score is fixed.
    const auto pos = std::find(r.ranked_ids.begin(), r.ranked_ids.end(), i) - r.ranked_ids.begin();
    EXPECT_EQ(r.scores[pos], r.scores[0]);
  }
}

TEST(Query, ZeroAndNegativeT) {
  const Fixture f = small_data();
  for (const SearchIndex& idx : all_pipelines(f.db)) {
    const QueryResult r = query(f.queries.row_as_double(0), idx, 0);
    EXPECT_TRUE(r.ranked_ids.empty());
    EXPECT_EQ(r.bins_scanned, 0u);
    EXPECT_THROW(query(f.queries.row_as_double(0), idx, -1), PreconditionError);
  }
}

TEST(Query, AllBinsEqualsExhaustive) {
  const Fixture f = small_data();
  for (const SearchIndex& idx : all_pipelines(f.db)) {
    for (std::size_t q = 0; q < 5; ++q) {
      const Vector x = f.queries.row_as_double(q);
      const QueryResult all = query_top_bins(x, idx, idx.inverted.bin_count());
      const QueryResult ex = query_exhaustive(x, idx);
      EXPECT_EQ(all.ranked_ids, ex.ranked_ids) << to_string(idx.config.pipeline);
      EXPECT_EQ(all.scores, ex.scores);
      EXPECT_EQ(query(x, idx, static_cast<long long>(f.db.count)).ranked_ids, ex.ranked_ids);
    }
  }
}

TEST(Query, ResultsComeOnlyFromScannedBinsAndAreOrdered) {
  const Fixture f = small_data();
  for (const SearchIndex& idx : all_pipelines(f.db)) {
    const Vector x = f.queries.row_as_double(1);
    const BinRanking rank = rank_bins(x, idx, 3);
    std::set<ImageId> allowed;
    for (BinId b : rank.order) {
      if (const InvertedBin* bin = idx.inverted.find(b)) allowed.insert(bin->ids.begin(), bin->ids.end());
    }
    const QueryResult r = query_top_bins(x, idx, 3);
    EXPECT_EQ(r.ranked_ids.size(), allowed.size());
    EXPECT_EQ(r.candidates, allowed.size());
    for (std::size_t i = 0; i < r.ranked_ids.size(); ++i) {
      EXPECT_TRUE(allowed.count(r.ranked_ids[i]));
      if (i == 0) continue;
      if (r.direction == RankOrder::kAscendingDistance) {
        EXPECT_LE(r.scores[i - 1], r.scores[i]);
      } else {
        EXPECT_GE(r.scores[i - 1], r.scores[i]);
      }
    }
  }
}

TEST(Query, LargerBScansASuperset) {
  const Fixture f = small_data();
  for (const SearchIndex& idx : all_pipelines(f.db)) {
    const Vector x = f.queries.row_as_double(2);
    std::set<ImageId> prev;
    for (std::size_t B = 1; B <= 8; ++B) {
      const QueryResult r = query_top_bins(x, idx, B);
      const std::set<ImageId> cur(r.ranked_ids.begin(), r.ranked_ids.end());
      EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      prev = cur;
    }
  }
}

TEST(Query, ShortlistRespectsTarget) {
  const Fixture f = small_data();
  for (const SearchIndex& idx : all_pipelines(f.db)) {
    for (long long T : {1LL, 20LL, 77LL}) {
      const QueryResult r = query(f.queries.row_as_double(0), idx, T);
      EXPECT_GE(r.candidates, static_cast<std::size_t>(T));
      const QueryResult fewer = query_top_bins(f.queries.row_as_double(0), idx, r.bins_scanned - 1);
      EXPECT_LT(fewer.candidates, static_cast<std::size_t>(T)) << to_string(idx.config.pipeline);
    }
  }
}

TEST(Persistence, RoundTripIsBitIdentical) {
  const Fixture f = small_data();
  for (const SearchIndex& idx : all_pipelines(f.db)) {
    const auto bytes = serialize_index(idx);
    const SearchIndex back = deserialize_index(bytes);
    EXPECT_EQ(back, idx);
    EXPECT_EQ(serialize_index(back), bytes);
    const Vector x = f.queries.row_as_double(0);
    EXPECT_EQ(query(x, back, 50), query(x, idx, 50));
  }
}

TEST(Persistence, FileRoundTrip) {
  const Fixture f = small_data();
  const SearchIndex idx = subic_index(f.db, Pipeline::kSubicR);
  const std::string path = temp_path("index.bidx").string();
  save_index(idx, path);
  EXPECT_EQ(load_index(path), idx);
  const std::string mpath = temp_path("models.bidx").string();
  save_models(idx.config, idx.models, mpath);
  const auto [cfg, models] = load_models(mpath);
  EXPECT_EQ(cfg, idx.config);
  EXPECT_EQ(models, idx.models);
  EXPECT_TRUE(models.net->params.frozen[kW1]);
  EXPECT_THROW(load_index(temp_path("missing.bidx").string()), FormatError);
}

FormatError::Kind load_error(std::span<const std::uint8_t> bytes) {
  try {
    deserialize_index(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no FormatError";
  return FormatError::Kind::kIo;
}

TEST(Persistence, CorruptionIsDetected) {
  const Fixture f = small_data();
  const auto bytes = serialize_index(ivf_index(f.db));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(load_error(bad), FormatError::Kind::kBadMagic);
  bad = bytes;
  bad[4] = 9;
  EXPECT_EQ(load_error(bad), FormatError::Kind::kBadVersion);
  bad = bytes;
  bad[bad.size() / 2] ^= 0x40;
  EXPECT_EQ(load_error(bad), FormatError::Kind::kChecksum);
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 3, bytes.size() - 1}) {
    EXPECT_EQ(load_error(std::span(bytes).first(cut)), FormatError::Kind::kTruncated) << cut;
  }
  bad = bytes;
  bad.push_back(0);
  EXPECT_EQ(load_error(bad), FormatError::Kind::kCorrupt);
}

}  // namespace
}  // namespace ivfnet
