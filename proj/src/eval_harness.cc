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

#include "ivfnet/eval_harness.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "ivfnet/binary_io.h"
#include "ivfnet/errors.h"

namespace ivfnet {

RelevanceJudgments judgments_from_labels(const FeatureSet& queries, const FeatureSet& database) {
  if (!queries.has_labels() || !database.has_labels()) {
    throw PreconditionError("judgments_from_labels: labels required");
  }
  std::vector<std::vector<ImageId>> by_class;
  for (std::size_t i = 0; i < database.count; ++i) {
    const auto c = database.label(i);
    if (c >= by_class.size()) by_class.resize(c + 1);
    by_class[c].push_back(static_cast<ImageId>(i));
  }
  RelevanceJudgments out;
  out.relevant.reserve(queries.count);
  for (std::size_t q = 0; q < queries.count; ++q) {
    const auto c = queries.label(q);
    out.relevant.push_back(c < by_class.size() ? by_class[c] : std::vector<ImageId>{});
  }
  return out;
}

double average_precision(std::span<const ImageId> ranked, std::span<const ImageId> relevant) {
  if (relevant.empty()) throw PreconditionError("average_precision: empty relevant set");
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[i])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

namespace {

void check_queries(const SearchIndex& index, const FeatureSet& queries,
                   const RelevanceJudgments& judgments) {
  if (judgments.relevant.size() != queries.count) {
    throw PreconditionError("judgments do not cover the query set");
  }
  if (queries.count > 0 && queries.dim != index.dim()) {
    throw DimensionError("query dimension " + std::to_string(queries.dim) + " != index dimension " +
                         std::to_string(index.dim()));
  }
}

struct PerQuery {
  double ap = 0.0;
  std::size_t candidates = 0;
  std::size_t bins = 0;
};

template <typename QueryFn>
std::vector<PerQuery> run_queries(const FeatureSet& queries, const RelevanceJudgments& judgments,
                                  int threads, const QueryFn& fn) {
  std::vector<PerQuery> out(queries.count);
  parallel_for(queries.count, threads, [&](std::size_t q) {
    const QueryResult r = fn(queries.row_as_double(q));
    out[q] = {average_precision(r.ranked_ids, judgments.relevant[q]), r.candidates,
              r.bins_scanned};
  });
  return out;
}

}  // namespace

std::vector<CurvePoint> map_at_T(const SearchIndex& index, const FeatureSet& queries,
                                 const RelevanceJudgments& judgments,
                                 std::span<const std::size_t> B_schedule, int threads) {
  check_queries(index, queries, judgments);
  std::vector<CurvePoint> curve;
  for (std::size_t B : B_schedule) {
    const auto per = run_queries(queries, judgments, threads, [&](const Vector& x) {
      return query_top_bins(x, index, B);
    });
    CurvePoint p;
    p.B = B;
    for (const auto& q : per) {
      p.mAP += q.ap;
      p.T_avg += static_cast<double>(q.candidates);
    }
    if (!per.empty()) {
      p.mAP /= static_cast<double>(per.size());
      p.T_avg /= static_cast<double>(per.size());
    }
    curve.push_back(p);
  }
  return curve;
}

std::vector<ShortlistPoint> map_at_shortlist(const SearchIndex& index, const FeatureSet& queries,
                                             const RelevanceJudgments& judgments,
                                             std::span<const std::size_t> T_schedule,
                                             int threads) {
  check_queries(index, queries, judgments);
  std::vector<ShortlistPoint> out;
  for (std::size_t T : T_schedule) {
    const auto per = run_queries(queries, judgments, threads, [&](const Vector& x) {
      return query(x, index, static_cast<long long>(T));
    });
    ShortlistPoint p;
    p.T = T;
    for (const auto& q : per) {
      p.mAP += q.ap;
      p.T_avg += static_cast<double>(q.candidates);
      p.B_avg += static_cast<double>(q.bins);
    }
    if (!per.empty()) {
      const auto n = static_cast<double>(per.size());
      p.mAP /= n;
      p.T_avg /= n;
      p.B_avg /= n;
    }
    out.push_back(p);
  }
  return out;
}

std::vector<std::size_t> power_of_two_schedule(std::size_t max_bins) {
  std::vector<std::size_t> out;
  for (std::size_t b = 1; b <= max_bins; b *= 2) out.push_back(b);
  if (max_bins > 0 && out.back() != max_bins) out.push_back(max_bins);
  return out;
}

std::string curve_to_csv(std::span<const CurvePoint> curve) {
  std::string out = "B,T_avg,mAP\n";
  char buf[96];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", p.B, p.T_avg, p.mAP);
    out += buf;
  }
  return out;
}

FeatureSet synth_dataset(std::size_t classes, std::size_t per_class, std::size_t d, double spread,
                         std::uint64_t seed) {
  if (classes == 0 || per_class == 0 || d == 0) {
    throw PreconditionError("synth_dataset: classes, per_class and d must be positive");
  }
  if (!(spread >= 0.0)) throw PreconditionError("synth_dataset: spread must be non-negative");
  Rng rng(seed);
  Matrix centers(classes, d);
  for (double& v : centers.data()) v = 10.0 * rng.uniform();

  FeatureSet fs(classes * per_class, d);
  fs.labels.emplace(fs.count);
  fs.class_count = static_cast<std::uint32_t>(classes);
  std::size_t i = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s, ++i) {
      auto row = fs.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = static_cast<float>(centers(c, j) + spread * rng.normal());
      }
      (*fs.labels)[i] = static_cast<std::uint32_t>(c);
    }
  }
  return fs;
}

FeatureSet select_rows(const FeatureSet& data, std::span<const std::size_t> ids) {
  FeatureSet out(ids.size(), data.dim);
  out.class_count = data.class_count;
  if (data.has_labels()) out.labels.emplace(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= data.count) throw PreconditionError("select_rows: row out of range");
    const auto src = data.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
    if (data.has_labels()) (*out.labels)[i] = data.label(ids[i]);
  }
  return out;
}

std::pair<FeatureSet, FeatureSet> split_queries(const FeatureSet& data,
                                                std::size_t queries_per_class) {
  if (!data.has_labels()) throw PreconditionError("split_queries: labels required");
  std::vector<std::vector<std::size_t>> by_class(data.class_count);
  for (std::size_t i = 0; i < data.count; ++i) by_class.at(data.label(i)).push_back(i);
  std::vector<std::size_t> db, q;
  for (const auto& members : by_class) {
    if (members.size() <= queries_per_class) {
      throw PreconditionError("split_queries: a class has too few members");
    }
    const std::size_t cut = members.size() - queries_per_class;
    db.insert(db.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(cut));
    q.insert(q.end(), members.begin() + static_cast<std::ptrdiff_t>(cut), members.end());
  }
  std::sort(db.begin(), db.end());
  std::sort(q.begin(), q.end());
  return {select_rows(data, db), select_rows(data, q)};
}

// ---------------------------------------------------------------------------
// Feature files

namespace {

constexpr char kPlainMagic[4] = {'C', 'I', 'P', 'F'};
constexpr char kLabeledMagic[4] = {'C', 'I', 'P', 'L'};

}  // namespace

std::vector<std::uint8_t> serialize_features(const FeatureSet& fs) {
  fs.validate();
  if (fs.count > UINT32_MAX || fs.dim > UINT32_MAX) {
    throw PreconditionError("write_features: count or dim exceeds 32 bits");
  }
  io::ByteWriter w;
  w.raw(std::string_view(fs.has_labels() ? kLabeledMagic : kPlainMagic, 4));
  w.u32(kFeatureFileVersion);
  w.u32(static_cast<std::uint32_t>(fs.count));
  w.u32(static_cast<std::uint32_t>(fs.dim));
  if (fs.has_labels()) w.u32(fs.class_count);
  for (float v : fs.values) w.f32(v);
  if (fs.has_labels()) {
    for (std::uint32_t l : *fs.labels) w.u32(l);
  }
  return w.take();
}

FeatureSet deserialize_features(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "feature file");
  const auto magic = r.take(4);
  const bool labeled = std::equal(magic.begin(), magic.end(), kLabeledMagic);
  if (!labeled && !std::equal(magic.begin(), magic.end(), kPlainMagic)) {
    throw FormatError(FormatError::Kind::kBadMagic, "feature file: bad magic bytes");
  }
  const std::uint32_t version = r.u32();
  if (version != kFeatureFileVersion) {
    throw FormatError(FormatError::Kind::kBadVersion,
                      "feature file: unsupported version " + std::to_string(version));
  }
  const std::uint64_t count = r.u32();
  const std::uint64_t dim = r.u32();
  const std::uint32_t class_count = labeled ? r.u32() : 0;

  // Widened so that a hostile header cannot wrap around.
  const unsigned __int128 expected =
      static_cast<unsigned __int128>(count) * dim * 4 + (labeled ? count * 4 : 0);
  if (expected != r.remaining()) {
    throw FormatError(FormatError::Kind::kSize,
                      "feature file: header declares " + std::to_string(count) + " x " +
                          std::to_string(dim) + " but " + std::to_string(r.remaining()) +
                          " payload bytes remain");
  }
  FeatureSet fs(static_cast<std::size_t>(count), static_cast<std::size_t>(dim));
  for (float& v : fs.values) v = r.f32();
  if (labeled) {
    fs.class_count = class_count;
    fs.labels.emplace(fs.count);
    for (auto& l : *fs.labels) l = r.u32();
  }
  try {
    fs.validate();
  } catch (const Error& e) {
    throw FormatError(FormatError::Kind::kCorrupt, std::string("feature file: ") + e.what());
  }
  return fs;
}

void write_features(const FeatureSet& fs, const std::string& path) {
  io::write_file(path, serialize_features(fs));
}

FeatureSet read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_features(bytes);
}

}  // namespace ivfnet
