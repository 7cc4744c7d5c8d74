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

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>

#include "ivfnet/adc.h"
#include "ivfnet/binary_io.h"
#include "ivfnet/errors.h"

namespace ivfnet {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw PreconditionError(what);
}

[[noreturn]] void corrupt(const std::string& what) {
  throw FormatError(FormatError::Kind::kCorrupt, what);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) corrupt("bad integer for '" + key + "': " + v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) corrupt("bad number for '" + key + "': " + v);
  return out;
}

const std::string& lookup(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) corrupt("missing key '" + key + "'");
  return it->second;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

// ---------------------------------------------------------------------------
// Pipelines and configs

std::string_view to_string(Pipeline p) {
  switch (p) {
    case Pipeline::kIvfPq: return "ivf_pq";
    case Pipeline::kImiPq: return "imi_pq";
    case Pipeline::kSubicI: return "subic_i";
    case Pipeline::kSubicJ: return "subic_j";
    case Pipeline::kSubicR: return "subic_r";
    case Pipeline::kSubicImi: return "subic_imi";
  }
  return "?";
}

Pipeline pipeline_from_string(std::string_view s) {
  for (Pipeline p : {Pipeline::kIvfPq, Pipeline::kImiPq, Pipeline::kSubicI, Pipeline::kSubicJ,
                     Pipeline::kSubicR, Pipeline::kSubicImi}) {
    if (to_string(p) == s) return p;
  }
  throw PreconditionError("unknown pipeline '" + std::string(s) + "'");
}

bool is_learned(Pipeline p) { return p != Pipeline::kIvfPq && p != Pipeline::kImiPq; }

bool is_multi_index(Pipeline p) { return p == Pipeline::kImiPq || p == Pipeline::kSubicImi; }

Variant pipeline_variant(Pipeline p) {
  switch (p) {
    case Pipeline::kSubicI: return Variant::kSubicI;
    case Pipeline::kSubicJ: return Variant::kSubicJ;
    case Pipeline::kSubicR: return Variant::kSubicR;
    case Pipeline::kSubicImi: return Variant::kSubicImi;
    default: throw PreconditionError("pipeline '" + std::string(to_string(p)) + "' has no network");
  }
}

void PipelineConfig::validate() const {
  const std::string name(to_string(pipeline));
  require(nbins >= 1, name + ": bin count must be positive");
  require(M >= 1 && K >= 1, name + ": M and K must be positive");
  require(K <= 65536, name + ": K too large for 16-bit codes");
  if (is_multi_index(pipeline)) {
    require(nbins <= 65535, name + ": K_imi too large for 32-bit cell keys");
  }
  require(std::is_sorted(T_schedule.begin(), T_schedule.end()),
          name + ": T_schedule must be ascending");
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) corrupt("line " + std::to_string(line_no) + ": expected key=value");
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) corrupt("line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second) corrupt("repeated key '" + key + "'");
  }
  return out;
}

std::string PipelineConfig::to_text() const {
  std::map<std::string, std::string> kv;
  kv["K"] = std::to_string(K);
  kv["M"] = std::to_string(M);
  kv["models_path"] = models_path;
  kv["nbins"] = std::to_string(nbins);
  kv["pipeline"] = std::string(to_string(pipeline));
  std::string sched;
  for (std::size_t i = 0; i < T_schedule.size(); ++i) {
    if (i) sched += ',';
    sched += std::to_string(T_schedule[i]);
  }
  kv["T_schedule"] = sched;
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

PipelineConfig PipelineConfig::from_text(std::string_view text) {
  const auto kv = parse_key_values(text);
  PipelineConfig cfg;
  try {
    cfg.pipeline = pipeline_from_string(lookup(kv, "pipeline"));
  } catch (const PreconditionError& e) {
    corrupt(e.what());
  }
  cfg.nbins = parse_size("nbins", lookup(kv, "nbins"));
  cfg.M = parse_size("M", lookup(kv, "M"));
  cfg.K = parse_size("K", lookup(kv, "K"));
  if (auto it = kv.find("models_path"); it != kv.end()) cfg.models_path = it->second;
  if (auto it = kv.find("T_schedule"); it != kv.end()) {
    std::string_view s = it->second;
    while (!s.empty()) {
      const auto comma = s.find(',');
      cfg.T_schedule.push_back(parse_size("T_schedule", trim(s.substr(0, comma))));
      s = comma == std::string_view::npos ? std::string_view{} : s.substr(comma + 1);
    }
  }
  return cfg;
}

std::string network_config_to_text(const NetworkConfig& c) {
  std::map<std::string, std::string> kv;
  kv["C"] = std::to_string(c.C);
  kv["K"] = std::to_string(c.K);
  kv["M"] = std::to_string(c.M);
  kv["alpha"] = std::to_string(c.alpha);
  kv["d"] = std::to_string(c.d);
  kv["d_r"] = std::to_string(c.d_r);
  kv["gamma1"] = format_double(c.hyper.gamma1);
  kv["gamma2"] = format_double(c.hyper.gamma2);
  kv["h"] = std::to_string(c.h);
  kv["l2_normalize_input"] = c.l2_normalize_input ? "1" : "0";
  kv["mu1"] = format_double(c.hyper.mu1);
  kv["mu2"] = format_double(c.hyper.mu2);
  kv["objective"] = std::string(to_string(c.objective));
  kv["residual_enabled"] = c.residual_enabled ? "1" : "0";
  kv["selector_blocks"] = std::to_string(c.selector_blocks);
  kv["selector_size"] = std::to_string(c.selector_size);
  kv["variant"] = std::string(to_string(c.variant));
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

NetworkConfig network_config_from_text(std::string_view text) {
  const auto kv = parse_key_values(text);
  NetworkConfig c;
  try {
    c.variant = variant_from_string(lookup(kv, "variant"));
    c.objective = objective_from_string(lookup(kv, "objective"));
  } catch (const PreconditionError& e) {
    corrupt(e.what());
  }
  c.d = parse_size("d", lookup(kv, "d"));
  c.selector_blocks = parse_size("selector_blocks", lookup(kv, "selector_blocks"));
  c.selector_size = parse_size("selector_size", lookup(kv, "selector_size"));
  c.M = parse_size("M", lookup(kv, "M"));
  c.K = parse_size("K", lookup(kv, "K"));
  c.C = parse_size("C", lookup(kv, "C"));
  c.residual_enabled = parse_size("residual_enabled", lookup(kv, "residual_enabled")) != 0;
  c.d_r = parse_size("d_r", lookup(kv, "d_r"));
  c.h = parse_size("h", lookup(kv, "h"));
  c.alpha = static_cast<int>(parse_size("alpha", lookup(kv, "alpha")));
  c.hyper.mu1 = parse_double("mu1", lookup(kv, "mu1"));
  c.hyper.gamma1 = parse_double("gamma1", lookup(kv, "gamma1"));
  c.hyper.mu2 = parse_double("mu2", lookup(kv, "mu2"));
  c.hyper.gamma2 = parse_double("gamma2", lookup(kv, "gamma2"));
  c.l2_normalize_input = parse_size("l2_normalize_input", lookup(kv, "l2_normalize_input")) != 0;
  return c;
}

// ---------------------------------------------------------------------------
// Training and building

ModelBundle train_codebooks(const FeatureSet& train, const PipelineConfig& cfg,
                            const KMeansConfig& base) {
  cfg.validate();
  require(!is_learned(cfg.pipeline), "train_codebooks: pipeline '" +
                                         std::string(to_string(cfg.pipeline)) +
                                         "' is trained with train()");
  require(train.count >= 1, "train_codebooks: empty training set");
  const Matrix data = train.to_matrix();
  Matrix residuals(data.rows(), data.cols());
  ModelBundle out;

  KMeansConfig coarse_cfg = base;
  coarse_cfg.n_clusters = cfg.nbins;
  coarse_cfg.seed = derive_seed(base.seed, 0);
  if (cfg.pipeline == Pipeline::kIvfPq) {
    out.coarse = kmeans_train(data, coarse_cfg);
    for (std::size_t i = 0; i < data.rows(); ++i) {
      const auto x = data.row(i);
      const Vector r = residual(x, *out.coarse, vq_assign(x, *out.coarse));
      std::copy(r.begin(), r.end(), residuals.row(i).begin());
    }
  } else {
    require(data.cols() >= 2, "train_codebooks: multi-index needs d >= 2");
    out.coarse_imi = pq_train(data, 2, cfg.nbins, coarse_cfg);
    for (std::size_t i = 0; i < data.rows(); ++i) {
      const auto x = data.row(i);
      const Vector d = pq_decode(pq_encode(x, *out.coarse_imi), *out.coarse_imi);
      for (std::size_t j = 0; j < x.size(); ++j) residuals(i, j) = x[j] - d[j];
    }
  }
  KMeansConfig pq_cfg = base;
  pq_cfg.seed = derive_seed(base.seed, 1);
  out.pq = pq_train(residuals, cfg.M, cfg.K, pq_cfg);
  return out;
}

namespace {

void check_models(const PipelineConfig& cfg, const ModelBundle& m) {
  const std::string name(to_string(cfg.pipeline));
  switch (cfg.pipeline) {
    case Pipeline::kIvfPq:
      require(m.coarse.has_value() && m.pq.has_value(), name + ": coarse and PQ codebooks required");
      require(m.coarse->size() == cfg.nbins, name + ": coarse codebook size != nbins");
      require(m.pq->dim() == m.coarse->dim(), name + ": PQ and coarse dims differ");
      break;
    case Pipeline::kImiPq:
      require(m.coarse_imi.has_value() && m.pq.has_value(),
              name + ": multi-index and PQ codebooks required");
      require(m.coarse_imi->M() == 2 && m.coarse_imi->K() == cfg.nbins,
              name + ": multi-index codebook must be 2 x nbins");
      require(m.pq->dim() == m.coarse_imi->dim(), name + ": PQ and coarse dims differ");
      break;
    default: {
      require(m.net.has_value(), name + ": network checkpoint required");
      const NetworkConfig& nc = m.net->config;
      nc.validate();
      m.net->params.check_shapes(nc);
      require(nc.variant == pipeline_variant(cfg.pipeline),
              name + ": checkpoint variant is " + std::string(to_string(nc.variant)));
      require(nc.selector_size == cfg.nbins, name + ": selector size != nbins");
      require(nc.M == cfg.M && nc.K == cfg.K, name + ": encoder shape != (M, K)");
      return;
    }
  }
  require(m.pq->M() == cfg.M && m.pq->K() == cfg.K, name + ": PQ shape != (M, K)");
}

void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

}  // namespace

std::size_t SearchIndex::dim() const {
  switch (config.pipeline) {
    case Pipeline::kIvfPq: return models.coarse ? models.coarse->dim() : 0;
    case Pipeline::kImiPq: return models.coarse_imi ? models.coarse_imi->dim() : 0;
    default: return models.net ? models.net->config.d : 0;
  }
}

RankOrder SearchIndex::direction() const {
  return is_learned(config.pipeline) ? RankOrder::kDescendingScore
                                     : RankOrder::kAscendingDistance;
}

SearchIndex build_index(const FeatureSet& features, const PipelineConfig& cfg, ModelBundle models,
                        int threads) {
  cfg.validate();
  check_models(cfg, models);
  SearchIndex out;
  out.config = cfg;
  out.models = std::move(models);
  if (features.count > 0) check_dim(features.dim, out.dim(), "build_index");
  const ModelBundle& m = out.models;

  switch (cfg.pipeline) {
    case Pipeline::kIvfPq: {
      const Codebook& coarse = *m.coarse;
      const ProductCodebook& pq = *m.pq;
      out.inverted = ivf_build(
          features, coarse,
          [&](std::span<const double> x, BinId bin) {
            return pq_encode(residual(x, coarse, bin), pq);
          },
          threads);
      break;
    }
    case Pipeline::kImiPq: {
      const ProductCodebook& coarse2 = *m.coarse_imi;
      const ProductCodebook& pq = *m.pq;
      const std::size_t K = coarse2.K();
      out.inverted = imi_build(
          features, coarse2,
          [&](std::span<const double> x, BinId bin) {
            const std::array<CodeIndex, 2> cell = {static_cast<CodeIndex>(bin / K),
                                                   static_cast<CodeIndex>(bin % K)};
            const Vector d = pq_decode(cell, coarse2);
            Vector r(x.size());
            for (std::size_t j = 0; j < x.size(); ++j) r[j] = x[j] - d[j];
            return pq_encode(r, pq);
          },
          threads);
      break;
    }
    default: {
      const Network& net = *m.net;
      std::vector<Encoding> enc(features.count);
      parallel_for(features.count, threads, [&](std::size_t i) {
        enc[i] = encode(features.row_as_double(i), net.params, net.config);
      });
      const IndexKind kind = net.config.selector_blocks == 2 ? IndexKind::kImi : IndexKind::kIvf;
      InvertedIndex inv(kind, net.config.bin_count(), net.config.M);
      for (std::size_t i = 0; i < features.count; ++i) {
        inv.add(static_cast<BinId>(enc[i].bin), static_cast<ImageId>(i), enc[i].code.indices);
      }
      inv.finalize();
      out.inverted = std::move(inv);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Querying

namespace {

/// Per-query state shared by bin ranking and candidate scoring.
struct QueryContext {
  Vector x;
  Encoding enc;  // learned pipelines only
};

QueryContext make_context(std::span<const double> x, const SearchIndex& index) {
  check_dim(x.size(), index.dim(), "query");
  QueryContext ctx;
  ctx.x.assign(x.begin(), x.end());
  if (is_learned(index.config.pipeline)) {
    const Network& net = *index.models.net;
    ctx.enc = encode(x, net.params, net.config);
  }
  return ctx;
}

/// Axis costs of the multi-index traversal: sub-codeword distances, or
/// negated selector scores.
std::pair<Vector, Vector> multi_index_costs(const QueryContext& ctx, const SearchIndex& index) {
  Vector a, b;
  if (index.config.pipeline == Pipeline::kImiPq) {
    const ProductCodebook& c2 = *index.models.coarse_imi;
    for (std::size_t m = 0; m < 2; ++m) {
      Vector& out = m == 0 ? a : b;
      const auto xs = std::span<const double>(ctx.x).subspan(c2.offset(m), c2.sub_dim(m));
      const Codebook& cb = c2.sub_codebook(m);
      for (std::size_t k = 0; k < cb.size(); ++k) out.push_back(squared_distance(xs, cb.centroid(k)));
    }
  } else {
    const std::size_t K = index.models.net->config.selector_size;
    for (std::size_t k = 0; k < K; ++k) {
      a.push_back(-ctx.enc.z_prime[k]);
      b.push_back(-ctx.enc.z_prime[K + k]);
    }
  }
  return {std::move(a), std::move(b)};
}

BinRanking rank_context(const QueryContext& ctx, const SearchIndex& index, std::size_t limit) {
  BinRanking r;
  switch (index.config.pipeline) {
    case Pipeline::kIvfPq: r = rank_bins_by_distance(ctx.x, *index.models.coarse); break;
    case Pipeline::kImiPq:
      return imi_rank_bins(ctx.x, *index.models.coarse_imi, limit, &index.inverted);
    case Pipeline::kSubicImi: {
      const std::size_t K = index.models.net->config.selector_size;
      const std::span<const double> zp(ctx.enc.z_prime);
      return imi_rank_bins_by_score(zp.subspan(0, K), zp.subspan(K, K), limit, &index.inverted);
    }
    default: r = rank_bins_by_score(ctx.enc.z_prime); break;
  }
  if (r.order.size() > limit) {
    r.order.resize(limit);
    r.pertinence.resize(limit);
  }
  return r;
}

QueryResult score_bins(const QueryContext& ctx, const SearchIndex& index,
                       std::span<const BinId> bins) {
  QueryResult out;
  out.direction = index.direction();
  out.bins_scanned = bins.size();
  std::vector<std::pair<double, ImageId>> scored;
  const std::size_t cs = index.inverted.code_size();

  for (BinId bin_id : bins) {
    const InvertedBin* bin = index.inverted.find(bin_id);
    if (bin == nullptr || bin->size() == 0) continue;
    std::vector<double> s;
    switch (index.config.pipeline) {
      case Pipeline::kIvfPq: {
        const Vector r = residual(ctx.x, *index.models.coarse, bin_id);
        s = adc_scan(build_lut(r, *index.models.pq, bin_id), bin->codes);
        break;
      }
      case Pipeline::kImiPq: {
        const ProductCodebook& c2 = *index.models.coarse_imi;
        const std::array<CodeIndex, 2> cell = {static_cast<CodeIndex>(bin_id / c2.K()),
                                               static_cast<CodeIndex>(bin_id % c2.K())};
        const Vector d = pq_decode(cell, c2);
        Vector r(ctx.x.size());
        for (std::size_t j = 0; j < r.size(); ++j) r[j] = ctx.x[j] - d[j];
        s = adc_scan(build_lut(r, *index.models.pq, bin_id), bin->codes);
        break;
      }
      default: {
        const std::size_t K = index.models.net->config.K;
        const Vector& z = ctx.enc.z;
        s.resize(bin->size());
        for (std::size_t i = 0; i < bin->size(); ++i) {
          const auto code = bin->code(i, cs);
          double acc = 0.0;
          for (std::size_t m = 0; m < cs; ++m) acc += z[m * K + code[m]];
          s[i] = acc;
        }
        break;
      }
    }
    for (std::size_t i = 0; i < bin->size(); ++i) scored.emplace_back(s[i], bin->ids[i]);
  }

  if (out.direction == RankOrder::kAscendingDistance) {
    std::sort(scored.begin(), scored.end());
  } else {
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
  }
#ifndef NDEBUG
  for (std::size_t i = 1; i < scored.size(); ++i) {
    if (scored[i].second == scored[i - 1].second) throw Error("duplicate candidate id");
  }
#endif
  out.candidates = scored.size();
  out.ranked_ids.reserve(scored.size());
  out.scores.reserve(scored.size());
  for (const auto& [score, id] : scored) {
    out.scores.push_back(score);
    out.ranked_ids.push_back(id);
  }
  return out;
}

}  // namespace

BinRanking rank_bins(std::span<const double> x, const SearchIndex& index, std::size_t limit) {
  return rank_context(make_context(x, index), index, limit);
}

QueryResult query(std::span<const double> x, const SearchIndex& index, long long T) {
  if (T < 0) throw PreconditionError("query: T must be non-negative");
  const QueryContext ctx = make_context(x, index);
  const auto target = static_cast<std::size_t>(T);
  if (target == 0) {
    QueryResult empty;
    empty.direction = index.direction();
    return empty;
  }

  if (!is_multi_index(index.config.pipeline)) {
    const BinRanking ranking = rank_context(ctx, index, index.inverted.bin_count());
    const Shortlist sl = select_shortlist(ranking, index.inverted, target);
    return score_bins(ctx, index, sl.bin_ids);
  }

  // Pull nonempty cells off the traversal until the target is covered.
  auto [ca, cb] = multi_index_costs(ctx, index);
  MultiSequenceTraversal mst(std::move(ca), std::move(cb));
  std::vector<BinId> bins;
  std::size_t total = 0;
  while (total < target) {
    const auto cell = mst.next();
    if (!cell) break;
    const std::size_t n = index.inverted.bin_size(cell->key);
    if (n == 0) continue;
    bins.push_back(cell->key);
    total += n;
  }
  return score_bins(ctx, index, bins);
}

QueryResult query_top_bins(std::span<const double> x, const SearchIndex& index, std::size_t B) {
  const QueryContext ctx = make_context(x, index);
  const BinRanking ranking = rank_context(ctx, index, B);
  return score_bins(ctx, index, ranking.order);
}

QueryResult query_exhaustive(std::span<const double> x, const SearchIndex& index) {
  const QueryContext ctx = make_context(x, index);
  std::vector<BinId> bins;
  for (const auto& b : index.inverted.bins()) bins.push_back(b.bin_id);
  QueryResult r = score_bins(ctx, index, bins);
  r.bins_scanned = index.inverted.nonempty_bins();
  return r;
}

// ---------------------------------------------------------------------------
// Container

namespace {

constexpr std::array<char, 4> kMagic = {'B', 'I', 'D', 'X'};

void put_matrix(io::ByteWriter& w, const Matrix& m) {
  w.u64(m.rows());
  w.u64(m.cols());
  for (double v : m.data()) w.f64(v);
}

Matrix get_matrix(io::ByteReader& r) {
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (cols != 0 && rows > std::numeric_limits<std::uint64_t>::max() / cols) corrupt("matrix too large");
  r.need_items(rows * cols, 8);
  Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (double& v : m.data()) v = r.f64();
  return m;
}

void put_product(io::ByteWriter& w, const ProductCodebook& p) {
  w.u64(p.M());
  for (std::size_t o : p.offsets()) w.u64(o);
  for (std::size_t m = 0; m < p.M(); ++m) put_matrix(w, p.sub_codebook(m).centroids());
}

ProductCodebook get_product(io::ByteReader& r) {
  const std::uint64_t M = r.u64();
  r.need_items(M + 1, 8);
  std::vector<std::size_t> offsets(M + 1);
  for (auto& o : offsets) o = r.u64();
  std::vector<Codebook> subs;
  for (std::uint64_t m = 0; m < M; ++m) subs.emplace_back(get_matrix(r));
  try {
    return ProductCodebook(std::move(offsets), std::move(subs));
  } catch (const Error& e) {
    corrupt(std::string("product codebook: ") + e.what());
  }
}

std::vector<std::uint8_t> codebooks_payload(const ModelBundle& m) {
  io::ByteWriter w;
  w.u8(static_cast<std::uint8_t>((m.coarse ? 1 : 0) | (m.coarse_imi ? 2 : 0) | (m.pq ? 4 : 0)));
  if (m.coarse) put_matrix(w, m.coarse->centroids());
  if (m.coarse_imi) put_product(w, *m.coarse_imi);
  if (m.pq) put_product(w, *m.pq);
  return w.take();
}

void read_codebooks(std::span<const std::uint8_t> payload, ModelBundle& m) {
  io::ByteReader r(payload, "CBKS");
  const std::uint8_t flags = r.u8();
  if (flags & ~7u) corrupt("CBKS: unknown flags");
  if (flags & 1) m.coarse = Codebook(get_matrix(r));
  if (flags & 2) m.coarse_imi = get_product(r);
  if (flags & 4) m.pq = get_product(r);
  if (!r.done()) corrupt("CBKS: trailing bytes");
}

std::vector<std::uint8_t> model_payload(const Network& net) {
  io::ByteWriter w;
  w.str(network_config_to_text(net.config));
  w.u64(net.seed);
  w.u64(kParamCount);
  for (std::size_t i = 0; i < kParamCount; ++i) {
    w.u8(net.params.frozen[i] ? 1 : 0);
    put_matrix(w, net.params.mats[i]);
  }
  return w.take();
}

Network read_model(std::span<const std::uint8_t> payload) {
  io::ByteReader r(payload, "MODL");
  Network net;
  net.config = network_config_from_text(r.str());
  net.seed = r.u64();
  if (r.u64() != kParamCount) corrupt("MODL: unexpected matrix count");
  for (std::size_t i = 0; i < kParamCount; ++i) {
    net.params.frozen[i] = r.u8() != 0;
    net.params.mats[i] = get_matrix(r);
  }
  if (!r.done()) corrupt("MODL: trailing bytes");
  try {
    net.config.validate();
    net.params.check_shapes(net.config);
  } catch (const Error& e) {
    corrupt(std::string("MODL: ") + e.what());
  }
  return net;
}

std::vector<std::uint8_t> bins_payload(const InvertedIndex& inv) {
  io::ByteWriter w;
  w.u8(static_cast<std::uint8_t>(inv.kind()));
  w.u64(inv.bin_count());
  w.u64(inv.code_size());
  w.u64(inv.bins().size());
  for (const auto& b : inv.bins()) {
    w.u32(b.bin_id);
    w.u64(b.size());
    for (ImageId id : b.ids) w.u32(id);
    for (CodeIndex c : b.codes) w.u16(c);
  }
  return w.take();
}

InvertedIndex read_bins(std::span<const std::uint8_t> payload) {
  io::ByteReader r(payload, "BINS");
  const std::uint8_t kind = r.u8();
  if (kind > 1) corrupt("BINS: unknown index kind");
  const std::uint64_t bin_count = r.u64();
  const std::uint64_t code_size = r.u64();
  const std::uint64_t n = r.u64();
  r.need_items(n, 12);
  std::vector<InvertedBin> bins(static_cast<std::size_t>(n));
  for (auto& b : bins) {
    b.bin_id = r.u32();
    const std::uint64_t count = r.u64();
    r.need_items(count, 4 + 2 * code_size);
    b.ids.resize(static_cast<std::size_t>(count));
    for (auto& id : b.ids) id = r.u32();
    b.codes.resize(static_cast<std::size_t>(count * code_size));
    for (auto& c : b.codes) c = r.u16();
  }
  if (!r.done()) corrupt("BINS: trailing bytes");
  try {
    return InvertedIndex::from_bins(static_cast<IndexKind>(kind), bin_count,
                                    static_cast<std::size_t>(code_size), std::move(bins));
  } catch (const Error& e) {
    corrupt(std::string("BINS: ") + e.what());
  }
}

using Section = std::pair<std::string, std::vector<std::uint8_t>>;

std::vector<std::uint8_t> write_container(const std::vector<Section>& sections) {
  io::ByteWriter w;
  w.raw(std::string_view(kMagic.data(), kMagic.size()));
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [tag, payload] : sections) {
    w.raw(tag);
    w.u64(payload.size());
    w.bytes(payload);
    w.u64(io::fnv1a64(payload));
  }
  return w.take();
}

void check_header(std::span<const std::uint8_t> head) {
  if (head.size() < kMagic.size()) {
    throw FormatError(FormatError::Kind::kTruncated, "BIDX: file shorter than its header");
  }
  if (!std::equal(kMagic.begin(), kMagic.end(), head.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw FormatError(FormatError::Kind::kBadMagic, "BIDX: bad magic bytes");
  }
  if (head.size() < 8) {
    throw FormatError(FormatError::Kind::kTruncated, "BIDX: file shorter than its header");
  }
  io::ByteReader r(head.subspan(4, 4), "BIDX header");
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) {
    throw FormatError(FormatError::Kind::kBadVersion,
                      "BIDX: unsupported version " + std::to_string(version));
  }
}

/// Section payloads are views into `bytes`; checksums are verified.
std::map<std::string, std::span<const std::uint8_t>> read_container(
    std::span<const std::uint8_t> bytes) {
  check_header(bytes.first(std::min<std::size_t>(bytes.size(), 8)));
  io::ByteReader r(bytes.subspan(8), "BIDX");
  const std::uint32_t count = r.u32();
  std::map<std::string, std::span<const std::uint8_t>> out;
  for (std::uint32_t s = 0; s < count; ++s) {
    const auto tag_bytes = r.take(4);
    const std::string tag(tag_bytes.begin(), tag_bytes.end());
    const std::uint64_t len = r.u64();
    const auto payload = r.take(len);
    const std::uint64_t sum = r.u64();
    if (sum != io::fnv1a64(payload)) {
      throw FormatError(FormatError::Kind::kChecksum, "BIDX: checksum mismatch in section " + tag);
    }
    if (tag != "CONF" && tag != "CBKS" && tag != "MODL" && tag != "BINS") {
      corrupt("BIDX: unknown section '" + tag + "'");
    }
    if (!out.emplace(tag, payload).second) corrupt("BIDX: repeated section " + tag);
  }
  if (!r.done()) corrupt("BIDX: trailing bytes after last section");
  return out;
}

std::vector<Section> model_sections(const PipelineConfig& cfg, const ModelBundle& m) {
  std::vector<Section> sections;
  const std::string conf = cfg.to_text();
  sections.emplace_back("CONF", std::vector<std::uint8_t>(conf.begin(), conf.end()));
  sections.emplace_back("CBKS", codebooks_payload(m));
  if (m.net) sections.emplace_back("MODL", model_payload(*m.net));
  return sections;
}

std::pair<PipelineConfig, ModelBundle> parse_models(
    const std::map<std::string, std::span<const std::uint8_t>>& sections) {
  const auto conf = sections.find("CONF");
  if (conf == sections.end()) corrupt("BIDX: missing CONF section");
  PipelineConfig cfg = PipelineConfig::from_text(
      std::string_view(reinterpret_cast<const char*>(conf->second.data()), conf->second.size()));
  ModelBundle m;
  if (auto it = sections.find("CBKS"); it != sections.end()) read_codebooks(it->second, m);
  if (auto it = sections.find("MODL"); it != sections.end()) m.net = read_model(it->second);
  return {std::move(cfg), std::move(m)};
}

std::vector<std::uint8_t> read_whole_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open '" + path + "'");
  std::array<std::uint8_t, 8> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  check_header(std::span<const std::uint8_t>(head.data(), static_cast<std::size_t>(in.gcount())));
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  bytes.insert(bytes.end(), std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

std::vector<std::uint8_t> serialize_index(const SearchIndex& index) {
  auto sections = model_sections(index.config, index.models);
  sections.emplace_back("BINS", bins_payload(index.inverted));
  return write_container(sections);
}

SearchIndex deserialize_index(std::span<const std::uint8_t> bytes) {
  const auto sections = read_container(bytes);
  auto [cfg, models] = parse_models(sections);
  const auto bins = sections.find("BINS");
  if (bins == sections.end()) corrupt("BIDX: missing BINS section");
  SearchIndex out;
  out.config = std::move(cfg);
  out.models = std::move(models);
  out.inverted = read_bins(bins->second);
  try {
    check_models(out.config, out.models);
  } catch (const PreconditionError& e) {
    corrupt(std::string("BIDX: ") + e.what());
  }
  return out;
}

void save_index(const SearchIndex& index, const std::string& path) {
  io::write_file(path, serialize_index(index));
}

SearchIndex load_index(const std::string& path) { return deserialize_index(read_whole_file(path)); }

void save_models(const PipelineConfig& cfg, const ModelBundle& models, const std::string& path) {
  io::write_file(path, write_container(model_sections(cfg, models)));
}

std::pair<PipelineConfig, ModelBundle> load_models(const std::string& path) {
  const auto bytes = read_whole_file(path);
  return parse_models(read_container(bytes));
}

}  // namespace ivfnet
