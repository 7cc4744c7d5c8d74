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

#include "cli.h"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>

#include "ivfnet/errors.h"
#include "ivfnet/eval_harness.h"
#include "ivfnet/gradcheck.h"
#include "ivfnet/search_engine.h"

namespace ivfnet {

namespace {

struct GlobalOptions {
  std::uint64_t seed = 0;
  int threads = 1;
};

struct SynthOptions {
  std::size_t classes = 32;
  std::size_t per_class = 200;
  std::size_t dim = 64;
  double spread = 1.0;
  std::string out;
  std::string queries_out;
  std::size_t queries_per_class = 0;
};

struct CodebookOptions {
  std::string pipeline = "ivf_pq";
  std::string train;
  std::size_t nbins = 32;
  std::size_t M = 8;
  std::size_t K = 256;
  std::size_t iters = 50;
  std::string out;
};

struct NetOptions {
  std::string variant = "subic-i";
  std::string train;
  std::size_t nbins = 32;
  std::size_t M = 8;
  std::size_t K = 256;
  std::size_t batches = 5000;
  std::size_t batch_size = 64;
  double lr = 0.5;
  double momentum = 0.9;
  bool l2_normalize = true;
  double entropy_scale = 1.0;
  std::string selector;
  std::string loss_log;
  std::string out;
};

struct BuildOptions {
  std::string models;
  std::string data;
  std::string out;
};

struct QueryOptions {
  std::string index;
  std::string queries;
  long long T = -1;
  long long B = -1;
  std::size_t top = 10;
};

struct EvalOptions {
  std::string index;
  std::string queries;
  std::string database;
  std::vector<std::size_t> B;
  std::string out;
};

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw FormatError(FormatError::Kind::kIo, "cannot open '" + path + "' for writing");
  f << text;
}

int cmd_synth(const GlobalOptions& g, const SynthOptions& o, std::ostream& out) {
  FeatureSet all = synth_dataset(o.classes, o.per_class, o.dim, o.spread, g.seed);
  if (o.queries_per_class == 0) {
    write_features(all, o.out);
    out << "wrote " << all.count << " x " << all.dim << " to " << o.out << "\n";
    return 0;
  }
  if (o.queries_out.empty()) throw PreconditionError("--queries-per-class needs --queries-out");
  auto [db, qs] = split_queries(all, o.queries_per_class);
  write_features(db, o.out);
  write_features(qs, o.queries_out);
  out << "wrote " << db.count << " database and " << qs.count << " query vectors\n";
  return 0;
}

int cmd_train_codebooks(const GlobalOptions& g, const CodebookOptions& o, std::ostream& out) {
  PipelineConfig cfg;
  cfg.pipeline = pipeline_from_string(o.pipeline);
  if (is_learned(cfg.pipeline)) {
    throw PreconditionError("train-codebooks: use train-net for " + o.pipeline);
  }
  cfg.nbins = o.nbins;
  cfg.M = o.M;
  cfg.K = o.K;
  const FeatureSet data = read_features(o.train);
  KMeansConfig base;
  base.max_iters = o.iters;
  base.seed = g.seed;
  base.threads = g.threads;
  const ModelBundle models = train_codebooks(data, cfg, base);
  save_models(cfg, models, o.out);
  out << "saved " << o.pipeline << " codebooks to " << o.out << "\n";
  return 0;
}

int cmd_train_net(const GlobalOptions& g, const NetOptions& o, std::ostream& out) {
  const Variant variant = variant_from_string(o.variant);
  const FeatureSet data = read_features(o.train);
  if (!data.has_labels()) throw PreconditionError("train-net: training data needs labels");

  PipelineConfig pc;
  switch (variant) {
    case Variant::kSubicI: pc.pipeline = Pipeline::kSubicI; break;
    case Variant::kSubicJ: pc.pipeline = Pipeline::kSubicJ; break;
    case Variant::kSubicR: pc.pipeline = Pipeline::kSubicR; break;
    case Variant::kSubicImi: pc.pipeline = Pipeline::kSubicImi; break;
    default: throw PreconditionError("train-net: unsupported variant " + o.variant);
  }
  pc.nbins = o.nbins;
  pc.M = o.M;
  pc.K = o.K;
  pc.validate();

  const std::size_t classes = std::max<std::size_t>(data.class_count, 2);
  NetworkConfig nc = make_network_config(variant, data.dim, o.nbins, o.M, o.K, classes);
  nc.l2_normalize_input = o.l2_normalize;
  nc.hyper = nc.hyper.scaled(o.entropy_scale);
  TrainConfig tc;
  tc.batch_size = o.batch_size;
  tc.num_batches = o.batches;
  tc.learning_rate = o.lr;
  tc.momentum = o.momentum;
  tc.seed = g.seed;

  std::optional<NetworkParams> initial;
  if (variant == Variant::kSubicR) {
    NetworkParams selector;
    if (!o.selector.empty()) {
      auto [sel_cfg, sel_models] = load_models(o.selector);
      if (!sel_models.net) throw PreconditionError("--selector file holds no network");
      selector = sel_models.net->params;
    } else {
      NetworkConfig pre = make_network_config(Variant::kSubicI, data.dim, o.nbins, o.M, o.K, classes);
      pre.l2_normalize_input = o.l2_normalize;
      pre.hyper = pre.hyper.scaled(o.entropy_scale);
      TrainConfig ptc = tc;
      ptc.seed = derive_seed(g.seed, 100);
      out << "pre-training the bin selection block\n";
      selector = train(data, pre, ptc).params;
    }
    initial = adopt_bin_selector(selector, nc, derive_seed(g.seed, 101));
  }

  const TrainResult tr = train(data, nc, tc, initial ? &*initial : nullptr);
  if (!o.loss_log.empty()) {
    std::string csv = "batch,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < tr.loss_log.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, tr.loss_log[i]);
      csv += buf;
    }
    write_text(o.loss_log, csv, out);
  }
  ModelBundle models;
  models.net = Network{nc, tr.params, g.seed};
  save_models(pc, models, o.out);
  out << "trained " << o.variant << " for " << tr.loss_log.size() << " batches, final loss "
      << (tr.loss_log.empty() ? 0.0 : tr.loss_log.back()) << "; saved to " << o.out << "\n";
  return 0;
}

int cmd_build(const GlobalOptions& g, const BuildOptions& o, std::ostream& out) {
  auto [cfg, models] = load_models(o.models);
  cfg.models_path = o.models;
  const FeatureSet data = read_features(o.data);
  const SearchIndex index = build_index(data, cfg, std::move(models), g.threads);
  save_index(index, o.out);
  out << "indexed " << index.inverted.size() << " vectors in " << index.inverted.nonempty_bins()
      << " nonempty bins; saved to " << o.out << "\n";
  return 0;
}

int cmd_query(const QueryOptions& o, std::ostream& out) {
  if ((o.T < 0) == (o.B < 0)) throw PreconditionError("query: give exactly one of --T and --B");
  const SearchIndex index = load_index(o.index);
  const FeatureSet qs = read_features(o.queries);
  out << "query,rank,id,score\n";
  char buf[96];
  for (std::size_t q = 0; q < qs.count; ++q) {
    const Vector x = qs.row_as_double(q);
    const QueryResult r = o.T >= 0 ? query(x, index, o.T)
                                   : query_top_bins(x, index, static_cast<std::size_t>(o.B));
    for (std::size_t i = 0; i < std::min(o.top, r.ranked_ids.size()); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%u,%.9g\n", q, i, r.ranked_ids[i], r.scores[i]);
      out << buf;
    }
  }
  return 0;
}

int cmd_eval(const GlobalOptions& g, const EvalOptions& o, std::ostream& out) {
  const SearchIndex index = load_index(o.index);
  const FeatureSet qs = read_features(o.queries);
  const FeatureSet db = read_features(o.database);
  if (db.count != index.inverted.size()) {
    throw PreconditionError("eval: --database does not match the indexed set");
  }
  const RelevanceJudgments judg = judgments_from_labels(qs, db);
  const std::vector<std::size_t> schedule =
      o.B.empty() ? power_of_two_schedule(static_cast<std::size_t>(index.inverted.bin_count()))
                  : o.B;
  const auto curve = map_at_T(index, qs, judg, schedule, g.threads);
  write_text(o.out, curve_to_csv(curve), out);
  return 0;
}

int cmd_gradcheck(const GlobalOptions& g, std::size_t instances, std::ostream& out) {
  const auto cases = run_gradcheck_suite(instances, g.seed);
  bool ok = true;
  char buf[160];
  for (const auto& c : cases) {
    std::snprintf(buf, sizeof buf, "%-4s residual=%d instances=%zu failed=%zu max_rel_error=%.3e\n",
                  std::string(to_string(c.objective)).c_str(), c.residual ? 1 : 0, c.instances,
                  c.failed_instances, c.max_rel_error);
    out << buf;
    if (c.failed_instances > 0) {
      ok = false;
      out << "  worst: " << c.worst << "\n";
    }
  }
  out << (ok ? "gradient check passed\n" : "gradient check FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ivfnet: inverted-file vector search with learned bin selection and codes",
               "ivfnet"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a key=value file");

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")
      ->check(CLI::Range(1, 256))
      ->capture_default_str();

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate a labeled Gaussian-mixture dataset");
  synth->add_option("--classes", so.classes)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--per-class", so.per_class)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--dim", so.dim)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--spread", so.spread)->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--out", so.out, "Output feature file")->required();
  synth->add_option("--queries-out", so.queries_out, "Write held-out queries here");
  synth->add_option("--queries-per-class", so.queries_per_class)->capture_default_str();

  CodebookOptions co;
  auto* tcb = app.add_subcommand("train-codebooks", "Train IVF-PQ or IMI-PQ codebooks");
  tcb->add_option("--pipeline", co.pipeline)
      ->capture_default_str()
      ->check(CLI::IsMember({"ivf_pq", "imi_pq"}));
  tcb->add_option("--train", co.train, "Training feature file")->required();
  tcb->add_option("--nbins", co.nbins, "N, or K per axis for imi_pq")->capture_default_str();
  tcb->add_option("--M", co.M)->capture_default_str();
  tcb->add_option("--K", co.K)->capture_default_str();
  tcb->add_option("--iters", co.iters, "Lloyd iterations")->capture_default_str();
  tcb->add_option("--out", co.out, "Output model file")->required();

  NetOptions no;
  auto* tnet = app.add_subcommand("train-net", "Train a learned indexing network");
  tnet->add_option("--variant", no.variant)
      ->capture_default_str()
      ->check(CLI::IsMember({"subic-i", "subic-j", "subic-r", "subic-imi"}));
  tnet->add_option("--train", no.train, "Labeled training feature file")->required();
  tnet->add_option("--nbins", no.nbins, "N, or K per axis for subic-imi")->capture_default_str();
  tnet->add_option("--M", no.M)->capture_default_str();
  tnet->add_option("--K", no.K)->capture_default_str();
  tnet->add_option("--batches", no.batches)->capture_default_str();
  tnet->add_option("--batch-size", no.batch_size)->capture_default_str();
  tnet->add_option("--lr", no.lr)->capture_default_str();
  tnet->add_option("--momentum", no.momentum)->capture_default_str();
  tnet->add_option("--l2-normalize", no.l2_normalize, "Normalize inputs to unit length")
      ->capture_default_str();
  tnet->add_option("--entropy-scale", no.entropy_scale, "Multiplier on the four entropy loss weights")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  tnet->add_option("--selector", no.selector,
                   "subic-r: model file whose bin selection block is reused");
  tnet->add_option("--loss-log", no.loss_log, "Write per-batch losses as CSV");
  tnet->add_option("--out", no.out, "Output model file")->required();

  BuildOptions bo;
  auto* build = app.add_subcommand("build", "Index a feature file");
  build->add_option("--models", bo.models, "Model file from train-codebooks or train-net")
      ->required();
  build->add_option("--data", bo.data, "Database feature file")->required();
  build->add_option("--out", bo.out, "Output index file")->required();

  QueryOptions qo;
  auto* qry = app.add_subcommand("query", "Search an index");
  qry->add_option("--index", qo.index)->required();
  qry->add_option("--queries", qo.queries)->required();
  auto* t_opt = qry->add_option("--T", qo.T, "Target shortlist size");
  auto* b_opt = qry->add_option("--B", qo.B, "Number of bins to scan");
  t_opt->excludes(b_opt);
  qry->add_option("--top", qo.top, "Results printed per query")->capture_default_str();

  EvalOptions eo;
  auto* eval = app.add_subcommand("eval", "mAP against the number of scanned bins, as CSV");
  eval->add_option("--index", eo.index)->required();
  eval->add_option("--queries", eo.queries, "Labeled query feature file")->required();
  eval->add_option("--database", eo.database, "Labeled file the index was built from")
      ->required();
  eval->add_option("--B", eo.B, "Bin counts (default: powers of two)")->delimiter(',');
  eval->add_option("--out", eo.out, "CSV path (default: stdout)");

  std::size_t gc_instances = 20;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the network gradients");
  gc->add_option("--instances", gc_instances, "Random networks per case")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*synth) return cmd_synth(g, so, out);
    if (*tcb) return cmd_train_codebooks(g, co, out);
    if (*tnet) return cmd_train_net(g, no, out);
    if (*build) return cmd_build(g, bo, out);
    if (*qry) return cmd_query(qo, out);
    if (*eval) return cmd_eval(g, eo, out);
    if (*gc) return cmd_gradcheck(g, gc_instances, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ivfnet
