#pragma once

// The pipeline steps behind the copacrr subcommands. Each cmd_* validates its
// paths before doing any work, writes human-readable output to `out` and
// progress to `err`, and returns a structured result.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "copacrr/binary_io.hpp"
#include "copacrr/config.hpp"
#include "copacrr/corpus.hpp"
#include "copacrr/embedding.hpp"
#include "copacrr/evaluation.hpp"
#include "copacrr/model.hpp"
#include "copacrr/synthetic.hpp"
#include "copacrr/training.hpp"

namespace copacrr {

namespace cmd_detail {

inline void require_value(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("missing required setting '") + key + "'");
}

inline void require_path(const std::string& value, const char* key) {
  require_value(value, key);
  if (!std::filesystem::exists(value)) throw DataError(std::string(key) + ": no such file or directory: " + value);
}

inline void require_groups(const std::vector<std::string>& groups, const char* key) {
  if (groups.empty()) throw ConfigError(std::string("missing required setting '") + key + "'");
}

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Plain-text table: first column left-aligned, the rest right-aligned.
inline std::string render_table(const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string pad(width[c] - cells[c].size(), ' ');
      if (c) out += "  ";
      out += c == 0 ? cells[c] + pad : pad + cells[c];
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
  };
  line(header);
  std::vector<std::string> rule;
  for (std::size_t w : width) rule.push_back(std::string(w, '-'));
  line(rule);
  for (const auto& r : rows) line(r);
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  write_file_atomically(path, [&](std::ostream& o) { o << text; });
}

}  // namespace cmd_detail

// ---------------------------------------------------------------------------
// Loading

/// Reads embeddings, documents, queries and (when set) qrels and the first
/// run file as candidate rankings; fills normalized IDF.
inline Dataset load_dataset(const RunConfig& cfg, bool with_qrels) {
  Dataset data;
  data.embeddings = load_embeddings(cfg.embeddings);
  data.docs = read_documents(cfg.docs);
  data.queries = read_queries(cfg.queries);
  if (with_qrels) data.judgments = read_qrels(cfg.qrels);
  if (!cfg.runs.empty()) {
    for (auto& list : read_run(cfg.runs.front())) data.candidates[list.query_id] = std::move(list);
  }
  data.annotate_idf();
  return data;
}

// ---------------------------------------------------------------------------
// Similarity cache
//
// One file per tensor under <cache_dir>/sim/<key>.bin and
// <cache_dir>/querysim/<key>.bin. The key is an FNV-1a digest of everything
// the tensor depends on: embedding table contents, query terms, the document
// terms it can see, and the shape parameters (l_q, l_d for sim; l_d, w_c for
// querysim). File layout, little-endian:
//   8 bytes  magic "CPCACHE1"
//   u32      version (1)
//   u8       kind (0 sim, 1 querysim)
//   u32      rank, rank x u32 dims, prod(dims) x f64 values
//   u64      FNV-1a 64 of every preceding byte

inline constexpr std::string_view kCacheMagic = "CPCACHE1";
inline constexpr std::uint32_t kCacheVersion = 1;

struct InputBuildStats {
  std::size_t pairs = 0;
  std::size_t sim_hits = 0;
  std::size_t querysim_hits = 0;
  std::size_t missing_docs = 0;
  std::vector<std::string> oov_queries;
};

class SimCache {
 public:
  enum class Kind : std::uint8_t { sim = 0, querysim = 1 };

  explicit SimCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  bool enabled() const { return !dir_.empty(); }

  static std::string sim_key(std::uint64_t fingerprint, const Query& q, const Document& d, std::size_t l_q,
                             std::size_t l_d) {
    Fnv1a h;
    h.update("sim");
    mix(h, fingerprint, l_q, l_d, 0);
    terms(h, q.tokens, q.tokens.size());
    terms(h, d.tokens, l_d);
    return h.hex();
  }

  /// Context windows read up to w_c terms past the l_d-th position.
  static std::string querysim_key(std::uint64_t fingerprint, const Query& q, const Document& d, std::size_t l_d,
                                  std::size_t w_c) {
    Fnv1a h;
    h.update("querysim");
    mix(h, fingerprint, 0, l_d, w_c);
    terms(h, q.tokens, q.tokens.size());
    terms(h, d.tokens, l_d + w_c);
    return h.hex();
  }

  std::filesystem::path path(Kind kind, const std::string& key) const {
    return dir_ / (kind == Kind::sim ? "sim" : "querysim") / (key + ".bin");
  }

  /// Cached tensor, or nullopt when absent or unreadable.
  std::optional<Tensor> load(Kind kind, const std::string& key, const Shape& expected) const {
    if (!enabled()) return std::nullopt;
    const auto p = path(kind, key);
    if (!std::filesystem::exists(p)) return std::nullopt;
    try {
      const std::string bytes = read_file_bytes(p);
      if (bytes.size() < 8) return std::nullopt;
      Fnv1a h;
      h.update(std::string_view(bytes).substr(0, bytes.size() - 8));
      ByteReader tail(std::string_view(bytes).substr(bytes.size() - 8), p.string());
      if (tail.u64() != h.digest()) return std::nullopt;
      ByteReader r(std::string_view(bytes).substr(0, bytes.size() - 8), p.string());
      if (r.raw(kCacheMagic.size()) != kCacheMagic || r.u32() != kCacheVersion) return std::nullopt;
      if (r.u8() != static_cast<std::uint8_t>(kind)) return std::nullopt;
      Shape shape(r.u32());
      for (auto& d : shape) d = r.u32();
      if (shape != expected) return std::nullopt;
      Tensor t(shape);
      for (double& v : t.values()) v = r.f64();
      if (r.remaining() != 0) return std::nullopt;
      return t;
    } catch (const DataError&) {
      return std::nullopt;
    }
  }

  void store(Kind kind, const std::string& key, const Tensor& t) const {
    if (!enabled()) return;
    ByteWriter w;
    w.raw(kCacheMagic);
    w.u32(kCacheVersion);
    w.u8(static_cast<std::uint8_t>(kind));
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64(v);
    Fnv1a h;
    h.update(w.view());
    w.u64(h.digest());
    const std::string bytes(w.view());
    write_file_atomically(
        path(kind, key), [&](std::ostream& o) { o.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); },
        std::ios::out | std::ios::binary);
  }

 private:
  static void mix(Fnv1a& h, std::uint64_t fingerprint, std::uint64_t l_q, std::uint64_t l_d, std::uint64_t w_c) {
    for (std::uint64_t v : {fingerprint, l_q, l_d, w_c}) h.update(&v, sizeof v);
  }
  static void terms(Fnv1a& h, const std::vector<std::string>& tokens, std::size_t limit) {
    const std::uint64_t n = std::min(limit, tokens.size());
    h.update(&n, sizeof n);
    for (std::size_t i = 0; i < n; ++i) {
      h.update(tokens[i]);
      h.update("\0", 1);
    }
  }

  std::filesystem::path dir_;
};

/// Model inputs for every judged and candidate document of the queries, read
/// from the cache where possible and written back otherwise.
inline InputStore build_cached_inputs(const Dataset& data, const ModelConfig& config,
                                      const std::vector<std::string>& query_ids, const std::string& cache_dir,
                                      InputBuildStats* stats = nullptr) {
  InputBuildStats local;
  InputBuildStats& st = stats ? *stats : local;
  SimCache cache(cache_dir);
  const std::uint64_t fingerprint = cache.enabled() ? data.embeddings.fingerprint() : 0;
  InputStore store;
  for (const auto& qid : query_ids) {
    const Query* q = data.find_query(qid);
    if (!q) throw DataError("unknown query id " + qid);
    bool with_context = true;
    try {
      (void)query_vec(*q, data.embeddings);
    } catch (const DataError&) {
      with_context = false;
      st.oov_queries.push_back(qid);
      store.oov_queries.push_back(qid);
    }
    std::set<std::string> doc_ids;
    for (const auto& [doc, _] : data.judgments.raw_view(qid)) doc_ids.insert(doc);
    if (auto it = data.candidates.find(qid); it != data.candidates.end()) {
      for (const auto& e : it->second.entries) doc_ids.insert(e.doc_id);
    }
    for (const auto& doc_id : doc_ids) {
      auto d = data.docs.find(doc_id);
      if (d == data.docs.end()) {
        ++st.missing_docs;
        continue;
      }
      const Document& doc = d->second;
      SimInput in;
      const std::string sk = cache.enabled() ? SimCache::sim_key(fingerprint, *q, doc, config.l_q, config.l_d) : "";
      if (auto t = cache.load(SimCache::Kind::sim, sk, {config.l_q, config.l_d})) {
        in.sim = std::move(*t);
        ++st.sim_hits;
      } else {
        in.sim = build_sim_matrix(*q, doc, data.embeddings, config.l_q, config.l_d);
        cache.store(SimCache::Kind::sim, sk, in.sim);
      }
      const std::string qk =
          cache.enabled() ? SimCache::querysim_key(fingerprint, *q, doc, config.l_d, config.w_c) : "";
      if (auto t = cache.load(SimCache::Kind::querysim, qk, {config.l_d})) {
        in.querysim = std::move(*t);
        ++st.querysim_hits;
      } else {
        in.querysim = with_context ? build_querysim(*q, doc, data.embeddings, config.w_c, config.l_d)
                                   : Tensor({config.l_d});
        cache.store(SimCache::Kind::querysim, qk, in.querysim);
      }
      in.idf = padded_idf(*q, config.l_q);
      in.q_len = q->tokens.size();
      in.d_len = std::min(doc.tokens.size(), config.l_d);
      store.put(qid, doc_id, std::move(in));
      ++st.pairs;
    }
  }
  return store;
}

// ---------------------------------------------------------------------------
// prepare

inline InputBuildStats cmd_prepare(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  using namespace cmd_detail;
  require_path(cfg.embeddings, "embeddings");
  require_path(cfg.docs, "docs");
  require_path(cfg.queries, "queries");
  require_path(cfg.qrels, "qrels");
  for (const auto& r : cfg.runs) require_path(r, "runs");
  require_value(cfg.cache_dir, "cache_dir");
  cfg.model.validate();

  const Dataset data = load_dataset(cfg, true);
  InputBuildStats st;
  (void)build_cached_inputs(data, cfg.model, data.all_query_ids(), cfg.cache_dir, &st);
  for (const auto& qid : st.oov_queries) {
    err << "warning: query " << qid << " has no term with an embedding; querysim is zero\n";
  }
  out << "inputs " << st.pairs << "\n"
      << "sim_cache_hits " << st.sim_hits << "\n"
      << "querysim_cache_hits " << st.querysim_hits << "\n"
      << "missing_docs " << st.missing_docs << "\n"
      << "oov_queries " << st.oov_queries.size() << "\n";
  return st;
}

// ---------------------------------------------------------------------------
// train

inline FoldResult cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  using namespace cmd_detail;
  require_path(cfg.embeddings, "embeddings");
  require_path(cfg.docs, "docs");
  require_path(cfg.queries, "queries");
  require_path(cfg.qrels, "qrels");
  for (const auto& r : cfg.runs) require_path(r, "runs");
  require_value(cfg.checkpoint, "checkpoint");
  require_groups(cfg.train_groups, "train_groups");
  require_groups(cfg.validation_groups, "validation_groups");
  cfg.model.validate();
  Fold fold{"train", cfg.train_groups, cfg.validation_groups, {}};
  fold.validate();

  const Dataset data = load_dataset(cfg, true);
  const auto train_q = data.query_ids(cfg.train_groups);
  const auto valid_q = data.query_ids(cfg.validation_groups);
  if (train_q.empty()) throw DataError("no queries in train_groups " + config_detail::join(cfg.train_groups));
  if (valid_q.empty()) throw DataError("no queries in validation_groups " + config_detail::join(cfg.validation_groups));
  std::vector<std::string> all = train_q;
  all.insert(all.end(), valid_q.begin(), valid_q.end());
  const InputStore inputs = build_cached_inputs(data, cfg.model, all, cfg.cache_dir);

  std::ofstream log;
  if (!cfg.log.empty()) {
    if (auto parent = std::filesystem::path(cfg.log).parent_path(); !parent.empty()) {
      std::filesystem::create_directories(parent);
    }
    log.open(cfg.log, std::ios::trunc);
    if (!log) throw DataError("cannot write " + cfg.log);
  }
  TrainOptions opts = cfg.train;
  opts.eval_cutoff = cfg.cutoff;
  const std::string metric = "ERR@" + std::to_string(cfg.cutoff);
  FoldResult result = train_with_validation(data, inputs, cfg.model, opts, train_q, valid_q, [&](const EpochRecord& r) {
    err << "epoch " << r.epoch << " loss " << fixed(r.mean_loss, 6) << " validation " << metric << " "
        << fixed(r.validation_err, 6) << "\n";
    if (log) {
      nlohmann::json rec = {{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"validation_err", r.validation_err}};
      log << rec.dump() << "\n" << std::flush;
    }
  });
  save_checkpoint(cfg.checkpoint, cfg.model, result.best_params);
  out << "variant " << cfg.model.variant_name() << "\n"
      << "best_epoch " << result.best_epoch << "\n"
      << "validation_" << metric << " " << fixed(result.best_metric, 6) << "\n"
      << "checkpoint " << cfg.checkpoint << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// rerank

struct RerankResult {
  std::vector<std::vector<RankedList>> runs;
  std::size_t missing_docs = 0;
};

/// Output path of the i-th re-ranked run: `output` itself for a single run,
/// else <output>/<run file stem>.reranked.run.
inline std::filesystem::path rerank_output_path(const RunConfig& cfg, std::size_t i) {
  if (cfg.runs.size() == 1) return cfg.output;
  return std::filesystem::path(cfg.output) / (std::filesystem::path(cfg.runs[i]).stem().string() + ".reranked.run");
}

inline RerankResult cmd_rerank(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  using namespace cmd_detail;
  require_path(cfg.checkpoint, "checkpoint");
  require_path(cfg.embeddings, "embeddings");
  require_path(cfg.docs, "docs");
  require_path(cfg.queries, "queries");
  if (cfg.runs.empty()) throw ConfigError("missing required setting 'runs'");
  for (const auto& r : cfg.runs) require_path(r, "runs");
  require_value(cfg.output, "output");

  const Checkpoint ck = load_checkpoint(cfg.checkpoint);
  RunConfig base = cfg;
  base.runs.clear();
  Dataset data = load_dataset(base, false);
  RerankResult result;
  for (std::size_t i = 0; i < cfg.runs.size(); ++i) {
    data.candidates.clear();
    std::vector<std::string> qids;
    for (auto& list : read_run(cfg.runs[i])) {
      qids.push_back(list.query_id);
      data.candidates[list.query_id] = std::move(list);
    }
    const InputStore inputs = build_cached_inputs(data, ck.config, qids, cfg.cache_dir);
    const Scorer scorer = model_scorer(ck.params, ck.config, inputs);
    std::vector<RankedList> reranked;
    std::size_t missing = 0;
    for (const auto& qid : qids) reranked.push_back(rerank_with_model(data.candidates.at(qid), scorer, &missing));
    const auto path = rerank_output_path(cfg, i);
    write_run(reranked, path, "copacrr-" + ck.config.variant_name());
    if (missing) err << "warning: " << cfg.runs[i] << ": " << missing << " candidates without text sank to the bottom\n";
    out << "reranked " << cfg.runs[i] << " -> " << path.string() << " (" << qids.size() << " queries)\n";
    result.missing_docs += missing;
    result.runs.push_back(std::move(reranked));
  }
  return result;
}

// ---------------------------------------------------------------------------
// eval

struct RunEvaluation {
  std::string run;
  std::size_t queries = 0;
  double err_input = 0.0;
  double err_reranked = 0.0;
  PairAccuracyReport pairs;
};

struct EvalResult {
  std::vector<RunEvaluation> runs;
  std::optional<RerankAllStats> summary;  ///< only when a checkpoint re-ranks
  std::string table;
};

/// Scores each document by its position in the run: re-ranking with it
/// reproduces the run's order.
inline Scorer identity_scorer(const std::vector<RankedList>& run) {
  auto scores = std::make_shared<std::map<std::pair<std::string, std::string>, double>>();
  for (const auto& list : run) {
    for (const auto& e : list.entries) (*scores)[{list.query_id, e.doc_id}] = -static_cast<double>(e.rank);
  }
  return [scores](const std::string& q, const std::string& d) -> std::optional<double> {
    auto it = scores->find({q, d});
    if (it == scores->end()) return std::nullopt;
    return it->second;
  };
}

/// ERR@k of every run as given and after re-ranking, plus PairAccuracy of the
/// scorer on the run's queries. Without a checkpoint the scorer is the run's
/// own order.
inline EvalResult cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  using namespace cmd_detail;
  require_path(cfg.qrels, "qrels");
  if (cfg.runs.empty()) throw ConfigError("missing required setting 'runs'");
  for (const auto& r : cfg.runs) require_path(r, "runs");
  const bool with_model = !cfg.checkpoint.empty();
  if (with_model) {
    require_path(cfg.checkpoint, "checkpoint");
    require_path(cfg.embeddings, "embeddings");
    require_path(cfg.docs, "docs");
    require_path(cfg.queries, "queries");
  }
  if (cfg.cutoff == 0) throw ConfigError("cutoff must be at least 1");

  std::optional<Checkpoint> ck;
  Dataset data;
  if (with_model) {
    ck = load_checkpoint(cfg.checkpoint);
    RunConfig base = cfg;
    base.runs.clear();
    data = load_dataset(base, true);
  } else {
    data.judgments = read_qrels(cfg.qrels);
  }

  EvalResult result;
  std::vector<double> before, after;
  for (const auto& run_path : cfg.runs) {
    const auto run = read_run(run_path);
    RunEvaluation ev;
    ev.run = std::filesystem::path(run_path).filename().string();
    ev.queries = run.size();
    std::vector<std::string> qids;
    for (const auto& l : run) qids.push_back(l.query_id);

    InputStore inputs;
    Scorer scorer;
    if (with_model) {
      data.candidates.clear();
      for (const auto& l : run) data.candidates[l.query_id] = l;
      inputs = build_cached_inputs(data, ck->config, qids, cfg.cache_dir);
      scorer = model_scorer(ck->params, ck->config, inputs);
    } else {
      scorer = identity_scorer(run);
    }
    std::size_t missing = 0;
    const auto reranked = rerank_run(run, scorer, &missing);
    ev.err_input = mean_err(run, data.judgments, cfg.cutoff, cfg.grade_mode);
    ev.err_reranked = mean_err(reranked, data.judgments, cfg.cutoff, cfg.grade_mode);
    std::vector<std::string> judged;
    for (const auto& q : qids) {
      if (!data.judgments.merged_view(q).empty()) judged.push_back(q);
    }
    ev.pairs = pair_accuracy(data.judgments, scorer, judged, cfg.tie_half);
    if (missing) err << "warning: " << run_path << ": " << missing << " candidates could not be scored\n";
    before.push_back(ev.err_input);
    after.push_back(ev.err_reranked);
    result.runs.push_back(std::move(ev));
  }
  if (with_model) result.summary = summarize_rerank(before, after);

  const std::string metric = "ERR@" + std::to_string(cfg.cutoff);
  std::vector<std::vector<std::string>> rows;
  for (const auto& ev : result.runs) {
    std::vector<std::string> row{ev.run, std::to_string(ev.queries), fixed(ev.err_input), fixed(ev.err_reranked)};
    for (LabelPair p : kLabelPairs) row.push_back(fixed(ev.pairs.accuracy(p)));
    rows.push_back(std::move(row));
  }
  std::vector<std::string> header{"run", "queries", metric, metric + " reranked"};
  for (LabelPair p : kLabelPairs) header.push_back(label_pair_name(p));
  result.table = render_table(header, rows);
  if (result.summary) {
    result.table += "improved_fraction " + fixed(result.summary->improved_fraction) + "\n";
    result.table += "mean_relative_delta " + fixed(result.summary->mean_relative_delta) + "\n";
    result.table += "zero_baseline_runs " + std::to_string(result.summary->zero_baseline_runs) + "\n";
  }
  out << result.table;
  if (!cfg.output.empty()) write_text(cfg.output, result.table);

  if (!cfg.report.empty()) {
    std::ostringstream jsonl;
    const std::string scorer_name = with_model ? "model" : "identity";
    for (const auto& ev : result.runs) {
      jsonl << nlohmann::json{{"run", ev.run}, {"metric", metric}, {"ranking", "input"}, {"value", ev.err_input}}.dump()
            << "\n";
      jsonl << nlohmann::json{{"run", ev.run}, {"metric", metric}, {"ranking", scorer_name}, {"value", ev.err_reranked}}
                   .dump()
            << "\n";
      for (LabelPair p : kLabelPairs) {
        const auto& s = ev.pairs.stats(p);
        jsonl << nlohmann::json{{"run", ev.run},
                                {"metric", std::string("PairAccuracy ") + label_pair_name(p)},
                                {"ranking", scorer_name},
                                {"value", ev.pairs.accuracy(p)},
                                {"tested", s.tested},
                                {"correct", s.correct},
                                {"ties", s.ties}}
                     .dump()
              << "\n";
      }
    }
    if (result.summary) {
      jsonl << nlohmann::json{{"metric", "improved_fraction"}, {"value", result.summary->improved_fraction}}.dump()
            << "\n";
      jsonl << nlohmann::json{{"metric", "mean_relative_delta"},
                              {"value", result.summary->mean_relative_delta},
                              {"zero_baseline_runs", result.summary->zero_baseline_runs}}
                   .dump()
            << "\n";
    }
    write_text(cfg.report, jsonl.str());
  }
  return result;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  std::string variant;
  std::size_t best_epoch = 0;
  double validation_err = 0.0;
  double test_err = 0.0;
  PairAccuracyReport test_pairs;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::string table;

  const AblationRow& row(const std::string& variant) const {
    for (const auto& r : rows) {
      if (r.variant == variant) return r;
    }
    throw ConfigError("no ablation row for " + variant);
  }
};

/// Trains and evaluates all eight component combinations on one fold with
/// identical seeds: model selection on validation ERR@k, then test ERR@k and
/// PairAccuracy on the test groups.
inline AblationResult ablate(const Dataset& data, const RunConfig& cfg, std::ostream& err) {
  using namespace cmd_detail;
  require_groups(cfg.train_groups, "train_groups");
  require_groups(cfg.validation_groups, "validation_groups");
  require_groups(cfg.test_groups, "test_groups");
  cfg.model.validate();
  Fold fold{"ablate", cfg.train_groups, cfg.validation_groups, cfg.test_groups};
  fold.validate();
  const auto train_q = data.query_ids(cfg.train_groups);
  const auto valid_q = data.query_ids(cfg.validation_groups);
  const auto test_q = data.query_ids(cfg.test_groups);
  if (train_q.empty() || valid_q.empty() || test_q.empty()) {
    throw DataError("ablate: every fold role needs at least one query");
  }
  std::vector<std::string> all = train_q;
  all.insert(all.end(), valid_q.begin(), valid_q.end());
  all.insert(all.end(), test_q.begin(), test_q.end());
  const InputStore inputs = build_cached_inputs(data, cfg.model, all, cfg.cache_dir);

  TrainOptions opts = cfg.train;
  opts.eval_cutoff = cfg.cutoff;
  AblationResult result;
  for (const auto& toggles : kVariants) {
    const ModelConfig config = with_variant(cfg.model, toggles);
    err << "training " << config.variant_name() << "\n";
    FoldResult fr = train_with_validation(data, inputs, config, opts, train_q, valid_q);
    AblationRow row;
    row.variant = config.variant_name();
    row.best_epoch = fr.best_epoch;
    row.validation_err = fr.best_metric;
    row.test_err = validation_err(fr.best_params, config, data, inputs, test_q, cfg.cutoff);
    row.test_pairs = pair_accuracy(data.judgments, model_scorer(fr.best_params, config, inputs), test_q, cfg.tie_half);
    result.rows.push_back(std::move(row));
  }

  const std::string metric = "ERR@" + std::to_string(cfg.cutoff);
  std::vector<std::string> header{"variant", "best_epoch", "valid " + metric, "test " + metric};
  for (LabelPair p : kLabelPairs) header.push_back(label_pair_name(p));
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : result.rows) {
    std::vector<std::string> cells{r.variant, std::to_string(r.best_epoch), fixed(r.validation_err),
                                   fixed(r.test_err)};
    for (LabelPair p : kLabelPairs) cells.push_back(fixed(r.test_pairs.accuracy(p)));
    rows.push_back(std::move(cells));
  }
  result.table = render_table(header, rows);
  return result;
}

inline AblationResult cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  using namespace cmd_detail;
  require_path(cfg.embeddings, "embeddings");
  require_path(cfg.docs, "docs");
  require_path(cfg.queries, "queries");
  require_path(cfg.qrels, "qrels");
  for (const auto& r : cfg.runs) require_path(r, "runs");
  require_groups(cfg.train_groups, "train_groups");
  require_groups(cfg.validation_groups, "validation_groups");
  require_groups(cfg.test_groups, "test_groups");

  const Dataset data = load_dataset(cfg, true);
  AblationResult result = ablate(data, cfg, err);
  out << result.table;
  if (!cfg.output.empty()) write_text(cfg.output, result.table);
  if (!cfg.report.empty()) {
    std::ostringstream jsonl;
    for (const auto& r : result.rows) {
      nlohmann::json rec = {{"variant", r.variant},
                            {"best_epoch", r.best_epoch},
                            {"validation_err", r.validation_err},
                            {"test_err", r.test_err}};
      for (LabelPair p : kLabelPairs) rec[label_pair_name(p)] = r.test_pairs.accuracy(p);
      jsonl << rec.dump() << "\n";
    }
    write_text(cfg.report, jsonl.str());
  }
  return result;
}

// ---------------------------------------------------------------------------
// synth

/// Writes a synthetic corpus (planted n-gram relevance, or ambiguous query
/// terms resolved by context) as ready-to-use input files.
inline Dataset cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  cmd_detail::require_value(cfg.output, "output");
  synthetic::Options o;
  o.seed = cfg.train.seed;
  o.n_queries = cfg.synth_queries;
  o.docs_per_query = cfg.synth_docs;
  if (o.n_queries == 0 || o.docs_per_query < 2) throw ConfigError("synth needs at least 1 query and 2 docs per query");
  Dataset data;
  if (cfg.synth_kind == "planted") {
    data = synthetic::make_planted_corpus(o);
  } else if (cfg.synth_kind == "ambiguity") {
    synthetic::AmbiguityOptions ao;
    ao.base = o;
    data = synthetic::make_ambiguity_corpus(ao);
  } else {
    throw ConfigError("synth_kind: expected planted or ambiguity, got '" + cfg.synth_kind + "'");
  }
  synthetic::write_dataset(data, cfg.output);
  out << "wrote " << data.queries.size() << " queries, " << data.docs.size() << " documents to " << cfg.output
      << "\n";
  return data;
}

}  // namespace copacrr
