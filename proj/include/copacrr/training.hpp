#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "copacrr/autodiff.hpp"
#include "copacrr/corpus.hpp"
#include "copacrr/embedding.hpp"
#include "copacrr/error.hpp"
#include "copacrr/evaluation.hpp"
#include "copacrr/model.hpp"
#include "copacrr/ops.hpp"

namespace copacrr {

// ---------------------------------------------------------------------------
// Data

/// Everything loaded for an experiment. Immutable once built.
struct Dataset {
  EmbeddingTable embeddings;
  std::map<std::string, Document> docs;
  std::vector<Query> queries;
  Judgments judgments;
  /// Initial rankings to re-rank, per query id. Optional.
  std::map<std::string, RankedList> candidates;

  const Query* find_query(const std::string& id) const {
    for (const auto& q : queries) {
      if (q.query_id == id) return &q;
    }
    return nullptr;
  }

  /// Query ids whose group is in `groups`, in file order.
  std::vector<std::string> query_ids(const std::vector<std::string>& groups) const {
    std::vector<std::string> ids;
    for (const auto& q : queries) {
      if (std::find(groups.begin(), groups.end(), q.group) != groups.end()) ids.push_back(q.query_id);
    }
    return ids;
  }

  std::vector<std::string> all_query_ids() const {
    std::vector<std::string> ids;
    for (const auto& q : queries) ids.push_back(q.query_id);
    return ids;
  }

  /// Fills every query's normalized IDF from document frequencies in `docs`.
  void annotate_idf() {
    CollectionStats stats(docs);
    for (auto& q : queries) stats.annotate(q);
  }

  /// Candidate list for a query: the provided ranking, or else every judged
  /// document in id order.
  RankedList candidate_list(const std::string& query_id) const {
    auto it = candidates.find(query_id);
    if (it != candidates.end()) return it->second;
    RankedList list{query_id, {}};
    for (const auto& [doc, _] : judgments.raw_view(query_id)) list.entries.push_back({doc, 0.0, 0});
    renumber(list);
    return list;
  }
};

/// Precomputed model inputs keyed by (query id, doc id).
class InputStore {
 public:
  void put(const std::string& query_id, const std::string& doc_id, SimInput input) {
    inputs_[{query_id, doc_id}] = std::move(input);
  }

  const SimInput* find(const std::string& query_id, const std::string& doc_id) const {
    auto it = inputs_.find({query_id, doc_id});
    return it == inputs_.end() ? nullptr : &it->second;
  }

  std::size_t size() const noexcept { return inputs_.size(); }

  /// Queries whose context vector could not be built (all terms unknown).
  std::vector<std::string> oov_queries;

 private:
  std::map<std::pair<std::string, std::string>, SimInput> inputs_;
};

/// Inputs for every judged and candidate document of the given queries.
/// Documents without text are skipped.
inline InputStore build_input_store(const Dataset& data, const ModelConfig& config,
                                    const std::vector<std::string>& query_ids) {
  InputStore store;
  for (const auto& qid : query_ids) {
    const Query* q = data.find_query(qid);
    if (!q) throw DataError("unknown query id " + qid);
    bool with_context = true;
    try {
      (void)query_vec(*q, data.embeddings);
    } catch (const DataError&) {
      with_context = false;
      store.oov_queries.push_back(qid);
    }
    std::set<std::string> docs;
    for (const auto& [doc, _] : data.judgments.raw_view(qid)) docs.insert(doc);
    if (auto it = data.candidates.find(qid); it != data.candidates.end()) {
      for (const auto& e : it->second.entries) docs.insert(e.doc_id);
    }
    for (const auto& doc_id : docs) {
      auto d = data.docs.find(doc_id);
      if (d == data.docs.end()) continue;
      store.put(qid, doc_id,
                make_sim_input(*q, d->second, data.embeddings, config.l_q, config.l_d, config.w_c, with_context));
    }
  }
  return store;
}

inline Scorer model_scorer(const ModelParams& params, const ModelConfig& config, const InputStore& inputs) {
  return [&params, &config, &inputs](const std::string& qid, const std::string& doc) -> std::optional<double> {
    const SimInput* in = inputs.find(qid, doc);
    if (!in) return std::nullopt;
    return score_inference(*in, params, config);
  };
}

// ---------------------------------------------------------------------------
// Training pairs

struct TrainingPair {
  std::string query_id;
  std::string pos_doc_id;
  std::string neg_doc_id;
  MergedGrade pos_grade = MergedGrade::nrel;
  MergedGrade neg_grade = MergedGrade::nrel;
};

enum class PairPolicy {
  all_dominance,             ///< HRel>Rel, HRel>NRel, Rel>NRel
  relevant_over_nonrelevant, ///< Rel or HRel over NRel only
};

/// Uniform sampler over every (query, higher-graded doc, lower-graded doc)
/// triple of the selected queries, on merged grades.
class PairSampler {
 public:
  PairSampler(const Judgments& judgments, const std::vector<std::string>& query_ids,
              PairPolicy policy = PairPolicy::all_dominance)
      : policy_(policy) {
    for (const auto& qid : query_ids) {
      QueryBuckets qb;
      qb.query_id = qid;
      for (const auto& [doc, grade] : judgments.merged_view(qid)) {
        qb.docs[static_cast<std::size_t>(grade)].push_back(doc);
      }
      qb.pairs = 0;
      for (const auto& [hi, lo] : grade_pairs()) {
        qb.pairs += qb.docs[hi].size() * qb.docs[lo].size();
      }
      if (qb.pairs == 0) {
        ++skipped_;
        continue;
      }
      total_ += qb.pairs;
      cumulative_.push_back(total_);
      queries_.push_back(std::move(qb));
    }
  }

  std::uint64_t size() const noexcept { return total_; }
  std::size_t skipped_queries() const noexcept { return skipped_; }
  std::size_t query_count() const noexcept { return queries_.size(); }

  template <typename Rng>
  TrainingPair sample(Rng& rng) const {
    if (total_ == 0) throw DataError("no training pairs: every query lacks a grade-ordered document pair");
    std::uniform_int_distribution<std::uint64_t> dist(0, total_ - 1);
    return at(dist(rng));
  }

  /// The pair with flat index `index` in [0, size()).
  TrainingPair at(std::uint64_t index) const {
    const auto q = static_cast<std::size_t>(
        std::upper_bound(cumulative_.begin(), cumulative_.end(), index) - cumulative_.begin());
    std::uint64_t local = index - (q == 0 ? 0 : cumulative_[q - 1]);
    const QueryBuckets& qb = queries_[q];
    for (const auto& [hi, lo] : grade_pairs()) {
      const std::uint64_t n = qb.docs[hi].size() * qb.docs[lo].size();
      if (local < n) {
        const auto& his = qb.docs[hi];
        const auto& los = qb.docs[lo];
        return TrainingPair{qb.query_id, his[local / los.size()], los[local % los.size()],
                            static_cast<MergedGrade>(hi), static_cast<MergedGrade>(lo)};
      }
      local -= n;
    }
    throw Error("PairSampler: index out of range");
  }

  std::vector<TrainingPair> enumerate() const {
    std::vector<TrainingPair> out;
    for (std::uint64_t i = 0; i < total_; ++i) out.push_back(at(i));
    return out;
  }

 private:
  struct QueryBuckets {
    std::string query_id;
    std::array<std::vector<std::string>, 3> docs;
    std::uint64_t pairs = 0;
  };

  std::vector<std::pair<std::size_t, std::size_t>> grade_pairs() const {
    if (policy_ == PairPolicy::relevant_over_nonrelevant) return {{2, 0}, {1, 0}};
    return {{2, 0}, {2, 1}, {1, 0}};
  }

  PairPolicy policy_;
  std::vector<QueryBuckets> queries_;
  std::vector<std::uint64_t> cumulative_;
  std::uint64_t total_ = 0;
  std::size_t skipped_ = 0;
};

// ---------------------------------------------------------------------------
// Optimizer

struct TrainOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 16;
  std::size_t batches_per_iteration = 32;
  std::size_t iterations = 150;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  PairPolicy pair_policy = PairPolicy::all_dominance;
  std::size_t eval_cutoff = 20;
};

/// Per-parameter adaptive steps from bias-corrected first and second moments.
class Adam {
 public:
  Adam() = default;
  explicit Adam(const ModelParams& params) {
    for (const Tensor* t : params.tensors()) {
      first_.emplace_back(t->shape());
      second_.emplace_back(t->shape());
    }
  }

  void step(ModelParams& params, const std::vector<Tensor>& grads, const TrainOptions& o) {
    auto tensors = params.tensors();
    if (grads.size() != tensors.size() || first_.size() != tensors.size()) {
      throw ShapeError("Adam: gradient count does not match parameters");
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(steps_));
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      auto p = tensors[t]->values();
      auto g = grads[t].values();
      auto m = first_[t].values();
      auto v = second_[t].values();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
        v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p[i] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
      }
    }
  }

  std::size_t steps() const noexcept { return steps_; }

 private:
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::size_t steps_ = 0;
};

struct TrainState {
  ModelParams params;
  Adam optimizer;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::mt19937_64 rng;
};

/// Initial state: parameters from `seed`, sampling stream from a derived seed.
inline TrainState make_train_state(const ModelConfig& config, std::uint64_t seed) {
  TrainState s;
  s.params = init_params(config, seed);
  s.optimizer = Adam(s.params);
  s.seed = seed;
  s.rng.seed(seed ^ 0x9E3779B97F4A7C15ULL);
  return s;
}

// ---------------------------------------------------------------------------
// Epochs

struct PairResult {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

/// Loss and parameter gradients for one training pair.
inline PairResult pair_gradient(const SimInput& pos, const SimInput& neg, const ModelParams& params,
                                const ModelConfig& config, const std::vector<std::size_t>* pos_perm,
                                const std::vector<std::size_t>* neg_perm, double grad_scale = 1.0) {
  Graph graph;
  ParamVars vars = bind_params(graph, params, true);
  auto perm_of = [](const std::vector<std::size_t>* p) -> std::optional<std::span<const std::size_t>> {
    if (!p) return std::nullopt;
    return std::span<const std::size_t>(*p);
  };
  Var rel_pos = forward_graph(graph, pos, vars, config, perm_of(pos_perm));
  Var rel_neg = forward_graph(graph, neg, vars, config, perm_of(neg_perm));
  Var loss = config.loss == LossKind::cross_entropy ? ops::pairwise_ce_loss(graph, rel_pos, rel_neg)
                                                    : ops::pairwise_margin_loss(graph, rel_pos, rel_neg);
  PairResult out;
  out.loss = graph.value(loss).item();
  graph.backward(loss, grad_scale);
  for (Var v : vars.all()) out.grads.push_back(graph.grad(v));
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers, each on a
/// contiguous block of indices.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t batches = 0;
};

/// One iteration: batches_per_iteration minibatches of sampled pairs, one
/// optimizer step per minibatch on its mean loss. Embeddings are not touched.
inline EpochStats train_epoch(TrainState& state, const PairSampler& sampler, const InputStore& inputs,
                              const ModelConfig& config, const TrainOptions& options) {
  if (options.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  check_params(state.params, config);
  EpochStats stats;
  double loss_sum = 0.0;
  const std::size_t B = options.batch_size;
  for (std::size_t batch = 0; batch < options.batches_per_iteration; ++batch) {
    // All randomness is drawn up front in a fixed order.
    std::vector<TrainingPair> pairs;
    std::vector<std::vector<std::size_t>> pos_perms(B), neg_perms(B);
    for (std::size_t i = 0; i < B; ++i) {
      pairs.push_back(sampler.sample(state.rng));
      if (config.shuffle) {
        pos_perms[i] = random_permutation(config.l_q, state.rng);
        neg_perms[i] = random_permutation(config.l_q, state.rng);
      }
    }

    std::vector<PairResult> results(B);
    parallel_for(B, options.threads, [&](std::size_t i) {
      const SimInput* pos = inputs.find(pairs[i].query_id, pairs[i].pos_doc_id);
      const SimInput* neg = inputs.find(pairs[i].query_id, pairs[i].neg_doc_id);
      if (!pos || !neg) {
        throw DataError("no model input for pair " + pairs[i].query_id + " " + pairs[i].pos_doc_id + " > " +
                        pairs[i].neg_doc_id);
      }
      results[i] = pair_gradient(*pos, *neg, state.params, config, config.shuffle ? &pos_perms[i] : nullptr,
                                 config.shuffle ? &neg_perms[i] : nullptr);
    });

    double batch_loss = 0.0;
    for (const auto& r : results) batch_loss += r.loss;
    batch_loss /= static_cast<double>(B);
    if (!std::isfinite(batch_loss)) {
      std::ostringstream msg;
      msg << "non-finite loss " << batch_loss << " at epoch " << state.epoch + 1 << " batch " << batch
          << "; pairs:";
      for (std::size_t i = 0; i < B; ++i) {
        msg << ' ' << pairs[i].query_id << ':' << pairs[i].pos_doc_id << '>' << pairs[i].neg_doc_id << '='
            << results[i].loss;
      }
      throw NumericalError(msg.str());
    }

    std::vector<Tensor> grads = std::move(results[0].grads);
    for (std::size_t i = 1; i < B; ++i) {
      for (std::size_t t = 0; t < grads.size(); ++t) {
        auto dst = grads[t].values();
        auto src = results[i].grads[t].values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    const double inv = 1.0 / static_cast<double>(B);
    for (auto& g : grads) {
      for (double& v : g.values()) v *= inv;
    }
    state.optimizer.step(state.params, grads, options);
    loss_sum += batch_loss;
    ++stats.batches;
  }
  ++state.epoch;
  stats.mean_loss = stats.batches ? loss_sum / static_cast<double>(stats.batches) : 0.0;
  return stats;
}

// ---------------------------------------------------------------------------
// Folds

/// One train/validation/test assignment of query groups.
struct Fold {
  std::string name;
  std::vector<std::string> train_groups;
  std::vector<std::string> validation_groups;
  std::vector<std::string> test_groups;

  void validate() const {
    std::set<std::string> seen;
    for (const auto* role : {&train_groups, &validation_groups, &test_groups}) {
      for (const auto& g : *role) {
        if (!seen.insert(g).second) throw ConfigError("fold " + name + ": group " + g + " appears in two roles");
      }
    }
  }
};

using SplitPlan = std::vector<Fold>;

/// For every test group and every other group as validation, train on the
/// rest: n * (n - 1) folds.
inline SplitPlan round_robin_folds(const std::vector<std::string>& groups) {
  if (groups.size() < 3) throw ConfigError("round-robin folds need at least 3 groups");
  SplitPlan plan;
  for (const auto& test : groups) {
    for (const auto& valid : groups) {
      if (valid == test) continue;
      Fold f;
      f.name = "test=" + test + ",valid=" + valid;
      f.test_groups = {test};
      f.validation_groups = {valid};
      for (const auto& g : groups) {
        if (g != test && g != valid) f.train_groups.push_back(g);
      }
      plan.push_back(std::move(f));
    }
  }
  return plan;
}

/// 1-based epoch with the highest metric; the earliest wins ties.
inline std::size_t select_best_epoch(const std::vector<double>& metrics) {
  if (metrics.empty()) throw ConfigError("select_best_epoch: no epochs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < metrics.size(); ++i) {
    if (metrics[i] > metrics[best]) best = i;
  }
  return best + 1;
}

/// Mean ERR@k after re-ranking each query's candidate list with the model.
inline double validation_err(const ModelParams& params, const ModelConfig& config, const Dataset& data,
                             const InputStore& inputs, const std::vector<std::string>& query_ids,
                             std::size_t k = 20) {
  Scorer scorer = model_scorer(params, config, inputs);
  std::vector<RankedList> reranked;
  for (const auto& qid : query_ids) reranked.push_back(rerank_with_model(data.candidate_list(qid), scorer));
  return mean_err(reranked, data.judgments, k);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double validation_err = 0.0;
};

struct FoldResult {
  ModelParams best_params;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::vector<EpochRecord> history;
};

/// Trains up to options.iterations epochs on the train queries, scoring the
/// validation queries after each; keeps the parameters of the best epoch.
inline FoldResult train_with_validation(const Dataset& data, const InputStore& inputs, const ModelConfig& config,
                                        const TrainOptions& options, const std::vector<std::string>& train_queries,
                                        const std::vector<std::string>& validation_queries,
                                        const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  if (validation_queries.empty()) throw ConfigError("validation set is empty");
  PairSampler sampler(data.judgments, train_queries, options.pair_policy);
  TrainState state = make_train_state(config, options.seed);
  FoldResult result;
  std::vector<double> metrics;
  for (std::size_t it = 0; it < options.iterations; ++it) {
    EpochStats st = train_epoch(state, sampler, inputs, config, options);
    const double metric = validation_err(state.params, config, data, inputs, validation_queries, options.eval_cutoff);
    metrics.push_back(metric);
    EpochRecord rec{state.epoch, st.mean_loss, metric};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (metrics.size() == 1 || metric > result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = state.epoch;
      result.best_params = state.params;
    }
  }
  if (!metrics.empty() && select_best_epoch(metrics) != result.best_epoch) {
    throw Error("run_fold: best-epoch bookkeeping diverged");
  }
  return result;
}

inline FoldResult run_fold(const Fold& fold, const Dataset& data, const InputStore& inputs,
                           const ModelConfig& config, const TrainOptions& options,
                           const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  fold.validate();
  if (fold.train_groups.empty()) throw ConfigError("fold " + fold.name + " has no training groups");
  return train_with_validation(data, inputs, config, options, data.query_ids(fold.train_groups),
                               data.query_ids(fold.validation_groups), on_epoch);
}

}  // namespace copacrr
