#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "copacrr/corpus.hpp"
#include "copacrr/error.hpp"

namespace copacrr {

// ---------------------------------------------------------------------------
// ERR

struct GradedRanking {
  std::vector<int> grades;
  int g_max = kMergedMaxGrade;
};

/// Expected reciprocal rank at cutoff k:
///   sum_{r<=k} (1/r) R(g_r) prod_{i<r} (1 - R(g_i)),  R(g) = (2^g - 1) / 2^g_max.
inline double err_at_k(std::span<const int> grades, std::size_t k, int g_max = kMergedMaxGrade) {
  if (k == 0) throw ConfigError("err_at_k: cutoff must be at least 1");
  if (g_max < 0) throw ConfigError("err_at_k: g_max must be non-negative");
  const double denom = std::ldexp(1.0, g_max);
  double err = 0.0;
  double reach = 1.0;
  const std::size_t n = std::min(k, grades.size());
  for (std::size_t r = 0; r < n; ++r) {
    const int g = grades[r];
    if (g < 0 || g > g_max) {
      throw ConfigError("err_at_k: grade " + std::to_string(g) + " outside [0, " + std::to_string(g_max) + "]");
    }
    const double stop = (std::ldexp(1.0, g) - 1.0) / denom;
    err += reach * stop / static_cast<double>(r + 1);
    reach *= 1.0 - stop;
  }
  return err;
}

inline double err_at_k(const GradedRanking& ranking, std::size_t k) {
  return err_at_k(ranking.grades, k, ranking.g_max);
}

enum class GradeMode {
  merged,  ///< NRel/Rel/HRel = 0/1/2, Nav and unjudged as 0
  raw,     ///< raw TREC grades with negatives as 0, g_max = 4
};

inline int grade_max(GradeMode mode) { return mode == GradeMode::merged ? kMergedMaxGrade : 4; }

inline GradedRanking graded(const RankedList& list, const Judgments& judgments, GradeMode mode = GradeMode::merged) {
  GradedRanking out;
  out.g_max = grade_max(mode);
  for (const auto& e : list.entries) {
    if (mode == GradeMode::merged) {
      out.grades.push_back(judgments.merged_or_zero(list.query_id, e.doc_id));
    } else {
      out.grades.push_back(std::max(0, judgments.raw(list.query_id, e.doc_id).value_or(0)));
    }
  }
  return out;
}

/// Per-query ERR@k averaged with equal query weight. Empty input gives 0.
inline double mean_err(const std::vector<RankedList>& run, const Judgments& judgments, std::size_t k,
                       GradeMode mode = GradeMode::merged) {
  if (run.empty()) return 0.0;
  double total = 0.0;
  for (const auto& list : run) total += err_at_k(graded(list, judgments, mode), k);
  return total / static_cast<double>(run.size());
}

// ---------------------------------------------------------------------------
// Re-ranking

/// Score for (query_id, doc_id); nullopt when the document cannot be scored.
using Scorer = std::function<std::optional<double>(const std::string&, const std::string&)>;

/// Reorders candidates by descending score, ties kept in original rank order.
/// Unscorable documents get -inf and sink; `missing` counts them.
inline RankedList rerank_with_model(const RankedList& candidates, const Scorer& scorer,
                                    std::size_t* missing = nullptr) {
  RankedList out{candidates.query_id, candidates.entries};
  std::stable_sort(out.entries.begin(), out.entries.end(),
                   [](const RankedEntry& a, const RankedEntry& b) { return a.rank < b.rank; });
  for (auto& e : out.entries) {
    auto s = scorer(candidates.query_id, e.doc_id);
    if (s) {
      e.score = *s;
    } else {
      e.score = -std::numeric_limits<double>::infinity();
      if (missing) ++*missing;
    }
  }
  std::stable_sort(out.entries.begin(), out.entries.end(),
                   [](const RankedEntry& a, const RankedEntry& b) { return a.score > b.score; });
  renumber(out);
  return out;
}

inline std::vector<RankedList> rerank_run(const std::vector<RankedList>& run, const Scorer& scorer,
                                          std::size_t* missing = nullptr) {
  std::vector<RankedList> out;
  out.reserve(run.size());
  for (const auto& list : run) out.push_back(rerank_with_model(list, scorer, missing));
  return out;
}

struct RerankAllStats {
  std::size_t runs = 0;
  std::size_t improved = 0;
  /// Runs with a zero baseline, left out of the mean relative delta.
  std::size_t zero_baseline_runs = 0;
  double improved_fraction = 0.0;
  double mean_relative_delta = 0.0;
  std::vector<double> before;
  std::vector<double> after;
};

/// Share of runs whose mean ERR@k improves after re-ranking, and the mean of
/// (after - before) / before over runs with a non-zero baseline.
inline RerankAllStats summarize_rerank(std::vector<double> before, std::vector<double> after) {
  if (before.size() != after.size()) throw ConfigError("summarize_rerank: length mismatch");
  if (before.empty()) throw ConfigError("rerank_all_stats: no runs");
  RerankAllStats s;
  s.runs = before.size();
  double delta_sum = 0.0;
  std::size_t delta_n = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (after[i] > before[i]) ++s.improved;
    if (before[i] == 0.0) {
      ++s.zero_baseline_runs;
    } else {
      delta_sum += (after[i] - before[i]) / before[i];
      ++delta_n;
    }
  }
  s.improved_fraction = static_cast<double>(s.improved) / static_cast<double>(s.runs);
  s.mean_relative_delta = delta_n ? delta_sum / static_cast<double>(delta_n) : 0.0;
  s.before = std::move(before);
  s.after = std::move(after);
  return s;
}

inline RerankAllStats rerank_all_stats(const std::vector<std::vector<RankedList>>& runs, const Scorer& scorer,
                                       const Judgments& judgments, std::size_t k = 20,
                                       GradeMode mode = GradeMode::merged) {
  std::vector<double> before, after;
  for (const auto& run : runs) {
    before.push_back(mean_err(run, judgments, k, mode));
    after.push_back(mean_err(rerank_run(run, scorer), judgments, k, mode));
  }
  return summarize_rerank(std::move(before), std::move(after));
}

// ---------------------------------------------------------------------------
// PairAccuracy

enum class LabelPair : std::size_t { hrel_nrel = 0, hrel_rel = 1, rel_nrel = 2 };

inline constexpr std::array<LabelPair, 3> kLabelPairs{LabelPair::hrel_nrel, LabelPair::hrel_rel,
                                                      LabelPair::rel_nrel};

inline const char* label_pair_name(LabelPair p) {
  switch (p) {
    case LabelPair::hrel_nrel: return "HRel-NRel";
    case LabelPair::hrel_rel: return "HRel-Rel";
    case LabelPair::rel_nrel: return "Rel-NRel";
  }
  return "?";
}

/// Label pair of two distinct merged grades (order-insensitive).
inline LabelPair label_pair_of(MergedGrade a, MergedGrade b) {
  if (a == b) throw ConfigError("label_pair_of: grades are equal");
  const auto hi = std::max(a, b);
  const auto lo = std::min(a, b);
  if (hi == MergedGrade::hrel) return lo == MergedGrade::nrel ? LabelPair::hrel_nrel : LabelPair::hrel_rel;
  return LabelPair::rel_nrel;
}

struct LabelPairStats {
  std::size_t tested = 0;
  std::size_t correct = 0;
  std::size_t ties = 0;

  /// Ties count as wrong unless `tie_half`, then as half correct.
  double accuracy(bool tie_half = false) const {
    if (tested == 0) return 0.0;
    const double c = static_cast<double>(correct) + (tie_half ? 0.5 * static_cast<double>(ties) : 0.0);
    return c / static_cast<double>(tested);
  }

  LabelPairStats& operator+=(const LabelPairStats& o) {
    tested += o.tested;
    correct += o.correct;
    ties += o.ties;
    return *this;
  }
};

struct PairAccuracyReport {
  std::array<LabelPairStats, 3> by_pair{};
  std::size_t queries = 0;
  std::size_t missing_docs = 0;
  bool tie_half = false;

  const LabelPairStats& stats(LabelPair p) const { return by_pair[static_cast<std::size_t>(p)]; }
  double accuracy(LabelPair p) const { return stats(p).accuracy(tie_half); }

  LabelPairStats total() const {
    LabelPairStats t;
    for (const auto& s : by_pair) t += s;
    return t;
  }
  double overall_accuracy() const { return total().accuracy(tie_half); }
};

/// Every pair of judged documents with different merged grades is tested; it
/// is correct iff the higher-graded document gets the strictly higher score.
/// Nav documents and unscorable documents take no part.
inline PairAccuracyReport pair_accuracy(const Judgments& judgments, const Scorer& scorer,
                                        const std::vector<std::string>& query_ids, bool tie_half = false) {
  PairAccuracyReport report;
  report.tie_half = tie_half;
  for (const auto& qid : query_ids) {
    struct Scored {
      MergedGrade grade;
      double score;
    };
    std::vector<Scored> docs;
    for (const auto& [doc, grade] : judgments.merged_view(qid)) {
      auto s = scorer(qid, doc);
      if (!s) {
        ++report.missing_docs;
        continue;
      }
      docs.push_back({grade, *s});
    }
    ++report.queries;
    for (std::size_t a = 0; a < docs.size(); ++a) {
      for (std::size_t b = a + 1; b < docs.size(); ++b) {
        if (docs[a].grade == docs[b].grade) continue;
        const Scored& hi = docs[a].grade > docs[b].grade ? docs[a] : docs[b];
        const Scored& lo = docs[a].grade > docs[b].grade ? docs[b] : docs[a];
        LabelPairStats& s = report.by_pair[static_cast<std::size_t>(label_pair_of(hi.grade, lo.grade))];
        ++s.tested;
        if (hi.score > lo.score) {
          ++s.correct;
        } else if (hi.score == lo.score) {
          ++s.ties;
        }
      }
    }
  }
  return report;
}

}  // namespace copacrr
