#pragma once

// Generators for small corpora with a known relevance structure, used by the
// test suites and by `copacrr synth`.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "copacrr/corpus.hpp"
#include "copacrr/embedding.hpp"
#include "copacrr/training.hpp"

namespace copacrr::synthetic {

struct Options {
  std::size_t n_queries = 50;
  std::size_t docs_per_query = 20;
  std::size_t dim = 50;
  std::size_t vocab = 2000;
  std::size_t min_doc_len = 60;
  std::size_t max_doc_len = 100;
  std::size_t groups = 5;
  std::uint64_t seed = 7;
};

namespace detail {

class Builder {
 public:
  explicit Builder(const Options& o) : opts_(o), rng_(o.seed), table_(o.dim) {}

  std::mt19937_64& rng() { return rng_; }

  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }

  std::vector<double> gaussian(double scale) {
    std::normal_distribution<double> n(0.0, scale / std::sqrt(static_cast<double>(opts_.dim)));
    std::vector<double> v(opts_.dim);
    for (double& x : v) x = n(rng_);
    return v;
  }

  std::vector<double> unit() {
    auto v = gaussian(1.0);
    const double n = vector_norm(v);
    for (double& x : v) x /= n;
    return v;
  }

  /// Registers a term. Components are rounded to float so the text file
  /// written later reloads bit-identically.
  std::string word(const std::string& name, std::vector<double> vec) {
    for (double& x : vec) x = static_cast<float>(x);
    table_.add(name, vec);
    return name;
  }

  EmbeddingTable take_table() { return std::move(table_); }

 private:
  Options opts_;
  std::mt19937_64 rng_;
  EmbeddingTable table_;
};

inline std::string doc_name(std::size_t q, std::size_t d) {
  return "q" + std::to_string(q) + "d" + std::to_string(d);
}

/// A shuffled initial ranking of a query's documents.
inline RankedList shuffled_candidates(const std::string& qid, std::vector<std::string> docs, std::mt19937_64& rng) {
  std::shuffle(docs.begin(), docs.end(), rng);
  RankedList list{qid, {}};
  for (std::size_t i = 0; i < docs.size(); ++i) {
    list.entries.push_back({docs[i], static_cast<double>(docs.size() - i), i + 1});
  }
  return list;
}

inline std::string group_name(std::size_t q, std::size_t groups) {
  return "g" + std::to_string(q % std::max<std::size_t>(1, groups));
}

}  // namespace detail

/// Documents whose relevance is planted through query-term matches:
///   HRel (raw 2 or Key 3): the query appears as a contiguous phrase 2-3 times,
///   Rel (raw 1): every query term appears, never adjacent to another,
///   NRel (raw 0 or Junk -2): at most one query term, at most once,
/// plus one Nav (raw 4) document per query. Embeddings are random vectors.
inline Dataset make_planted_corpus(const Options& o) {
  detail::Builder b(o);
  std::vector<std::string> vocab;
  for (std::size_t i = 0; i < o.vocab; ++i) vocab.push_back(b.word("w" + std::to_string(i), b.gaussian(1.0)));

  Dataset data;
  std::mt19937_64 cand_rng(o.seed ^ 0xC0FFEEULL);
  for (std::size_t q = 0; q < o.n_queries; ++q) {
    Query query;
    query.query_id = "q" + std::to_string(q);
    query.group = detail::group_name(q, o.groups);
    const std::size_t qlen = b.uniform(2, 4);
    for (std::size_t t = 0; t < qlen; ++t) {
      query.tokens.push_back(b.word("t" + std::to_string(q) + "x" + std::to_string(t), b.gaussian(1.0)));
    }

    std::vector<std::string> docs_of_query;
    for (std::size_t d = 0; d < o.docs_per_query; ++d) {
      const std::string id = detail::doc_name(q, d);
      const std::size_t len = b.uniform(o.min_doc_len, o.max_doc_len);
      std::vector<std::string> tokens(len);
      for (auto& t : tokens) t = vocab[b.uniform(0, vocab.size() - 1)];

      // Roughly 20% HRel, 30% Rel, 45% NRel, one Nav.
      const std::size_t slot = d * 20 / o.docs_per_query;
      int raw = 0;
      if (d + 1 == o.docs_per_query) {
        raw = 4;
      } else if (slot < 4) {
        raw = (d % 4 == 3) ? 3 : 2;
      } else if (slot < 10) {
        raw = 1;
      } else {
        raw = (d % 5 == 0) ? -2 : 0;
      }

      if (raw == 2 || raw == 3 || raw == 4) {
        const std::size_t copies = raw == 4 ? 1 : b.uniform(2, 3);
        // Non-overlapping phrase slots spread over the document.
        const std::size_t stride = len / copies;
        for (std::size_t c = 0; c < copies; ++c) {
          const std::size_t start = c * stride + b.uniform(0, stride - qlen);
          for (std::size_t t = 0; t < qlen; ++t) tokens[start + t] = query.tokens[t];
        }
      } else if (raw == 1) {
        // Each term once or twice at distinct, non-adjacent slots.
        std::vector<std::size_t> slots;
        for (std::size_t i = 0; i < len; i += 3) slots.push_back(i);
        std::shuffle(slots.begin(), slots.end(), b.rng());
        std::size_t next = 0;
        for (std::size_t t = 0; t < qlen; ++t) {
          const std::size_t reps = b.uniform(1, 2);
          for (std::size_t r = 0; r < reps; ++r) tokens[slots[next++]] = query.tokens[t];
        }
      } else if (b.uniform(0, 1) == 1) {
        tokens[b.uniform(0, len - 1)] = query.tokens[b.uniform(0, qlen - 1)];
      }

      data.docs[id] = Document{id, std::move(tokens)};
      data.judgments.set(query.query_id, id, raw);
      docs_of_query.push_back(id);
    }
    data.candidates[query.query_id] = detail::shuffled_candidates(query.query_id, docs_of_query, cand_rng);
    data.queries.push_back(std::move(query));
  }
  data.embeddings = b.take_table();
  data.annotate_idf();
  return data;
}

struct AmbiguityOptions {
  Options base{};
  std::size_t occurrences = 3;     ///< polysemous-term occurrences per document
  std::size_t context_words = 40;  ///< sense vocabulary size per sense
  double context_noise = 1.5;      ///< noise norm of sense context words
  std::size_t guard = 2;           ///< generic tokens right next to each occurrence
  std::size_t half_window = 4;     ///< context half-window written around occurrences
};

/// Queries [w, a]: w is polysemous (vector u_A + u_B) and a points at sense A.
/// Every document contains w the same number of times and the same number of
/// sense-A and sense-B words in the same layout. HRel documents put sense-A
/// words around w, NRel documents sense-B words, so only the context of the
/// matches tells them apart. The guard keeps sense words out of the reach of
/// n-gram kernels up to size 2 * guard - 1 centred on w.
inline Dataset make_ambiguity_corpus(const AmbiguityOptions& ao) {
  const Options& o = ao.base;
  detail::Builder b(o);
  std::vector<std::string> generic;
  for (std::size_t i = 0; i < o.vocab; ++i) generic.push_back(b.word("w" + std::to_string(i), b.gaussian(1.0)));

  Dataset data;
  std::mt19937_64 cand_rng(o.seed ^ 0xC0FFEEULL);
  const std::size_t reach = ao.half_window;
  const std::size_t window = 2 * reach + 1;
  for (std::size_t q = 0; q < o.n_queries; ++q) {
    const auto ua = b.unit();
    const auto ub = b.unit();
    auto mix = [&](const std::vector<double>& base, double noise) {
      auto n = b.gaussian(noise);
      for (std::size_t k = 0; k < n.size(); ++k) n[k] += base[k];
      return n;
    };
    std::vector<double> wv(o.dim);
    for (std::size_t k = 0; k < o.dim; ++k) wv[k] = ua[k] + ub[k];
    const std::string tag = std::to_string(q);
    const std::string w = b.word("p" + tag, mix(wv, 0.1));
    const std::string a = b.word("s" + tag, mix(ua, 0.3));
    std::vector<std::string> sense_a, sense_b;
    for (std::size_t i = 0; i < ao.context_words; ++i) {
      sense_a.push_back(b.word("a" + tag + "x" + std::to_string(i), mix(ua, ao.context_noise)));
      sense_b.push_back(b.word("b" + tag + "x" + std::to_string(i), mix(ub, ao.context_noise)));
    }

    Query query;
    query.query_id = "q" + tag;
    query.group = detail::group_name(q, o.groups);
    query.tokens = {w, a};

    std::vector<std::string> docs_of_query;
    for (std::size_t d = 0; d < o.docs_per_query; ++d) {
      const bool relevant = d % 2 == 0;
      const std::string id = detail::doc_name(q, d);
      const std::size_t len = std::max(b.uniform(o.min_doc_len, o.max_doc_len), window * ao.occurrences * 2);
      std::vector<std::string> tokens(len);
      for (auto& t : tokens) t = generic[b.uniform(0, generic.size() - 1)];
      // 2 * occurrences disjoint window slots; a random half hold w with
      // near-sense context, the other half a generic centre with far-sense
      // context, so sense words appear in the same layout either way.
      const std::size_t slots = 2 * ao.occurrences;
      const std::size_t block = len / slots;
      std::vector<bool> holds_term(slots, false);
      std::fill(holds_term.begin(), holds_term.begin() + static_cast<std::ptrdiff_t>(ao.occurrences), true);
      std::shuffle(holds_term.begin(), holds_term.end(), b.rng());
      const auto& near = relevant ? sense_a : sense_b;
      const auto& far = relevant ? sense_b : sense_a;
      for (std::size_t c = 0; c < slots; ++c) {
        const std::size_t p = c * block + reach + b.uniform(0, block - window);
        const auto& ctx = holds_term[c] ? near : far;
        if (holds_term[c]) tokens[p] = w;
        for (std::size_t off = ao.guard + 1; off <= reach; ++off) {
          tokens[p - off] = ctx[b.uniform(0, ctx.size() - 1)];
          tokens[p + off] = ctx[b.uniform(0, ctx.size() - 1)];
        }
      }

      data.docs[id] = Document{id, std::move(tokens)};
      data.judgments.set(query.query_id, id, relevant ? 2 : 0);
      docs_of_query.push_back(id);
    }
    data.candidates[query.query_id] = detail::shuffled_candidates(query.query_id, docs_of_query, cand_rng);
    data.queries.push_back(std::move(query));
  }
  data.embeddings = b.take_table();
  data.annotate_idf();
  return data;
}

/// Writes embeddings.txt, docs.tsv, queries.tsv, qrels.txt and candidates.run.
inline void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomically(dir / "embeddings.txt", [&](std::ostream& out) { write_word2vec_text(data.embeddings, out); });
  write_file_atomically(dir / "docs.tsv", [&](std::ostream& out) { write_documents_tsv(data.docs, out); });
  write_file_atomically(dir / "queries.tsv", [&](std::ostream& out) { write_queries(data.queries, out); });
  write_file_atomically(dir / "qrels.txt", [&](std::ostream& out) { write_qrels(data.judgments, out); });
  std::vector<RankedList> run;
  for (const auto& q : data.queries) {
    if (auto it = data.candidates.find(q.query_id); it != data.candidates.end()) run.push_back(it->second);
  }
  write_run(run, dir / "candidates.run", "synthetic");
}

}  // namespace copacrr::synthetic
