#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "copacrr/error.hpp"

namespace copacrr {

// ---------------------------------------------------------------------------
// Text

/// Lowercases ASCII letters and splits on every non-alphanumeric byte.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

struct Document {
  std::string doc_id;
  std::vector<std::string> tokens;
};

struct Query {
  std::string query_id;
  std::vector<std::string> tokens;
  std::vector<double> idf_norm;
  /// Free-form partition label (e.g. a TREC year) used by fold plans.
  std::string group;
};

// ---------------------------------------------------------------------------
// IDF

/// ln((n_docs - df + 0.5) / (df + 0.5)), clamped below at 0.
inline double compute_idf(std::size_t df, std::size_t n_docs) {
  if (n_docs == 0) throw ConfigError("compute_idf: collection is empty");
  if (df > n_docs) {
    throw ConfigError("compute_idf: df " + std::to_string(df) + " exceeds collection size " +
                      std::to_string(n_docs));
  }
  const double n = static_cast<double>(n_docs);
  const double d = static_cast<double>(df);
  return std::max(0.0, std::log((n - d + 0.5) / (d + 0.5)));
}

/// Softmax over a query's term IDFs.
inline std::vector<double> normalize_idf(const std::vector<double>& idfs) {
  if (idfs.empty()) throw ConfigError("normalize_idf: empty query");
  const double m = *std::max_element(idfs.begin(), idfs.end());
  std::vector<double> out(idfs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < idfs.size(); ++i) {
    out[i] = std::exp(idfs[i] - m);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

/// Document frequencies over a fixed collection.
class CollectionStats {
 public:
  CollectionStats() = default;

  template <typename Docs>
  explicit CollectionStats(const Docs& docs) {
    for (const auto& entry : docs) add(doc_of(entry));
  }

  void add(const Document& doc) {
    ++n_docs_;
    std::unordered_set<std::string_view> seen;
    for (const auto& t : doc.tokens) {
      if (seen.insert(t).second) ++df_[t];
    }
  }

  std::size_t n_docs() const noexcept { return n_docs_; }

  std::size_t df(const std::string& term) const {
    auto it = df_.find(term);
    return it == df_.end() ? 0 : it->second;
  }

  double idf(const std::string& term) const { return compute_idf(df(term), n_docs_); }

  /// Fills query.idf_norm from this collection.
  void annotate(Query& query) const {
    if (query.tokens.empty()) throw DataError("query " + query.query_id + " has no terms");
    std::vector<double> raw;
    raw.reserve(query.tokens.size());
    for (const auto& t : query.tokens) raw.push_back(idf(t));
    query.idf_norm = normalize_idf(raw);
  }

 private:
  static const Document& doc_of(const Document& d) { return d; }
  template <typename K>
  static const Document& doc_of(const std::pair<const K, Document>& kv) {
    return kv.second;
  }

  std::size_t n_docs_ = 0;
  std::unordered_map<std::string, std::size_t> df_;
};

// ---------------------------------------------------------------------------
// Relevance labels

/// Raw TREC Web Track levels.
enum class RawGrade : int { junk = -2, nrel = 0, rel = 1, hrel = 2, key = 3, nav = 4 };

/// Labels after merging; the numeric value is the grade used by ERR and pairs.
enum class MergedGrade : int { nrel = 0, rel = 1, hrel = 2 };

inline constexpr int kMergedMaxGrade = 2;

inline bool is_known_grade(int code) {
  return code == -2 || (code >= 0 && code <= 4);
}

/// Junk, NRel -> NRel; Rel -> Rel; HRel, Key -> HRel; Nav -> excluded.
inline std::optional<MergedGrade> merge_labels(int raw) {
  switch (raw) {
    case -2:
    case 0: return MergedGrade::nrel;
    case 1: return MergedGrade::rel;
    case 2:
    case 3: return MergedGrade::hrel;
    case 4: return std::nullopt;
    default: throw DataError("unknown relevance grade code " + std::to_string(raw));
  }
}

inline const char* grade_name(MergedGrade g) {
  switch (g) {
    case MergedGrade::nrel: return "NRel";
    case MergedGrade::rel: return "Rel";
    case MergedGrade::hrel: return "HRel";
  }
  return "?";
}

/// qrels: (query, doc) -> raw grade, ordered by ids for deterministic iteration.
class Judgments {
 public:
  void set(const std::string& query_id, const std::string& doc_id, int raw) {
    if (!is_known_grade(raw)) throw DataError("unknown relevance grade code " + std::to_string(raw));
    grades_[query_id][doc_id] = raw;
  }

  std::optional<int> raw(const std::string& query_id, const std::string& doc_id) const {
    auto q = grades_.find(query_id);
    if (q == grades_.end()) return std::nullopt;
    auto d = q->second.find(doc_id);
    if (d == q->second.end()) return std::nullopt;
    return d->second;
  }

  /// Merged grade, or nullopt when unjudged or Nav.
  std::optional<MergedGrade> merged(const std::string& query_id, const std::string& doc_id) const {
    auto r = raw(query_id, doc_id);
    if (!r) return std::nullopt;
    return merge_labels(*r);
  }

  /// Merged grade as an integer with unjudged and Nav documents at 0.
  int merged_or_zero(const std::string& query_id, const std::string& doc_id) const {
    auto m = merged(query_id, doc_id);
    return m ? static_cast<int>(*m) : 0;
  }

  /// Merged view of one query: doc -> grade, Nav documents left out.
  std::map<std::string, MergedGrade> merged_view(const std::string& query_id) const {
    std::map<std::string, MergedGrade> out;
    auto q = grades_.find(query_id);
    if (q == grades_.end()) return out;
    for (const auto& [doc, g] : q->second) {
      if (auto m = merge_labels(g)) out.emplace(doc, *m);
    }
    return out;
  }

  const std::map<std::string, int>& raw_view(const std::string& query_id) const {
    static const std::map<std::string, int> empty;
    auto q = grades_.find(query_id);
    return q == grades_.end() ? empty : q->second;
  }

  std::vector<std::string> query_ids() const {
    std::vector<std::string> ids;
    for (const auto& [q, _] : grades_) ids.push_back(q);
    return ids;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [_, docs] : grades_) n += docs.size();
    return n;
  }

 private:
  std::map<std::string, std::map<std::string, int>> grades_;
};

// ---------------------------------------------------------------------------
// Ranked lists

struct RankedEntry {
  std::string doc_id;
  double score = 0.0;
  std::size_t rank = 0;
};

struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;

  std::vector<std::string> doc_ids() const {
    std::vector<std::string> ids;
    ids.reserve(entries.size());
    for (const auto& e : entries) ids.push_back(e.doc_id);
    return ids;
  }
};

/// Renumbers ranks 1..n after entries have been ordered.
inline void renumber(RankedList& list) {
  for (std::size_t i = 0; i < list.entries.size(); ++i) list.entries[i].rank = i + 1;
}

// ---------------------------------------------------------------------------
// File formats

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T value{};
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for double does not accept "inf" spellings on every libstdc++.
    std::string tmp(s);
    char* end = nullptr;
    value = std::strtod(tmp.c_str(), &end);
    if (tmp.empty() || end != tmp.c_str() + tmp.size()) return std::nullopt;
    return value;
  } else {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return value;
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

inline std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

inline std::string format_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

/// Parses "qid 0 docid grade" lines. Blank lines are skipped.
inline Judgments parse_qrels(std::istream& in, const std::string& source = "<qrels>") {
  Judgments j;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = detail::split_ws(detail::strip_cr(line));
    if (fields.empty()) continue;
    if (fields.size() != 4) {
      throw DataError(source, lineno, "expected 4 fields (qid 0 docid grade), got " +
                                          std::to_string(fields.size()));
    }
    auto grade = detail::parse_number<int>(fields[3]);
    if (!grade) throw DataError(source, lineno, "grade is not an integer: " + std::string(fields[3]));
    if (!is_known_grade(*grade)) {
      throw DataError(source, lineno, "unknown relevance grade code " + std::to_string(*grade));
    }
    j.set(std::string(fields[0]), std::string(fields[2]), *grade);
  }
  return j;
}

inline Judgments read_qrels(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_qrels(in, path.string());
}

inline void write_qrels(const Judgments& j, std::ostream& out) {
  for (const auto& q : j.query_ids()) {
    for (const auto& [doc, g] : j.raw_view(q)) out << q << " 0 " << doc << ' ' << g << '\n';
  }
}

struct RunDiagnostics {
  /// Queries whose scores increased with rank and were re-sorted.
  std::vector<std::string> resorted_queries;
};

/// Parses 6-column run lines "qid Q0 docid rank score tag". Lists come back in
/// first-appearance order of their query ids, entries ordered by rank.
inline std::vector<RankedList> parse_run(std::istream& in, const std::string& source = "<run>",
                                         RunDiagnostics* diagnostics = nullptr) {
  std::vector<RankedList> lists;
  std::unordered_map<std::string, std::size_t> index;
  std::unordered_map<std::string, std::unordered_set<std::string>> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = detail::split_ws(detail::strip_cr(line));
    if (fields.empty()) continue;
    if (fields.size() != 6) {
      throw DataError(source, lineno, "expected 6 fields (qid Q0 docid rank score tag), got " +
                                          std::to_string(fields.size()));
    }
    auto rank = detail::parse_number<std::size_t>(fields[3]);
    if (!rank) throw DataError(source, lineno, "rank is not a non-negative integer: " + std::string(fields[3]));
    auto score = detail::parse_number<double>(fields[4]);
    if (!score || std::isnan(*score)) {
      throw DataError(source, lineno, "score is not a number: " + std::string(fields[4]));
    }
    std::string qid(fields[0]);
    std::string doc(fields[2]);
    if (!seen[qid].insert(doc).second) {
      throw DataError(source, lineno, "duplicate document " + doc + " for query " + qid);
    }
    auto [it, fresh] = index.emplace(qid, lists.size());
    if (fresh) lists.push_back(RankedList{qid, {}});
    lists[it->second].entries.push_back(RankedEntry{doc, *score, *rank});
  }

  for (auto& list : lists) {
    std::stable_sort(list.entries.begin(), list.entries.end(),
                     [](const RankedEntry& a, const RankedEntry& b) { return a.rank < b.rank; });
    const bool ordered = std::is_sorted(
        list.entries.begin(), list.entries.end(),
        [](const RankedEntry& a, const RankedEntry& b) { return a.score > b.score; });
    if (!ordered) {
      std::stable_sort(list.entries.begin(), list.entries.end(),
                       [](const RankedEntry& a, const RankedEntry& b) { return a.score > b.score; });
      if (diagnostics) diagnostics->resorted_queries.push_back(list.query_id);
    }
    renumber(list);
  }
  return lists;
}

inline std::vector<RankedList> read_run(const std::filesystem::path& path,
                                        RunDiagnostics* diagnostics = nullptr) {
  auto in = detail::open_input(path);
  return parse_run(in, path.string(), diagnostics);
}

/// Emits ranks 1..n per list after a stable sort by descending score.
inline void write_run(const std::vector<RankedList>& lists, std::ostream& out, const std::string& tag) {
  for (const auto& list : lists) {
    std::vector<RankedEntry> entries = list.entries;
    std::stable_sort(entries.begin(), entries.end(),
                     [](const RankedEntry& a, const RankedEntry& b) { return a.score > b.score; });
    for (std::size_t i = 0; i < entries.size(); ++i) {
      out << list.query_id << " Q0 " << entries[i].doc_id << ' ' << (i + 1) << ' '
          << detail::format_score(entries[i].score) << ' ' << tag << '\n';
    }
  }
}

/// Writes through a temporary file and renames it into place.
template <typename Writer>
void write_file_atomically(const std::filesystem::path& path, Writer&& writer,
                           std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, mode | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    writer(out);
    out.flush();
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_run(const std::vector<RankedList>& lists, const std::filesystem::path& path,
                      const std::string& tag) {
  write_file_atomically(path, [&](std::ostream& out) { write_run(lists, out, tag); });
}

/// Documents from a directory of <doc_id>.txt files or a "doc_id\ttext" TSV.
inline std::map<std::string, Document> read_documents(const std::filesystem::path& path) {
  std::map<std::string, Document> docs;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      auto in = detail::open_input(file);
      std::stringstream buf;
      buf << in.rdbuf();
      std::string id = file.stem().string();
      docs[id] = Document{id, tokenize(buf.str())};
    }
    return docs;
  }
  auto in = detail::open_input(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = detail::strip_cr(line);
    if (view.empty()) continue;
    auto tab = view.find('\t');
    if (tab == std::string_view::npos || tab == 0) {
      throw DataError(path.string(), lineno, "expected 'doc_id<TAB>text'");
    }
    std::string id(view.substr(0, tab));
    if (docs.count(id)) throw DataError(path.string(), lineno, "duplicate document id " + id);
    docs[id] = Document{id, tokenize(view.substr(tab + 1))};
  }
  return docs;
}

/// Queries from "query_id\ttext[\tgroup]" lines, in file order.
inline std::vector<Query> read_queries(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<Query> queries;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = detail::strip_cr(line);
    if (view.empty()) continue;
    auto tab = view.find('\t');
    if (tab == std::string_view::npos || tab == 0) {
      throw DataError(path.string(), lineno, "expected 'query_id<TAB>text'");
    }
    Query q;
    q.query_id = std::string(view.substr(0, tab));
    std::string_view rest = view.substr(tab + 1);
    auto tab2 = rest.find('\t');
    if (tab2 != std::string_view::npos) {
      q.group = std::string(rest.substr(tab2 + 1));
      rest = rest.substr(0, tab2);
    }
    q.tokens = tokenize(rest);
    if (q.tokens.empty()) throw DataError(path.string(), lineno, "query " + q.query_id + " has no terms");
    if (!ids.insert(q.query_id).second) {
      throw DataError(path.string(), lineno, "duplicate query id " + q.query_id);
    }
    queries.push_back(std::move(q));
  }
  return queries;
}

inline void write_queries(const std::vector<Query>& queries, std::ostream& out) {
  for (const auto& q : queries) {
    out << q.query_id << '\t';
    for (std::size_t i = 0; i < q.tokens.size(); ++i) out << (i ? " " : "") << q.tokens[i];
    if (!q.group.empty()) out << '\t' << q.group;
    out << '\n';
  }
}

inline void write_documents_tsv(const std::map<std::string, Document>& docs, std::ostream& out) {
  for (const auto& [id, d] : docs) {
    out << id << '\t';
    for (std::size_t i = 0; i < d.tokens.size(); ++i) out << (i ? " " : "") << d.tokens[i];
    out << '\n';
  }
}

}  // namespace copacrr
