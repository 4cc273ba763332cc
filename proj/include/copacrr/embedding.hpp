#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "copacrr/binary_io.hpp"
#include "copacrr/corpus.hpp"
#include "copacrr/error.hpp"
#include "copacrr/tensor.hpp"

namespace copacrr {

/// Frozen term vectors. Absent terms are reported as nullopt, never as zeros.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return terms_.size(); }
  const std::vector<std::string>& terms() const noexcept { return terms_; }

  void add(const std::string& term, std::span<const double> vec) {
    if (vec.size() != dim_) {
      throw DataError("embedding for '" + term + "' has " + std::to_string(vec.size()) +
                      " components, table dimension is " + std::to_string(dim_));
    }
    if (index_.count(term)) throw DataError("duplicate embedding for '" + term + "'");
    index_.emplace(term, terms_.size());
    terms_.push_back(term);
    values_.insert(values_.end(), vec.begin(), vec.end());
    double sq = 0.0;
    for (double v : vec) sq += v * v;
    norms_.push_back(std::sqrt(sq));
  }

  bool contains(const std::string& term) const { return index_.count(term) != 0; }

  std::optional<std::span<const double>> find(const std::string& term) const {
    auto it = index_.find(term);
    if (it == index_.end()) return std::nullopt;
    return row(it->second);
  }

  std::optional<std::size_t> id(const std::string& term) const {
    auto it = index_.find(term);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::span<const double> row(std::size_t id) const {
    return std::span<const double>(values_).subspan(id * dim_, dim_);
  }
  double norm(std::size_t id) const { return norms_[id]; }

  /// Copy with every vector multiplied by `factor`.
  EmbeddingTable scaled(double factor) const {
    EmbeddingTable out(dim_);
    std::vector<double> buf(dim_);
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      auto r = row(t);
      for (std::size_t k = 0; k < dim_; ++k) buf[k] = r[k] * factor;
      out.add(terms_[t], buf);
    }
    return out;
  }

  /// Digest of the full table contents (terms, order and value bits).
  std::uint64_t fingerprint() const {
    Fnv1a h;
    const std::uint64_t d = dim_;
    h.update(&d, sizeof d);
    for (const auto& t : terms_) {
      h.update(t);
      h.update("\0", 1);
    }
    h.update(values_.data(), values_.size() * sizeof(double));
    return h.digest();
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> terms_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> values_;
  std::vector<double> norms_;
};

// ---------------------------------------------------------------------------
// Embedding files

/// word2vec text format: header "count dim", then "term v1 .. vdim" lines.
/// Components are parsed as 32-bit floats so text and binary loads agree.
inline EmbeddingTable parse_word2vec_text(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw DataError(source, 1, "missing 'count dim' header");
  auto header = detail::split_ws(detail::strip_cr(line));
  std::optional<std::size_t> count, dim;
  if (header.size() == 2) {
    count = detail::parse_number<std::size_t>(header[0]);
    dim = detail::parse_number<std::size_t>(header[1]);
  }
  if (!count || !dim || *dim == 0) throw DataError(source, 1, "malformed header, expected 'count dim'");

  EmbeddingTable table(*dim);
  std::vector<double> vec(*dim);
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = detail::split_ws(detail::strip_cr(line));
    if (fields.empty()) continue;
    if (fields.size() != *dim + 1) {
      throw DataError(source, lineno, "expected term plus " + std::to_string(*dim) +
                                          " components, got " + std::to_string(fields.size()) + " fields");
    }
    for (std::size_t k = 0; k < *dim; ++k) {
      float v = 0.0F;
      const auto f = fields[k + 1];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw DataError(source, lineno, "bad vector component '" + std::string(f) + "'");
      }
      vec[k] = v;
    }
    try {
      table.add(std::string(fields[0]), vec);
    } catch (const DataError& e) {
      throw DataError(source, lineno, e.what());
    }
  }
  if (table.size() != *count) {
    throw DataError(source + ": header announces " + std::to_string(*count) + " vectors, found " +
                    std::to_string(table.size()));
  }
  return table;
}

inline void write_word2vec_text(const EmbeddingTable& table, std::ostream& out) {
  out << table.size() << ' ' << table.dim() << '\n';
  char buf[32];
  for (std::size_t t = 0; t < table.size(); ++t) {
    out << table.terms()[t];
    for (double v : table.row(t)) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, static_cast<float>(v));
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
}

/// Binary cache layout (little-endian):
///   8 bytes  magic "CPEMBED1"
///   u32      format version (1)
///   u32      dimension
///   u64      term count
///   per term: u32 byte length, UTF-8 bytes, dimension x f32
inline constexpr std::string_view kEmbeddingMagic = "CPEMBED1";
inline constexpr std::uint32_t kEmbeddingVersion = 1;

inline std::string encode_embedding_cache(const EmbeddingTable& table) {
  ByteWriter w;
  w.raw(kEmbeddingMagic);
  w.u32(kEmbeddingVersion);
  w.u32(static_cast<std::uint32_t>(table.dim()));
  w.u64(table.size());
  for (std::size_t t = 0; t < table.size(); ++t) {
    w.str(table.terms()[t]);
    for (double v : table.row(t)) w.f32(static_cast<float>(v));
  }
  return std::string(w.view());
}

inline EmbeddingTable decode_embedding_cache(std::string_view bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.raw(kEmbeddingMagic.size()) != kEmbeddingMagic) throw DataError(source + ": bad embedding cache magic");
  if (const auto v = r.u32(); v != kEmbeddingVersion) {
    throw DataError(source + ": unsupported embedding cache version " + std::to_string(v));
  }
  const std::size_t dim = r.u32();
  const std::uint64_t count = r.u64();
  EmbeddingTable table(dim);
  std::vector<double> vec(dim);
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string term = r.str();
    for (std::size_t k = 0; k < dim; ++k) vec[k] = r.f32();
    table.add(term, vec);
  }
  if (r.remaining() != 0) throw DataError(source + ": trailing bytes after embedding table");
  return table;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_embedding_cache(const EmbeddingTable& table, const std::filesystem::path& path) {
  const std::string bytes = encode_embedding_cache(table);
  write_file_atomically(path, [&](std::ostream& out) { out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); },
                        std::ios::out | std::ios::binary);
}

/// Loads either format, recognizing the binary cache by its magic bytes.
inline EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  if (bytes.compare(0, kEmbeddingMagic.size(), kEmbeddingMagic) == 0) {
    return decode_embedding_cache(bytes, path.string());
  }
  std::istringstream in(bytes);
  return parse_word2vec_text(in, path.string());
}

// ---------------------------------------------------------------------------
// Similarity inputs

inline double cosine(std::span<const double> a, double norm_a, std::span<const double> b, double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
  return dot / (norm_a * norm_b);
}

inline double vector_norm(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  return std::sqrt(sq);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  return cosine(a, vector_norm(a), b, vector_norm(b));
}

/// 1 for identical strings (even out of vocabulary), cosine when both terms
/// have vectors, else 0.
inline double term_sim(const std::string& a, const std::string& b, const EmbeddingTable& table) {
  if (a == b) return 1.0;
  auto ia = table.id(a);
  auto ib = table.id(b);
  if (!ia || !ib) return 0.0;
  return cosine(table.row(*ia), table.norm(*ia), table.row(*ib), table.norm(*ib));
}

/// l_q x l_d term similarity grid; only the first l_d document terms are used.
inline Tensor build_sim_matrix(const Query& query, const Document& doc, const EmbeddingTable& table,
                               std::size_t l_q, std::size_t l_d) {
  if (l_d == 0) throw ConfigError("build_sim_matrix: l_d must be at least 1");
  if (query.tokens.size() > l_q) {
    throw ConfigError("query " + query.query_id + " has " + std::to_string(query.tokens.size()) +
                      " terms, more than l_q = " + std::to_string(l_q));
  }
  const std::size_t d_len = std::min(doc.tokens.size(), l_d);
  Tensor sim({l_q, l_d});
  std::vector<std::optional<std::size_t>> doc_ids(d_len);
  for (std::size_t j = 0; j < d_len; ++j) doc_ids[j] = table.id(doc.tokens[j]);
  for (std::size_t i = 0; i < query.tokens.size(); ++i) {
    const std::string& qt = query.tokens[i];
    const auto qid = table.id(qt);
    for (std::size_t j = 0; j < d_len; ++j) {
      double v = 0.0;
      if (qt == doc.tokens[j]) {
        v = 1.0;
      } else if (qid && doc_ids[j]) {
        v = cosine(table.row(*qid), table.norm(*qid), table.row(*doc_ids[j]), table.norm(*doc_ids[j]));
      }
      sim.at(i, j) = v;
    }
  }
  return sim;
}

/// Mean of the in-vocabulary query term vectors.
inline std::vector<double> query_vec(const Query& query, const EmbeddingTable& table) {
  std::vector<double> sum(table.dim(), 0.0);
  std::size_t count = 0;
  for (const auto& t : query.tokens) {
    auto v = table.find(t);
    if (!v) continue;
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += (*v)[k];
    ++count;
  }
  if (count == 0) {
    throw DataError("query " + query.query_id + ": every term is out of vocabulary");
  }
  for (double& x : sum) x /= static_cast<double>(count);
  return sum;
}

/// Mean vector of the in-vocabulary tokens within `half_window` of position i,
/// dividing by the number of contributing tokens. Zeros if none contribute.
inline std::vector<double> context_vec(const Document& doc, std::size_t i, std::size_t half_window,
                                       const EmbeddingTable& table) {
  if (i >= doc.tokens.size()) {
    throw ConfigError("context_vec: position " + std::to_string(i) + " outside document of length " +
                      std::to_string(doc.tokens.size()));
  }
  std::vector<double> sum(table.dim(), 0.0);
  const std::size_t lo = i >= half_window ? i - half_window : 0;
  const std::size_t hi = std::min(doc.tokens.size() - 1, i + half_window);
  std::size_t count = 0;
  for (std::size_t j = lo; j <= hi; ++j) {
    auto v = table.find(doc.tokens[j]);
    if (!v) continue;
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += (*v)[k];
    ++count;
  }
  if (count > 0) {
    for (double& x : sum) x /= static_cast<double>(count);
  }
  return sum;
}

/// querysim[j] = cosine(context_vec(doc, j), query_vec(query)) for the first
/// l_d positions; zero beyond the document. Window sums come from prefix sums.
inline Tensor build_querysim(const Query& query, const Document& doc, const EmbeddingTable& table,
                             std::size_t half_window, std::size_t l_d) {
  if (l_d == 0) throw ConfigError("build_querysim: l_d must be at least 1");
  const std::vector<double> qv = query_vec(query, table);
  const double qnorm = vector_norm(qv);
  const std::size_t dim = table.dim();
  const std::size_t n = doc.tokens.size();
  const std::size_t d_len = std::min(n, l_d);
  Tensor out({l_d});
  if (d_len == 0) return out;

  // Windows near the truncation point may reach past l_d into the real text.
  const std::size_t span_end = std::min(n, d_len + half_window);
  std::vector<double> prefix((span_end + 1) * dim, 0.0);
  std::vector<std::size_t> prefix_count(span_end + 1, 0);
  for (std::size_t j = 0; j < span_end; ++j) {
    const double* prev = prefix.data() + j * dim;
    double* cur = prefix.data() + (j + 1) * dim;
    auto v = table.find(doc.tokens[j]);
    for (std::size_t k = 0; k < dim; ++k) cur[k] = prev[k] + (v ? (*v)[k] : 0.0);
    prefix_count[j + 1] = prefix_count[j] + (v ? 1 : 0);
  }

  std::vector<double> ctx(dim);
  for (std::size_t j = 0; j < d_len; ++j) {
    const std::size_t lo = j >= half_window ? j - half_window : 0;
    const std::size_t hi = std::min(n - 1, j + half_window);
    const std::size_t count = prefix_count[hi + 1] - prefix_count[lo];
    if (count == 0) continue;
    const double* a = prefix.data() + (hi + 1) * dim;
    const double* b = prefix.data() + lo * dim;
    for (std::size_t k = 0; k < dim; ++k) ctx[k] = (a[k] - b[k]) / static_cast<double>(count);
    out[j] = cosine(ctx, vector_norm(ctx), qv, qnorm);
  }
  return out;
}

/// Per-(query, document) model input.
struct SimInput {
  Tensor sim;       ///< l_q x l_d
  Tensor querysim;  ///< l_d
  Tensor idf;       ///< l_q, normalized IDF per query row, 0 on padded rows
  std::size_t q_len = 0;
  std::size_t d_len = 0;
};

inline Tensor padded_idf(const Query& query, std::size_t l_q) {
  if (query.idf_norm.size() != query.tokens.size()) {
    throw DataError("query " + query.query_id + " has no normalized IDF weights");
  }
  if (query.tokens.size() > l_q) {
    throw ConfigError("query " + query.query_id + " has " + std::to_string(query.tokens.size()) +
                      " terms, more than l_q = " + std::to_string(l_q));
  }
  Tensor idf({l_q});
  for (std::size_t i = 0; i < query.idf_norm.size(); ++i) idf[i] = query.idf_norm[i];
  return idf;
}

/// Builds both model inputs. With `with_querysim` false the context vector is
/// left at zeros and out-of-vocabulary-only queries are accepted.
inline SimInput make_sim_input(const Query& query, const Document& doc, const EmbeddingTable& table,
                               std::size_t l_q, std::size_t l_d, std::size_t half_window,
                               bool with_querysim = true) {
  SimInput in;
  in.sim = build_sim_matrix(query, doc, table, l_q, l_d);
  in.querysim = with_querysim ? build_querysim(query, doc, table, half_window, l_d) : Tensor({l_d});
  in.idf = padded_idf(query, l_q);
  in.q_len = query.tokens.size();
  in.d_len = std::min(doc.tokens.size(), l_d);
  return in;
}

}  // namespace copacrr
