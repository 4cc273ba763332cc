#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "copacrr/embedding.hpp"
#include "support/tempdir.hpp"

using namespace copacrr;
using copacrr::testing::TempDir;

namespace {

EmbeddingTable table_of(std::size_t dim, const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  EmbeddingTable t(dim);
  for (const auto& [term, v] : rows) t.add(term, v);
  return t;
}

/// Random vocabulary t0..t{n-1}; values are float-representable.
EmbeddingTable random_table(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<float> z;
  EmbeddingTable t(dim);
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& x : v) x = z(rng);
    t.add("t" + std::to_string(i), v);
  }
  return t;
}

/// Tokens drawn from the vocabulary plus an "oov" fraction of unknown words.
std::vector<std::string> random_tokens(std::size_t len, std::size_t vocab, double oov, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, vocab - 1);
  std::bernoulli_distribution unknown(oov);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < len; ++i) {
    out.push_back(unknown(rng) ? "zz" + std::to_string(pick(rng)) : "t" + std::to_string(pick(rng)));
  }
  return out;
}

double direct_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return na == 0 || nb == 0 ? 0.0 : dot / std::sqrt(na * nb);
}

/// querysim at j without any shared window state.
double direct_querysim(const Query& q, const Document& d, const EmbeddingTable& t, std::size_t w, std::size_t j) {
  std::vector<double> qv(t.dim(), 0.0), cv(t.dim(), 0.0);
  double nq = 0, nc = 0;
  for (const auto& term : q.tokens) {
    if (auto v = t.find(term)) {
      for (std::size_t k = 0; k < t.dim(); ++k) qv[k] += (*v)[k];
      ++nq;
    }
  }
  for (std::size_t p = 0; p < d.tokens.size(); ++p) {
    const bool inside = p + w >= j && p <= j + w;
    if (!inside) continue;
    if (auto v = t.find(d.tokens[p])) {
      for (std::size_t k = 0; k < t.dim(); ++k) cv[k] += (*v)[k];
      ++nc;
    }
  }
  for (double& x : qv) x /= nq;
  if (nc > 0) {
    for (double& x : cv) x /= nc;
  }
  return direct_cosine(cv, qv);
}

}  // namespace

TEST(TermSim, Examples) {
  auto t = table_of(2, {{"a", {1, 0}}, {"b", {0, 3}}, {"c", {2, 2}}});
  EXPECT_EQ(term_sim("a", "a", t), 1.0);
  EXPECT_EQ(term_sim("oov", "oov", t), 1.0);
  EXPECT_EQ(term_sim("a", "b", t), 0.0);
  EXPECT_EQ(term_sim("a", "oov", t), 0.0);
  EXPECT_EQ(term_sim("oov", "b", t), 0.0);
  EXPECT_NEAR(term_sim("a", "c", t), std::sqrt(0.5), 1e-15);
}

TEST(TermSim, TableReportsOovDistinctly) {
  auto t = table_of(2, {{"zero", {0, 0}}});
  EXPECT_TRUE(t.find("zero").has_value());
  EXPECT_FALSE(t.find("nope").has_value());
  EXPECT_EQ(term_sim("zero", "zero2", t), 0.0);
  EXPECT_THROW(t.add("bad", std::vector<double>{1.0}), DataError);
  EXPECT_THROW(t.add("zero", std::vector<double>{1.0, 0.0}), DataError);
}

TEST(SimMatrix, ExactMatchAndPadding) {
  auto t = table_of(2, {{"a", {1, 0}}, {"b", {0, 1}}});
  Query q{"q", {"a"}, {1.0}, ""};
  Document d{"d", {"a", "b"}};
  auto sim = build_sim_matrix(q, d, t, 2, 3);
  ASSERT_EQ(sim.shape(), (Shape{2, 3}));
  const std::vector<double> expect{1, 0, 0, 0, 0, 0};
  EXPECT_EQ(std::vector<double>(sim.values().begin(), sim.values().end()), expect);
}

TEST(SimMatrix, FirstKTruncation) {
  std::mt19937_64 rng(1);
  auto t = random_table(50, 8, rng);
  Query q{"q", {"t1", "t2", "t3"}, {}, ""};
  Document d{"d", random_tokens(900, 50, 0.1, rng)};
  Document head{"h", std::vector<std::string>(d.tokens.begin(), d.tokens.begin() + 800)};
  auto full = build_sim_matrix(q, d, t, 4, 800);
  auto cut = build_sim_matrix(q, head, t, 4, 800);
  EXPECT_EQ(std::vector<double>(full.values().begin(), full.values().end()),
            std::vector<double>(cut.values().begin(), cut.values().end()));
  // Changing the tail never matters.
  for (std::size_t j = 800; j < 900; ++j) d.tokens[j] = "t1";
  auto changed = build_sim_matrix(q, d, t, 4, 800);
  EXPECT_EQ(std::vector<double>(full.values().begin(), full.values().end()),
            std::vector<double>(changed.values().begin(), changed.values().end()));
}

TEST(SimMatrix, EmptyDocumentIsZero) {
  auto t = table_of(1, {{"a", {1}}});
  auto sim = build_sim_matrix(Query{"q", {"a"}, {}, ""}, Document{"d", {}}, t, 3, 5);
  for (double v : sim.values()) EXPECT_EQ(v, 0.0);
  auto qs = build_querysim(Query{"q", {"a"}, {}, ""}, Document{"d", {}}, t, 2, 5);
  for (double v : qs.values()) EXPECT_EQ(v, 0.0);
}

TEST(SimMatrix, QueryLongerThanRowsIsConfigError) {
  auto t = table_of(1, {{"a", {1}}});
  EXPECT_THROW(build_sim_matrix(Query{"q", {"a", "a", "a"}, {}, ""}, Document{"d", {"a"}}, t, 2, 5), ConfigError);
  EXPECT_THROW(build_sim_matrix(Query{"q", {"a"}, {}, ""}, Document{"d", {"a"}}, t, 2, 0), ConfigError);
}

TEST(QueryVec, Examples) {
  auto t = table_of(2, {{"v", {1, 2}}, {"neg", {-1, -2}}, {"w", {3, 0}}});
  EXPECT_EQ(query_vec(Query{"q", {"v"}, {}, ""}, t), (std::vector<double>{1, 2}));
  EXPECT_EQ(query_vec(Query{"q", {"v", "neg"}, {}, ""}, t), (std::vector<double>{0, 0}));
  EXPECT_EQ(query_vec(Query{"q", {"v", "w", "oov"}, {}, ""}, t), (std::vector<double>{2, 1}));
  EXPECT_THROW(query_vec(Query{"q", {"oov", "x"}, {}, ""}, t), DataError);
}

TEST(ContextVec, Examples) {
  auto t = table_of(2, {{"v", {1, 2}}, {"neg", {-1, -2}}, {"w", {3, 0}}});
  EXPECT_EQ(context_vec(Document{"d", {"v", "v", "v", "v"}}, 2, 1, t), (std::vector<double>{1, 2}));
  // Clipped at both edges: positions 0..2 only.
  EXPECT_EQ(context_vec(Document{"d", {"v", "w", "w"}}, 0, 4, t), (std::vector<double>{7.0 / 3.0, 2.0 / 3.0}));
  auto third = context_vec(Document{"d", {"v", "v", "neg"}}, 1, 1, t);
  EXPECT_NEAR(third[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(third[1], 2.0 / 3.0, 1e-15);
  EXPECT_EQ(context_vec(Document{"d", {"oov", "oov"}}, 0, 1, t), (std::vector<double>{0, 0}));
  EXPECT_THROW(context_vec(Document{"d", {"v"}}, 1, 1, t), ConfigError);
}

TEST(ContextVec, ZeroWindowIsOwnEmbedding) {
  std::mt19937_64 rng(2);
  auto t = random_table(20, 5, rng);
  Document d{"d", random_tokens(30, 20, 0.0, rng)};
  for (std::size_t i = 0; i < d.tokens.size(); ++i) {
    auto v = context_vec(d, i, 0, t);
    auto e = *t.find(d.tokens[i]);
    EXPECT_EQ(v, std::vector<double>(e.begin(), e.end()));
  }
}

TEST(QuerySim, Examples) {
  auto t = table_of(2, {{"a", {1, 0}}, {"b", {0, 1}}, {"c", {1, 1}}});
  Query q{"q", {"a"}, {1.0}, ""};
  auto ones = build_querysim(q, Document{"d", {"a", "a", "a"}}, t, 1, 5);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(ones[j], j < 3 ? 1.0 : 0.0, 1e-15);
  auto zeros = build_querysim(q, Document{"d", {"b", "b", "b", "b"}}, t, 2, 4);
  for (double v : zeros.values()) EXPECT_EQ(v, 0.0);
  auto mixed = build_querysim(q, Document{"d", {"a", "b", "c", "b"}}, t, 1, 4);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_GT(mixed[j], 0.0);
    EXPECT_LT(mixed[j], 1.0);
    EXPECT_NEAR(mixed[j], direct_querysim(q, Document{"d", {"a", "b", "c", "b"}}, t, 1, j), 1e-12);
  }
}

TEST(QuerySim, MatchesDirectOracleOnRandomInputs) {
  std::mt19937_64 rng(5);
  auto t = random_table(40, 6, rng);
  std::uniform_int_distribution<std::size_t> len(0, 60), w(0, 5), ld(1, 50);
  for (int trial = 0; trial < 300; ++trial) {
    Query q{"q", random_tokens(3, 40, 0.2, rng), {}, ""};
    q.tokens.push_back("t0");
    Document d{"d", random_tokens(len(rng), 40, 0.3, rng)};
    const std::size_t wc = w(rng), l_d = ld(rng);
    auto qs = build_querysim(q, d, t, wc, l_d);
    for (std::size_t j = 0; j < l_d; ++j) {
      const double expect = j < d.tokens.size() ? direct_querysim(q, d, t, wc, j) : 0.0;
      ASSERT_NEAR(qs[j], expect, 1e-12) << "trial " << trial << " j " << j;
    }
  }
}

TEST(SimInputProperties, RangePaddingAndScaleInvariance) {
  std::mt19937_64 rng(9);
  auto t = random_table(30, 7, rng);
  auto scaled = t.scaled(3.7);
  std::uniform_int_distribution<std::size_t> len(0, 40), qlen(1, 5);
  for (int trial = 0; trial < 200; ++trial) {
    Query q{"q", random_tokens(qlen(rng), 30, 0.2, rng), {}, ""};
    q.tokens.push_back("t3");
    q.idf_norm = std::vector<double>(q.tokens.size(), 1.0 / static_cast<double>(q.tokens.size()));
    Document d{"d", random_tokens(len(rng), 30, 0.2, rng)};
    const std::size_t l_q = 8, l_d = 25, wc = 2;
    auto a = make_sim_input(q, d, t, l_q, l_d, wc);
    auto b = make_sim_input(q, d, scaled, l_q, l_d, wc);
    EXPECT_EQ(a.q_len, q.tokens.size());
    EXPECT_EQ(a.d_len, std::min(d.tokens.size(), l_d));
    for (std::size_t i = 0; i < l_q; ++i) {
      for (std::size_t j = 0; j < l_d; ++j) {
        const double v = a.sim.at(i, j);
        if (i >= a.q_len || j >= a.d_len) {
          ASSERT_EQ(v, 0.0);
        } else {
          ASSERT_GE(v, -1.0);
          ASSERT_LE(v, 1.0);
        }
        ASSERT_NEAR(v, b.sim.at(i, j), 1e-9);
      }
      if (i >= a.q_len) {
        EXPECT_EQ(a.idf[i], 0.0);
      }
    }
    for (std::size_t j = 0; j < l_d; ++j) {
      if (j >= a.d_len) {
        ASSERT_EQ(a.querysim[j], 0.0);
      }
      ASSERT_GE(a.querysim[j], -1.0);
      ASSERT_LE(a.querysim[j], 1.0);
      ASSERT_NEAR(a.querysim[j], b.querysim[j], 1e-9);
    }
  }
}

TEST(SimInput, WithoutQuerysimAcceptsOovQueries) {
  auto t = table_of(1, {{"a", {1}}});
  Query q{"q", {"oov"}, {1.0}, ""};
  auto in = make_sim_input(q, Document{"d", {"oov", "a"}}, t, 2, 3, 1, false);
  EXPECT_EQ(in.sim.at(0, 0), 1.0);
  for (double v : in.querysim.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(make_sim_input(q, Document{"d", {"a"}}, t, 2, 3, 1, true), DataError);
}

TEST(EmbeddingFiles, TextAndCacheRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(4);
  auto t = random_table(25, 9, rng);
  std::stringstream text;
  write_word2vec_text(t, text);
  const auto txt = dir.write("vec.txt", text.str());
  auto from_text = load_embeddings(txt);
  write_embedding_cache(t, dir / "vec.bin");
  auto from_bin = load_embeddings(dir / "vec.bin");
  ASSERT_EQ(from_text.size(), t.size());
  ASSERT_EQ(from_bin.size(), t.size());
  EXPECT_EQ(from_text.fingerprint(), t.fingerprint());
  EXPECT_EQ(from_bin.fingerprint(), t.fingerprint());
  EXPECT_NE(t.scaled(2.0).fingerprint(), t.fingerprint());
}

TEST(EmbeddingFiles, MalformedInputsAreDataErrors) {
  TempDir dir;
  auto load_text = [&](const std::string& s) { return load_embeddings(dir.write("e.txt", s)); };
  EXPECT_THROW(load_text(""), DataError);
  EXPECT_THROW(load_text("2\n"), DataError);
  EXPECT_THROW(load_text("1 2\na 1\n"), DataError);
  EXPECT_THROW(load_text("1 2\na 1 x\n"), DataError);
  EXPECT_THROW(load_text("2 2\na 1 2\n"), DataError);
  EXPECT_THROW(load_text("2 1\na 1\na 2\n"), DataError);
  try {
    load_text("2 2\na 1 2\nb 1\n");
    ADD_FAILURE();
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::mt19937_64 rng(4);
  auto bytes = encode_embedding_cache(random_table(3, 2, rng));
  EXPECT_THROW(decode_embedding_cache(bytes.substr(0, bytes.size() - 2), "x"), DataError);
  EXPECT_THROW(decode_embedding_cache(bytes + "z", "x"), DataError);
  bytes[8] = 9;
  EXPECT_THROW(decode_embedding_cache(bytes, "x"), DataError);
  EXPECT_THROW(load_embeddings(dir / "missing"), DataError);
}
