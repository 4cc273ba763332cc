#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "copacrr/corpus.hpp"
#include "support/tempdir.hpp"

using namespace copacrr;
using copacrr::testing::TempDir;

using Tokens = std::vector<std::string>;

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("Jaguar SUV price"), (Tokens{"jaguar", "suv", "price"}));
  EXPECT_EQ(tokenize(""), Tokens{});
  EXPECT_EQ(tokenize("a-b  c"), (Tokens{"a", "b", "c"}));
}

TEST(Tokenize, DigitsKeptPunctuationDropped) {
  EXPECT_EQ(tokenize("  COVID-19, 2nd wave!! "), (Tokens{"covid", "19", "2nd", "wave"}));
  EXPECT_EQ(tokenize("...\t\n"), Tokens{});
}

TEST(Idf, Examples) {
  EXPECT_EQ(compute_idf(10, 10), 0.0);
  EXPECT_NEAR(compute_idf(1, 3), std::log(2.5 / 1.5), 1e-15);
  EXPECT_NEAR(compute_idf(1, 3), 0.5108, 5e-5);
  EXPECT_NEAR(compute_idf(0, 10), 3.0445, 5e-5);
}

TEST(Idf, ClampedAndMonotone) {
  for (std::size_t n = 1; n < 40; ++n) {
    double prev = compute_idf(0, n);
    for (std::size_t df = 1; df <= n; ++df) {
      const double v = compute_idf(df, n);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, prev);
      prev = v;
    }
  }
}

TEST(Idf, RejectsImpossibleCounts) {
  EXPECT_THROW(compute_idf(0, 0), ConfigError);
  EXPECT_THROW(compute_idf(4, 3), ConfigError);
}

TEST(NormalizeIdf, Examples) {
  auto eq = normalize_idf({1.3, 1.3, 1.3, 1.3});
  for (double v : eq) EXPECT_NEAR(v, 0.25, 1e-15);
  auto two = normalize_idf({0.0, std::log(3.0)});
  EXPECT_NEAR(two[0], 0.25, 1e-15);
  EXPECT_NEAR(two[1], 0.75, 1e-15);
  EXPECT_EQ(normalize_idf({2.7}), std::vector<double>{1.0});
  EXPECT_THROW(normalize_idf({}), ConfigError);
}

TEST(NormalizeIdf, SumsToOneAndKeepsArgmax) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 12.0);
  std::uniform_int_distribution<int> len(1, 20);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> x(static_cast<std::size_t>(len(rng)));
    for (double& v : x) v = u(rng);
    const auto y = normalize_idf(x);
    double total = 0.0;
    for (double v : y) {
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
    EXPECT_EQ(std::max_element(x.begin(), x.end()) - x.begin(), std::max_element(y.begin(), y.end()) - y.begin());
  }
}

TEST(CollectionStats, AnnotatesQueries) {
  std::map<std::string, Document> docs{{"a", {"a", {"x", "y", "x"}}}, {"b", {"b", {"y"}}}, {"c", {"c", {"z"}}}};
  CollectionStats stats(docs);
  EXPECT_EQ(stats.n_docs(), 3u);
  EXPECT_EQ(stats.df("x"), 1u);
  EXPECT_EQ(stats.df("y"), 2u);
  EXPECT_EQ(stats.df("missing"), 0u);
  Query q{"q", {"x", "missing"}, {}, ""};
  stats.annotate(q);
  const auto expect = normalize_idf({compute_idf(1, 3), compute_idf(0, 3)});
  ASSERT_EQ(q.idf_norm.size(), 2u);
  EXPECT_EQ(q.idf_norm, expect);
  Query empty{"e", {}, {}, ""};
  EXPECT_THROW(stats.annotate(empty), DataError);
}

TEST(MergeLabels, TrecMapping) {
  EXPECT_EQ(merge_labels(3), MergedGrade::hrel);   // Key
  EXPECT_EQ(merge_labels(4), std::nullopt);        // Nav
  EXPECT_EQ(merge_labels(-2), MergedGrade::nrel);  // Junk
  EXPECT_EQ(merge_labels(0), MergedGrade::nrel);
  EXPECT_EQ(merge_labels(1), MergedGrade::rel);
  EXPECT_EQ(merge_labels(2), MergedGrade::hrel);
}

TEST(MergeLabels, TotalAndIdempotentOnImage) {
  for (int raw : {-2, 0, 1, 2, 3, 4}) {
    auto m = merge_labels(raw);
    if (!m) continue;
    EXPECT_EQ(merge_labels(static_cast<int>(*m)), m);
  }
}

TEST(MergeLabels, UnknownCodeNamesTheCode) {
  for (int raw : {-3, -1, 5, 42}) {
    try {
      merge_labels(raw);
      ADD_FAILURE() << raw;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find(std::to_string(raw)), std::string::npos);
    }
  }
}

TEST(Qrels, ParsesLine) {
  std::istringstream in("101 0 doc7 2\n\n102 0 doc1 4\r\n102 0 doc2 -2\n");
  auto j = parse_qrels(in);
  EXPECT_EQ(j.raw("101", "doc7"), 2);
  EXPECT_EQ(j.merged("101", "doc7"), MergedGrade::hrel);
  EXPECT_EQ(j.merged("102", "doc1"), std::nullopt);
  EXPECT_EQ(j.merged_or_zero("102", "doc1"), 0);
  EXPECT_EQ(j.merged_or_zero("102", "unjudged"), 0);
  EXPECT_EQ(j.merged("102", "doc2"), MergedGrade::nrel);
  EXPECT_EQ(j.size(), 3u);
  EXPECT_EQ(j.merged_view("102").size(), 1u);
  EXPECT_EQ(j.query_ids(), (Tokens{"101", "102"}));
}

TEST(Qrels, MalformedLinesReportLineNumber) {
  const std::vector<std::pair<std::string, std::size_t>> cases{
      {"101 0 doc7 2\n101 0 doc8\n", 2}, {"\n\n101 0 doc7 x\n", 3}, {"101 0 d 2\n101 0 e 9\n", 2}};
  for (const auto& [text, line] : cases) {
    std::istringstream in(text);
    try {
      parse_qrels(in, "q.txt");
      ADD_FAILURE() << text;
    } catch (const DataError& e) {
      EXPECT_EQ(e.line(), line);
      EXPECT_NE(std::string(e.what()).find("q.txt:" + std::to_string(line)), std::string::npos);
    }
  }
}

TEST(Qrels, WriteReadRoundTrip) {
  Judgments j;
  j.set("1", "a", 3);
  j.set("1", "b", -2);
  j.set("2", "c", 4);
  std::stringstream s;
  write_qrels(j, s);
  auto back = parse_qrels(s);
  EXPECT_EQ(back.raw_view("1"), j.raw_view("1"));
  EXPECT_EQ(back.raw_view("2"), j.raw_view("2"));
}

TEST(Run, RoundTripKeepsTriples) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  std::vector<RankedList> lists;
  for (int q = 0; q < 5; ++q) {
    RankedList l{"q" + std::to_string(q), {}};
    for (int d = 0; d < 30; ++d) {
      // Six decimals survive formatting exactly.
      const double s = std::round(u(rng) * 1e6) / 1e6;
      l.entries.push_back({"d" + std::to_string(d), s, 0});
    }
    std::stable_sort(l.entries.begin(), l.entries.end(), [](auto& a, auto& b) { return a.score > b.score; });
    renumber(l);
    lists.push_back(l);
  }
  std::stringstream s;
  write_run(lists, s, "tag");
  RunDiagnostics diag;
  auto back = parse_run(s, "<run>", &diag);
  EXPECT_TRUE(diag.resorted_queries.empty());
  ASSERT_EQ(back.size(), lists.size());
  for (std::size_t i = 0; i < lists.size(); ++i) {
    EXPECT_EQ(back[i].query_id, lists[i].query_id);
    ASSERT_EQ(back[i].entries.size(), lists[i].entries.size());
    for (std::size_t k = 0; k < lists[i].entries.size(); ++k) {
      EXPECT_EQ(back[i].entries[k].doc_id, lists[i].entries[k].doc_id);
      EXPECT_EQ(back[i].entries[k].score, lists[i].entries[k].score);
      EXPECT_EQ(back[i].entries[k].rank, k + 1);
    }
  }
}

TEST(Run, WriteEmitsRanksWithNonIncreasingScores) {
  RankedList l{"7", {{"a", 0.1, 1}, {"b", 0.9, 2}, {"c", 0.5, 3}}};
  std::stringstream s;
  write_run({l}, s, "x");
  EXPECT_EQ(s.str(), "7 Q0 b 1 0.900000 x\n7 Q0 c 2 0.500000 x\n7 Q0 a 3 0.100000 x\n");
}

TEST(Run, RankScoreDisagreementIsResorted) {
  std::istringstream in("1 Q0 a 1 0.1 t\n1 Q0 b 2 0.5 t\n1 Q0 c 3 0.3 t\n2 Q0 z 1 1 t\n");
  RunDiagnostics diag;
  auto lists = parse_run(in, "<run>", &diag);
  ASSERT_EQ(lists.size(), 2u);
  EXPECT_EQ(lists[0].doc_ids(), (Tokens{"b", "c", "a"}));
  EXPECT_EQ(lists[0].entries[0].rank, 1u);
  EXPECT_EQ(diag.resorted_queries, Tokens{"1"});
}

TEST(Run, OutOfOrderLinesFollowRank) {
  std::istringstream in("1 Q0 b 2 0.5 t\n1 Q0 a 1 0.9 t\n");
  auto lists = parse_run(in);
  EXPECT_EQ(lists[0].doc_ids(), (Tokens{"a", "b"}));
}

TEST(Run, MalformedLinesReportLineNumber) {
  const std::vector<std::pair<std::string, std::size_t>> cases{
      {"1 Q0 a 1 0.5\n", 1},
      {"1 Q0 a 1 0.5 t\n1 Q0 b x 0.5 t\n", 2},
      {"1 Q0 a 1 nan t\n", 1},
      {"1 Q0 a 1 0.5 t\n\n1 Q0 a 2 0.4 t\n", 3}};
  for (const auto& [text, line] : cases) {
    std::istringstream in(text);
    try {
      parse_run(in);
      ADD_FAILURE() << text;
    } catch (const DataError& e) {
      EXPECT_EQ(e.line(), line) << text;
    }
  }
}

TEST(Files, DocumentsFromTsvAndDirectory) {
  TempDir dir;
  const auto tsv = dir.write("docs.tsv", "d1\tThe Jaguar, a cat.\nd2\tSUV prices\r\n\n");
  auto docs = read_documents(tsv);
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs["d1"].tokens, (Tokens{"the", "jaguar", "a", "cat"}));
  EXPECT_EQ(docs["d2"].tokens, (Tokens{"suv", "prices"}));

  dir.write("dir/d1.txt", "The Jaguar,\na cat.");
  dir.write("dir/d2.txt", "SUV prices");
  dir.write("dir/ignored.md", "nope");
  auto from_dir = read_documents(dir / "dir");
  ASSERT_EQ(from_dir.size(), 2u);
  EXPECT_EQ(from_dir["d1"].tokens, docs["d1"].tokens);

  EXPECT_THROW(read_documents(dir.write("bad.tsv", "d1 no tab\n")), DataError);
  EXPECT_THROW(read_documents(dir.write("dup.tsv", "d1\ta\nd1\tb\n")), DataError);
  EXPECT_THROW(read_documents(dir / "missing.tsv"), DataError);
}

TEST(Files, QueriesWithOptionalGroup) {
  TempDir dir;
  auto qs = read_queries(dir.write("q.tsv", "101\tJaguar SUV price\t2011\n102\tcats\n"));
  ASSERT_EQ(qs.size(), 2u);
  EXPECT_EQ(qs[0].tokens, (Tokens{"jaguar", "suv", "price"}));
  EXPECT_EQ(qs[0].group, "2011");
  EXPECT_EQ(qs[1].group, "");

  std::stringstream s;
  write_queries(qs, s);
  auto back = read_queries(dir.write("q2.tsv", s.str()));
  EXPECT_EQ(back[0].tokens, qs[0].tokens);
  EXPECT_EQ(back[0].group, "2011");

  try {
    read_queries(dir.write("empty.tsv", "1\tok\n2\t--\n"));
    ADD_FAILURE();
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(read_queries(dir.write("dup.tsv", "1\ta\n1\tb\n")), DataError);
}

TEST(Files, AtomicWriteLeavesNoTemporary) {
  TempDir dir;
  write_run({RankedList{"1", {{"a", 1.0, 1}}}}, dir / "sub/out.run", "t");
  EXPECT_TRUE(std::filesystem::exists(dir / "sub/out.run"));
  EXPECT_FALSE(std::filesystem::exists(dir / "sub/out.run.tmp"));
}
