#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "copacrr/cli.hpp"
#include "support/tempdir.hpp"

using namespace copacrr;
using copacrr::testing::slurp;
using copacrr::testing::TempDir;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "copacrr");
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// Two queries with three judged documents each and a run over them.
struct TinyCorpus {
  TempDir dir;
  TinyCorpus() {
    dir.write("emb.txt",
              "6 3\njaguar 1 0 0\ncar 0.9 0.1 0\ncat 0 1 0\nprice 0 0 1\ncost 0 0.2 0.9\nanimal 0.1 0.9 0\n");
    dir.write("docs.tsv",
              "a\tjaguar car price list\nb\tcat animal facts\nc\tcar cost guide\n"
              "d\tjaguar animal habitat\ne\tcat food\nf\tprice of jaguar cars\n");
    dir.write("queries.tsv", "1\tjaguar price\tg1\n2\tjaguar animal\tg2\n");
    dir.write("qrels.txt", "1 0 a 2\n1 0 b 0\n1 0 c 1\n2 0 d 2\n2 0 e 1\n2 0 f 0\n");
    dir.write("run.txt", "1 Q0 b 1 3 r\n1 Q0 c 2 2 r\n1 Q0 a 3 1 r\n2 Q0 f 1 3 r\n2 Q0 e 2 2 r\n2 Q0 d 3 1 r\n");
  }
  std::string p(const std::string& name) const { return (dir / name).string(); }
  std::vector<std::string> corpus_flags() const {
    return {"--embeddings", p("emb.txt"), "--docs", p("docs.tsv"), "--queries", p("queries.tsv"),
            "--qrels",      p("qrels.txt"), "--runs", p("run.txt")};
  }
};

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::vector<std::string> kTinyModel{"--l_q", "3", "--l_d", "6", "--n_f", "2", "--n_s", "2", "--n_c", "2",
                                          "--w_c", "1", "--hidden", "4"};

struct EnvGuard {
  EnvGuard() { ::unsetenv(kCacheDirEnv); }
  ~EnvGuard() { ::unsetenv(kCacheDirEnv); }
};

}  // namespace

TEST(Config, ParsesFileWithCommentsAndLists) {
  RunConfig c;
  std::istringstream in(
      "# experiment\nl_q = 5\n  variant = CD-PACRR  \nruns = a.run, b.run\nhidden = 8,4\n"
      "learning_rate = 0.01 # inline\ntie_half = yes\ngrades = raw\nloss = max_margin\n\n");
  apply_config_text(c, in, "exp.cfg");
  EXPECT_EQ(c.model.l_q, 5u);
  EXPECT_TRUE(c.model.cascade);
  EXPECT_TRUE(c.model.disamb);
  EXPECT_FALSE(c.model.shuffle);
  EXPECT_EQ(c.runs, (std::vector<std::string>{"a.run", "b.run"}));
  EXPECT_EQ(c.model.hidden_sizes, (std::vector<std::size_t>{8, 4}));
  EXPECT_EQ(c.train.learning_rate, 0.01);
  EXPECT_TRUE(c.tie_half);
  EXPECT_EQ(c.grade_mode, GradeMode::raw);
  EXPECT_EQ(c.model.loss, LossKind::max_margin);
}

TEST(Config, ErrorsNameSourceLineAndKey) {
  const std::vector<std::string> bad{"nonsense = 1", "l_q = -3", "l_q", "cascade = maybe", "variant = X-PACRR",
                                     "learning_rate = inf", "pairs = some", "loss = l2"};
  for (const auto& line : bad) {
    RunConfig c;
    std::istringstream in("l_d = 10\n" + line + "\n");
    try {
      apply_config_text(c, in, "exp.cfg");
      ADD_FAILURE() << line;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find("exp.cfg:2:"), std::string::npos) << e.what();
    }
  }
  RunConfig c;
  EXPECT_THROW(apply_config_file(c, "/nonexistent/exp.cfg"), ConfigError);
}

TEST(Config, DumpRoundTrips) {
  RunConfig c;
  c.model.l_q = 7;
  c.model.hidden_sizes = {3, 2, 1};
  c.model.shuffle = false;
  c.train.learning_rate = 0.0003;
  c.train_groups = {"2010", "2011"};
  c.runs = {"x.run"};
  c.grade_mode = GradeMode::raw;
  const std::string text = dump_config(c);
  RunConfig back;
  std::istringstream in(text);
  apply_config_text(back, in, "dump");
  EXPECT_EQ(dump_config(back), text);
  EXPECT_EQ(back.train.learning_rate, 0.0003);
  EXPECT_EQ(back.model.variant_name(), "CD-PACRR");
}

TEST(Config, PrecedenceDefaultsFileEnvFlags) {
  EnvGuard guard;
  TempDir dir;
  const auto file = dir.write("exp.cfg", "l_q = 5\ncache_dir = from-file\nvariant = PACRR\nseed = 9\n");
  RunConfig c = resolve_config(file.string(), {});
  EXPECT_EQ(c.model.l_q, 5u);
  EXPECT_EQ(c.cache_dir, "from-file");
  EXPECT_EQ(c.model.l_d, 800u);
  ::setenv(kCacheDirEnv, "from-env", 1);
  c = resolve_config(file.string(), {});
  EXPECT_EQ(c.cache_dir, "from-env");
  c = resolve_config(file.string(), {{"cache_dir", "from-flag"}, {"l_q", "6"}, {"shuffle", "true"}, {"variant", "C-PACRR"}});
  EXPECT_EQ(c.cache_dir, "from-flag");
  EXPECT_EQ(c.model.l_q, 6u);
  // variant first, then the individual toggle.
  EXPECT_EQ(c.model.variant_name(), "CS-PACRR");
  EXPECT_EQ(c.train.seed, 9u);
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  auto help = cli({"train", "--help"});
  EXPECT_EQ(help.code, kExitOk);
  EXPECT_NE(help.out.find("--learning_rate"), std::string::npos);
  EXPECT_EQ(cli({}).code, kExitConfig);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(cli({"prepare", "--no-such-flag", "1"}).code, kExitConfig);
  // rerank takes no model shape flags: they come from the checkpoint.
  EXPECT_EQ(cli({"rerank", "--l_q", "4"}).code, kExitConfig);
}

TEST(Cli, ExitCodesByFailureKind) {
  EnvGuard guard;
  TinyCorpus t;
  auto no_ckpt = cli(std::vector<std::string>{"train"} + t.corpus_flags() +
                     std::vector<std::string>{"--train_groups", "g1", "--validation_groups", "g2"});
  EXPECT_EQ(no_ckpt.code, kExitConfig);
  EXPECT_NE(no_ckpt.err.find("checkpoint"), std::string::npos);
  auto bad_value = cli({"prepare", "--l_q", "abc"});
  EXPECT_EQ(bad_value.code, kExitConfig);
  auto missing_file = cli({"prepare", "--embeddings", t.p("nope.txt")});
  EXPECT_EQ(missing_file.code, kExitData);
  EXPECT_EQ(cli({"prepare", "--config", t.p("nope.cfg")}).code, kExitConfig);
  t.dir.write("broken.tsv", "no tab here\n");
  auto broken = cli({"prepare", "--embeddings", t.p("emb.txt"), "--docs", t.p("broken.tsv"), "--queries",
                     t.p("queries.tsv"), "--qrels", t.p("qrels.txt"), "--cache_dir", t.p("cache")});
  EXPECT_EQ(broken.code, kExitData);
  EXPECT_NE(broken.err.find("broken.tsv:1"), std::string::npos);
  auto diverge = cli(std::vector<std::string>{"train"} + t.corpus_flags() + kTinyModel +
                     std::vector<std::string>{"--train_groups", "g1", "--validation_groups", "g2", "--checkpoint",
                                              t.p("m.ckpt"), "--learning_rate", "1e300", "--iterations", "10",
                                              "--batches_per_iteration", "2", "--batch_size", "2"});
  EXPECT_EQ(diverge.code, kExitNumerical) << diverge.err;
}

TEST(Cli, PrintConfigShowsResolvedValues) {
  EnvGuard guard;
  auto r = cli({"train", "--variant", "D-PACRR", "--l_q", "4", "--print-config"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("l_q = 4\n"), std::string::npos);
  EXPECT_NE(r.out.find("cascade = false\n"), std::string::npos);
  EXPECT_NE(r.out.find("disamb = true\n"), std::string::npos);
}

TEST(Prepare, CountsHitsAndInvalidation) {
  EnvGuard guard;
  TinyCorpus t;
  const auto base = std::vector<std::string>{"prepare"} + t.corpus_flags() +
                    std::vector<std::string>{"--cache_dir", t.p("cache"), "--l_q", "3", "--l_d", "6"};
  auto first = cli(base);
  ASSERT_EQ(first.code, kExitOk) << first.err;
  EXPECT_NE(first.out.find("inputs 6\n"), std::string::npos) << first.out;
  EXPECT_NE(first.out.find("sim_cache_hits 0\n"), std::string::npos);
  auto again = cli(base);
  EXPECT_NE(again.out.find("sim_cache_hits 6\n"), std::string::npos) << again.out;
  EXPECT_NE(again.out.find("querysim_cache_hits 6\n"), std::string::npos);
  auto wider = cli(base + std::vector<std::string>{"--w_c", "2"});
  EXPECT_NE(wider.out.find("sim_cache_hits 6\n"), std::string::npos) << wider.out;
  EXPECT_NE(wider.out.find("querysim_cache_hits 0\n"), std::string::npos);
  auto longer = cli(std::vector<std::string>{"prepare"} + t.corpus_flags() +
                    std::vector<std::string>{"--cache_dir", t.p("cache"), "--l_q", "3", "--l_d", "7"});
  ASSERT_EQ(longer.code, kExitOk) << longer.err;
  EXPECT_NE(longer.out.find("sim_cache_hits 0\n"), std::string::npos) << longer.out;
}

TEST(Prepare, EnvironmentRedirectsCacheAndCorruptEntriesAreMisses) {
  EnvGuard guard;
  TinyCorpus t;
  ::setenv(kCacheDirEnv, t.p("envcache").c_str(), 1);
  const auto base = std::vector<std::string>{"prepare"} + t.corpus_flags() +
                    std::vector<std::string>{"--l_q", "3", "--l_d", "6"};
  ASSERT_EQ(cli(base).code, kExitOk);
  ASSERT_TRUE(std::filesystem::exists(t.dir / "envcache/sim"));
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(t.dir / "envcache/sim")) {
    if (files++ == 0) {
      std::string bytes = slurp(e.path());
      bytes[bytes.size() / 2] ^= 0x11;
      std::ofstream(e.path(), std::ios::binary) << bytes;
    }
  }
  EXPECT_EQ(files, 6u);
  auto r = cli(base);
  EXPECT_NE(r.out.find("sim_cache_hits 5\n"), std::string::npos) << r.out;
  EXPECT_NE(cli(base).out.find("sim_cache_hits 6\n"), std::string::npos);
}

TEST(Pipeline, TrainRerankEval) {
  EnvGuard guard;
  TinyCorpus t;
  const auto train_flags = std::vector<std::string>{"train"} + t.corpus_flags() + kTinyModel +
                           std::vector<std::string>{"--train_groups", "g1", "--validation_groups", "g2",
                                                    "--checkpoint", t.p("out/m.ckpt"), "--log", t.p("out/log.jsonl"),
                                                    "--iterations", "3", "--batches_per_iteration", "2",
                                                    "--batch_size", "4", "--cache_dir", t.p("cache")};
  auto train = cli(train_flags);
  ASSERT_EQ(train.code, kExitOk) << train.err;
  auto log = slurp(t.dir / "out/log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
  EXPECT_NE(log.find("\"validation_err\""), std::string::npos);

  auto rerank = cli({"rerank", "--checkpoint", t.p("out/m.ckpt"), "--embeddings", t.p("emb.txt"), "--docs",
                     t.p("docs.tsv"), "--queries", t.p("queries.tsv"), "--runs", t.p("run.txt"), "--output",
                     t.p("out/reranked.run")});
  ASSERT_EQ(rerank.code, kExitOk) << rerank.err;
  RunDiagnostics diag;
  auto lists = read_run(t.dir / "out/reranked.run", &diag);
  EXPECT_TRUE(diag.resorted_queries.empty());
  ASSERT_EQ(lists.size(), 2u);
  for (const auto& l : lists) EXPECT_EQ(l.entries.size(), 3u);
  std::ostringstream rewritten;
  write_run(lists, rewritten, "copacrr-Co-PACRR");
  EXPECT_EQ(rewritten.str(), slurp(t.dir / "out/reranked.run"));

  // Same inputs, same bytes.
  ASSERT_EQ(cli(train_flags).code, kExitOk);
  const auto first = slurp(t.dir / "out/reranked.run");
  ASSERT_EQ(cli({"rerank", "--checkpoint", t.p("out/m.ckpt"), "--embeddings", t.p("emb.txt"), "--docs",
                 t.p("docs.tsv"), "--queries", t.p("queries.tsv"), "--runs", t.p("run.txt"), "--output",
                 t.p("out/reranked.run")})
                .code,
            kExitOk);
  EXPECT_EQ(slurp(t.dir / "out/reranked.run"), first);

  auto eval = cli({"eval", "--qrels", t.p("qrels.txt"), "--runs", t.p("run.txt") + "," + t.p("out/reranked.run"),
                   "--report", t.p("out/report.jsonl"), "--output", t.p("out/table.txt")});
  ASSERT_EQ(eval.code, kExitOk) << eval.err;
  EXPECT_EQ(slurp(t.dir / "out/table.txt"), eval.out);
  EXPECT_FALSE(slurp(t.dir / "out/report.jsonl").empty());

  auto with_model = cli({"eval", "--qrels", t.p("qrels.txt"), "--runs", t.p("run.txt"), "--checkpoint",
                         t.p("out/m.ckpt"), "--embeddings", t.p("emb.txt"), "--docs", t.p("docs.tsv"),
                         "--queries", t.p("queries.tsv")});
  ASSERT_EQ(with_model.code, kExitOk) << with_model.err;
  EXPECT_NE(with_model.out.find("improved_fraction"), std::string::npos);
}

TEST(Eval, IdentityScorerReproducesInputErr) {
  EnvGuard guard;
  TinyCorpus t;
  RunConfig c;
  c.qrels = t.p("qrels.txt");
  c.runs = {t.p("run.txt")};
  std::ostringstream out, err;
  auto r = cmd_eval(c, out, err);
  ASSERT_EQ(r.runs.size(), 1u);
  EXPECT_EQ(r.runs[0].err_input, r.runs[0].err_reranked);
  // Hand computation: query 1 grades [0,1,2], query 2 grades [0,1,2].
  const double expect = 0.25 / 2 + 0.75 * 0.75 / 3;
  EXPECT_NEAR(r.runs[0].err_input, expect, 1e-12);
  EXPECT_FALSE(r.summary.has_value());
}

TEST(Ablate, VariantNamesAndDeterminism) {
  EnvGuard guard;
  TempDir dir;
  RunConfig s;
  s.output = (dir / "corpus").string();
  s.synth_queries = 9;
  s.synth_docs = 8;
  std::ostringstream sink;
  cmd_synth(s, sink, sink);

  RunConfig c;
  c.embeddings = (dir / "corpus/embeddings.txt").string();
  c.docs = (dir / "corpus/docs.tsv").string();
  c.queries = (dir / "corpus/queries.tsv").string();
  c.qrels = (dir / "corpus/qrels.txt").string();
  c.runs = {(dir / "corpus/candidates.run").string()};
  c.model.l_q = 4;
  c.model.l_d = 40;
  c.model.n_f = 2;
  c.model.n_s = 2;
  c.model.n_c = 2;
  c.model.w_c = 2;
  c.model.hidden_sizes = {4};
  c.train.iterations = 2;
  c.train.batches_per_iteration = 2;
  c.train.batch_size = 4;
  c.train_groups = {"g0", "g1", "g2"};
  c.validation_groups = {"g3"};
  c.test_groups = {"g4"};
  c.output = (dir / "a.txt").string();
  auto a = cmd_ablate(c, sink, sink);
  std::vector<std::string> names;
  for (const auto& r : a.rows) names.push_back(r.variant);
  EXPECT_EQ(names, (std::vector<std::string>{"PACRR", "C-PACRR", "D-PACRR", "S-PACRR", "CD-PACRR", "CS-PACRR",
                                             "DS-PACRR", "Co-PACRR"}));
  c.output = (dir / "b.txt").string();
  c.train.threads = 2;
  cmd_ablate(c, sink, sink);
  EXPECT_EQ(slurp(dir / "a.txt"), slurp(dir / "b.txt"));
  EXPECT_EQ(slurp(dir / "a.txt"), a.table);
  c.test_groups = {"g2"};
  EXPECT_THROW(cmd_ablate(c, sink, sink), ConfigError);
}

TEST(Synth, RejectsUnknownKind) {
  TempDir dir;
  RunConfig s;
  s.output = (dir / "x").string();
  s.synth_kind = "other";
  std::ostringstream sink;
  EXPECT_THROW(cmd_synth(s, sink, sink), ConfigError);
  s.output.clear();
  EXPECT_THROW(cmd_synth(s, sink, sink), ConfigError);
}
