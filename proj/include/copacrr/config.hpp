#pragma once

// Run configuration for the command-line pipeline: a flat "key = value" file
// whose keys mirror the command-line flags. Later sources override earlier
// ones: defaults, config file, environment, flags.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "copacrr/corpus.hpp"
#include "copacrr/error.hpp"
#include "copacrr/evaluation.hpp"
#include "copacrr/model.hpp"
#include "copacrr/training.hpp"

namespace copacrr {

inline constexpr const char* kCacheDirEnv = "COPACRR_CACHE_DIR";

struct RunConfig {
  // Paths
  std::string embeddings;
  std::string docs;
  std::string queries;
  std::string qrels;
  std::vector<std::string> runs;
  std::string checkpoint;
  std::string output;
  std::string report;
  std::string log;
  std::string cache_dir;

  ModelConfig model;
  TrainOptions train;

  std::vector<std::string> train_groups;
  std::vector<std::string> validation_groups;
  std::vector<std::string> test_groups;

  std::size_t cutoff = 20;
  bool tie_half = false;
  GradeMode grade_mode = GradeMode::merged;

  // synth
  std::string synth_kind = "planted";
  std::size_t synth_queries = 50;
  std::size_t synth_docs = 20;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto comma = s.find(',', start);
    if (comma == std::string_view::npos) comma = s.size();
    std::string item = trim(s.substr(start, comma - start));
    if (!item.empty()) out.push_back(std::move(item));
    start = comma + 1;
  }
  return out;
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  auto n = detail::parse_number<std::uint64_t>(v);
  if (!n) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(*n);
}

inline double to_double(const std::string& key, const std::string& v) {
  auto n = detail::parse_number<double>(v);
  if (!n || !std::isfinite(*n)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return *n;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + xs[i];
  return out;
}

}  // namespace config_detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every accepted key, in the order used by --help and dump_config.
inline const std::vector<ConfigKey>& config_keys() {
  using namespace config_detail;
  auto path = [](std::string RunConfig::*field, const char* name, const char* help) {
    return ConfigKey{name, help, [field](RunConfig& c, const std::string& v) { c.*field = v; },
                     [field](const RunConfig& c) { return c.*field; }};
  };
  auto size_field = [](auto getter, const char* name, const char* help) {
    return ConfigKey{name, help,
                     [getter, name](RunConfig& c, const std::string& v) { getter(c) = to_size(name, v); },
                     [getter](const RunConfig& c) { return std::to_string(getter(c)); }};
  };
  auto bool_field = [](auto getter, const char* name, const char* help) {
    return ConfigKey{name, help,
                     [getter, name](RunConfig& c, const std::string& v) { getter(c) = to_bool(name, v); },
                     [getter](const RunConfig& c) -> std::string {
                       return getter(c) ? "true" : "false";
                     }};
  };
  auto list_field = [](std::vector<std::string> RunConfig::*field, const char* name, const char* help) {
    return ConfigKey{name, help, [field](RunConfig& c, const std::string& v) { c.*field = split_list(v); },
                     [field](const RunConfig& c) { return join(c.*field); }};
  };
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };

  static const std::vector<ConfigKey> keys = {
      path(&RunConfig::embeddings, "embeddings", "word2vec text file or binary embedding cache"),
      path(&RunConfig::docs, "docs", "documents: TSV 'doc_id<TAB>text' or a directory of <doc_id>.txt"),
      path(&RunConfig::queries, "queries", "queries: TSV 'query_id<TAB>text[<TAB>group]'"),
      path(&RunConfig::qrels, "qrels", "TREC qrels file"),
      list_field(&RunConfig::runs, "runs", "comma-separated TREC run files (candidate rankings)"),
      path(&RunConfig::checkpoint, "checkpoint", "model checkpoint to write (train) or read (rerank, eval)"),
      path(&RunConfig::output, "output", "output file or directory"),
      path(&RunConfig::report, "report", "line-delimited JSON report file"),
      path(&RunConfig::log, "log", "line-delimited JSON training log"),
      path(&RunConfig::cache_dir, "cache_dir", "similarity cache directory (env COPACRR_CACHE_DIR)"),

      size_field([](auto& c) -> auto& { return c.model.l_q; }, "l_q", "query rows"),
      size_field([](auto& c) -> auto& { return c.model.l_d; }, "l_d", "document columns"),
      size_field([](auto& c) -> auto& { return c.model.l_g; }, "l_g", "longest n-gram kernel"),
      size_field([](auto& c) -> auto& { return c.model.n_f; }, "n_f", "filters per kernel size"),
      size_field([](auto& c) -> auto& { return c.model.n_s; }, "n_s", "k of k-max pooling"),
      size_field([](auto& c) -> auto& { return c.model.n_c; }, "n_c", "cascade positions"),
      size_field([](auto& c) -> auto& { return c.model.w_c; }, "w_c", "context half-window"),
      ConfigKey{"hidden", "comma-separated hidden layer sizes",
                [](RunConfig& c, const std::string& v) {
                  c.model.hidden_sizes.clear();
                  for (const auto& s : split_list(v)) c.model.hidden_sizes.push_back(to_size("hidden", s));
                },
                [](const RunConfig& c) {
                  std::vector<std::string> xs;
                  for (auto h : c.model.hidden_sizes) xs.push_back(std::to_string(h));
                  return join(xs);
                }},
      bool_field([](auto& c) -> auto& { return c.model.cascade; }, "cascade", "cascade k-max pooling"),
      bool_field([](auto& c) -> auto& { return c.model.disamb; }, "disamb", "context disambiguation"),
      bool_field([](auto& c) -> auto& { return c.model.shuffle; }, "shuffle", "row shuffling in training"),
      ConfigKey{"variant", "set cascade/disamb/shuffle from a variant name such as CD-PACRR",
                [](RunConfig& c, const std::string& v) {
                  for (const auto& t : kVariants) {
                    if (with_variant(c.model, t).variant_name() == v) {
                      c.model = with_variant(c.model, t);
                      return;
                    }
                  }
                  throw ConfigError("variant: unknown variant '" + v + "'");
                },
                [](const RunConfig& c) { return c.model.variant_name(); }},
      ConfigKey{"loss", "cross_entropy or max_margin",
                [](RunConfig& c, const std::string& v) {
                  if (v == "cross_entropy") {
                    c.model.loss = LossKind::cross_entropy;
                  } else if (v == "max_margin") {
                    c.model.loss = LossKind::max_margin;
                  } else {
                    throw ConfigError("loss: expected cross_entropy or max_margin, got '" + v + "'");
                  }
                },
                [](const RunConfig& c) { return std::string(loss_name(c.model.loss)); }},

      ConfigKey{"learning_rate", "optimizer step size",
                [](RunConfig& c, const std::string& v) {
                  c.train.learning_rate = to_double("learning_rate", v);
                  if (c.train.learning_rate < 0) throw ConfigError("learning_rate must be non-negative");
                },
                [num](const RunConfig& c) { return num(c.train.learning_rate); }},
      size_field([](auto& c) -> auto& { return c.train.batch_size; }, "batch_size", "pairs per batch"),
      size_field([](auto& c) -> auto& { return c.train.batches_per_iteration; }, "batches_per_iteration",
                 "batches per training iteration"),
      size_field([](auto& c) -> auto& { return c.train.iterations; }, "iterations",
                 "training iterations (validation after each)"),
      ConfigKey{"seed", "random seed",
                [](RunConfig& c, const std::string& v) { c.train.seed = to_size("seed", v); },
                [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      size_field([](auto& c) -> auto& { return c.train.threads; }, "threads", "worker threads"),
      ConfigKey{"pairs", "training pairs: all_dominance or relevant_over_nonrelevant",
                [](RunConfig& c, const std::string& v) {
                  if (v == "all_dominance") {
                    c.train.pair_policy = PairPolicy::all_dominance;
                  } else if (v == "relevant_over_nonrelevant") {
                    c.train.pair_policy = PairPolicy::relevant_over_nonrelevant;
                  } else {
                    throw ConfigError("pairs: expected all_dominance or relevant_over_nonrelevant, got '" + v + "'");
                  }
                },
                [](const RunConfig& c) -> std::string {
                  return c.train.pair_policy == PairPolicy::all_dominance ? "all_dominance"
                                                                          : "relevant_over_nonrelevant";
                }},

      list_field(&RunConfig::train_groups, "train_groups", "comma-separated query groups to train on"),
      list_field(&RunConfig::validation_groups, "validation_groups", "query groups for epoch selection"),
      list_field(&RunConfig::test_groups, "test_groups", "query groups to evaluate (ablate)"),

      size_field([](auto& c) -> auto& { return c.cutoff; }, "cutoff", "ERR cutoff k"),
      bool_field([](auto& c) -> auto& { return c.tie_half; }, "tie_half", "count score ties as half correct"),
      ConfigKey{"grades", "ERR grades: merged or raw",
                [](RunConfig& c, const std::string& v) {
                  if (v == "merged") {
                    c.grade_mode = GradeMode::merged;
                  } else if (v == "raw") {
                    c.grade_mode = GradeMode::raw;
                  } else {
                    throw ConfigError("grades: expected merged or raw, got '" + v + "'");
                  }
                },
                [](const RunConfig& c) -> std::string { return c.grade_mode == GradeMode::merged ? "merged" : "raw"; }},

      path(&RunConfig::synth_kind, "synth_kind", "synthetic corpus: planted or ambiguity"),
      size_field([](auto& c) -> auto& { return c.synth_queries; }, "synth_queries", "synthetic queries"),
      size_field([](auto& c) -> auto& { return c.synth_docs; }, "synth_docs", "documents per query"),
  };
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const ConfigKey* k = find_config_key(key);
  if (!k) throw ConfigError("unknown config key '" + key + "'");
  k->set(c, value);
}

/// Applies "key = value" lines. '#' starts a comment; blank lines are skipped.
inline void apply_config_text(RunConfig& c, std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = config_detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = config_detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = config_detail::trim(std::string_view(t).substr(eq + 1));
    try {
      set_config_value(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  apply_config_text(c, in, path.string());
}

inline void apply_environment(RunConfig& c) {
  if (const char* dir = std::getenv(kCacheDirEnv); dir && *dir) c.cache_dir = dir;
}

/// Canonical "key = value" rendering of every key; parses back to the same config.
inline std::string dump_config(const RunConfig& c) {
  std::string out;
  for (const auto& k : config_keys()) {
    if (k.name == "variant") continue;
    out += k.name + " = " + k.get(c) + "\n";
  }
  return out;
}

}  // namespace copacrr
