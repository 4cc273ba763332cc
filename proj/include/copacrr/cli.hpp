#pragma once

// Argument handling for the copacrr executable. Exit codes: 0 success,
// 1 unexpected failure, 2 configuration error, 3 data error, 4 numerical
// failure during training or scoring.

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "copacrr/commands.hpp"
#include "copacrr/config.hpp"

namespace copacrr {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitData = 3, kExitNumerical = 4 };

namespace cli_detail {

inline const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> keys{"l_q",     "l_d",    "l_g",     "n_f",     "n_s",  "n_c", "w_c",
                                             "hidden",  "variant", "cascade", "disamb", "shuffle", "loss"};
  return keys;
}

inline const std::vector<std::string>& training_keys() {
  static const std::vector<std::string> keys{"learning_rate", "batch_size", "batches_per_iteration",
                                             "iterations",    "seed",       "threads",
                                             "pairs",         "cutoff"};
  return keys;
}

inline std::vector<std::string> concat(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

struct Subcommand {
  std::string name;
  std::string description;
  std::vector<std::string> keys;
};

inline std::vector<Subcommand> subcommands() {
  const std::vector<std::string> corpus{"embeddings", "docs", "queries", "qrels", "runs", "cache_dir"};
  return {
      {"prepare", "precompute and cache similarity inputs for every judged and candidate document",
       concat({corpus, {"l_q", "l_d", "w_c"}})},
      {"train", "train a model, keeping the epoch with the best validation ERR",
       concat({corpus, model_keys(), training_keys(), {"checkpoint", "log", "train_groups", "validation_groups"}})},
      {"rerank", "re-rank run files with a trained checkpoint",
       {"checkpoint", "embeddings", "docs", "queries", "runs", "cache_dir", "output"}},
      {"eval", "ERR@k and PairAccuracy of run files, optionally after re-ranking with a checkpoint",
       {"qrels", "runs", "checkpoint", "embeddings", "docs", "queries", "cache_dir", "cutoff", "tie_half", "grades",
        "output", "report"}},
      {"ablate", "train and compare all eight component combinations on one fold",
       concat({corpus, model_keys(), training_keys(),
               {"train_groups", "validation_groups", "test_groups", "tie_half", "output", "report"}})},
      {"synth", "write a synthetic corpus with a known relevance structure",
       {"output", "seed", "synth_kind", "synth_queries", "synth_docs"}},
  };
}

}  // namespace cli_detail

/// Resolves the run configuration: defaults, then the config file, then the
/// environment, then flags. `variant` is applied before individual toggles.
inline RunConfig resolve_config(const std::string& config_file, const std::map<std::string, std::string>& flags) {
  RunConfig cfg;
  if (!config_file.empty()) apply_config_file(cfg, config_file);
  apply_environment(cfg);
  if (auto it = flags.find("variant"); it != flags.end()) set_config_value(cfg, it->first, it->second);
  for (const auto& k : config_keys()) {
    if (k.name == "variant") continue;
    if (auto it = flags.find(k.name); it != flags.end()) k.set(cfg, it->second);
  }
  return cfg;
}

/// Runs the executable with argv-style arguments (args[0] is the program name).
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural re-ranking with n-gram relevance matching"};
  app.name("copacrr");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  std::string config_file;
  bool print_config = false;
  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, CLI::App*> subs;
  for (const auto& sc : cli_detail::subcommands()) {
    CLI::App* sub = app.add_subcommand(sc.name, sc.description);
    sub->add_option("--config", config_file, "key = value config file (flags win over it)");
    sub->add_flag("--print-config", print_config, "print the resolved configuration and exit");
    for (const auto& key : sc.keys) {
      const ConfigKey* k = find_config_key(key);
      sub->add_option("--" + key, values[sc.name][key], k->help);
    }
    subs[sc.name] = sub;
  }

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  std::string name;
  for (const auto& [n, sub] : subs) {
    if (sub->parsed()) name = n;
  }
  std::map<std::string, std::string> flags;
  for (const auto& [key, value] : values[name]) {
    if (subs[name]->count("--" + key)) flags[key] = value;
  }

  try {
    const RunConfig cfg = resolve_config(config_file, flags);
    if (print_config) {
      out << dump_config(cfg);
      return kExitOk;
    }
    if (name == "prepare") {
      cmd_prepare(cfg, out, err);
    } else if (name == "train") {
      cmd_train(cfg, out, err);
    } else if (name == "rerank") {
      cmd_rerank(cfg, out, err);
    } else if (name == "eval") {
      cmd_eval(cfg, out, err);
    } else if (name == "ablate") {
      cmd_ablate(cfg, out, err);
    } else if (name == "synth") {
      cmd_synth(cfg, out, err);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace copacrr
