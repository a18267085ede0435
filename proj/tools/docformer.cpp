// docformer: corpus generation, vocabulary, pre-training, fine-tuning,
// evaluation, prediction and attention export from one binary.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "docformer/commands.hpp"
#include "docformer/error.hpp"

namespace {

using docformer::RunConfig;
using nlohmann::json;

struct Subcommand {
  CLI::App* app;
  std::string name;
  std::string description;
  std::map<std::string, std::string> values;  // key -> raw flag value
  std::string config_file;
  std::string save_config;
};

void add_config_options(Subcommand& sub) {
  const RunConfig defaults;
  sub.app->add_option("--config", sub.config_file, "JSON config file with flat dotted keys (flags override it)");
  sub.app->add_option("--save-config", sub.save_config, "write the effective config to this file");
  for (const auto& key : docformer::config_keys()) {
    std::string names = "--" + key.key;
    for (const auto& a : key.aliases) names += ",--" + a;
    const json def = key.get(defaults);
    sub.app->add_option(names, sub.values[key.key], key.help)
        ->default_str(def.is_string() ? def.get<std::string>() : def.dump())
        ->type_name("VALUE")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
        ->group("Config keys");
  }
}

RunConfig effective_config(const Subcommand& sub) {
  RunConfig cfg;
  if (!sub.config_file.empty()) cfg = docformer::load_config_file(sub.config_file, cfg);
  for (const auto& key : docformer::config_keys()) {
    if (sub.app->count("--" + key.key) > 0) docformer::set_config_value(cfg, key.key, sub.values.at(key.key));
  }
  return cfg;
}

int exit_code_for(const std::exception& e, std::string& kind) {
  if (dynamic_cast<const docformer::ConfigError*>(&e)) return kind = "config", 2;
  if (dynamic_cast<const docformer::DimensionError*>(&e)) return kind = "dimension", 2;
  if (dynamic_cast<const docformer::DataError*>(&e)) return kind = "data", 3;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kind = "data", 3;
  if (dynamic_cast<const docformer::NumericError*>(&e)) return kind = "numeric", 4;
  return kind = "internal", 1;
}

int report_failure(const std::string& command, const std::exception& e) {
  std::string kind;
  const int code = exit_code_for(e, kind);
  std::cerr << json{{"error", {{"command", command}, {"kind", kind}, {"message", e.what()}, {"exit_code", code}}}}.dump()
            << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal document transformer: synthetic corpora, pre-training, fine-tuning, analysis"};
  app.require_subcommand(1);

  std::vector<Subcommand> subs = {
      {nullptr, "generate", "write a synthetic form corpus (--out DIR --docs N --seed S)", {}, {}, {}},
      {nullptr, "build-vocab", "build a subword vocabulary from the training split (--corpus, --out FILE)", {}, {}, {}},
      {nullptr, "pretrain", "pre-train with MM-MLM, LTR and TDI; writes a checkpoint and train_log.jsonl", {}, {}, {}},
      {nullptr, "finetune", "fine-tune for token labeling (seq) or document classification (cls)", {}, {}, {}},
      {nullptr, "evaluate", "report {precision, recall, f1, accuracy, n_docs} for a fine-tuned checkpoint", {}, {}, {}},
      {nullptr, "predict", "write per-word labels or document classes", {}, {}, {}},
      {nullptr, "export-attention", "dump one text-branch attention grid as attention.bin and attention.pgm", {}, {}, {}},
  };
  for (auto& s : subs) {
    s.app = app.add_subcommand(s.name, s.description);
    add_config_options(s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string command = "docformer";
    for (const auto& s : subs)
      if (s.app->parsed()) command = s.name;
    std::cerr << json{{"error", {{"command", command}, {"kind", "config"}, {"message", e.what()}, {"exit_code", 2}}}}.dump()
              << "\n";
    return 2;
  }

  for (auto& s : subs) {
    if (!s.app->parsed()) continue;
    try {
      RunConfig cfg = effective_config(s);
      if (s.name == "finetune") {
        cfg.task = "finetune-" + cfg.finetune_task;
      } else if (s.name == "evaluate") {
        cfg.task = "eval";
      } else if (s.name != "generate" && s.name != "build-vocab") {
        cfg.task = s.name;
      }
      if (!s.save_config.empty()) std::ofstream(s.save_config) << docformer::config_to_json(cfg).dump(2) << "\n";

      json result;
      if (s.name == "generate") result = docformer::cmd_generate(cfg);
      else if (s.name == "build-vocab") result = docformer::cmd_build_vocab(cfg);
      else if (s.name == "pretrain") result = docformer::cmd_pretrain(cfg, &std::cerr);
      else if (s.name == "finetune") result = docformer::cmd_finetune(cfg, &std::cerr);
      else if (s.name == "evaluate") result = docformer::cmd_evaluate(cfg);
      else if (s.name == "predict") result = docformer::cmd_predict(cfg);
      else result = docformer::cmd_export_attention(cfg);
      std::cout << result.dump(2) << "\n";
      return 0;
    } catch (const std::exception& e) {
      return report_failure(s.name, e);
    }
  }
  return 2;
}
