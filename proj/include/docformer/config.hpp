#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "docformer/heads.hpp"
#include "docformer/model.hpp"
#include "docformer/optim.hpp"
#include "docformer/pretrain.hpp"

namespace docformer {

// Everything a command needs, reproducible from this struct and the files it
// names. Serialized as a flat JSON object with dotted keys.
struct RunConfig {
  std::string task = "pretrain";
  std::uint64_t seed = 0;

  ModelConfig model;

  OptimConfig optim;
  double pretrain_lr = 5e-5;
  double pretrain_warmup = 0.10;
  double finetune_lr = 2.5e-5;
  double finetune_warmup = 0.0;

  LossWeights loss;
  double mlm_rate = 0.15;
  double mismatch_rate = 0.20;

  std::size_t pretrain_epochs = 5;
  std::size_t finetune_epochs = 5;
  std::size_t batch_size = 8;

  std::string finetune_task = "seq";  // seq | cls
  HeadVariant head_variant = HeadVariant::kLinear;
  std::size_t num_classes = 4;

  std::string corpus;      // corpus directory or its manifest.json
  std::string vocab;       // vocabulary file
  std::string checkpoint;  // input checkpoint directory
  std::string out;         // output directory / file

  std::size_t generate_docs = 100;
  std::int64_t generate_held_out = -1;  // -1: a fifth of the corpus
  std::size_t vocab_max_size = 2000;
  std::size_t vocab_min_count = 2;

  std::int64_t export_layer = -1;  // -1: last layer
  std::size_t export_head = 0;
  std::string export_doc;          // document id; empty: first document
  std::string split = "test";      // train | test | all

  OptimConfig pretrain_optim() const;
  OptimConfig finetune_optim() const;
};

struct ConfigKey {
  std::string key;
  std::string help;
  std::vector<std::string> aliases;  // extra long flag names
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
  std::function<void(RunConfig&, const std::string&)> parse;
};

const std::vector<ConfigKey>& config_keys();

nlohmann::json config_to_json(const RunConfig& cfg);
// Unknown keys and ill-typed values raise ConfigError. Missing keys keep
// whatever `base` holds.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config_file(const std::string& path, RunConfig base = {});
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace docformer
