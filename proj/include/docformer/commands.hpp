#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "docformer/config.hpp"
#include "docformer/train.hpp"

namespace docformer {

// Pipeline commands behind the CLI. Each one reads only the files named in
// the config and returns a JSON summary; progress lines go to `log`.

nlohmann::json cmd_generate(const RunConfig& cfg);
nlohmann::json cmd_build_vocab(const RunConfig& cfg);
nlohmann::json cmd_pretrain(const RunConfig& cfg, std::ostream* log = nullptr);
nlohmann::json cmd_finetune(const RunConfig& cfg, std::ostream* log = nullptr);
nlohmann::json cmd_evaluate(const RunConfig& cfg);
nlohmann::json cmd_predict(const RunConfig& cfg);
nlohmann::json cmd_export_attention(const RunConfig& cfg);

// Corpus path may name the directory or its manifest.json.
std::string corpus_manifest_path(const std::string& corpus);

enum class Split { kTrain, kTest, kAll };
Split parse_split(const std::string& s);
std::vector<Document> load_split(const std::string& corpus, Split split);

// A trained network restored from a checkpoint directory together with the
// configuration and vocabulary it was trained with.
struct LoadedModel {
  RunConfig config;
  Vocab vocab;
  Model model;
  std::string kind;  // pretrain | finetune-seq | finetune-cls
  std::optional<SequenceHead> seq_head;
  std::optional<ClassificationHead> cls_head;
};

LoadedModel load_trained_model(const std::string& checkpoint_dir);

// Grayscale rendering of an attention grid: 0 is white, the row-major
// maximum is black, linear in between.
GrayImage attention_to_pgm(const Tensor& probs);

}  // namespace docformer
