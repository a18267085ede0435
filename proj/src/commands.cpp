#include "docformer/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>

#include "docformer/error.hpp"
#include "docformer/ops.hpp"
#include "docformer/synthetic.hpp"
#include "docformer/tensor_io.hpp"

namespace docformer {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require(const std::string& value, const std::string& key, const std::string& command) {
  if (value.empty()) throw ConfigError(command + " needs " + key);
}

ModelConfig model_config(const RunConfig& cfg, std::size_t vocab_size) {
  ModelConfig m = cfg.model;
  m.features.vocab_size = vocab_size;
  m.finalize();
  return m;
}

std::vector<EncodedDocument> encode_all(const std::vector<Document>& docs, const Vocab& vocab,
                                        const FeatureConfig& fc) {
  std::vector<EncodedDocument> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(encode_document(d, vocab, fc));
  return out;
}

std::size_t model_parameter_count(const Model& m) {
  ParamList p;
  m.collect(p);
  return count_parameters(p);
}

Vocab vocab_for(const RunConfig& cfg, const std::vector<Document>& train_docs, const std::string& fallback_dir) {
  if (!cfg.vocab.empty()) return Vocab::load(cfg.vocab);
  if (!fallback_dir.empty() && fs::exists(fs::path(fallback_dir) / "vocab.txt")) {
    return Vocab::load((fs::path(fallback_dir) / "vocab.txt").string());
  }
  return Vocab::build(train_docs, cfg.vocab_max_size, cfg.vocab_min_count);
}

// Per-step JSON lines to <out>/train_log.jsonl, epoch summaries to `log`.
struct StepWriter {
  std::ofstream file;
  std::ostream* log;
  std::size_t steps_per_epoch;
  double epoch_sum = 0.0;
  std::size_t epoch_count = 0;

  StepWriter(const fs::path& path, bool append, std::ostream* log, std::size_t spe)
      : file(path, append ? std::ios::app : std::ios::trunc), log(log), steps_per_epoch(spe) {
    if (!file) throw DataError("cannot write " + path.string());
  }

  void operator()(const StepLog& s) {
    file << s.to_json().dump() << "\n";
    file.flush();
    epoch_sum += s.total;
    ++epoch_count;
    if (s.step % steps_per_epoch == 0) {
      if (log) *log << json{{"epoch", s.epoch}, {"mean_total", epoch_sum / double(epoch_count)}}.dump() << "\n";
      epoch_sum = 0.0;
      epoch_count = 0;
    }
  }
};

json checkpoint_meta(const std::string& kind, const RunConfig& cfg, const Model& model) {
  return {{"format", "docformer-checkpoint"},
          {"version", 1},
          {"kind", kind},
          {"config", config_to_json(cfg)},
          {"vocab_size", model.config.features.vocab_size},
          {"model_parameters", model_parameter_count(model)}};
}

// Runs `trainer` to completion, checkpointing at every epoch boundary. On a
// non-finite loss the parameters are untouched, so they are saved as the
// last good state before the error propagates.
void drive(Trainer& trainer, const fs::path& out, const json& meta, StepWriter& writer) {
  try {
    trainer.run(std::numeric_limits<std::size_t>::max(), [&](const StepLog& s) {
      writer(s);
      if (s.step % trainer.steps_per_epoch() == 0) save_checkpoint(out.string(), trainer.snapshot(meta));
    });
  } catch (const NumericError& e) {
    const auto last_good = out / "last_good";
    save_checkpoint(last_good.string(), trainer.snapshot(meta));
    throw NumericError(std::string(e.what()) + "; last good state saved to " + last_good.string());
  }
}

// Names every model dimension that differs between a checkpoint's config
// snapshot and the requested config.
void check_model_dims(const Checkpoint& ckpt, const RunConfig& cfg) {
  if (!ckpt.meta.contains("config")) return;
  const json& saved = ckpt.meta["config"];
  const json want = config_to_json(cfg);
  std::string diffs;
  for (const char* key : {"model.d", "model.n", "model.layers", "model.heads", "model.span", "model.num_bins",
                          "model.image_h", "model.image_w", "model.cnn_channels", "model.share_spatial_weights"}) {
    if (saved.contains(key) && saved[key] != want[key]) {
      diffs += std::string("\n  ") + key + ": checkpoint " + saved[key].dump() + " vs config " + want[key].dump();
    }
  }
  if (!diffs.empty()) throw DimensionError("checkpoint dimensions do not match the config:" + diffs);
}

}  // namespace

std::string corpus_manifest_path(const std::string& corpus) {
  if (corpus.empty()) throw ConfigError("paths.corpus is not set");
  const fs::path p(corpus);
  if (fs::is_directory(p)) return (p / "manifest.json").string();
  return p.string();
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  if (s == "all") return Split::kAll;
  throw ConfigError("data.split must be train, test or all, got \"" + s + "\"");
}

std::vector<Document> load_split(const std::string& corpus, Split split) {
  std::vector<Document> out;
  for (auto& e : load_corpus(corpus_manifest_path(corpus))) {
    if (split == Split::kAll || (split == Split::kTest) == e.held_out) out.push_back(std::move(e.doc));
  }
  return out;
}

json cmd_generate(const RunConfig& cfg) {
  require(cfg.out, "paths.out (--out)", "generate");
  if (cfg.generate_docs == 0) throw ConfigError("generate.docs must be positive");
  SyntheticSpec spec;
  if (cfg.generate_held_out >= 0) spec.held_out_docs = static_cast<std::size_t>(cfg.generate_held_out);
  const auto docs = generate_synthetic_corpus(cfg.seed, cfg.generate_docs, spec);
  fs::create_directories(cfg.out);
  write_corpus(cfg.out, docs);
  std::size_t held = 0;
  for (const auto& d : docs) held += d.held_out;
  return {{"docs", docs.size()}, {"test_docs", held}, {"out", cfg.out}};
}

json cmd_build_vocab(const RunConfig& cfg) {
  require(cfg.out, "paths.out (--out)", "build-vocab");
  const auto docs = load_split(cfg.corpus, Split::kTrain);
  const auto vocab = Vocab::build(docs, cfg.vocab_max_size, cfg.vocab_min_count);
  if (const auto parent = fs::path(cfg.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  vocab.save(cfg.out);
  return {{"vocab_size", vocab.size()}, {"out", cfg.out}};
}

json cmd_pretrain(const RunConfig& cfg, std::ostream* log) {
  require(cfg.out, "paths.out (--out)", "pretrain");
  const auto raw = load_split(cfg.corpus, Split::kTrain);
  if (raw.empty()) throw DataError("pretrain: the corpus has no training documents");
  const Vocab vocab = vocab_for(cfg, raw, cfg.checkpoint);
  const ModelConfig mc = model_config(cfg, vocab.size());
  const auto docs = encode_all(raw, vocab, mc.features);

  Rng rng(derive_seed(cfg.seed, 1));
  Model model = Model::init(mc, rng);
  PretrainHeads heads = PretrainHeads::init(mc.features, rng);
  const LoopConfig loop{cfg.pretrain_optim(), cfg.pretrain_epochs, cfg.batch_size, cfg.seed};
  PretrainTrainer trainer(model, heads, cfg.loss, loop, docs, cfg.mlm_rate, cfg.mismatch_rate);

  const bool resume = !cfg.checkpoint.empty();
  if (resume) trainer.restore(load_checkpoint(cfg.checkpoint));

  const fs::path out(cfg.out);
  fs::create_directories(out);
  vocab.save((out / "vocab.txt").string());
  const json meta = checkpoint_meta("pretrain", cfg, model);
  StepWriter writer(out / "train_log.jsonl", resume, log, trainer.steps_per_epoch());
  drive(trainer, out, meta, writer);
  save_checkpoint(out.string(), trainer.snapshot(meta));
  return {{"kind", "pretrain"},
          {"steps", trainer.steps_done()},
          {"model_parameters", model_parameter_count(model)},
          {"checkpoint", cfg.out}};
}

json cmd_finetune(const RunConfig& cfg, std::ostream* log) {
  require(cfg.out, "paths.out (--out)", "finetune");
  const bool seq = cfg.finetune_task == "seq";
  if (!seq && cfg.finetune_task != "cls") {
    throw ConfigError("finetune.task must be seq or cls, got \"" + cfg.finetune_task + "\"");
  }
  const auto raw = load_split(cfg.corpus, Split::kTrain);
  if (raw.empty()) throw DataError("finetune: the corpus has no training documents");
  const Vocab vocab = vocab_for(cfg, raw, cfg.checkpoint);
  const ModelConfig mc = model_config(cfg, vocab.size());
  const auto docs = encode_all(raw, vocab, mc.features);

  Rng rng(derive_seed(cfg.seed, 2));
  Model model = Model::init(mc, rng);
  if (!cfg.checkpoint.empty()) {
    ParamList p;
    model.collect(p);
    const auto base = load_checkpoint(cfg.checkpoint);
    check_model_dims(base, cfg);
    assign_parameters(p, base, {"heads.", "optim."});
  }
  const LoopConfig loop{cfg.finetune_optim(), cfg.finetune_epochs, cfg.batch_size, cfg.seed};
  const std::string kind = seq ? "finetune-seq" : "finetune-cls";

  std::unique_ptr<Trainer> trainer;
  std::optional<SequenceHead> seq_head;
  std::optional<ClassificationHead> cls_head;
  if (seq) {
    seq_head = SequenceHead::init(mc.features.d, cfg.num_classes, cfg.head_variant, rng);
    trainer = std::make_unique<SequenceTrainer>(model, *seq_head, loop, docs);
  } else {
    cls_head = ClassificationHead::init(mc.features.d, cfg.num_classes, rng);
    trainer = std::make_unique<ClassificationTrainer>(model, *cls_head, loop, docs);
  }

  const fs::path out(cfg.out);
  fs::create_directories(out);
  vocab.save((out / "vocab.txt").string());
  const json meta = checkpoint_meta(kind, cfg, model);
  StepWriter writer(out / "train_log.jsonl", false, log, trainer->steps_per_epoch());
  drive(*trainer, out, meta, writer);
  save_checkpoint(out.string(), trainer->snapshot(meta));

  json summary = {{"kind", kind},
                  {"steps", trainer->steps_done()},
                  {"model_parameters", model_parameter_count(model)},
                  {"parameters", count_parameters(trainer->params())},
                  {"checkpoint", cfg.out}};
  const auto test_raw = load_split(cfg.corpus, Split::kTest);
  if (!test_raw.empty()) {
    const auto test = encode_all(test_raw, vocab, mc.features);
    const Metrics m = seq ? evaluate_sequence(model, *seq_head, test) : evaluate_classification(model, *cls_head, test);
    summary["metrics"] = m.to_json();
    std::ofstream(out / "metrics.json") << m.to_json().dump(2) << "\n";
  }
  return summary;
}

LoadedModel load_trained_model(const std::string& checkpoint_dir) {
  if (checkpoint_dir.empty()) throw ConfigError("paths.checkpoint (--checkpoint) is not set");
  const auto ckpt = load_checkpoint(checkpoint_dir);
  if (!ckpt.meta.contains("config") || !ckpt.meta.contains("kind")) {
    throw DataError("checkpoint " + checkpoint_dir + " has no config snapshot");
  }
  LoadedModel lm;
  lm.config = config_from_json(ckpt.meta["config"]);
  lm.kind = ckpt.meta["kind"].get<std::string>();
  lm.vocab = Vocab::load((fs::path(checkpoint_dir) / "vocab.txt").string());
  Rng rng(0);
  lm.model = Model::init(model_config(lm.config, lm.vocab.size()), rng);
  ParamList p;
  lm.model.collect(p);
  if (lm.kind == "finetune-seq") {
    lm.seq_head = SequenceHead::init(lm.model.config.features.d, lm.config.num_classes, lm.config.head_variant, rng);
    lm.seq_head->collect(p);
  } else if (lm.kind == "finetune-cls") {
    lm.cls_head = ClassificationHead::init(lm.model.config.features.d, lm.config.num_classes, rng);
    lm.cls_head->collect(p);
  }
  assign_parameters(p, ckpt);
  return lm;
}

json cmd_evaluate(const RunConfig& cfg) {
  const auto lm = load_trained_model(cfg.checkpoint);
  if (!lm.seq_head && !lm.cls_head) {
    throw ConfigError("checkpoint " + cfg.checkpoint + " is a " + lm.kind + " checkpoint without a task head");
  }
  const auto raw = load_split(cfg.corpus, parse_split(cfg.split));
  if (raw.empty()) throw DataError("evaluate: no documents in split " + cfg.split);
  const auto docs = encode_all(raw, lm.vocab, lm.model.config.features);
  const Metrics m =
      lm.seq_head ? evaluate_sequence(lm.model, *lm.seq_head, docs) : evaluate_classification(lm.model, *lm.cls_head, docs);
  if (!cfg.out.empty()) std::ofstream(cfg.out) << m.to_json().dump(2) << "\n";
  return m.to_json();
}

json cmd_predict(const RunConfig& cfg) {
  const auto lm = load_trained_model(cfg.checkpoint);
  if (!lm.seq_head && !lm.cls_head) {
    throw ConfigError("checkpoint " + cfg.checkpoint + " is a " + lm.kind + " checkpoint without a task head");
  }
  const auto raw = load_split(cfg.corpus, parse_split(cfg.split));
  const auto& names = form_label_names();
  json out = json::array();
  for (const auto& d : raw) {
    const auto e = encode_document(d, lm.vocab, lm.model.config.features);
    if (lm.seq_head) {
      const auto labels = predict_words(lm.model, *lm.seq_head, e);
      json words = json::array();
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto l = static_cast<std::size_t>(labels[i]);
        words.push_back({{"text", d.words[i].text}, {"label", labels[i]},
                         {"label_name", l < names.size() ? names[l] : std::to_string(l)}});
      }
      out.push_back({{"id", d.id}, {"words", words}});
    } else {
      out.push_back({{"id", d.id}, {"class", predict_class(lm.model, *lm.cls_head, e)}});
    }
  }
  if (!cfg.out.empty()) std::ofstream(cfg.out) << out.dump(2) << "\n";
  return out;
}

GrayImage attention_to_pgm(const Tensor& probs) {
  if (probs.rank() != 2) throw DimensionError("attention grid must be 2-D, got " + shape_str(probs.shape()));
  GrayImage img;
  img.height = probs.dim(0);
  img.width = probs.dim(1);
  const auto v = probs.data();
  double pmax = 0.0;
  for (double p : v) pmax = std::max(pmax, p);
  img.pixels.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double level = pmax > 0.0 ? 255.0 * (1.0 - v[i] / pmax) : 255.0;
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(level));
  }
  return img;
}

json cmd_export_attention(const RunConfig& cfg) {
  require(cfg.out, "paths.out (--out)", "export-attention");
  const auto lm = load_trained_model(cfg.checkpoint);
  const auto& ec = lm.model.config.encoder;
  const auto layers = static_cast<std::int64_t>(ec.layers);
  const std::int64_t layer = cfg.export_layer < 0 ? layers + cfg.export_layer : cfg.export_layer;
  if (layer < 0 || layer >= layers) {
    throw ConfigError("export.layer " + std::to_string(cfg.export_layer) + " is out of range for " +
                      std::to_string(layers) + " layers");
  }
  if (cfg.export_head >= ec.heads) {
    throw ConfigError("export.head " + std::to_string(cfg.export_head) + " is out of range for " +
                      std::to_string(ec.heads) + " heads");
  }
  const auto raw = load_split(cfg.corpus, Split::kAll);
  const Document* doc = nullptr;
  for (const auto& d : raw)
    if (cfg.export_doc.empty() || d.id == cfg.export_doc) {
      doc = &d;
      break;
    }
  if (!doc) throw DataError("export-attention: document \"" + cfg.export_doc + "\" is not in the corpus");

  const auto e = encode_document(*doc, lm.vocab, lm.model.config.features);
  std::vector<LayerTrace> traces;
  Tape tape;
  TapeScope scope(tape);
  lm.model.forward(e, nullptr, nullptr, &traces);
  const Tensor& probs = traces[static_cast<std::size_t>(layer)].text_probs;
  const std::size_t n = probs.dim(1);
  const Tensor grid = reshape(slice(probs, 0, cfg.export_head, 1), {n, n}).detach();

  const fs::path out(cfg.out);
  fs::create_directories(out);
  save_tensor((out / "attention.bin").string(), grid);
  write_pgm((out / "attention.pgm").string(), attention_to_pgm(grid));
  return {{"doc", doc->id}, {"layer", layer}, {"head", cfg.export_head}, {"n", n}, {"out", cfg.out}};
}

}  // namespace docformer
