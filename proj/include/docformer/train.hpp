#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "docformer/checkpoint.hpp"
#include "docformer/heads.hpp"
#include "docformer/metrics.hpp"
#include "docformer/optim.hpp"
#include "docformer/pretrain.hpp"

namespace docformer {

struct LoopConfig {
  OptimConfig optim;
  std::size_t epochs = 5;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

struct StepLog {
  std::size_t step = 0;  // 1-based optimizer step
  std::size_t epoch = 0;
  double total = 0.0, mlm = 0.0, ltr = 0.0, tdi = 0.0;
  double lr = 0.0;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

// Document order for one epoch; a pure function of (n, seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

// Epoch/batch bookkeeping, optimizer and checkpoint state shared by every
// training objective. Step k always sees the same batch and the same random
// stream regardless of where a run was resumed.
class Trainer {
 public:
  virtual ~Trainer() = default;

  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const;
  std::size_t steps_done() const { return step_; }
  bool finished() const { return step_ >= total_steps(); }

  // One optimizer step. A non-finite loss raises NumericError before any
  // parameter is touched.
  StepLog step();
  std::vector<StepLog> run(std::size_t max_steps = std::numeric_limits<std::size_t>::max(),
                           const std::function<void(const StepLog&)>& on_step = {});

  const ParamList& params() const { return optim_.params(); }
  AdamW& optimizer() { return optim_; }

  // Parameters, both moment buffers and the step counter.
  Checkpoint snapshot(nlohmann::json meta = nlohmann::json::object()) const;
  void restore(const Checkpoint& ckpt);

 protected:
  Trainer(ParamList params, LoopConfig loop, std::size_t n_docs);

  struct Losses {
    double total = 0.0, mlm = 0.0, ltr = 0.0, tdi = 0.0;
  };
  // Forward and backward over one batch, gradients averaged over the batch.
  virtual Losses accumulate(std::span<const std::size_t> batch, Rng& rng) = 0;
  // False skips the update entirely (e.g. every loss weight is zero, where
  // decoupled weight decay would otherwise still move the parameters).
  virtual bool update_enabled() const { return true; }

  LoopConfig loop_;
  std::size_t n_docs_;

 private:
  AdamW optim_;
  std::size_t step_ = 0;
};

class PretrainTrainer : public Trainer {
 public:
  PretrainTrainer(Model model, PretrainHeads heads, LossWeights weights, LoopConfig loop,
                  const std::vector<EncodedDocument>& docs, double mlm_rate = 0.15,
                  double mismatch_rate = 0.20);

 protected:
  Losses accumulate(std::span<const std::size_t> batch, Rng& rng) override;
  bool update_enabled() const override { return !weights_.all_zero(); }

 private:
  Model model_;
  PretrainHeads heads_;
  LossWeights weights_;
  const std::vector<EncodedDocument>& docs_;
  double mlm_rate_, mismatch_rate_;
};

// Cross-entropy over real tokens; every sub-token carries its word's label.
class SequenceTrainer : public Trainer {
 public:
  SequenceTrainer(Model model, SequenceHead head, LoopConfig loop, const std::vector<EncodedDocument>& docs);

 protected:
  Losses accumulate(std::span<const std::size_t> batch, Rng& rng) override;

 private:
  Model model_;
  SequenceHead head_;
  const std::vector<EncodedDocument>& docs_;
};

class ClassificationTrainer : public Trainer {
 public:
  ClassificationTrainer(Model model, ClassificationHead head, LoopConfig loop,
                        const std::vector<EncodedDocument>& docs);

 protected:
  Losses accumulate(std::span<const std::size_t> batch, Rng& rng) override;

 private:
  Model model_;
  ClassificationHead head_;
  const std::vector<EncodedDocument>& docs_;
};

// Mean per-epoch total loss from a step trace.
std::vector<double> epoch_means(const std::vector<StepLog>& logs);

struct Metrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0, accuracy = 0.0;
  std::size_t n_docs = 0;

  nlohmann::json to_json() const;
};

// argmax class per token position [N].
std::vector<std::int64_t> predict_tokens(const Model& model, const SequenceHead& head, const EncodedDocument& doc);
// One label per OCR word, read at the word's first sub-token; words cut off
// by truncation are predicted as class 0 (other).
std::vector<std::int64_t> predict_words(const Model& model, const SequenceHead& head, const EncodedDocument& doc);

enum class EvalSubset {
  kAll,
  // Only words whose gold label is not other: predictions elsewhere are
  // replaced by other before spans are matched.
  kLabeledWords,
};

// Entity P/R/F1 over maximal runs of words, word-level accuracy. Every word
// must carry a label, otherwise DataError.
Metrics evaluate_sequence(const Model& model, const SequenceHead& head, const std::vector<EncodedDocument>& docs,
                          EvalSubset subset = EvalSubset::kAll);

std::int64_t predict_class(const Model& model, const ClassificationHead& head, const EncodedDocument& doc);
// Accuracy plus macro-averaged precision/recall/F1 over classes.
Metrics evaluate_classification(const Model& model, const ClassificationHead& head,
                                const std::vector<EncodedDocument>& docs);

}  // namespace docformer
