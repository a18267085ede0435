#include "docformer/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "docformer/error.hpp"
#include "docformer/ops.hpp"

namespace docformer {

nlohmann::json StepLog::to_json() const {
  return {{"step", step}, {"epoch", epoch}, {"total", total}, {"mlm", mlm}, {"ltr", ltr},
          {"tdi", tdi},   {"lr", lr},       {"seconds", seconds}};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5EED0000ULL + epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

Trainer::Trainer(ParamList params, LoopConfig loop, std::size_t n_docs)
    : loop_(loop), n_docs_(n_docs), optim_(std::move(params), loop.optim) {
  if (n_docs == 0) throw DataError("training needs a non-empty corpus");
  if (loop.batch_size == 0) throw ConfigError("train.batch_size must be positive");
}

std::size_t Trainer::steps_per_epoch() const { return (n_docs_ + loop_.batch_size - 1) / loop_.batch_size; }

std::size_t Trainer::total_steps() const { return steps_per_epoch() * loop_.epochs; }

StepLog Trainer::step() {
  if (finished()) throw Error("training already finished");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t spe = steps_per_epoch();
  const std::size_t epoch = step_ / spe, b = step_ % spe;
  const auto order = epoch_order(n_docs_, loop_.seed, epoch);
  const std::size_t lo = b * loop_.batch_size, hi = std::min(n_docs_, lo + loop_.batch_size);
  const std::span<const std::size_t> batch(order.data() + lo, hi - lo);

  Rng rng(derive_seed(loop_.seed, epoch + 1, b + 1));
  optim_.zero_grad();
  const Losses losses = accumulate(batch, rng);
  if (!std::isfinite(losses.total)) {
    throw NumericError("training loss diverged at step " + std::to_string(step_ + 1) + " (total " +
                       std::to_string(losses.total) + ")");
  }

  StepLog log;
  log.step = step_ + 1;
  log.epoch = epoch + 1;
  log.total = losses.total;
  log.mlm = losses.mlm;
  log.ltr = losses.ltr;
  log.tdi = losses.tdi;
  log.lr = lr_schedule(log.step, total_steps(), loop_.optim);
  if (update_enabled()) {
    clip_gradients(optim_.params(), loop_.optim.clip_norm);
    optim_.step(log.lr);
  }
  ++step_;
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

std::vector<StepLog> Trainer::run(std::size_t max_steps, const std::function<void(const StepLog&)>& on_step) {
  std::vector<StepLog> logs;
  while (!finished() && logs.size() < max_steps) {
    logs.push_back(step());
    if (on_step) on_step(logs.back());
  }
  return logs;
}

Checkpoint Trainer::snapshot(nlohmann::json meta) const {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  ckpt.meta["step"] = step_;
  ckpt.meta["optimizer_steps"] = optim_.steps_taken();
  ckpt.meta["rng"] = {{"seed", loop_.seed}, {"stream", "derive_seed(seed, epoch, batch)"}};
  const auto& params = optim_.params();
  auto& self = const_cast<AdamW&>(optim_);
  for (const auto& p : params) ckpt.tensors.push_back({p.name, p.tensor.clone()});
  for (std::size_t k = 0; k < params.size(); ++k) {
    ckpt.tensors.push_back({"optim.m." + params[k].name, Tensor::from(params[k].tensor.shape(), self.first_moments()[k])});
    ckpt.tensors.push_back({"optim.v." + params[k].name, Tensor::from(params[k].tensor.shape(), self.second_moments()[k])});
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  assign_parameters(optim_.params(), ckpt);
  const auto& params = optim_.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor* m = ckpt.find("optim.m." + params[k].name);
    const Tensor* v = ckpt.find("optim.v." + params[k].name);
    if (!m || !v) throw DataError("checkpoint lacks optimizer moments for " + params[k].name);
    if (m->numel() != params[k].tensor.numel() || v->numel() != params[k].tensor.numel()) {
      throw DimensionError("optimizer moments for " + params[k].name + " have the wrong size");
    }
    std::ranges::copy(m->data(), optim_.first_moments()[k].begin());
    std::ranges::copy(v->data(), optim_.second_moments()[k].begin());
  }
  step_ = ckpt.meta.at("step").get<std::size_t>();
  optim_.set_steps_taken(ckpt.meta.at("optimizer_steps").get<std::size_t>());
}

namespace {

ParamList model_and(const Model& model, const std::function<void(ParamList&)>& more) {
  ParamList p;
  model.collect(p);
  more(p);
  return p;
}

double value(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

}  // namespace

PretrainTrainer::PretrainTrainer(Model model, PretrainHeads heads, LossWeights weights, LoopConfig loop,
                                 const std::vector<EncodedDocument>& docs, double mlm_rate, double mismatch_rate)
    : Trainer(model_and(model, [&](ParamList& p) { heads.collect(p); }), loop, docs.size()),
      model_(std::move(model)),
      heads_(std::move(heads)),
      weights_(weights),
      docs_(docs),
      mlm_rate_(mlm_rate),
      mismatch_rate_(mismatch_rate) {}

Trainer::Losses PretrainTrainer::accumulate(std::span<const std::size_t> batch, Rng& rng) {
  std::vector<const EncodedDocument*> ptrs;
  for (auto i : batch) ptrs.push_back(&docs_[i]);
  const auto items = make_pretrain_batch(ptrs, model_.config.features.vocab_size, rng, mlm_rate_, mismatch_rate_);
  const double inv = 1.0 / static_cast<double>(items.size());
  Losses out;
  for (const auto& item : items) {
    Tape tape;
    TapeScope scope(tape);
    const auto l = pretrain_loss(item, model_, heads_, weights_);
    out.total += inv * value(l.total);
    out.mlm += inv * value(l.mlm);
    out.ltr += inv * value(l.ltr);
    out.tdi += inv * value(l.tdi);
    if (!std::isfinite(out.total)) return out;
    if (update_enabled()) backward(scale(l.total, inv));
  }
  return out;
}

SequenceTrainer::SequenceTrainer(Model model, SequenceHead head, LoopConfig loop,
                                 const std::vector<EncodedDocument>& docs)
    : Trainer(model_and(model, [&](ParamList& p) { head.collect(p); }), loop, docs.size()),
      model_(std::move(model)),
      head_(std::move(head)),
      docs_(docs) {
  for (const auto& d : docs_) {
    if (std::ranges::all_of(d.labels, [](auto l) { return l == kIgnoreIndex; })) {
      throw DataError("document " + d.id + " has no token labels");
    }
    for (auto l : d.labels) {
      if (l != kIgnoreIndex && (l < 0 || static_cast<std::size_t>(l) >= head_.num_classes)) {
        throw DataError("document " + d.id + ": label " + std::to_string(l) + " is not below num_classes " +
                        std::to_string(head_.num_classes));
      }
    }
  }
}

Trainer::Losses SequenceTrainer::accumulate(std::span<const std::size_t> batch, Rng&) {
  const double inv = 1.0 / static_cast<double>(batch.size());
  Losses out;
  for (auto i : batch) {
    Tape tape;
    TapeScope scope(tape);
    const auto& doc = docs_[i];
    const Tensor loss = cross_entropy_from_logits(head_.logits(model_.forward(doc)), doc.labels);
    out.total += inv * loss.item();
    if (!std::isfinite(out.total)) return out;
    backward(scale(loss, inv));
  }
  return out;
}

ClassificationTrainer::ClassificationTrainer(Model model, ClassificationHead head, LoopConfig loop,
                                             const std::vector<EncodedDocument>& docs)
    : Trainer(model_and(model, [&](ParamList& p) { head.collect(p); }), loop, docs.size()),
      model_(std::move(model)),
      head_(std::move(head)),
      docs_(docs) {
  for (const auto& d : docs_) {
    if (!d.doc_class) throw DataError("document " + d.id + " has no document class");
    if (*d.doc_class < 0 || static_cast<std::size_t>(*d.doc_class) >= head_.num_classes) {
      throw DataError("document " + d.id + ": class " + std::to_string(*d.doc_class) +
                      " is not below num_classes " + std::to_string(head_.num_classes));
    }
  }
}

Trainer::Losses ClassificationTrainer::accumulate(std::span<const std::size_t> batch, Rng&) {
  const double inv = 1.0 / static_cast<double>(batch.size());
  Losses out;
  for (auto i : batch) {
    Tape tape;
    TapeScope scope(tape);
    const auto& doc = docs_[i];
    const std::int64_t target = *doc.doc_class;
    const Tensor loss = cross_entropy_from_logits(head_.logits(model_.forward(doc)), std::span(&target, 1));
    out.total += inv * loss.item();
    if (!std::isfinite(out.total)) return out;
    backward(scale(loss, inv));
  }
  return out;
}

std::vector<double> epoch_means(const std::vector<StepLog>& logs) {
  std::vector<double> sums, counts;
  for (const auto& l : logs) {
    if (l.epoch > sums.size()) {
      sums.resize(l.epoch, 0.0);
      counts.resize(l.epoch, 0.0);
    }
    sums[l.epoch - 1] += l.total;
    counts[l.epoch - 1] += 1.0;
  }
  for (std::size_t e = 0; e < sums.size(); ++e) sums[e] = counts[e] > 0 ? sums[e] / counts[e] : 0.0;
  return sums;
}

nlohmann::json Metrics::to_json() const {
  return {{"precision", precision}, {"recall", recall}, {"f1", f1}, {"accuracy", accuracy}, {"n_docs", n_docs}};
}

namespace {

std::vector<std::int64_t> argmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  const auto v = logits.data();
  std::vector<std::int64_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = v.subspan(r * cols, cols);
    out[r] = std::ranges::max_element(row) - row.begin();
  }
  return out;
}

}  // namespace

std::vector<std::int64_t> predict_tokens(const Model& model, const SequenceHead& head, const EncodedDocument& doc) {
  Tape tape;
  TapeScope scope(tape);
  return argmax_rows(head.logits(model.forward(doc)));
}

std::vector<std::int64_t> predict_words(const Model& model, const SequenceHead& head, const EncodedDocument& doc) {
  const auto tokens = predict_tokens(model, head, doc);
  std::vector<std::int64_t> words(doc.word_labels.size(), 0);
  std::vector<bool> seen(words.size(), false);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto w = doc.tokens.word_index[t];
    if (w < 0 || seen[static_cast<std::size_t>(w)]) continue;
    seen[static_cast<std::size_t>(w)] = true;
    words[static_cast<std::size_t>(w)] = tokens[t];
  }
  return words;
}

Metrics evaluate_sequence(const Model& model, const SequenceHead& head, const std::vector<EncodedDocument>& docs,
                          EvalSubset subset) {
  LabelingCounts counts;
  for (const auto& doc : docs) {
    if (std::ranges::any_of(doc.word_labels, [](auto l) { return l == kIgnoreIndex; })) {
      throw DataError("document " + doc.id + " has unlabeled words; evaluation needs gold labels on every word");
    }
    auto pred = predict_words(model, head, doc);
    if (subset == EvalSubset::kLabeledWords) {
      for (std::size_t i = 0; i < pred.size(); ++i)
        if (doc.word_labels[i] == 0) pred[i] = 0;
    }
    counts.add_document(doc.word_labels, pred);
  }
  return {counts.precision(), counts.recall(), counts.f1(), counts.accuracy(), counts.n_docs};
}

std::int64_t predict_class(const Model& model, const ClassificationHead& head, const EncodedDocument& doc) {
  Tape tape;
  TapeScope scope(tape);
  return argmax_rows(head.logits(model.forward(doc)))[0];
}

Metrics evaluate_classification(const Model& model, const ClassificationHead& head,
                                const std::vector<EncodedDocument>& docs) {
  const std::size_t c = head.num_classes;
  std::vector<std::size_t> tp(c, 0), predicted(c, 0), gold(c, 0);
  std::size_t correct = 0;
  for (const auto& doc : docs) {
    if (!doc.doc_class) throw DataError("document " + doc.id + " has no document class; evaluation needs one");
    const auto g = static_cast<std::size_t>(*doc.doc_class);
    if (g >= c) throw DataError("document " + doc.id + ": class " + std::to_string(g) + " is not below num_classes");
    const auto p = static_cast<std::size_t>(predict_class(model, head, doc));
    ++predicted[p];
    ++gold[g];
    if (p == g) {
      ++tp[g];
      ++correct;
    }
  }
  Metrics m;
  m.n_docs = docs.size();
  m.accuracy = docs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(docs.size());
  for (std::size_t k = 0; k < c; ++k) {
    const double p = predicted[k] ? static_cast<double>(tp[k]) / static_cast<double>(predicted[k]) : 0.0;
    const double r = gold[k] ? static_cast<double>(tp[k]) / static_cast<double>(gold[k]) : 0.0;
    m.precision += p / static_cast<double>(c);
    m.recall += r / static_cast<double>(c);
    m.f1 += (p + r > 0 ? 2 * p * r / (p + r) : 0.0) / static_cast<double>(c);
  }
  return m;
}

}  // namespace docformer
