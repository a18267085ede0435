#include "docformer/heads.hpp"

#include "docformer/error.hpp"
#include "docformer/ops.hpp"

namespace docformer {

HeadVariant parse_head_variant(const std::string& s) {
  if (s == "linear") return HeadVariant::kLinear;
  if (s == "deeper") return HeadVariant::kDeeper;
  throw ConfigError("head variant must be \"linear\" or \"deeper\", got \"" + s + "\"");
}

std::string to_string(HeadVariant v) { return v == HeadVariant::kLinear ? "linear" : "deeper"; }

SequenceHead SequenceHead::init(std::size_t d, std::size_t num_classes, HeadVariant variant, Rng& rng) {
  if (num_classes < 2) throw ConfigError("a labeling head needs at least 2 classes");
  SequenceHead h;
  h.variant = variant;
  h.num_classes = num_classes;
  if (variant == HeadVariant::kDeeper) {
    h.w1 = param_he(rng, {d, d}, d);
    h.b1 = param_full({d}, 0.0);
    h.ln_g = param_full({d}, 1.0);
    h.ln_b = param_full({d}, 0.0);
  }
  h.w2 = param_lecun(rng, {d, num_classes}, d);
  h.b2 = param_full({num_classes}, 0.0);
  return h;
}

void SequenceHead::collect(ParamList& out, const std::string& prefix) const {
  if (variant == HeadVariant::kDeeper) {
    out.push_back({prefix + "fc1.w", w1});
    out.push_back({prefix + "fc1.b", b1});
    out.push_back({prefix + "ln.g", ln_g});
    out.push_back({prefix + "ln.b", ln_b});
  }
  out.push_back({prefix + "fc2.w", w2});
  out.push_back({prefix + "fc2.b", b2});
}

Tensor SequenceHead::logits(const Tensor& encoded) const {
  Tensor x = encoded;
  if (variant == HeadVariant::kDeeper) x = layer_norm(relu(add(matmul(x, w1), b1)), ln_g, ln_b);
  return add(matmul(x, w2), b2);
}

ClassificationHead ClassificationHead::init(std::size_t d, std::size_t num_classes, Rng& rng) {
  if (num_classes < 2) throw ConfigError("a classification head needs at least 2 classes");
  ClassificationHead h;
  h.num_classes = num_classes;
  h.w1 = param_he(rng, {d, d}, d);
  h.b1 = param_full({d}, 0.0);
  h.w2 = param_lecun(rng, {d, num_classes}, d);
  h.b2 = param_full({num_classes}, 0.0);
  return h;
}

void ClassificationHead::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + "fc1.w", w1});
  out.push_back({prefix + "fc1.b", b1});
  out.push_back({prefix + "fc2.w", w2});
  out.push_back({prefix + "fc2.b", b2});
}

Tensor ClassificationHead::logits(const Tensor& encoded) const {
  Tensor cls = slice(encoded, 0, 0, 1);
  return add(matmul(relu(add(matmul(cls, w1), b1)), w2), b2);
}

}  // namespace docformer
