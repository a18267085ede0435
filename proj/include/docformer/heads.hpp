#pragma once

#include <string>

#include "docformer/params.hpp"

namespace docformer {

enum class HeadVariant { kLinear, kDeeper };

HeadVariant parse_head_variant(const std::string& s);
std::string to_string(HeadVariant v);

// Per-token classifier over M̄. Linear: one projection. Deeper:
// fc -> ReLU -> LayerNorm -> fc.
struct SequenceHead {
  HeadVariant variant = HeadVariant::kLinear;
  std::size_t num_classes = 0;
  Tensor w1, b1;       // deeper only: [d, d], [d]
  Tensor ln_g, ln_b;   // deeper only
  Tensor w2, b2;       // [d, C], [C]

  static SequenceHead init(std::size_t d, std::size_t num_classes, HeadVariant variant, Rng& rng);
  void collect(ParamList& out, const std::string& prefix = "heads.seq.") const;
  Tensor logits(const Tensor& encoded) const;  // [N, C]
};

// Document classifier: [CLS] feature -> fc -> ReLU -> fc.
struct ClassificationHead {
  std::size_t num_classes = 0;
  Tensor w1, b1, w2, b2;

  static ClassificationHead init(std::size_t d, std::size_t num_classes, Rng& rng);
  void collect(ParamList& out, const std::string& prefix = "heads.cls.") const;
  Tensor logits(const Tensor& encoded) const;  // [1, C]
};

}  // namespace docformer
