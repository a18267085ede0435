#pragma once

#include "docformer/encoder.hpp"
#include "docformer/features.hpp"

namespace docformer {

struct ModelConfig {
  FeatureConfig features;
  EncoderConfig encoder;

  // Copies the shared width into the encoder and validates both halves.
  void finalize();
};

// Feature extractor plus encoder: everything that survives pre-training.
struct Model {
  ModelConfig config;
  FeatureParams features;
  EncoderParams encoder;

  static Model init(ModelConfig cfg, Rng& rng);
  void collect(ParamList& out) const;

  FeatureBundle features_of(const EncodedDocument& doc, const std::vector<std::int64_t>* token_ids = nullptr,
                            const Tensor* image = nullptr) const;
  // M̄ [N, d].
  Tensor forward(const EncodedDocument& doc, const std::vector<std::int64_t>* token_ids = nullptr,
                 const Tensor* image = nullptr, std::vector<LayerTrace>* traces = nullptr) const;
};

}  // namespace docformer
