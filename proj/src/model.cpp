#include "docformer/model.hpp"

namespace docformer {

void ModelConfig::finalize() {
  encoder.d = features.d;
  features.validate();
  encoder.validate();
}

Model Model::init(ModelConfig cfg, Rng& rng) {
  cfg.finalize();
  Model m;
  m.config = cfg;
  m.features = FeatureParams::init(cfg.features, rng);
  m.encoder = EncoderParams::init(cfg.encoder, rng);
  return m;
}

void Model::collect(ParamList& out) const {
  features.collect(out);
  encoder.collect(out);
}

FeatureBundle Model::features_of(const EncodedDocument& doc, const std::vector<std::int64_t>* token_ids,
                                 const Tensor* image) const {
  return compute_features(doc, features, config.features, token_ids, image);
}

Tensor Model::forward(const EncodedDocument& doc, const std::vector<std::int64_t>* token_ids,
                      const Tensor* image, std::vector<LayerTrace>* traces) const {
  return encoder_forward(features_of(doc, token_ids, image), encoder, config.encoder, traces);
}

}  // namespace docformer
