#pragma once

#include <vector>

#include "docformer/model.hpp"
#include "docformer/synthetic.hpp"

namespace docformer {

struct Fixture {
  Vocab vocab;
  ModelConfig cfg;
  std::vector<Document> raw;
  std::vector<EncodedDocument> docs;
};

// A few documents at a very small model size.
inline Fixture small_fixture(std::uint64_t seed, std::size_t n_docs = 4, std::size_t n = 16) {
  Fixture f;
  for (auto& sd : generate_synthetic_corpus(seed, n_docs)) f.raw.push_back(std::move(sd.doc));
  f.vocab = Vocab::build(f.raw);
  f.cfg.features.d = 8;
  f.cfg.features.n = n;
  f.cfg.features.num_bins = 32;
  f.cfg.features.image_h = f.cfg.features.image_w = 32;
  f.cfg.features.cnn_channels = {2, 4, 4};
  f.cfg.features.vocab_size = f.vocab.size();
  f.cfg.encoder.heads = 2;
  f.cfg.encoder.layers = 2;
  f.cfg.finalize();
  for (const auto& d : f.raw) f.docs.push_back(encode_document(d, f.vocab, f.cfg.features));
  return f;
}

}  // namespace docformer
