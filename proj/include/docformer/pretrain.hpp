#pragma once

#include <cstdint>
#include <vector>

#include "docformer/model.hpp"

namespace docformer {

struct LossWeights {
  double mlm = 5.0;  // λ
  double ltr = 1.0;  // β
  double tdi = 5.0;  // γ

  bool all_zero() const { return mlm == 0.0 && ltr == 0.0 && tdi == 0.0; }
};

struct MlmCorruption {
  std::vector<std::int64_t> token_ids;
  std::vector<std::int64_t> targets;  // kIgnoreIndex where not selected
};

// Each real token except [CLS] is selected with probability `rate`; a
// selected token becomes [MASK] (80%), a random non-reserved id (10%) or
// stays unchanged (10%). The image is never touched.
MlmCorruption apply_mlm_corruption(const std::vector<std::int64_t>& token_ids, const Mask& mask,
                                   std::size_t vocab_size, Rng& rng, double rate = 0.15);

struct TdiPairing {
  std::size_t image_source;  // index of the item whose image is used
  bool matched;
};

// Each item is independently paired with another item's image with
// probability `mismatch_rate`. A batch of one always stays matched.
std::vector<TdiPairing> sample_tdi_pairing(std::size_t batch_size, Rng& rng, double mismatch_rate = 0.2);

// Geometry of the reconstruction decoder: tokens are laid out row-major on a
// grid_h x grid_w grid, each emitting a patch_h x patch_w patch of a
// feature map at a quarter of the image resolution.
struct LtrGeometry {
  std::size_t channels = 8;
  std::size_t grid_h = 0, grid_w = 0;
  std::size_t patch_h = 0, patch_w = 0;

  static LtrGeometry for_config(const FeatureConfig& cfg, std::size_t channels = 8);
};

struct PretrainHeads {
  LtrGeometry geometry;
  Tensor mlm_w, mlm_b;          // [d, vocab], [vocab]
  Tensor ltr_w, ltr_b;          // [d, C*ph*pw], [C*ph*pw]
  Tensor deconv1_w, deconv1_b;  // [C, C, 2, 2], [C]
  Tensor deconv2_w, deconv2_b;  // [C, 1, 2, 2], [1]
  Tensor tdi_w, tdi_b;          // [d, 1], [1]

  static PretrainHeads init(const FeatureConfig& cfg, Rng& rng);
  void collect(ParamList& out, const std::string& prefix = "heads.pretrain.") const;
  void collect_decoder(ParamList& out, const std::string& prefix = "heads.pretrain.") const;
};

Tensor mlm_logits(const Tensor& encoded, const PretrainHeads& heads);
Tensor mm_mlm_loss(const Tensor& encoded, std::span<const std::int64_t> targets, const PretrainHeads& heads);

// [1, H, W] reconstruction.
Tensor ltr_decode(const Tensor& encoded, const PretrainHeads& heads);
// Exactly 0, and nothing recorded on the tape, when the pair is mismatched.
Tensor ltr_loss(const Tensor& encoded, const Tensor& original_image, const PretrainHeads& heads,
                bool matched);

Tensor tdi_logit(const Tensor& encoded, const PretrainHeads& heads);
Tensor tdi_loss(const Tensor& encoded, bool matched, const PretrainHeads& heads);

struct PretrainItem {
  const EncodedDocument* doc = nullptr;
  MlmCorruption corruption;
  const Tensor* image = nullptr;  // the paired image (own or swapped)
  bool matched = true;
};

struct PretrainLosses {
  Tensor total, mlm, ltr, tdi;
};

PretrainLosses combine_losses(const Tensor& mlm, const Tensor& ltr, const Tensor& tdi,
                              const LossWeights& weights);

PretrainLosses pretrain_loss(const PretrainItem& item, const Model& model, const PretrainHeads& heads,
                             const LossWeights& weights);

// Corruption and pairing for one batch, from a seed derived per batch.
std::vector<PretrainItem> make_pretrain_batch(const std::vector<const EncodedDocument*>& docs,
                                              std::size_t vocab_size, Rng& rng,
                                              double mlm_rate = 0.15, double mismatch_rate = 0.2);

}  // namespace docformer
