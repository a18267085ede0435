#include "docformer/pretrain.hpp"

#include <cmath>
#include <cstdlib>

#include "docformer/error.hpp"

namespace docformer {

MlmCorruption apply_mlm_corruption(const std::vector<std::int64_t>& token_ids, const Mask& mask,
                                   std::size_t vocab_size, Rng& rng, double rate) {
  if (mask.size() != token_ids.size()) throw DimensionError("apply_mlm_corruption: mask length mismatch");
  MlmCorruption c{token_ids, std::vector<std::int64_t>(token_ids.size(), kIgnoreIndex)};
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    const auto id = token_ids[i];
    if (!mask[i] || id == kClsId || id == kPadId) continue;
    if (!rng.bernoulli(rate)) continue;
    c.targets[i] = id;
    const double u = rng.uniform();
    if (u < 0.8) {
      c.token_ids[i] = kMaskId;
    } else if (u < 0.9 && vocab_size > kNumReserved) {
      c.token_ids[i] = static_cast<std::int64_t>(kNumReserved + rng.uniform_int(vocab_size - kNumReserved));
    }
  }
  return c;
}

std::vector<TdiPairing> sample_tdi_pairing(std::size_t batch_size, Rng& rng, double mismatch_rate) {
  std::vector<TdiPairing> out(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    out[i] = {i, true};
    if (batch_size < 2 || !rng.bernoulli(mismatch_rate)) continue;
    std::size_t j = rng.uniform_int(batch_size - 1);
    if (j >= i) ++j;
    out[i] = {j, false};
  }
  return out;
}

LtrGeometry LtrGeometry::for_config(const FeatureConfig& cfg, std::size_t channels) {
  const std::size_t fh = cfg.image_h / 4, fw = cfg.image_w / 4;
  LtrGeometry g;
  g.channels = channels;
  std::size_t best_gap = SIZE_MAX;
  for (std::size_t gh = 1; gh <= cfg.n; ++gh) {
    if (cfg.n % gh) continue;
    const std::size_t gw = cfg.n / gh;
    if (fh % gh || fw % gw || cfg.image_h % 4 || cfg.image_w % 4) continue;
    const std::size_t gap = gh > gw ? gh - gw : gw - gh;
    if (gap < best_gap) {
      best_gap = gap;
      g.grid_h = gh;
      g.grid_w = gw;
    }
  }
  if (best_gap == SIZE_MAX) {
    throw ConfigError("no token grid of " + std::to_string(cfg.n) + " tokens tiles a " +
                      std::to_string(fh) + "x" + std::to_string(fw) + " decoder feature map");
  }
  g.patch_h = fh / g.grid_h;
  g.patch_w = fw / g.grid_w;
  return g;
}

PretrainHeads PretrainHeads::init(const FeatureConfig& cfg, Rng& rng) {
  PretrainHeads h;
  h.geometry = LtrGeometry::for_config(cfg);
  const std::size_t c = h.geometry.channels, patch = c * h.geometry.patch_h * h.geometry.patch_w;
  h.mlm_w = param_lecun(rng, {cfg.d, cfg.vocab_size}, cfg.d);
  h.mlm_b = param_full({cfg.vocab_size}, 0.0);
  h.ltr_w = param_lecun(rng, {cfg.d, patch}, cfg.d);
  h.ltr_b = param_full({patch}, 0.0);
  h.deconv1_w = param_he(rng, {c, c, 2, 2}, c);
  h.deconv1_b = param_full({c}, 0.0);
  h.deconv2_w = param_lecun(rng, {c, 1, 2, 2}, c);
  h.deconv2_b = param_full({1}, 0.0);
  h.tdi_w = param_lecun(rng, {cfg.d, 1}, cfg.d);
  h.tdi_b = param_full({1}, 0.0);
  return h;
}

void PretrainHeads::collect_decoder(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + "ltr.w", ltr_w});
  out.push_back({prefix + "ltr.b", ltr_b});
  out.push_back({prefix + "ltr.deconv1.w", deconv1_w});
  out.push_back({prefix + "ltr.deconv1.b", deconv1_b});
  out.push_back({prefix + "ltr.deconv2.w", deconv2_w});
  out.push_back({prefix + "ltr.deconv2.b", deconv2_b});
}

void PretrainHeads::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + "mlm.w", mlm_w});
  out.push_back({prefix + "mlm.b", mlm_b});
  collect_decoder(out, prefix);
  out.push_back({prefix + "tdi.w", tdi_w});
  out.push_back({prefix + "tdi.b", tdi_b});
}

Tensor mlm_logits(const Tensor& encoded, const PretrainHeads& heads) {
  return add(matmul(encoded, heads.mlm_w), heads.mlm_b);
}

Tensor mm_mlm_loss(const Tensor& encoded, std::span<const std::int64_t> targets, const PretrainHeads& heads) {
  bool any = false;
  for (auto t : targets) any |= t != kIgnoreIndex;
  if (!any) return Tensor::scalar(0.0);
  return cross_entropy_from_logits(mlm_logits(encoded, heads), targets);
}

Tensor ltr_decode(const Tensor& encoded, const PretrainHeads& heads) {
  const LtrGeometry& g = heads.geometry;
  if (encoded.dim(0) != g.grid_h * g.grid_w) {
    throw DimensionError("ltr_decode: " + std::to_string(encoded.dim(0)) + " tokens for a " +
                         std::to_string(g.grid_h) + "x" + std::to_string(g.grid_w) + " grid");
  }
  Tensor x = add(matmul(encoded, heads.ltr_w), heads.ltr_b);
  x = reshape(x, {g.grid_h, g.grid_w, g.channels, g.patch_h, g.patch_w});
  x = permute(x, {2, 0, 3, 1, 4});
  x = relu(reshape(x, {g.channels, g.grid_h * g.patch_h, g.grid_w * g.patch_w}));
  x = relu(transposed_conv2d(x, heads.deconv1_w, heads.deconv1_b, 2, 0));
  return transposed_conv2d(x, heads.deconv2_w, heads.deconv2_b, 2, 0);
}

Tensor ltr_loss(const Tensor& encoded, const Tensor& original_image, const PretrainHeads& heads,
                bool matched) {
  if (!matched) return Tensor::scalar(0.0);
  Tensor recon = ltr_decode(encoded, heads);
  if (recon.shape() != original_image.shape()) {
    throw DimensionError("ltr_loss: reconstruction " + shape_str(recon.shape()) + " vs image " +
                         shape_str(original_image.shape()));
  }
  return smooth_l1(recon, original_image);
}

Tensor tdi_logit(const Tensor& encoded, const PretrainHeads& heads) {
  return add(matmul(slice(encoded, 0, 0, 1), heads.tdi_w), heads.tdi_b);
}

Tensor tdi_loss(const Tensor& encoded, bool matched, const PretrainHeads& heads) {
  const double label = matched ? 1.0 : 0.0;
  return binary_cross_entropy_from_logit(tdi_logit(encoded, heads), std::span<const double>(&label, 1));
}

PretrainLosses combine_losses(const Tensor& mlm, const Tensor& ltr, const Tensor& tdi,
                              const LossWeights& weights) {
  if (weights.mlm < 0 || weights.ltr < 0 || weights.tdi < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  PretrainLosses out{Tensor(), mlm, ltr, tdi};
  out.total = add(add(scale(mlm, weights.mlm), scale(ltr, weights.ltr)), scale(tdi, weights.tdi));
  return out;
}

PretrainLosses pretrain_loss(const PretrainItem& item, const Model& model, const PretrainHeads& heads,
                             const LossWeights& weights) {
  // The paired image enters the encoder; the reconstruction target is
  // always the item's own image, and is ignored on mismatch anyway.
  const Tensor encoded = model.forward(*item.doc, &item.corruption.token_ids, item.image);
  return combine_losses(mm_mlm_loss(encoded, item.corruption.targets, heads),
                        ltr_loss(encoded, item.doc->image, heads, item.matched),
                        tdi_loss(encoded, item.matched, heads), weights);
}

std::vector<PretrainItem> make_pretrain_batch(const std::vector<const EncodedDocument*>& docs,
                                              std::size_t vocab_size, Rng& rng, double mlm_rate,
                                              double mismatch_rate) {
  const auto pairing = sample_tdi_pairing(docs.size(), rng, mismatch_rate);
  std::vector<PretrainItem> items(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    items[i].doc = docs[i];
    items[i].corruption = apply_mlm_corruption(docs[i]->tokens.token_ids, docs[i]->tokens.mask, vocab_size,
                                                rng, mlm_rate);
    items[i].image = &docs[pairing[i].image_source]->image;
    items[i].matched = pairing[i].matched;
  }
  return items;
}

}  // namespace docformer
