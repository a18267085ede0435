#pragma once

#include <cstdint>
#include <vector>

#include "docformer/features.hpp"
#include "docformer/ops.hpp"
#include "docformer/params.hpp"

namespace docformer {

struct EncoderConfig {
  std::size_t d = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t span = 8;
  bool share_spatial_weights = true;
  // hidden_1 = T̄ + T̄_s when set, T̄ alone otherwise.
  bool inject_spatial_into_hidden = true;
  // Off gives a text-only stack of the same width (no visual branch at all).
  bool visual_branch = true;

  std::size_t d_head() const { return d / heads; }
  void validate() const;
};

enum class Branch { kText, kVisual };

struct LayerParams {
  Tensor wq_text, wk_text, wv_text;
  Tensor wq_vis, wk_vis, wv_vis;
  // Spatial projections. With sharing on, both branches use ws_q/ws_k and
  // the visual copies stay undefined.
  Tensor ws_q, ws_k;
  Tensor ws_q_vis, ws_k_vis;
  Tensor rel_text, rel_vis;  // [2*span+1, d_head]
  Tensor wo, bo;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;

  static LayerParams init(const EncoderConfig& cfg, Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;

  const Tensor& spatial_q(Branch b) const { return b == Branch::kVisual && ws_q_vis.defined() ? ws_q_vis : ws_q; }
  const Tensor& spatial_k(Branch b) const { return b == Branch::kVisual && ws_k_vis.defined() ? ws_k_vis : ws_k; }
};

struct EncoderParams {
  std::vector<LayerParams> layers;

  static EncoderParams init(const EncoderConfig& cfg, Rng& rng);
  void collect(ParamList& out, const std::string& prefix = "encoder.") const;
};

// [N, d] -> [heads, N, d_head] and back.
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x);

// (S W_s^Q)(S W_s^K)^T / sqrt(d_head) per head, with the branch's spatial
// projections.
Tensor spatial_scores(const Tensor& spatial, const LayerParams& layer, Branch branch,
                      const EncoderConfig& cfg);

// Pre-softmax scores [heads, N, N]: scaled key-query term, query- and
// key-relative bias, and the spatial term. Masking happens in the softmax.
Tensor modality_attention_scores(const Tensor& x, const Tensor& spatial, const LayerParams& layer,
                                 Branch branch, const EncoderConfig& cfg);

struct LayerTrace {
  Tensor text_probs;    // [heads, N, N]
  Tensor visual_probs;  // undefined without a visual branch
  // Flops of score, softmax and context products; projections excluded.
  std::uint64_t attention_flops = 0;
};

Tensor layer_forward(const Tensor& hidden, const Tensor& visual, const Tensor& visual_spatial,
                     const Tensor& text_spatial, const Mask& mask, const LayerParams& layer,
                     const EncoderConfig& cfg, LayerTrace* trace = nullptr);

Tensor initial_hidden(const FeatureBundle& bundle, const EncoderConfig& cfg);

Tensor encoder_forward(const FeatureBundle& bundle, const EncoderParams& params,
                       const EncoderConfig& cfg, std::vector<LayerTrace>* traces = nullptr);

}  // namespace docformer
