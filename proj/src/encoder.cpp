#include "docformer/encoder.hpp"

#include <cmath>

#include "docformer/error.hpp"

namespace docformer {
namespace {

constexpr double kRelInitStd = 0.02;

Tensor project(const Tensor& x, const Tensor& w, std::size_t heads) {
  return split_heads(matmul(x, w), heads);
}

}  // namespace

void EncoderConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError("model.d (" + std::to_string(d) + ") must be a positive multiple of model.heads (" +
                      std::to_string(heads) + ")");
  }
}

LayerParams LayerParams::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d, dh = cfg.d_head();
  auto square = [&] { return param_lecun(rng, {d, d}, d); };
  LayerParams p;
  p.wq_text = square();
  p.wk_text = square();
  p.wv_text = square();
  p.wq_vis = square();
  p.wk_vis = square();
  p.wv_vis = square();
  p.ws_q = square();
  p.ws_k = square();
  if (!cfg.share_spatial_weights) {
    p.ws_q_vis = square();
    p.ws_k_vis = square();
  }
  p.rel_text = param_normal(rng, {2 * cfg.span + 1, dh}, kRelInitStd);
  p.rel_vis = param_normal(rng, {2 * cfg.span + 1, dh}, kRelInitStd);
  p.wo = square();
  p.bo = param_full({d}, 0.0);
  p.ffn_w1 = param_lecun(rng, {d, 4 * d}, d);
  p.ffn_b1 = param_full({4 * d}, 0.0);
  p.ffn_w2 = param_lecun(rng, {4 * d, d}, 4 * d);
  p.ffn_b2 = param_full({d}, 0.0);
  p.ln1_g = param_full({d}, 1.0);
  p.ln1_b = param_full({d}, 0.0);
  p.ln2_g = param_full({d}, 1.0);
  p.ln2_b = param_full({d}, 0.0);
  return p;
}

void LayerParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + "text.wq", wq_text});
  out.push_back({prefix + "text.wk", wk_text});
  out.push_back({prefix + "text.wv", wv_text});
  out.push_back({prefix + "visual.wq", wq_vis});
  out.push_back({prefix + "visual.wk", wk_vis});
  out.push_back({prefix + "visual.wv", wv_vis});
  out.push_back({prefix + "spatial.wq", ws_q});
  out.push_back({prefix + "spatial.wk", ws_k});
  if (ws_q_vis.defined()) {
    out.push_back({prefix + "spatial.visual_wq", ws_q_vis});
    out.push_back({prefix + "spatial.visual_wk", ws_k_vis});
  }
  out.push_back({prefix + "text.rel", rel_text});
  out.push_back({prefix + "visual.rel", rel_vis});
  out.push_back({prefix + "out.w", wo});
  out.push_back({prefix + "out.b", bo});
  out.push_back({prefix + "ffn.w1", ffn_w1});
  out.push_back({prefix + "ffn.b1", ffn_b1});
  out.push_back({prefix + "ffn.w2", ffn_w2});
  out.push_back({prefix + "ffn.b2", ffn_b2});
  out.push_back({prefix + "ln1.g", ln1_g});
  out.push_back({prefix + "ln1.b", ln1_b});
  out.push_back({prefix + "ln2.g", ln2_g});
  out.push_back({prefix + "ln2.b", ln2_b});
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, Rng& rng) {
  EncoderParams p;
  for (std::size_t l = 0; l < cfg.layers; ++l) p.layers.push_back(LayerParams::init(cfg, rng));
  return p;
}

void EncoderParams::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t l = 0; l < layers.size(); ++l)
    layers[l].collect(out, prefix + "layer" + std::to_string(l) + ".");
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 2 || x.dim(1) % heads != 0) {
    throw DimensionError("split_heads: " + shape_str(x.shape()) + " into " + std::to_string(heads) +
                         " heads");
  }
  return permute(reshape(x, {x.dim(0), heads, x.dim(1) / heads}), {1, 0, 2});
}

Tensor merge_heads(const Tensor& x) {
  const std::size_t h = x.dim(0), n = x.dim(1), dh = x.dim(2);
  return reshape(permute(x, {1, 0, 2}), {n, h * dh});
}

Tensor spatial_scores(const Tensor& spatial, const LayerParams& layer, Branch branch,
                      const EncoderConfig& cfg) {
  const Tensor sq = project(spatial, layer.spatial_q(branch), cfg.heads);
  const Tensor sk = project(spatial, layer.spatial_k(branch), cfg.heads);
  return scale(matmul(sq, transpose(sk, 1, 2)), 1.0 / std::sqrt(static_cast<double>(cfg.d_head())));
}

namespace {

// Scores from already projected per-head queries/keys; split out so the
// attention flop count excludes the projections.
Tensor scores_from_projections(const Tensor& q, const Tensor& k, const Tensor& sq, const Tensor& sk,
                               const Tensor& rel, const EncoderConfig& cfg) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(cfg.d_head()));
  Tensor s = scale(matmul(q, transpose(k, 1, 2)), inv);
  s = add(s, relative_bias(q, rel, cfg.span, RelativeSide::kQuery));
  s = add(s, relative_bias(k, rel, cfg.span, RelativeSide::kKey));
  return add(s, scale(matmul(sq, transpose(sk, 1, 2)), inv));
}

struct BranchWeights {
  const Tensor& wq;
  const Tensor& wk;
  const Tensor& wv;
  const Tensor& rel;
};

BranchWeights weights_of(const LayerParams& layer, Branch branch) {
  if (branch == Branch::kText) return {layer.wq_text, layer.wk_text, layer.wv_text, layer.rel_text};
  return {layer.wq_vis, layer.wk_vis, layer.wv_vis, layer.rel_vis};
}

void check_inputs(const Tensor& x, const Tensor& spatial, const EncoderConfig& cfg, const char* what) {
  if (x.rank() != 2 || x.dim(1) != cfg.d || spatial.shape() != x.shape()) {
    throw DimensionError(std::string(what) + ": features " + shape_str(x.shape()) + " and spatial " +
                         shape_str(spatial.shape()) + " must both be [N, " + std::to_string(cfg.d) + "]");
  }
}

// Softmax-weighted values of one branch, merged back to [N, d].
Tensor branch_context(const Tensor& x, const Tensor& spatial, const LayerParams& layer, Branch branch,
                      const Mask& mask, const EncoderConfig& cfg, Tensor* probs_out,
                      std::uint64_t* flops) {
  const BranchWeights w = weights_of(layer, branch);
  const Tensor q = project(x, w.wq, cfg.heads);
  const Tensor k = project(x, w.wk, cfg.heads);
  const Tensor v = project(x, w.wv, cfg.heads);
  const Tensor sq = project(spatial, layer.spatial_q(branch), cfg.heads);
  const Tensor sk = project(spatial, layer.spatial_k(branch), cfg.heads);
  const std::uint64_t before = current_tape().flops();
  const Tensor probs = softmax_rows(scores_from_projections(q, k, sq, sk, w.rel, cfg), mask);
  const Tensor ctx = matmul(probs, v);
  if (flops) *flops += current_tape().flops() - before;
  if (probs_out) *probs_out = probs;
  return merge_heads(ctx);
}

}  // namespace

Tensor modality_attention_scores(const Tensor& x, const Tensor& spatial, const LayerParams& layer,
                                 Branch branch, const EncoderConfig& cfg) {
  check_inputs(x, spatial, cfg, "modality_attention_scores");
  const BranchWeights w = weights_of(layer, branch);
  return scores_from_projections(project(x, w.wq, cfg.heads), project(x, w.wk, cfg.heads),
                                 project(spatial, layer.spatial_q(branch), cfg.heads),
                                 project(spatial, layer.spatial_k(branch), cfg.heads), w.rel, cfg);
}

Tensor layer_forward(const Tensor& hidden, const Tensor& visual, const Tensor& visual_spatial,
                     const Tensor& text_spatial, const Mask& mask, const LayerParams& layer,
                     const EncoderConfig& cfg, LayerTrace* trace) {
  check_inputs(hidden, text_spatial, cfg, "layer_forward (text)");
  if (mask.size() != hidden.dim(0)) {
    throw DimensionError("layer_forward: mask of length " + std::to_string(mask.size()) + " for " +
                         std::to_string(hidden.dim(0)) + " tokens");
  }
  std::uint64_t flops = 0;
  Tensor text_probs, vis_probs;
  Tensor ctx = branch_context(hidden, text_spatial, layer, Branch::kText, mask, cfg, &text_probs, &flops);
  if (cfg.visual_branch) {
    check_inputs(visual, visual_spatial, cfg, "layer_forward (visual)");
    // Visual tokens are never padding; only text keys are masked.
    ctx = add(ctx, branch_context(visual, visual_spatial, layer, Branch::kVisual, {}, cfg,
                                  &vis_probs, &flops));
  }
  Tensor h = layer_norm(add(hidden, add(matmul(ctx, layer.wo), layer.bo)), layer.ln1_g, layer.ln1_b);
  Tensor ff = add(matmul(gelu(add(matmul(h, layer.ffn_w1), layer.ffn_b1)), layer.ffn_w2), layer.ffn_b2);
  Tensor out = layer_norm(add(h, ff), layer.ln2_g, layer.ln2_b);
  if (trace) {
    trace->text_probs = text_probs;
    trace->visual_probs = vis_probs;
    trace->attention_flops = flops;
  }
  return out;
}

Tensor initial_hidden(const FeatureBundle& bundle, const EncoderConfig& cfg) {
  return cfg.inject_spatial_into_hidden ? add(bundle.text, bundle.text_spatial) : bundle.text;
}

Tensor encoder_forward(const FeatureBundle& bundle, const EncoderParams& params,
                       const EncoderConfig& cfg, std::vector<LayerTrace>* traces) {
  Tensor hidden = initial_hidden(bundle, cfg);
  if (traces) traces->assign(params.layers.size(), LayerTrace{});
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    hidden = layer_forward(hidden, bundle.visual, bundle.visual_spatial, bundle.text_spatial,
                           bundle.mask, params.layers[l], cfg, traces ? &(*traces)[l] : nullptr);
  }
  return hidden;
}

}  // namespace docformer
