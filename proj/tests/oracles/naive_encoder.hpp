#pragma once

// Loop-by-loop reference of the two-branch attention layer. Shares nothing
// with the library beyond reading parameter values.

#include <algorithm>
#include <cmath>
#include <vector>

#include "docformer/encoder.hpp"

namespace docformer::testing {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.data()[i * t.dim(1) + j];
  return m;
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline Mat naive_matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  return out;
}

// scores[h][i][j] for one branch: content term, query-relative term,
// key-relative term and spatial term.
inline std::vector<Mat> naive_scores(const Mat& x, const Mat& s, const Tensor& wq, const Tensor& wk,
                                     const Tensor& wsq, const Tensor& wsk, const Tensor& rel,
                                     std::size_t heads, std::size_t span) {
  const Mat q = naive_matmul(x, to_mat(wq));
  const Mat k = naive_matmul(x, to_mat(wk));
  const Mat sq = naive_matmul(s, to_mat(wsq));
  const Mat sk = naive_matmul(s, to_mat(wsk));
  const Mat a = to_mat(rel);
  const std::size_t n = x.size(), d = q[0].size(), dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Mat> out(heads, Mat(n, std::vector<double>(n)));
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        long off = static_cast<long>(j) - static_cast<long>(i);
        off = std::clamp(off, -static_cast<long>(span), static_cast<long>(span));
        const auto& aij = a[static_cast<std::size_t>(off + static_cast<long>(span))];
        double content = 0, qrel = 0, krel = 0, spatial = 0;
        for (std::size_t c = 0; c < dh; ++c) {
          const std::size_t f = h * dh + c;
          content += q[i][f] * k[j][f];
          qrel += q[i][f] * aij[c];
          krel += k[j][f] * aij[c];
          spatial += sq[i][f] * sk[j][f];
        }
        out[h][i][j] = content * inv + qrel + krel + spatial * inv;
      }
  return out;
}

inline std::vector<Mat> naive_softmax(const std::vector<Mat>& scores, const Mask& mask) {
  std::vector<Mat> p = scores;
  for (auto& head : p)
    for (auto& row : head) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < row.size(); ++j)
        if (mask.empty() || mask[j]) mx = std::max(mx, row[j]);
      double z = 0;
      for (std::size_t j = 0; j < row.size(); ++j) {
        row[j] = (mask.empty() || mask[j]) ? std::exp(row[j] - mx) : 0.0;
        z += row[j];
      }
      for (auto& v : row) v /= z;
    }
  return p;
}

inline void naive_layer_norm(Mat& x, const Tensor& g, const Tensor& b) {
  for (auto& row : x) {
    double mu = 0, var = 0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    for (std::size_t c = 0; c < row.size(); ++c)
      row[c] = (row[c] - mu) / std::sqrt(var + 1e-5) * g.data()[c] + b.data()[c];
  }
}

struct NaiveLayerOut {
  Mat hidden;
  std::vector<Mat> text_probs;
};

inline NaiveLayerOut naive_layer(const Mat& hidden, const Mat& visual, const Mat& vs, const Mat& ts,
                                 const Mask& mask, const LayerParams& p, const EncoderConfig& cfg) {
  const std::size_t n = hidden.size(), d = cfg.d, heads = cfg.heads, dh = d / heads;
  Mat ctx(n, std::vector<double>(d, 0.0));
  NaiveLayerOut out;
  auto branch = [&](const Mat& x, const Mat& s, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                    const Tensor& wsq, const Tensor& wsk, const Tensor& rel, const Mask& m) {
    auto probs = naive_softmax(naive_scores(x, s, wq, wk, wsq, wsk, rel, heads, cfg.span), m);
    const Mat v = naive_matmul(x, to_mat(wv));
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += probs[h][i][j] * v[j][h * dh + c];
          ctx[i][h * dh + c] += acc;
        }
    return probs;
  };
  out.text_probs = branch(hidden, ts, p.wq_text, p.wk_text, p.wv_text, p.ws_q, p.ws_k, p.rel_text, mask);
  if (cfg.visual_branch) {
    const Tensor& wsq = cfg.share_spatial_weights ? p.ws_q : p.ws_q_vis;
    const Tensor& wsk = cfg.share_spatial_weights ? p.ws_k : p.ws_k_vis;
    branch(visual, vs, p.wq_vis, p.wk_vis, p.wv_vis, wsq, wsk, p.rel_vis, {});
  }
  Mat attn = naive_matmul(ctx, to_mat(p.wo));
  Mat h1(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) h1[i][c] = hidden[i][c] + attn[i][c] + p.bo.data()[c];
  naive_layer_norm(h1, p.ln1_g, p.ln1_b);
  Mat mid = naive_matmul(h1, to_mat(p.ffn_w1));
  for (auto& row : mid)
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double z = row[c] + p.ffn_b1.data()[c];
      row[c] = 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0)));
    }
  Mat ff = naive_matmul(mid, to_mat(p.ffn_w2));
  Mat h2(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) h2[i][c] = h1[i][c] + ff[i][c] + p.ffn_b2.data()[c];
  naive_layer_norm(h2, p.ln2_g, p.ln2_b);
  out.hidden = h2;
  return out;
}

inline Mat naive_encoder(const FeatureBundle& b, const EncoderParams& params, const EncoderConfig& cfg) {
  Mat hidden = to_mat(b.text);
  if (cfg.inject_spatial_into_hidden) {
    const Mat ts = to_mat(b.text_spatial);
    for (std::size_t i = 0; i < hidden.size(); ++i)
      for (std::size_t c = 0; c < hidden[i].size(); ++c) hidden[i][c] += ts[i][c];
  }
  for (const auto& layer : params.layers)
    hidden = naive_layer(hidden, to_mat(b.visual), to_mat(b.visual_spatial), to_mat(b.text_spatial),
                         b.mask, layer, cfg)
                 .hidden;
  return hidden;
}

}  // namespace docformer::testing
