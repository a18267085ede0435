#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "docformer/rng.hpp"
#include "docformer/tensor.hpp"

namespace docformer {

// true = position participates. Length must equal the softmax row length
// (broadcast over all rows) or the full tensor size.
using Mask = std::vector<std::uint8_t>;

// Sentinel for targets that do not contribute to a loss.
inline constexpr std::int64_t kIgnoreIndex = -1;

// Batched matmul over the last two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// Gathers rows of table [V, d]; backward scatter-adds into the table.
Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor sigmoid(const Tensor& x);

// Normalizes over the last axis with learnable gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// x [C,H,W], weight [O,C,k,k], bias [O] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
// x [C,H,W], weight [C,O,k,k], bias [O]. Output extent (H-1)*stride - 2*padding + k.
Tensor transposed_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                         std::size_t stride, std::size_t padding);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Softmax over the last axis. Masked entries are exactly 0. A row with no
// unmasked entry raises NumericError.
Tensor softmax_rows(const Tensor& x, const Mask& mask = {});

// logits [n, C]; mean over targets != kIgnoreIndex. No valid target gives an
// exact 0 that carries no gradient.
Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const std::int64_t> targets);

// Mean smooth-L1 with transition point 1: 0.5 x^2 for |x| < 1, else |x| - 0.5.
Tensor smooth_l1(const Tensor& prediction, const Tensor& target);

// Mean binary cross-entropy over logits against labels in {0, 1}.
Tensor binary_cross_entropy_from_logit(const Tensor& logits, std::span<const double> labels);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

enum class RelativeSide { kQuery, kKey };

// vectors [H, N, dh], table [2*span+1, dh] -> bias [H, N, N] with
//   bias[h,i,j] = vectors[h, side==kQuery ? i : j] . table[clamp(j-i, -span, span) + span]
Tensor relative_bias(const Tensor& vectors, const Tensor& table, std::size_t span,
                     RelativeSide side);

}  // namespace docformer
