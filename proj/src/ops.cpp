#include "docformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "docformer/error.hpp"

namespace docformer {
namespace {

using detail::TensorData;
using DataPtr = std::shared_ptr<TensorData>;

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_output(const Shape& shape, std::vector<double> values, bool requires_grad) {
  Tensor t = Tensor::from(shape, std::move(values));
  t.impl()->requires_grad = requires_grad;
  return t;
}

void attach(const Tensor& out, Tape::Backward fn) {
  Tape& tape = current_tape();
  const auto& d = out.impl();
  d->tape = &tape;
  d->node = tape.record(std::move(fn));
}

void count_flops(std::uint64_t n) { current_tape().add_flops(n); }

struct Broadcast {
  Shape out;
  std::vector<std::size_t> ia, ib;
};

Broadcast broadcast_index(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1), out(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      out[i] = pa[i];
    } else if (pa[i] == 1) {
      out[i] = pb[i];
    } else {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    }
  }
  std::vector<std::size_t> sa(rank, 0), sb(rank, 0);
  std::size_t ta = 1, tb = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : ta;
    sb[i] = pb[i] == 1 ? 0 : tb;
    ta *= pa[i];
    tb *= pb[i];
  }
  Broadcast r;
  r.out = out;
  const std::size_t n = shape_numel(out);
  r.ia.resize(n);
  r.ib.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t f = 0; f < n; ++f) {
    r.ia[f] = oa;
    r.ib[f] = ob;
    for (std::size_t i = rank; i-- > 0;) {
      ++idx[i];
      oa += sa[i];
      ob += sb[i];
      if (idx[i] < out[i]) break;
      oa -= sa[i] * idx[i];
      ob -= sb[i] * idx[i];
      idx[i] = 0;
    }
  }
  return r;
}

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,k] += A[m,n] B[k,n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
      c[i * k + p] += s;
    }
  }
}

// C[k,n] += A[m,k]^T B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;
};

// cols[(c*k + ki)*k + kj, oy*out_w + ox] = x[c, oy*s + ki - p, ox*s + kj - p]
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t hw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        double* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                ix < static_cast<long>(g.width);
            row[oy * g.out_w + ox] =
                inside ? x[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                           static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* x) {
  const std::size_t hw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const double* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            x[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
              static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

template <typename Fwd, typename Da, typename Db>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Da da,
                          Db db) {
  const bool grad = needs_grad({&a, &b});
  const auto& av = a.impl()->value;
  const auto& bv = b.impl()->value;
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    count_flops(out.size());
    Tensor y = make_output(a.shape(), std::move(out), grad);
    if (grad) {
      attach(y, [ad = a.impl(), bd = b.impl(), yd = y.impl(), da, db] {
        if (yd->grad.empty()) return;
        const auto& g = yd->grad;
        if (ad->requires_grad) {
          auto& ga = ad->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * da(ad->value[i], bd->value[i]);
        }
        if (bd->requires_grad) {
          auto& gb = bd->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            gb[i] += g[i] * db(ad->value[i], bd->value[i]);
        }
      });
    }
    return y;
  }
  auto bc = std::make_shared<Broadcast>(broadcast_index(a.shape(), b.shape(), name));
  std::vector<double> out(bc->ia.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[bc->ia[i]], bv[bc->ib[i]]);
  count_flops(out.size());
  Tensor y = make_output(bc->out, std::move(out), grad);
  if (grad) {
    attach(y, [ad = a.impl(), bd = b.impl(), yd = y.impl(), bc, da, db] {
      if (yd->grad.empty()) return;
      const auto& g = yd->grad;
      if (ad->requires_grad) {
        auto& ga = ad->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[bc->ia[i]] += g[i] * da(ad->value[bc->ia[i]], bd->value[bc->ib[i]]);
      }
      if (bd->requires_grad) {
        auto& gb = bd->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          gb[bc->ib[i]] += g[i] * db(ad->value[bc->ia[i]], bd->value[bc->ib[i]]);
      }
    });
  }
  return y;
}

template <typename Fwd, typename Deriv>
Tensor unary_elementwise(const Tensor& x, Fwd fwd, Deriv deriv, std::uint64_t flops_per) {
  const bool grad = needs_grad({&x});
  const auto& xv = x.impl()->value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  count_flops(flops_per * out.size());
  Tensor y = make_output(x.shape(), std::move(out), grad);
  if (grad) {
    attach(y, [xd = x.impl(), yd = y.impl(), deriv] {
      if (yd->grad.empty()) return;
      auto& gx = xd->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] += yd->grad[i] * deriv(xd->value[i], yd->value[i]);
    });
  }
  return y;
}

// Maps output flat index -> input flat index for a fixed index permutation.
std::shared_ptr<std::vector<std::size_t>> permutation_map(const Shape& in,
                                                          const std::vector<std::size_t>& axes,
                                                          Shape& out) {
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  out.assign(rank, 0);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  const std::size_t n = shape_numel(in);
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t f = 0; f < n; ++f) {
    (*map)[f] = off;
    for (std::size_t i = rank; i-- > 0;) {
      ++idx[i];
      off += stride[i];
      if (idx[i] < out[i]) break;
      off -= stride[i] * idx[i];
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.shape().back() != b.shape()[b.rank() - 2]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape().back();
  const std::size_t n = b.shape().back();
  Shape ba(a.shape().begin(), a.shape().end() - 2);
  Shape bb(b.shape().begin(), b.shape().end() - 2);
  Broadcast bc;
  try {
    bc = broadcast_index(ba, bb, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Shape out_shape = bc.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  const std::size_t batches = bc.ia.size();
  std::vector<double> out(batches * m * n, 0.0);
  const double* av = a.impl()->value.data();
  const double* bv = b.impl()->value.data();
  for (std::size_t t = 0; t < batches; ++t) {
    gemm_nn(av + bc.ia[t] * m * k, bv + bc.ib[t] * k * n, out.data() + t * m * n, m, k, n);
  }
  count_flops(2ULL * m * k * n * batches);
  const bool grad = needs_grad({&a, &b});
  Tensor y = make_output(out_shape, std::move(out), grad);
  if (grad) {
    auto map = std::make_shared<Broadcast>(std::move(bc));
    attach(y, [ad = a.impl(), bd = b.impl(), yd = y.impl(), map, m, k, n] {
      if (yd->grad.empty()) return;
      const double* g = yd->grad.data();
      const std::size_t batches = map->ia.size();
      if (ad->requires_grad) {
        double* ga = ad->ensure_grad().data();
        for (std::size_t t = 0; t < batches; ++t)
          gemm_nt(g + t * m * n, bd->value.data() + map->ib[t] * k * n, ga + map->ia[t] * m * k,
                  m, n, k);
      }
      if (bd->requires_grad) {
        double* gb = bd->ensure_grad().data();
        for (std::size_t t = 0; t < batches; ++t)
          gemm_tn(ad->value.data() + map->ia[t] * m * k, g + t * m * n, gb + map->ib[t] * k * n,
                  m, k, n);
      }
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double s) {
  return unary_elementwise(
      x, [s](double v) { return v * s; }, [s](double, double) { return s; }, 1);
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  std::vector<std::size_t> seen(rank, 0);
  if (axes.size() != rank) throw DimensionError("permute: axes rank mismatch for " + shape_str(x.shape()));
  for (auto ax : axes) {
    if (ax >= rank || seen[ax]++) throw DimensionError("permute: invalid axes for " + shape_str(x.shape()));
  }
  Shape out_shape;
  auto map = permutation_map(x.shape(), axes, out_shape);
  const auto& xv = x.impl()->value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*map)[i]];
  const bool grad = needs_grad({&x});
  Tensor y = make_output(out_shape, std::move(out), grad);
  if (grad) {
    attach(y, [xd = x.impl(), yd = y.impl(), map] {
      if (yd->grad.empty()) return;
      auto& gx = xd->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[(*map)[i]] += yd->grad[i];
    });
  }
  return y;
}

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1) {
  if (axis0 >= x.rank() || axis1 >= x.rank()) {
    throw DimensionError("transpose: axis out of range for " + shape_str(x.shape()));
  }
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  std::swap(axes[axis0], axes[axis1]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const bool grad = needs_grad({&x});
  Tensor y = make_output(shape, x.impl()->value, grad);
  if (grad) {
    attach(y, [xd = x.impl(), yd = y.impl()] {
      if (yd->grad.empty()) return;
      auto& gx = xd->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yd->grad[i];
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: shapes " + shape_str(first) + " and " + shape_str(s) +
                           " differ off the concat axis");
    }
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  bool grad = false;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.shape()[axis];
    const auto& pv = p.impl()->value;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + o * len * inner, len * inner,
                  out.begin() + (o * total + off) * inner);
    }
    off += len;
    grad = grad || p.requires_grad();
  }
  Tensor y = make_output(out_shape, std::move(out), grad);
  if (grad) {
    std::vector<DataPtr> inputs;
    for (const auto& p : parts) inputs.push_back(p.impl());
    attach(y, [inputs, offsets, yd = y.impl(), axis, outer, inner, total] {
      if (yd->grad.empty()) return;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k]->requires_grad) continue;
        auto& g = inputs[k]->ensure_grad();
        const std::size_t len = inputs[k]->shape[axis];
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = yd->grad.data() + (o * total + offsets[k]) * inner;
          double* dst = g.data() + o * len * inner;
          for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                         " invalid for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t full = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  const auto& xv = x.impl()->value;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + (o * full + start) * inner, length * inner,
                out.begin() + o * length * inner);
  }
  const bool grad = needs_grad({&x});
  Tensor y = make_output(out_shape, std::move(out), grad);
  if (grad) {
    attach(y, [xd = x.impl(), yd = y.impl(), outer, inner, full, start, length] {
      if (yd->grad.empty()) return;
      auto& gx = xd->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = yd->grad.data() + o * length * inner;
        double* dst = gx.data() + (o * full + start) * inner;
        for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return y;
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  auto index = std::make_shared<std::vector<std::size_t>>(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw DimensionError("embedding_lookup: id " + std::to_string(ids[i]) + " at position " +
                           std::to_string(i) + " out of range for table with " +
                           std::to_string(rows) + " rows");
    }
    (*index)[i] = static_cast<std::size_t>(ids[i]);
  }
  std::vector<double> out(ids.size() * d);
  const auto& tv = table.impl()->value;
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.begin() + (*index)[i] * d, d, out.begin() + i * d);
  const bool grad = needs_grad({&table});
  Tensor y = make_output({ids.size(), d}, std::move(out), grad);
  if (grad) {
    attach(y, [td = table.impl(), yd = y.impl(), index, d] {
      if (yd->grad.empty()) return;
      auto& gt = td->ensure_grad();
      for (std::size_t i = 0; i < index->size(); ++i) {
        double* dst = gt.data() + (*index)[i] * d;
        const double* src = yd->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return y;
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }, 1);
}

Tensor gelu(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      },
      8);
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); }, 4);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last axis of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.impl()->value;
  const auto& gv = gain.impl()->value;
  const auto& bv = bias.impl()->value;
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  count_flops(8ULL * xv.size());
  const bool grad = needs_grad({&x, &gain, &bias});
  Tensor y = make_output(x.shape(), std::move(out), grad);
  if (grad) {
    attach(y, [xd = x.impl(), gd = gain.impl(), bd = bias.impl(), yd = y.impl(), xhat, inv_std,
               rows, d] {
      if (yd->grad.empty()) return;
      const auto& g = yd->grad;
      if (gd->requires_grad) {
        auto& gg = gd->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
      }
      if (bd->requires_grad) {
        auto& gb = bd->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
      if (xd->requires_grad) {
        auto& gx = xd->ensure_grad();
        const auto& gv = gd->value;
        for (std::size_t r = 0; r < rows; ++r) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[r * d + j] * gv[j];
            s1 += dh;
            s2 += dh * (*xhat)[r * d + j];
          }
          const double inv = (*inv_std)[r];
          const double dd = static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[r * d + j] * gv[j];
            gx[r * d + j] += inv / dd * (dd * dh - s1 - (*xhat)[r * d + j] * s2);
          }
        }
      }
    });
  }
  return y;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0) ||
      weight.dim(2) != weight.dim(3) || stride == 0) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t o = weight.dim(0), k = weight.dim(2);
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != o) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(o) + " output channels");
  }
  ConvGeometry g{c, h, w, k, stride, padding, (h + 2 * padding - k) / stride + 1,
                 (w + 2 * padding - k) / stride + 1};
  const std::size_t ckk = c * k * k, hw = g.out_h * g.out_w;
  auto cols = std::make_shared<std::vector<double>>(ckk * hw);
  im2col(x.impl()->value.data(), g, cols->data());
  std::vector<double> out(o * hw, 0.0);
  gemm_nn(weight.impl()->value.data(), cols->data(), out.data(), o, ckk, hw);
  if (bias.defined()) {
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < hw; ++i) out[oc * hw + i] += bias.impl()->value[oc];
  }
  count_flops(2ULL * o * ckk * hw);
  const bool grad = needs_grad({&x, &weight, &bias});
  Tensor y = make_output({o, g.out_h, g.out_w}, std::move(out), grad);
  if (grad) {
    DataPtr bd = bias.defined() ? bias.impl() : nullptr;
    attach(y, [xd = x.impl(), wd = weight.impl(), bd, yd = y.impl(), cols, g, o, ckk, hw] {
      if (yd->grad.empty()) return;
      const double* gy = yd->grad.data();
      if (wd->requires_grad) gemm_nt(gy, cols->data(), wd->ensure_grad().data(), o, hw, ckk);
      if (bd && bd->requires_grad) {
        auto& gb = bd->ensure_grad();
        for (std::size_t oc = 0; oc < o; ++oc)
          for (std::size_t i = 0; i < hw; ++i) gb[oc] += gy[oc * hw + i];
      }
      if (xd->requires_grad) {
        std::vector<double> dcols(ckk * hw, 0.0);
        gemm_tn(wd->value.data(), gy, dcols.data(), o, ckk, hw);
        col2im(dcols.data(), g, xd->ensure_grad().data());
      }
    });
  }
  return y;
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                         std::size_t stride, std::size_t padding) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(0) != x.dim(0) ||
      weight.dim(2) != weight.dim(3) || stride == 0) {
    throw DimensionError("transposed_conv2d: input " + shape_str(x.shape()) +
                         " incompatible with weight " + shape_str(weight.shape()));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t o = weight.dim(1), k = weight.dim(2);
  if ((h - 1) * stride + k <= 2 * padding || (w - 1) * stride + k <= 2 * padding) {
    throw DimensionError("transposed_conv2d: padding too large for " + shape_str(x.shape()));
  }
  const std::size_t out_h = (h - 1) * stride + k - 2 * padding;
  const std::size_t out_w = (w - 1) * stride + k - 2 * padding;
  if (bias.defined() && bias.numel() != o) {
    throw DimensionError("transposed_conv2d: bias " + shape_str(bias.shape()) +
                         " does not match " + std::to_string(o) + " output channels");
  }
  // The output plays the role of a conv input whose conv output is x.
  ConvGeometry g{o, out_h, out_w, k, stride, padding, h, w};
  const std::size_t okk = o * k * k, hw = h * w;
  std::vector<double> cols(okk * hw, 0.0);
  gemm_tn(weight.impl()->value.data(), x.impl()->value.data(), cols.data(), c, okk, hw);
  std::vector<double> out(o * out_h * out_w, 0.0);
  col2im(cols.data(), g, out.data());
  if (bias.defined()) {
    const std::size_t plane = out_h * out_w;
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < plane; ++i) out[oc * plane + i] += bias.impl()->value[oc];
  }
  count_flops(2ULL * c * okk * hw);
  const bool grad = needs_grad({&x, &weight, &bias});
  Tensor y = make_output({o, out_h, out_w}, std::move(out), grad);
  if (grad) {
    DataPtr bd = bias.defined() ? bias.impl() : nullptr;
    attach(y, [xd = x.impl(), wd = weight.impl(), bd, yd = y.impl(), g, c, o, okk, hw] {
      if (yd->grad.empty()) return;
      std::vector<double> dcols(okk * hw);
      im2col(yd->grad.data(), g, dcols.data());
      if (xd->requires_grad) gemm_nn(wd->value.data(), dcols.data(), xd->ensure_grad().data(), c, okk, hw);
      if (wd->requires_grad) gemm_nt(xd->value.data(), dcols.data(), wd->ensure_grad().data(), c, hw, okk);
      if (bd && bd->requires_grad) {
        auto& gb = bd->ensure_grad();
        const std::size_t plane = g.height * g.width;
        for (std::size_t oc = 0; oc < o; ++oc)
          for (std::size_t i = 0; i < plane; ++i) gb[oc] += yd->grad[oc * plane + i];
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  count_flops(x.numel());
  const bool grad = needs_grad({&x});
  Tensor y = make_output({1}, {s}, grad);
  if (grad) {
    attach(y, [xd = x.impl(), yd = y.impl()] {
      if (yd->grad.empty()) return;
      auto& gx = xd->ensure_grad();
      for (auto& g : gx) g += yd->grad[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor softmax_rows(const Tensor& x, const Mask& mask) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  if (!mask.empty() && mask.size() != n && mask.size() != x.numel()) {
    throw DimensionError("softmax_rows: mask of length " + std::to_string(mask.size()) +
                         " does not fit " + shape_str(x.shape()));
  }
  const bool full_mask = mask.size() == x.numel() && mask.size() != n;
  const auto& xv = x.impl()->value;
  std::vector<double> out(xv.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double* yr = out.data() + r * n;
    auto keep = [&](std::size_t j) {
      if (mask.empty()) return true;
      return (full_mask ? mask[r * n + j] : mask[j]) != 0;
    };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (keep(j)) mx = std::max(mx, xr[j]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw NumericError("softmax_rows: row " + std::to_string(r) + " has no unmasked entry");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!keep(j)) continue;
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  count_flops(4ULL * xv.size());
  const bool grad = needs_grad({&x});
  Tensor y = make_output(x.shape(), std::move(out), grad);
  if (grad) {
    attach(y, [xd = x.impl(), yd = y.impl(), n, rows] {
      if (yd->grad.empty()) return;
      auto& gx = xd->ensure_grad();
      const auto& g = yd->grad;
      const auto& yv = yd->value;
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += yv[r * n + j] * g[r * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[r * n + j] += yv[r * n + j] * (g[r * n + j] - dot);
      }
    });
  }
  return y;
}

Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const std::int64_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw DimensionError("cross_entropy_from_logits: logits " + shape_str(logits.shape()) +
                         " vs " + std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::size_t count = 0;
  for (auto t : targets) {
    if (t == kIgnoreIndex) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw DimensionError("cross_entropy_from_logits: target " + std::to_string(t) +
                           " outside [0, " + std::to_string(c) + ")");
    }
    ++count;
  }
  if (count == 0) return Tensor::scalar(0.0);
  const auto& lv = logits.impl()->value;
  auto probs = std::make_shared<std::vector<double>>(lv.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] == kIgnoreIndex) continue;
    const double* row = lv.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[targets[i]];
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - lse);
  }
  count_flops(4ULL * lv.size());
  const double inv = 1.0 / static_cast<double>(count);
  const bool grad = needs_grad({&logits});
  Tensor y = make_output({1}, {total * inv}, grad);
  if (grad) {
    std::vector<std::int64_t> tgt(targets.begin(), targets.end());
    attach(y, [ld = logits.impl(), yd = y.impl(), probs, tgt = std::move(tgt), n, c, inv] {
      if (yd->grad.empty()) return;
      auto& gl = ld->ensure_grad();
      const double g = yd->grad[0] * inv;
      for (std::size_t i = 0; i < n; ++i) {
        if (tgt[i] == kIgnoreIndex) continue;
        for (std::size_t j = 0; j < c; ++j) gl[i * c + j] += g * (*probs)[i * c + j];
        gl[i * c + static_cast<std::size_t>(tgt[i])] -= g;
      }
    });
  }
  return y;
}

Tensor smooth_l1(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("smooth_l1: prediction " + shape_str(prediction.shape()) +
                         " vs target " + shape_str(target.shape()));
  }
  const auto& pv = prediction.impl()->value;
  const auto& tv = target.impl()->value;
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - tv[i];
    total += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
  }
  count_flops(4ULL * pv.size());
  const double inv = 1.0 / static_cast<double>(pv.size());
  const bool grad = needs_grad({&prediction, &target});
  Tensor y = make_output({1}, {total * inv}, grad);
  if (grad) {
    attach(y, [pd = prediction.impl(), td = target.impl(), yd = y.impl(), inv] {
      if (yd->grad.empty()) return;
      const double g = yd->grad[0] * inv;
      const std::size_t n = pd->value.size();
      std::vector<double>* gp = pd->requires_grad ? &pd->ensure_grad() : nullptr;
      std::vector<double>* gt = td->requires_grad ? &td->ensure_grad() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = pd->value[i] - td->value[i];
        const double dd = std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
        if (gp) (*gp)[i] += g * dd;
        if (gt) (*gt)[i] -= g * dd;
      }
    });
  }
  return y;
}

Tensor binary_cross_entropy_from_logit(const Tensor& logits, std::span<const double> labels) {
  if (logits.numel() != labels.size()) {
    throw DimensionError("binary_cross_entropy_from_logit: " + std::to_string(logits.numel()) +
                         " logits vs " + std::to_string(labels.size()) + " labels");
  }
  const auto& zv = logits.impl()->value;
  double total = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const double z = zv[i];
    total += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  count_flops(6ULL * zv.size());
  const double inv = 1.0 / static_cast<double>(zv.size());
  const bool grad = needs_grad({&logits});
  Tensor y = make_output({1}, {total * inv}, grad);
  if (grad) {
    std::vector<double> lab(labels.begin(), labels.end());
    attach(y, [zd = logits.impl(), yd = y.impl(), lab = std::move(lab), inv] {
      if (yd->grad.empty()) return;
      auto& gz = zd->ensure_grad();
      const double g = yd->grad[0] * inv;
      for (std::size_t i = 0; i < gz.size(); ++i) {
        const double z = zd->value[i];
        const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        gz[i] += g * (s - lab[i]);
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw Error("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factors(x.numel());
  for (auto& f : factors) f = rng.bernoulli(rate) ? 0.0 : keep_scale;
  Tensor m = Tensor::from(x.shape(), std::move(factors));
  return mul(x, m);
}

Tensor relative_bias(const Tensor& vectors, const Tensor& table, std::size_t span,
                     RelativeSide side) {
  if (vectors.rank() != 3 || table.rank() != 2 || table.dim(0) != 2 * span + 1 ||
      table.dim(1) != vectors.dim(2)) {
    throw DimensionError("relative_bias: vectors " + shape_str(vectors.shape()) + " vs table " +
                         shape_str(table.shape()) + " with span " + std::to_string(span));
  }
  const std::size_t heads = vectors.dim(0), n = vectors.dim(1), dh = vectors.dim(2);
  const long s = static_cast<long>(span);
  auto offset_row = [s](std::size_t i, std::size_t j) {
    const long off = std::clamp(static_cast<long>(j) - static_cast<long>(i), -s, s);
    return static_cast<std::size_t>(off + s);
  };
  const auto& vv = vectors.impl()->value;
  const auto& tv = table.impl()->value;
  std::vector<double> out(heads * n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double* v = vv.data() + (h * n + (side == RelativeSide::kQuery ? i : j)) * dh;
        const double* t = tv.data() + offset_row(i, j) * dh;
        double acc = 0.0;
        for (std::size_t k = 0; k < dh; ++k) acc += v[k] * t[k];
        out[(h * n + i) * n + j] = acc;
      }
    }
  }
  count_flops(2ULL * heads * n * n * dh);
  const bool grad = needs_grad({&vectors, &table});
  Tensor y = make_output({heads, n, n}, std::move(out), grad);
  if (grad) {
    attach(y, [vd = vectors.impl(), td = table.impl(), yd = y.impl(), heads, n, dh, side,
               offset_row] {
      if (yd->grad.empty()) return;
      std::vector<double>* gv = vd->requires_grad ? &vd->ensure_grad() : nullptr;
      std::vector<double>* gt = td->requires_grad ? &td->ensure_grad() : nullptr;
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double g = yd->grad[(h * n + i) * n + j];
            if (g == 0.0) continue;
            const std::size_t vrow = (h * n + (side == RelativeSide::kQuery ? i : j)) * dh;
            const std::size_t trow = offset_row(i, j) * dh;
            for (std::size_t k = 0; k < dh; ++k) {
              if (gv) (*gv)[vrow + k] += g * td->value[trow + k];
              if (gt) (*gt)[trow + k] += g * vd->value[vrow + k];
            }
          }
        }
      }
    });
  }
  return y;
}

}  // namespace docformer
