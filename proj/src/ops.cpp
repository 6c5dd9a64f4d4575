#include "stratgen/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stratgen/gemm.hpp"

namespace stratgen {

namespace {

bool track(const Tensor& t) { return grad_enabled() && t.requires_grad; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

std::shared_ptr<Node> make_node(std::initializer_list<std::shared_ptr<Node>> parents) {
  auto n = std::make_shared<Node>();
  n->parents.assign(parents);
  return n;
}

// Splits shape at `axis` into [outer, extent, inner].
void axis_split(const Shape& s, int& axis, int64_t& outer, int64_t& extent, int64_t& inner) {
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw DimensionError("axis out of range for " + shape_str(s));
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  extent = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace

void check_finite(const Tensor& t, const char* where) {
  if (!t.all_finite())
    throw ValidationError(std::string(where) + ": non-finite value in tensor " +
                          shape_str(t.shape));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  bool ra = track(a), rb = track(b);
  Tensor out = Tensor::zeros(a.shape, ra || rb);
  const int64_t n = out.size();
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  float* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (out.requires_grad) {
    out.node = make_node({a.node, b.node});
    auto og = out.grad, ag = a.grad, bg = b.grad;
    out.node->backward = [og, ag, bg, ra, rb, n]() {
      const float* g = og->data();
      if (ra) {
        float* d = ag->data();
        for (int64_t i = 0; i < n; ++i) d[i] += g[i];
      }
      if (rb) {
        float* d = bg->data();
        for (int64_t i = 0; i < n; ++i) d[i] += g[i];
      }
    };
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  bool ra = track(a), rb = track(b);
  Tensor out = Tensor::zeros(a.shape, ra || rb);
  const int64_t n = out.size();
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  float* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (out.requires_grad) {
    out.node = make_node({a.node, b.node});
    auto og = out.grad, ag = a.grad, bg = b.grad;
    out.node->backward = [og, ag, bg, ra, rb, n]() {
      const float* g = og->data();
      if (ra) {
        float* d = ag->data();
        for (int64_t i = 0; i < n; ++i) d[i] += g[i];
      }
      if (rb) {
        float* d = bg->data();
        for (int64_t i = 0; i < n; ++i) d[i] -= g[i];
      }
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  bool ra = track(a), rb = track(b);
  Tensor out = Tensor::zeros(a.shape, ra || rb);
  const int64_t n = out.size();
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  float* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (out.requires_grad) {
    out.node = make_node({a.node, b.node});
    auto og = out.grad, ag = a.grad, bg = b.grad, ad = a.data, bd = b.data;
    out.node->backward = [og, ag, bg, ad, bd, ra, rb, n]() {
      const float* g = og->data();
      if (ra) {
        float* d = ag->data();
        const float* x = bd->data();
        for (int64_t i = 0; i < n; ++i) d[i] += g[i] * x[i];
      }
      if (rb) {
        float* d = bg->data();
        const float* x = ad->data();
        for (int64_t i = 0; i < n; ++i) d[i] += g[i] * x[i];
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& a, float s) {
  bool ra = track(a);
  Tensor out = Tensor::zeros(a.shape, ra);
  const int64_t n = out.size();
  const float* pa = a.ptr();
  float* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  if (out.requires_grad) {
    out.node = make_node({a.node});
    auto og = out.grad, ag = a.grad;
    out.node->backward = [og, ag, s, n]() {
      const float* g = og->data();
      float* d = ag->data();
      for (int64_t i = 0; i < n; ++i) d[i] += g[i] * s;
    };
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (b.ndim() != 1 || x.ndim() < 1 || x.shape.back() != b.shape[0])
    throw DimensionError("add_bias: bias " + shape_str(b.shape) + " does not match " +
                         shape_str(x.shape));
  bool rx = track(x), rb = track(b);
  Tensor out = Tensor::zeros(x.shape, rx || rb);
  const int64_t d = b.shape[0];
  const int64_t rows = out.size() / d;
  const float* px = x.ptr();
  const float* pb = b.ptr();
  float* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) po[r * d + j] = px[r * d + j] + pb[j];
  if (out.requires_grad) {
    out.node = make_node({x.node, b.node});
    auto og = out.grad, xg = x.grad, bg = b.grad;
    out.node->backward = [og, xg, bg, rx, rb, rows, d]() {
      const float* g = og->data();
      if (rx) {
        float* gd = xg->data();
        const int64_t n = rows * d;
        for (int64_t i = 0; i < n; ++i) gd[i] += g[i];
      }
      if (rb) {
        float* gd = bg->data();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) gd[j] += g[r * d + j];
      }
    };
  }
  return out;
}

Tensor add_bcast0(const Tensor& x, const Tensor& y) {
  if (x.ndim() < 2)
    throw DimensionError("add_bcast0: x must have a leading batch axis");
  Shape rest(x.shape.begin() + 1, x.shape.end());
  if (y.shape != rest)
    throw DimensionError("add_bcast0: " + shape_str(y.shape) + " does not match trailing " +
                         shape_str(rest));
  bool rx = track(x), ry = track(y);
  Tensor out = Tensor::zeros(x.shape, rx || ry);
  const int64_t bsz = x.shape[0];
  const int64_t n = y.size();
  const float* px = x.ptr();
  const float* py = y.ptr();
  float* po = out.ptr();
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t i = 0; i < n; ++i) po[b * n + i] = px[b * n + i] + py[i];
  if (out.requires_grad) {
    out.node = make_node({x.node, y.node});
    auto og = out.grad, xg = x.grad, yg = y.grad;
    out.node->backward = [og, xg, yg, rx, ry, bsz, n]() {
      const float* g = og->data();
      if (rx) {
        float* gd = xg->data();
        for (int64_t i = 0; i < bsz * n; ++i) gd[i] += g[i];
      }
      if (ry) {
        float* gd = yg->data();
        for (int64_t b = 0; b < bsz; ++b)
          for (int64_t i = 0; i < n; ++i) gd[i] += g[b * n + i];
      }
    };
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw DimensionError("matmul: expects 2-d operands, got " + shape_str(a.shape) + " and " +
                         shape_str(b.shape));
  if (a.shape[1] != b.shape[0])
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  bool ra = track(a), rb = track(b);
  Tensor out = Tensor::zeros({m, n}, ra || rb);
  gemm_nn(a.ptr(), b.ptr(), out.ptr(), m, n, k, false);
  if (out.requires_grad) {
    out.node = make_node({a.node, b.node});
    auto og = out.grad, ag = a.grad, bg = b.grad, ad = a.data, bd = b.data;
    out.node->backward = [og, ag, bg, ad, bd, ra, rb, m, n, k]() {
      if (ra) gemm_nt(og->data(), bd->data(), ag->data(), m, k, n, true);
      if (rb) gemm_tn(ad->data(), og->data(), bg->data(), k, n, m, true);
    };
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw DimensionError("matmul_nt: expects 2-d operands");
  if (a.shape[1] != b.shape[1])
    throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape) + "^T");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
  bool ra = track(a), rb = track(b);
  Tensor out = Tensor::zeros({m, n}, ra || rb);
  gemm_nt(a.ptr(), b.ptr(), out.ptr(), m, n, k, false);
  if (out.requires_grad) {
    out.node = make_node({a.node, b.node});
    auto og = out.grad, ag = a.grad, bg = b.grad, ad = a.data, bd = b.data;
    out.node->backward = [og, ag, bg, ad, bd, ra, rb, m, n, k]() {
      // c = a * b^T ; da = g * b ; db = g^T * a
      if (ra) gemm_nn(og->data(), bd->data(), ag->data(), m, k, n, true);
      if (rb) gemm_tn(og->data(), ad->data(), bg->data(), n, k, m, true);
    };
  }
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  if (ta && tb) throw ContractError("bmm: double transpose unsupported");
  if (a.ndim() != 3 || b.ndim() != 3)
    throw DimensionError("bmm: expects 3-d operands, got " + shape_str(a.shape) + " and " +
                         shape_str(b.shape));
  if (a.shape[0] != b.shape[0]) throw DimensionError("bmm: batch extents differ");
  const int g = a.shape[0];
  const int m = ta ? a.shape[2] : a.shape[1];
  const int ka = ta ? a.shape[1] : a.shape[2];
  const int kb = tb ? b.shape[2] : b.shape[1];
  const int n = tb ? b.shape[1] : b.shape[2];
  if (ka != kb)
    throw DimensionError("bmm: inner extents differ, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
  const int k = ka;
  bool ra = track(a), rb = track(b);
  Tensor out = Tensor::zeros({g, m, n}, ra || rb);
  const int64_t sa = static_cast<int64_t>(a.shape[1]) * a.shape[2];
  const int64_t sb = static_cast<int64_t>(b.shape[1]) * b.shape[2];
  const int64_t so = static_cast<int64_t>(m) * n;
  for (int i = 0; i < g; ++i) {
    const float* pa = a.ptr() + i * sa;
    const float* pb = b.ptr() + i * sb;
    float* po = out.ptr() + i * so;
    if (!ta && !tb)
      gemm_nn(pa, pb, po, m, n, k, false);
    else if (!ta && tb)
      gemm_nt(pa, pb, po, m, n, k, false);
    else
      gemm_tn(pa, pb, po, m, n, k, false);
  }
  if (out.requires_grad) {
    out.node = make_node({a.node, b.node});
    auto og = out.grad, ag = a.grad, bg = b.grad, ad = a.data, bd = b.data;
    out.node->backward = [og, ag, bg, ad, bd, ra, rb, ta, tb, g, m, n, k, sa, sb, so]() {
      for (int i = 0; i < g; ++i) {
        const float* pg = og->data() + i * so;
        const float* pa = ad->data() + i * sa;
        const float* pb = bd->data() + i * sb;
        if (!ta && !tb) {
          if (ra) gemm_nt(pg, pb, ag->data() + i * sa, m, k, n, true);
          if (rb) gemm_tn(pa, pg, bg->data() + i * sb, k, n, m, true);
        } else if (!ta && tb) {
          // c = a * b^T ; da = g * b ; db = g^T * a
          if (ra) gemm_nn(pg, pb, ag->data() + i * sa, m, k, n, true);
          if (rb) gemm_tn(pg, pa, bg->data() + i * sb, n, k, m, true);
        } else {
          // c = a^T * b ; da = b * g^T ; db = a * g
          if (ra) gemm_nt(pb, pg, ag->data() + i * sa, k, m, n, true);
          if (rb) gemm_nn(pa, pg, bg->data() + i * sb, k, n, m, true);
        }
      }
    };
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape) + " as " +
                         shape_str(shape));
  Tensor out;
  out.shape = std::move(shape);
  out.data = x.data;
  out.requires_grad = track(x);
  if (out.requires_grad) {
    out.grad = x.grad;  // same buffer: children accumulate straight into x's grad
    out.node = make_node({x.node});
  }
  return out;
}

namespace {
void permute_raw(const float* in, float* out, const Shape& in_shape,
                 const std::vector<int>& perm, bool scatter_add) {
  const int nd = static_cast<int>(in_shape.size());
  Shape out_shape(nd);
  for (int i = 0; i < nd; ++i) out_shape[i] = in_shape[perm[i]];
  std::vector<int64_t> in_strides(nd, 1), map(nd);
  for (int i = nd - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  for (int i = 0; i < nd; ++i) map[i] = in_strides[perm[i]];
  const int64_t total = shape_numel(in_shape);
  std::vector<int64_t> coord(nd, 0);
  int64_t src = 0;
  for (int64_t o = 0; o < total; ++o) {
    if (scatter_add)
      out[src] += in[o];
    else
      out[o] = in[src];
    // odometer increment over out coordinates
    for (int i = nd - 1; i >= 0; --i) {
      src += map[i];
      if (++coord[i] < out_shape[i]) break;
      src -= map[i] * out_shape[i];
      coord[i] = 0;
    }
  }
}
}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int nd = x.ndim();
  if (static_cast<int>(perm.size()) != nd) throw DimensionError("permute: rank mismatch");
  std::vector<bool> used(nd, false);
  for (int p : perm) {
    if (p < 0 || p >= nd || used[p]) throw DimensionError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(nd);
  for (int i = 0; i < nd; ++i) out_shape[i] = x.shape[perm[i]];
  bool rx = track(x);
  Tensor out = Tensor::zeros(out_shape, rx);
  permute_raw(x.ptr(), out.ptr(), x.shape, perm, false);
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad;
    Shape in_shape = x.shape;
    out.node->backward = [og, xg, in_shape, perm]() {
      permute_raw(og->data(), xg->data(), in_shape, perm, true);
    };
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  int64_t outer, extent, inner;
  int ax = axis;
  axis_split(x.shape, ax, outer, extent, inner);
  if (start < 0 || len <= 0 || start + len > extent)
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of extent " +
                         std::to_string(extent));
  Shape out_shape = x.shape;
  out_shape[ax] = len;
  bool rx = track(x);
  Tensor out = Tensor::zeros(out_shape, rx);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(po + o * len * inner, px + (o * extent + start) * inner,
                sizeof(float) * len * inner);
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad;
    out.node->backward = [og, xg, outer, extent, inner, start, len]() {
      const float* g = og->data();
      float* d = xg->data();
      for (int64_t o = 0; o < outer; ++o) {
        const float* gs = g + o * len * inner;
        float* ds = d + (o * extent + start) * inner;
        for (int64_t i = 0; i < len * inner; ++i) ds[i] += gs[i];
      }
    };
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.ndim() != b.ndim()) throw DimensionError("concat: rank mismatch");
  int ax = axis < 0 ? axis + a.ndim() : axis;
  for (int i = 0; i < a.ndim(); ++i)
    if (i != ax && a.shape[i] != b.shape[i])
      throw DimensionError("concat: shapes " + shape_str(a.shape) + " and " +
                           shape_str(b.shape) + " differ off-axis");
  int64_t outer, ea, inner;
  int tmp = ax;
  axis_split(a.shape, tmp, outer, ea, inner);
  const int64_t eb = b.shape[ax];
  Shape out_shape = a.shape;
  out_shape[ax] = static_cast<int>(ea + eb);
  bool ra = track(a), rb = track(b);
  Tensor out = Tensor::zeros(out_shape, ra || rb);
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  float* po = out.ptr();
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(po + o * (ea + eb) * inner, pa + o * ea * inner, sizeof(float) * ea * inner);
    std::memcpy(po + (o * (ea + eb) + ea) * inner, pb + o * eb * inner,
                sizeof(float) * eb * inner);
  }
  if (out.requires_grad) {
    out.node = make_node({a.node, b.node});
    auto og = out.grad, ag = a.grad, bg = b.grad;
    out.node->backward = [og, ag, bg, ra, rb, outer, ea, eb, inner]() {
      const float* g = og->data();
      for (int64_t o = 0; o < outer; ++o) {
        if (ra) {
          float* d = ag->data() + o * ea * inner;
          const float* gs = g + o * (ea + eb) * inner;
          for (int64_t i = 0; i < ea * inner; ++i) d[i] += gs[i];
        }
        if (rb) {
          float* d = bg->data() + o * eb * inner;
          const float* gs = g + (o * (ea + eb) + ea) * inner;
          for (int64_t i = 0; i < eb * inner; ++i) d[i] += gs[i];
        }
      }
    };
  }
  return out;
}

Tensor sum(const Tensor& x) {
  bool rx = track(x);
  Tensor out = Tensor::zeros({1}, rx);
  double acc = 0.0;
  const float* px = x.ptr();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  (*out.data)[0] = static_cast<float>(acc);
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad;
    out.node->backward = [og, xg, n]() {
      const float g = (*og)[0];
      float* d = xg->data();
      for (int64_t i = 0; i < n; ++i) d[i] += g;
    };
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0f / static_cast<float>(x.size())); }

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  bool ra = track(a), rb = track(b);
  Tensor out = Tensor::zeros({1}, ra || rb);
  const int64_t n = a.size();
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    acc += d * d;
  }
  (*out.data)[0] = static_cast<float>(acc / static_cast<double>(n));
  if (out.requires_grad) {
    out.node = make_node({a.node, b.node});
    auto og = out.grad, ag = a.grad, bg = b.grad, ad = a.data, bd = b.data;
    out.node->backward = [og, ag, bg, ad, bd, ra, rb, n]() {
      const float g = (*og)[0] * 2.0f / static_cast<float>(n);
      const float* pa = ad->data();
      const float* pb = bd->data();
      if (ra) {
        float* d = ag->data();
        for (int64_t i = 0; i < n; ++i) d[i] += g * (pa[i] - pb[i]);
      }
      if (rb) {
        float* d = bg->data();
        for (int64_t i = 0; i < n; ++i) d[i] -= g * (pa[i] - pb[i]);
      }
    };
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  int64_t outer, extent, inner;
  axis_split(x.shape, axis, outer, extent, inner);
  bool rx = track(x);
  Tensor out = Tensor::zeros(x.shape, rx);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * extent * inner + in;
      float mx = px[base];
      for (int64_t k = 1; k < extent; ++k) mx = std::max(mx, px[base + k * inner]);
      double z = 0.0;
      for (int64_t k = 0; k < extent; ++k) {
        const float e = std::exp(px[base + k * inner] - mx);
        po[base + k * inner] = e;
        z += e;
      }
      const float invz = static_cast<float>(1.0 / z);
      for (int64_t k = 0; k < extent; ++k) po[base + k * inner] *= invz;
    }
  }
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad, od = out.data;
    out.node->backward = [og, xg, od, outer, extent, inner]() {
      const float* g = og->data();
      const float* y = od->data();
      float* d = xg->data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * extent * inner + in;
          double dot = 0.0;
          for (int64_t k = 0; k < extent; ++k)
            dot += static_cast<double>(g[base + k * inner]) * y[base + k * inner];
          const float dt = static_cast<float>(dot);
          for (int64_t k = 0; k < extent; ++k) {
            const int64_t idx = base + k * inner;
            d[idx] += y[idx] * (g[idx] - dt);
          }
        }
    };
  }
  return out;
}

namespace {
// Shared row kernel: smoothed CE forward + optional softmax cache for backward.
// loss_row = lse - (1-eps)*logit[target] - (eps/K)*sum(logits)
double smoothed_ce_row(const float* logits, int K, int target, float eps, float* softmax_out) {
  float mx = logits[0];
  for (int k = 1; k < K; ++k) mx = std::max(mx, logits[k]);
  double z = 0.0, lsum = 0.0;
  for (int k = 0; k < K; ++k) {
    z += std::exp(static_cast<double>(logits[k]) - mx);
    lsum += logits[k];
  }
  const double lse = std::log(z) + mx;
  if (softmax_out) {
    const double invz = 1.0 / z;
    for (int k = 0; k < K; ++k)
      softmax_out[k] = static_cast<float>(std::exp(static_cast<double>(logits[k]) - mx) * invz);
  }
  return lse - (1.0 - eps) * logits[target] - (eps / K) * lsum;
}
}  // namespace

Tensor cross_entropy_smoothed(const Tensor& logits, const std::vector<int>& targets,
                              float smoothing) {
  if (logits.ndim() != 2) throw DimensionError("cross_entropy_smoothed: logits must be [B,K]");
  const int B = logits.shape[0], K = logits.shape[1];
  if (static_cast<int>(targets.size()) != B)
    throw DimensionError("cross_entropy_smoothed: targets length mismatch");
  if (smoothing < 0.0f || smoothing >= 1.0f)
    throw ContractError("cross_entropy_smoothed: smoothing must be in [0,1)");
  for (int t : targets)
    if (t < 0 || t >= K)
      throw IndexError("cross_entropy_smoothed: target " + std::to_string(t) +
                       " outside [0," + std::to_string(K) + ")");
  bool rx = track(logits);
  Tensor out = Tensor::zeros({1}, rx);
  auto probs = rx ? std::make_shared<std::vector<float>>(static_cast<size_t>(B) * K) : nullptr;
  double acc = 0.0;
  for (int b = 0; b < B; ++b)
    acc += smoothed_ce_row(logits.ptr() + static_cast<int64_t>(b) * K, K, targets[b], smoothing,
                           probs ? probs->data() + static_cast<int64_t>(b) * K : nullptr);
  (*out.data)[0] = static_cast<float>(acc / B);
  if (out.requires_grad) {
    out.node = make_node({logits.node});
    auto og = out.grad, xg = logits.grad;
    auto tgt = std::make_shared<std::vector<int>>(targets);
    out.node->backward = [og, xg, probs, tgt, B, K, smoothing]() {
      const float g = (*og)[0] / static_cast<float>(B);
      float* d = xg->data();
      const float* p = probs->data();
      const float off = smoothing / static_cast<float>(K);
      for (int b = 0; b < B; ++b) {
        const int64_t base = static_cast<int64_t>(b) * K;
        for (int k = 0; k < K; ++k) d[base + k] += g * (p[base + k] - off);
        d[base + (*tgt)[b]] -= g * (1.0f - smoothing);
      }
    };
  }
  return out;
}

Tensor masked_nll(const Tensor& logits, const std::vector<int>& targets,
                  const std::vector<uint8_t>& mask, float smoothing) {
  if (logits.ndim() < 2) throw DimensionError("masked_nll: logits must be [...,K]");
  const int K = logits.shape.back();
  const int64_t rows = logits.size() / K;
  if (static_cast<int64_t>(targets.size()) != rows ||
      static_cast<int64_t>(mask.size()) != rows)
    throw DimensionError("masked_nll: targets/mask length mismatch");
  if (smoothing < 0.0f || smoothing >= 1.0f)
    throw ContractError("masked_nll: smoothing must be in [0,1)");
  std::vector<int64_t> active;
  for (int64_t r = 0; r < rows; ++r)
    if (mask[r]) active.push_back(r);
  if (active.empty()) throw ContractError("masked_nll: mask selects no positions");
  for (int64_t r : active)
    if (targets[r] < 0 || targets[r] >= K)
      throw IndexError("masked_nll: target outside vocabulary at masked position");

  bool rx = track(logits);
  Tensor out = Tensor::zeros({1}, rx);
  auto probs =
      rx ? std::make_shared<std::vector<float>>(active.size() * static_cast<size_t>(K)) : nullptr;
  double acc = 0.0;
  for (size_t i = 0; i < active.size(); ++i)
    acc += smoothed_ce_row(logits.ptr() + active[i] * K, K, targets[active[i]], smoothing,
                           probs ? probs->data() + i * K : nullptr);
  (*out.data)[0] = static_cast<float>(acc / static_cast<double>(active.size()));
  if (out.requires_grad) {
    out.node = make_node({logits.node});
    auto og = out.grad, xg = logits.grad;
    auto act = std::make_shared<std::vector<int64_t>>(std::move(active));
    auto tgt = std::make_shared<std::vector<int>>(targets);
    out.node->backward = [og, xg, probs, act, tgt, K, smoothing]() {
      const float g = (*og)[0] / static_cast<float>(act->size());
      float* d = xg->data();
      const float off = smoothing / static_cast<float>(K);
      for (size_t i = 0; i < act->size(); ++i) {
        const int64_t base = (*act)[i] * K;
        const float* p = probs->data() + i * K;
        for (int k = 0; k < K; ++k) d[base + k] += g * (p[k] - off);
        d[base + (*tgt)[(*act)[i]]] -= g * (1.0f - smoothing);
      }
    };
  }
  return out;
}

namespace {
constexpr float kNormEps = 1e-5f;
}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.ndim() < 1) throw DimensionError("layer_norm: scalar input");
  const int D = x.shape.back();
  if (D <= 1) throw ContractError("layer_norm: normalized extent must be > 1");
  if (gain.shape != Shape{D} || bias.shape != Shape{D})
    throw DimensionError("layer_norm: gain/bias must be [D]");
  const int64_t rows = x.size() / D;
  bool rx = track(x), rg = track(gain), rb = track(bias);
  Tensor out = Tensor::zeros(x.shape, rx || rg || rb);
  auto xhat = (out.requires_grad) ? std::make_shared<std::vector<float>>(x.size()) : nullptr;
  auto rstd = (out.requires_grad) ? std::make_shared<std::vector<float>>(rows) : nullptr;
  const float* px = x.ptr();
  const float* pg = gain.ptr();
  const float* pb = bias.ptr();
  float* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = px + r * D;
    double m = 0.0;
    for (int j = 0; j < D; ++j) m += xr[j];
    m /= D;
    double v = 0.0;
    for (int j = 0; j < D; ++j) {
      const double d = xr[j] - m;
      v += d * d;
    }
    v /= D;
    const float rs = static_cast<float>(1.0 / std::sqrt(v + kNormEps));
    for (int j = 0; j < D; ++j) {
      const float h = (xr[j] - static_cast<float>(m)) * rs;
      if (xhat) (*xhat)[r * D + j] = h;
      po[r * D + j] = h * pg[j] + pb[j];
    }
    if (rstd) (*rstd)[r] = rs;
  }
  if (out.requires_grad) {
    out.node = make_node({x.node, gain.node, bias.node});
    auto og = out.grad, xg = x.grad, gg = gain.grad, bg = bias.grad, gd = gain.data;
    out.node->backward = [og, xg, gg, bg, gd, xhat, rstd, rx, rg, rb, rows, D]() {
      const float* g = og->data();
      for (int64_t r = 0; r < rows; ++r) {
        const float* gr = g + r * D;
        const float* hr = xhat->data() + r * D;
        if (rg) {
          float* d = gg->data();
          for (int j = 0; j < D; ++j) d[j] += gr[j] * hr[j];
        }
        if (rb) {
          float* d = bg->data();
          for (int j = 0; j < D; ++j) d[j] += gr[j];
        }
        if (rx) {
          const float* w = gd->data();
          double s1 = 0.0, s2 = 0.0;
          for (int j = 0; j < D; ++j) {
            const double t = static_cast<double>(gr[j]) * w[j];
            s1 += t;
            s2 += t * hr[j];
          }
          const float m1 = static_cast<float>(s1 / D);
          const float m2 = static_cast<float>(s2 / D);
          float* d = xg->data() + r * D;
          const float rs = (*rstd)[r];
          for (int j = 0; j < D; ++j) d[j] += rs * (gr[j] * w[j] - m1 - hr[j] * m2);
        }
      }
    };
  }
  return out;
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gain, const Tensor& bias) {
  if (x.ndim() != 4) throw DimensionError("group_norm: expects [B,H,W,C]");
  const int B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3];
  if (groups <= 0 || C % groups != 0)
    throw DimensionError("group_norm: channels " + std::to_string(C) + " not divisible by " +
                         std::to_string(groups) + " groups");
  if (gain.shape != Shape{C} || bias.shape != Shape{C})
    throw DimensionError("group_norm: gain/bias must be [C]");
  const int cg = C / groups;
  const int64_t gsize = static_cast<int64_t>(H) * W * cg;
  if (gsize <= 1) throw ContractError("group_norm: normalized extent must be > 1");
  bool rx = track(x), rg = track(gain), rb = track(bias);
  Tensor out = Tensor::zeros(x.shape, rx || rg || rb);
  const int64_t ngroups = static_cast<int64_t>(B) * groups;
  auto xhat = out.requires_grad ? std::make_shared<std::vector<float>>(x.size()) : nullptr;
  auto rstd = out.requires_grad ? std::make_shared<std::vector<float>>(ngroups) : nullptr;
  const float* px = x.ptr();
  const float* pg = gain.ptr();
  const float* pb = bias.ptr();
  float* po = out.ptr();
  const int64_t spatial = static_cast<int64_t>(H) * W;
  for (int b = 0; b < B; ++b) {
    for (int g = 0; g < groups; ++g) {
      double m = 0.0;
      for (int64_t s = 0; s < spatial; ++s)
        for (int c = 0; c < cg; ++c) m += px[(b * spatial + s) * C + g * cg + c];
      m /= static_cast<double>(gsize);
      double v = 0.0;
      for (int64_t s = 0; s < spatial; ++s)
        for (int c = 0; c < cg; ++c) {
          const double d = px[(b * spatial + s) * C + g * cg + c] - m;
          v += d * d;
        }
      v /= static_cast<double>(gsize);
      const float rs = static_cast<float>(1.0 / std::sqrt(v + kNormEps));
      if (rstd) (*rstd)[b * groups + g] = rs;
      for (int64_t s = 0; s < spatial; ++s)
        for (int c = 0; c < cg; ++c) {
          const int64_t idx = (b * spatial + s) * C + g * cg + c;
          const float h = (px[idx] - static_cast<float>(m)) * rs;
          if (xhat) (*xhat)[idx] = h;
          po[idx] = h * pg[g * cg + c] + pb[g * cg + c];
        }
    }
  }
  if (out.requires_grad) {
    out.node = make_node({x.node, gain.node, bias.node});
    auto og = out.grad, xg = x.grad, gg = gain.grad, bg = bias.grad, gd = gain.data;
    out.node->backward = [og, xg, gg, bg, gd, xhat, rstd, rx, rg, rb, B, groups, cg, C,
                          spatial, gsize]() {
      const float* g = og->data();
      const float* h = xhat->data();
      for (int b = 0; b < B; ++b)
        for (int gi = 0; gi < groups; ++gi) {
          if (rg || rb) {
            for (int c = 0; c < cg; ++c) {
              double dg = 0.0, db = 0.0;
              for (int64_t s = 0; s < spatial; ++s) {
                const int64_t idx = (b * spatial + s) * C + gi * cg + c;
                dg += static_cast<double>(g[idx]) * h[idx];
                db += g[idx];
              }
              if (rg) (*gg)[gi * cg + c] += static_cast<float>(dg);
              if (rb) (*bg)[gi * cg + c] += static_cast<float>(db);
            }
          }
          if (rx) {
            const float* w = gd->data();
            double s1 = 0.0, s2 = 0.0;
            for (int64_t s = 0; s < spatial; ++s)
              for (int c = 0; c < cg; ++c) {
                const int64_t idx = (b * spatial + s) * C + gi * cg + c;
                const double t = static_cast<double>(g[idx]) * w[gi * cg + c];
                s1 += t;
                s2 += t * h[idx];
              }
            const float m1 = static_cast<float>(s1 / static_cast<double>(gsize));
            const float m2 = static_cast<float>(s2 / static_cast<double>(gsize));
            const float rs = (*rstd)[b * groups + gi];
            float* d = xg->data();
            for (int64_t s = 0; s < spatial; ++s)
              for (int c = 0; c < cg; ++c) {
                const int64_t idx = (b * spatial + s) * C + gi * cg + c;
                d[idx] += rs * (g[idx] * w[gi * cg + c] - m1 - h[idx] * m2);
              }
          }
        }
    };
  }
  return out;
}

namespace {
inline float sigmoid_f(float x) {
  if (x >= 0.0f) {
    const float e = std::exp(-x);
    return 1.0f / (1.0f + e);
  }
  const float e = std::exp(x);
  return e / (1.0f + e);
}
constexpr float kGeluC0 = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluC1 = 0.044715f;
}  // namespace

Tensor swish(const Tensor& x) {
  bool rx = track(x);
  Tensor out = Tensor::zeros(x.shape, rx);
  const int64_t n = x.size();
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] * sigmoid_f(px[i]);
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad, xd = x.data;
    out.node->backward = [og, xg, xd, n]() {
      const float* g = og->data();
      const float* px = xd->data();
      float* d = xg->data();
      for (int64_t i = 0; i < n; ++i) {
        const float s = sigmoid_f(px[i]);
        d[i] += g[i] * (s + px[i] * s * (1.0f - s));
      }
    };
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  bool rx = track(x);
  Tensor out = Tensor::zeros(x.shape, rx);
  const int64_t n = x.size();
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) {
    const float v = px[i];
    po[i] = 0.5f * v * (1.0f + std::tanh(kGeluC0 * (v + kGeluC1 * v * v * v)));
  }
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad, xd = x.data;
    out.node->backward = [og, xg, xd, n]() {
      const float* g = og->data();
      const float* px = xd->data();
      float* d = xg->data();
      for (int64_t i = 0; i < n; ++i) {
        const float v = px[i];
        const float u = kGeluC0 * (v + kGeluC1 * v * v * v);
        const float t = std::tanh(u);
        const float du = kGeluC0 * (1.0f + 3.0f * kGeluC1 * v * v);
        d[i] += g[i] * (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du);
      }
    };
  }
  return out;
}

Tensor sigmoid_op(const Tensor& x) {
  bool rx = track(x);
  Tensor out = Tensor::zeros(x.shape, rx);
  const int64_t n = x.size();
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = sigmoid_f(px[i]);
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad, od = out.data;
    out.node->backward = [og, xg, od, n]() {
      const float* g = og->data();
      const float* y = od->data();
      float* d = xg->data();
      for (int64_t i = 0; i < n; ++i) d[i] += g[i] * y[i] * (1.0f - y[i]);
    };
  }
  return out;
}

Tensor dropout(const Tensor& x, float p, Rng& rng, bool training) {
  if (p < 0.0f || p >= 1.0f) throw ContractError("dropout: p must be in [0,1)");
  if (!training || p == 0.0f) return x;
  bool rx = track(x);
  Tensor out = Tensor::zeros(x.shape, rx);
  const int64_t n = x.size();
  auto mask = std::make_shared<std::vector<float>>(n);
  const float keep = 1.0f / (1.0f - p);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) {
    const float m = (rng.uniform() >= p) ? keep : 0.0f;
    (*mask)[i] = m;
    po[i] = px[i] * m;
  }
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad;
    out.node->backward = [og, xg, mask, n]() {
      const float* g = og->data();
      float* d = xg->data();
      for (int64_t i = 0; i < n; ++i) d[i] += g[i] * (*mask)[i];
    };
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw DimensionError("embedding: table must be [V,D]");
  const int V = table.shape[0], D = table.shape[1];
  for (int id : ids)
    if (id < 0 || id >= V)
      throw IndexError("embedding: id " + std::to_string(id) + " outside [0," +
                       std::to_string(V) + ")");
  const int n = static_cast<int>(ids.size());
  bool rt = track(table);
  Tensor out = Tensor::zeros({n, D}, rt);
  const float* pt = table.ptr();
  float* po = out.ptr();
  for (int i = 0; i < n; ++i)
    std::memcpy(po + static_cast<int64_t>(i) * D, pt + static_cast<int64_t>(ids[i]) * D,
                sizeof(float) * D);
  if (out.requires_grad) {
    out.node = make_node({table.node});
    auto og = out.grad, tg = table.grad;
    auto idv = std::make_shared<std::vector<int>>(ids);
    out.node->backward = [og, tg, idv, D]() {
      const float* g = og->data();
      float* d = tg->data();
      for (size_t i = 0; i < idv->size(); ++i) {
        const int64_t src = static_cast<int64_t>(i) * D;
        const int64_t dst = static_cast<int64_t>((*idv)[i]) * D;
        for (int j = 0; j < D; ++j) d[dst + j] += g[src + j];
      }
    };
  }
  return out;
}

Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad) {
  if (x.ndim() != 4) throw DimensionError("im2col: expects [B,H,W,C]");
  const int B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3];
  if ((H + 2 * pad - kh) % stride != 0 || (W + 2 * pad - kw) % stride != 0)
    throw DimensionError("im2col: extents not divisible by stride");
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  const int cols = kh * kw * C;
  bool rx = track(x);
  Tensor out = Tensor::zeros({B * OH * OW, cols}, rx);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        float* row = po + ((static_cast<int64_t>(b) * OH + oy) * OW + ox) * cols;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride + ky - pad;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride + kx - pad;
            float* dst = row + (ky * kw + kx) * C;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              std::memcpy(dst, px + ((static_cast<int64_t>(b) * H + iy) * W + ix) * C,
                          sizeof(float) * C);
            // else stays zero (padding)
          }
        }
      }
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad;
    out.node->backward = [og, xg, B, H, W, C, kh, kw, stride, pad, OH, OW]() {
      const int cols = kh * kw * C;
      const float* g = og->data();
      float* d = xg->data();
      for (int b = 0; b < B; ++b)
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OW; ++ox) {
            const float* row = g + ((static_cast<int64_t>(b) * OH + oy) * OW + ox) * cols;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= W) continue;
                float* dst = d + ((static_cast<int64_t>(b) * H + iy) * W + ix) * C;
                const float* src = row + (ky * kw + kx) * C;
                for (int c = 0; c < C; ++c) dst[c] += src[c];
              }
            }
          }
    };
  }
  return out;
}

Tensor avg_pool2(const Tensor& x) {
  if (x.ndim() != 4) throw DimensionError("avg_pool2: expects [B,H,W,C]");
  const int B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3];
  if (H % 2 != 0 || W % 2 != 0) throw DimensionError("avg_pool2: odd spatial extents");
  const int OH = H / 2, OW = W / 2;
  bool rx = track(x);
  Tensor out = Tensor::zeros({B, OH, OW, C}, rx);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        float* dst = po + ((static_cast<int64_t>(b) * OH + oy) * OW + ox) * C;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const float* src =
                px + ((static_cast<int64_t>(b) * H + 2 * oy + dy) * W + 2 * ox + dx) * C;
            for (int c = 0; c < C; ++c) dst[c] += 0.25f * src[c];
          }
      }
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad;
    out.node->backward = [og, xg, B, H, W, C, OH, OW]() {
      const float* g = og->data();
      float* d = xg->data();
      for (int b = 0; b < B; ++b)
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OW; ++ox) {
            const float* src = g + ((static_cast<int64_t>(b) * OH + oy) * OW + ox) * C;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                float* dst =
                    d + ((static_cast<int64_t>(b) * H + 2 * oy + dy) * W + 2 * ox + dx) * C;
                for (int c = 0; c < C; ++c) dst[c] += 0.25f * src[c];
              }
          }
    };
  }
  return out;
}

Tensor upsample_nearest2(const Tensor& x) {
  if (x.ndim() != 4) throw DimensionError("upsample_nearest2: expects [B,H,W,C]");
  const int B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3];
  bool rx = track(x);
  Tensor out = Tensor::zeros({B, 2 * H, 2 * W, C}, rx);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < 2 * H; ++y)
      for (int xw = 0; xw < 2 * W; ++xw) {
        const float* src = px + ((static_cast<int64_t>(b) * H + y / 2) * W + xw / 2) * C;
        float* dst = po + ((static_cast<int64_t>(b) * 2 * H + y) * 2 * W + xw) * C;
        std::memcpy(dst, src, sizeof(float) * C);
      }
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad;
    out.node->backward = [og, xg, B, H, W, C]() {
      const float* g = og->data();
      float* d = xg->data();
      for (int b = 0; b < B; ++b)
        for (int y = 0; y < 2 * H; ++y)
          for (int xw = 0; xw < 2 * W; ++xw) {
            float* dst = d + ((static_cast<int64_t>(b) * H + y / 2) * W + xw / 2) * C;
            const float* src = g + ((static_cast<int64_t>(b) * 2 * H + y) * 2 * W + xw) * C;
            for (int c = 0; c < C; ++c) dst[c] += src[c];
          }
    };
  }
  return out;
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  if (x.ndim() != 4) throw DimensionError("pixel_shuffle: expects [B,H,W,r*r*C]");
  const int B = x.shape[0], H = x.shape[1], W = x.shape[2], CC = x.shape[3];
  if (r <= 0 || CC % (r * r) != 0)
    throw DimensionError("pixel_shuffle: channels not divisible by r^2");
  const int C = CC / (r * r);
  bool rx = track(x);
  Tensor out = Tensor::zeros({B, H * r, W * r, C}, rx);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < H; ++y)
      for (int xw = 0; xw < W; ++xw) {
        const float* cell = px + ((static_cast<int64_t>(b) * H + y) * W + xw) * CC;
        for (int dy = 0; dy < r; ++dy)
          for (int dx = 0; dx < r; ++dx) {
            float* dst =
                po + ((static_cast<int64_t>(b) * H * r + y * r + dy) * W * r + xw * r + dx) * C;
            std::memcpy(dst, cell + (dy * r + dx) * C, sizeof(float) * C);
          }
      }
  if (out.requires_grad) {
    out.node = make_node({x.node});
    auto og = out.grad, xg = x.grad;
    out.node->backward = [og, xg, B, H, W, C, CC, r]() {
      const float* g = og->data();
      float* d = xg->data();
      for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
          for (int xw = 0; xw < W; ++xw) {
            float* cell = d + ((static_cast<int64_t>(b) * H + y) * W + xw) * CC;
            for (int dy = 0; dy < r; ++dy)
              for (int dx = 0; dx < r; ++dx) {
                const float* src =
                    g +
                    ((static_cast<int64_t>(b) * H * r + y * r + dy) * W * r + xw * r + dx) * C;
                float* dst = cell + (dy * r + dx) * C;
                for (int c = 0; c < C; ++c) dst[c] += src[c];
              }
          }
    };
  }
  return out;
}

Tensor detach(const Tensor& x) {
  Tensor out;
  out.shape = x.shape;
  out.data = x.data;
  out.requires_grad = false;
  return out;
}

Tensor straight_through(const Tensor& features, const Tensor& values) {
  require_same_shape(features, values, "straight_through");
  bool rf = track(features);
  Tensor out = Tensor::zeros(features.shape, rf);
  *out.data = *values.data;
  if (out.requires_grad) {
    out.node = make_node({features.node});
    auto og = out.grad, fg = features.grad;
    const int64_t n = out.size();
    out.node->backward = [og, fg, n]() {
      const float* g = og->data();
      float* d = fg->data();
      for (int64_t i = 0; i < n; ++i) d[i] += g[i];
    };
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.ndim() != 2) throw DimensionError("linear: weight must be [Dout,Din]");
  const int dout = w.shape[0], din = w.shape[1];
  if (x.shape.back() != din)
    throw DimensionError("linear: input " + shape_str(x.shape) + " vs weight " +
                         shape_str(w.shape));
  Shape out_shape = x.shape;
  out_shape.back() = dout;
  const int rows = static_cast<int>(x.size() / din);
  Tensor x2 = reshape(x, {rows, din});
  Tensor y = matmul_nt(x2, w);
  if (b.defined()) y = add_bias(y, b);
  return reshape(y, out_shape);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel, int stride,
              int pad) {
  const int B = x.shape[0];
  const int H = x.shape[1], W = x.shape[2], C = x.shape[3];
  if (w.ndim() != 2 || w.shape[1] != kernel * kernel * C)
    throw DimensionError("conv2d: weight must be [Cout, k*k*Cin]");
  const int OH = (H + 2 * pad - kernel) / stride + 1;
  const int OW = (W + 2 * pad - kernel) / stride + 1;
  Tensor cols = im2col(x, kernel, kernel, stride, pad);
  Tensor y = matmul_nt(cols, w);
  if (b.defined()) y = add_bias(y, b);
  return reshape(y, {B, OH, OW, w.shape[0]});
}

}  // namespace stratgen
