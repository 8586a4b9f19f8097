// SPDX-License-Identifier: Apache-2.0
#include "cvm/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cvm/core/error.hpp"
#include "cvm/kernels/kernels.hpp"

namespace cvm::ad {

namespace {

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank, const char* op) {
  const std::int64_t a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for rank " + std::to_string(rank));
  return a;
}

// [outer, n, inner] view of a shape around one axis.
struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::int64_t axis) {
  AxisSplit r;
  for (std::int64_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (std::int64_t i = static_cast<std::int64_t>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

Node& parent(Node& out, std::size_t i) { return *out.parents[i]; }

// ---- broadcasting -------------------------------------------------------------

struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::int64_t> ia, ib;  // per output element, only when !same
};

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  bc.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    bc.out[i] = pa[i] == 1 ? pb[i] : pa[i];
  }
  auto sa = strides_of(pa), sb = strides_of(pb);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] == 1) sa[i] = 0;
    if (pb[i] == 1) sb[i] = 0;
  }
  const std::int64_t n = numel(bc.out);
  bc.ia.resize(static_cast<std::size_t>(n));
  bc.ib.resize(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    bc.ia[k] = oa;
    bc.ib[k] = ob;
    for (std::int64_t d = static_cast<std::int64_t>(r) - 1; d >= 0; --d) {
      if (++idx[d] < bc.out[d]) {
        oa += sa[d];
        ob += sb[d];
        break;
      }
      oa -= sa[d] * (idx[d] - 1);
      ob -= sb[d] * (idx[d] - 1);
      idx[d] = 0;
    }
  }
  return bc;
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  auto bc = std::make_shared<Broadcast>(broadcast(a.shape(), b.shape(), name));
  const auto av = a.data();
  const auto bv = b.data();
  const std::int64_t n = numel(bc->out);
  std::vector<double> out(static_cast<std::size_t>(n));
  auto apply = [op](double x, double y) {
    switch (op) {
      case BinOp::Add: return x + y;
      case BinOp::Sub: return x - y;
      case BinOp::Mul: return x * y;
      case BinOp::Div: return x / y;
    }
    return 0.0;
  };
  if (bc->same) {
    for (std::int64_t k = 0; k < n; ++k) out[k] = apply(av[k], bv[k]);
  } else {
    for (std::int64_t k = 0; k < n; ++k) out[k] = apply(av[bc->ia[k]], bv[bc->ib[k]]);
  }
  Shape shape = bc->out;
  return make_result(std::move(shape), std::move(out), {a, b}, name, [bc, op](Node& o) {
    Node& pa = parent(o, 0);
    Node& pb = parent(o, 1);
    const bool ga = pa.requires_grad, gb = pb.requires_grad;
    const std::int64_t n = static_cast<std::int64_t>(o.value.size());
    std::span<double> da = ga ? pa.grad_buffer() : std::span<double>{};
    std::span<double> db = gb ? pb.grad_buffer() : std::span<double>{};
    for (std::int64_t k = 0; k < n; ++k) {
      const std::int64_t i = bc->same ? k : bc->ia[k];
      const std::int64_t j = bc->same ? k : bc->ib[k];
      const double g = o.grad[k];
      switch (op) {
        case BinOp::Add:
          if (ga) da[i] += g;
          if (gb) db[j] += g;
          break;
        case BinOp::Sub:
          if (ga) da[i] += g;
          if (gb) db[j] -= g;
          break;
        case BinOp::Mul:
          if (ga) da[i] += g * pb.value[j];
          if (gb) db[j] += g * pa.value[i];
          break;
        case BinOp::Div:
          if (ga) da[i] += g / pb.value[j];
          if (gb) db[j] -= g * pa.value[i] / (pb.value[j] * pb.value[j]);
          break;
      }
    }
  });
}

template <class F, class DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t k = 0; k < xv.size(); ++k) out[k] = f(xv[k]);
  return make_result(x.shape(), std::move(out), {x}, name, [df](Node& o) {
    Node& p = parent(o, 0);
    auto g = p.grad_buffer();
    for (std::size_t k = 0; k < o.value.size(); ++k) g[k] += o.grad[k] * df(p.value[k], o.value[k]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- elementwise ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div, "div"); }

Tensor scale(const Tensor& x, double s) {
  return unary(x, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}
Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}
Tensor neg(const Tensor& x) { return scale(x, -1.0); }
Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}
Tensor sqrt(const Tensor& x) {
  return unary(x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}
Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}
Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}
Tensor abs(const Tensor& x) {
  return unary(x, "abs", [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}
Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}
Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}
Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}
Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v * stable_sigmoid(v); },
      [](double v, double) {
        const double s = stable_sigmoid(v);
        return s + v * s * (1.0 - s);
      });
}
Tensor softplus(const Tensor& x) {
  return unary(
      x, "softplus", [](double v) { return std::log1p(std::exp(-std::fabs(v))) + std::max(v, 0.0); },
      [](double v, double) { return stable_sigmoid(v); });
}

Tensor silu_gate(const Tensor& gate, const Tensor& value) {
  if (gate.shape() != value.shape())
    throw DimensionError("silu_gate: gate " + shape_str(gate.shape()) + " vs value " + shape_str(value.shape()));
  const auto gv = gate.data();
  const auto vv = value.data();
  std::vector<double> out(gv.size());
  for (std::size_t k = 0; k < gv.size(); ++k) out[k] = gv[k] * stable_sigmoid(gv[k]) * vv[k];
  return make_result(gate.shape(), std::move(out), {gate, value}, "silu_gate", [](Node& o) {
    Node& g = parent(o, 0);
    Node& v = parent(o, 1);
    std::span<double> dg = g.requires_grad ? g.grad_buffer() : std::span<double>{};
    std::span<double> dv = v.requires_grad ? v.grad_buffer() : std::span<double>{};
    for (std::size_t k = 0; k < o.value.size(); ++k) {
      const double s = stable_sigmoid(g.value[k]);
      const double sl = g.value[k] * s;
      if (!dg.empty()) dg[k] += o.grad[k] * v.value[k] * (s + g.value[k] * s * (1.0 - s));
      if (!dv.empty()) dv[k] += o.grad[k] * sl;
    }
  });
}

// ---- reductions ------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  double acc = 0.0;
  for (double v : xv) acc += v;
  return make_result({}, {acc}, {x}, "sum", [](Node& o) {
    Node& p = parent(o, 0);
    auto g = p.grad_buffer();
    for (auto& v : g) v += o.grad[0];
  });
}

Tensor sum(const Tensor& x, std::int64_t axis, bool keepdim) {
  const std::int64_t a = normalize_axis(axis, x.rank(), "sum");
  const AxisSplit sp = split_at(x.shape(), a);
  const auto xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(sp.outer * sp.inner), 0.0);
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t i = 0; i < sp.n; ++i)
      for (std::int64_t k = 0; k < sp.inner; ++k) out[o * sp.inner + k] += xv[(o * sp.n + i) * sp.inner + k];
  Shape shape = x.shape();
  if (keepdim)
    shape[a] = 1;
  else
    shape.erase(shape.begin() + a);
  return make_result(std::move(shape), std::move(out), {x}, "sum_axis", [sp](Node& o) {
    Node& p = parent(o, 0);
    auto g = p.grad_buffer();
    for (std::int64_t oo = 0; oo < sp.outer; ++oo)
      for (std::int64_t i = 0; i < sp.n; ++i)
        for (std::int64_t k = 0; k < sp.inner; ++k) g[(oo * sp.n + i) * sp.inner + k] += o.grad[oo * sp.inner + k];
  });
}

Tensor mean(const Tensor& x) {
  const auto n = x.numel();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Tensor mean(const Tensor& x, std::int64_t axis, bool keepdim) {
  const std::int64_t n = x.dim(axis);
  if (n == 0) throw DimensionError("mean over an empty axis");
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(n));
}

// ---- layout ------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t infer = -1, known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one inferred extent");
      infer = static_cast<std::int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0)
      throw DimensionError("reshape: cannot infer extent for " + shape_str(x.shape()) + " -> " + shape_str(shape));
    shape[infer] = x.numel() / known;
  }
  if (numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, "reshape", [](Node& o) {
    Node& p = parent(o, 0);
    auto g = p.grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += o.grad[k];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order) {
  const auto r = x.rank();
  if (static_cast<std::int64_t>(order.size()) != r)
    throw DimensionError("permute: order length does not match rank of " + shape_str(x.shape()));
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (auto a : order) {
    if (a < 0 || a >= r || seen[a]) throw DimensionError("permute: invalid axis order");
    seen[a] = true;
  }
  const Shape& in = x.shape();
  Shape out_shape(static_cast<std::size_t>(r));
  const auto in_strides = strides_of(in);
  std::vector<std::int64_t> st(static_cast<std::size_t>(r));
  for (std::int64_t i = 0; i < r; ++i) {
    out_shape[i] = in[order[i]];
    st[i] = in_strides[order[i]];
  }
  const std::int64_t n = x.numel();
  auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t off = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    (*map)[k] = off;
    for (std::int64_t d = r - 1; d >= 0; --d) {
      if (++idx[d] < out_shape[d]) {
        off += st[d];
        break;
      }
      off -= st[d] * (idx[d] - 1);
      idx[d] = 0;
    }
  }
  const auto xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) out[k] = xv[(*map)[k]];
  return make_result(std::move(out_shape), std::move(out), {x}, "permute", [map](Node& o) {
    Node& p = parent(o, 0);
    auto g = p.grad_buffer();
    for (std::size_t k = 0; k < map->size(); ++k) g[(*map)[k]] += o.grad[k];
  });
}

Tensor transpose(const Tensor& x, std::int64_t a, std::int64_t b) {
  const auto r = x.rank();
  a = normalize_axis(a, r, "transpose");
  b = normalize_axis(b, r, "transpose");
  std::vector<std::int64_t> order(static_cast<std::size_t>(r));
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[a], order[b]);
  return permute(x, order);
}

Tensor narrow(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length) {
  const std::int64_t a = normalize_axis(axis, x.rank(), "narrow");
  const AxisSplit sp = split_at(x.shape(), a);
  if (start < 0 || length < 0 || start + length > sp.n)
    throw DimensionError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                         ") outside axis of extent " + std::to_string(sp.n));
  const auto xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(sp.outer * length * sp.inner));
  for (std::int64_t o = 0; o < sp.outer; ++o)
    std::copy_n(xv.begin() + (o * sp.n + start) * sp.inner, length * sp.inner,
                out.begin() + o * length * sp.inner);
  Shape shape = x.shape();
  shape[a] = length;
  return make_result(std::move(shape), std::move(out), {x}, "narrow", [sp, start, length](Node& o) {
    Node& p = parent(o, 0);
    auto g = p.grad_buffer();
    for (std::int64_t oo = 0; oo < sp.outer; ++oo)
      for (std::int64_t k = 0; k < length * sp.inner; ++k)
        g[(oo * sp.n + start) * sp.inner + k] += o.grad[oo * length * sp.inner + k];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw DimensionError("concat of an empty list");
  const Shape& first = parts[0].shape();
  const std::int64_t a = normalize_axis(axis, static_cast<std::int64_t>(first.size()), "concat");
  std::vector<std::int64_t> extents;
  std::int64_t total = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (static_cast<std::int64_t>(i) != a && s[i] != first[i]) ok = false;
    if (!ok)
      throw DimensionError("concat: non-axis extents differ between " + shape_str(first) + " and " + shape_str(s));
    extents.push_back(s[a]);
    total += s[a];
  }
  AxisSplit sp = split_at(first, a);
  sp.n = total;
  std::vector<double> out(static_cast<std::size_t>(sp.outer * total * sp.inner));
  std::int64_t offset = 0;
  for (std::size_t t = 0; t < parts.size(); ++t) {
    const auto v = parts[t].data();
    const std::int64_t e = extents[t];
    for (std::int64_t o = 0; o < sp.outer; ++o)
      std::copy_n(v.begin() + o * e * sp.inner, e * sp.inner, out.begin() + (o * total + offset) * sp.inner);
    offset += e;
  }
  Shape shape = first;
  shape[a] = total;
  return make_result(std::move(shape), std::move(out), parts, "concat", [sp, extents](Node& o) {
    std::int64_t offset = 0;
    for (std::size_t t = 0; t < extents.size(); ++t) {
      Node& p = parent(o, t);
      const std::int64_t e = extents[t];
      if (p.requires_grad) {
        auto g = p.grad_buffer();
        for (std::int64_t oo = 0; oo < sp.outer; ++oo)
          for (std::int64_t k = 0; k < e * sp.inner; ++k)
            g[oo * e * sp.inner + k] += o.grad[(oo * sp.n + offset) * sp.inner + k];
      }
      offset += e;
    }
  });
}

Tensor unsqueeze(const Tensor& x, std::int64_t axis) {
  const auto r = x.rank();
  const std::int64_t a = axis < 0 ? axis + r + 1 : axis;
  if (a < 0 || a > r) throw DimensionError("unsqueeze: axis out of range");
  Shape s = x.shape();
  s.insert(s.begin() + a, 1);
  return reshape(x, std::move(s));
}

Tensor index_select(const Tensor& x, const std::vector<std::int64_t>& rows) {
  if (x.rank() < 1) throw DimensionError("index_select on a scalar");
  const std::int64_t n = x.dim(0);
  const std::int64_t row = n == 0 ? 0 : x.numel() / n;
  for (auto r : rows)
    if (r < 0 || r >= n) throw DimensionError("index_select: row " + std::to_string(r) + " out of range");
  const auto xv = x.data();
  std::vector<double> out(rows.size() * static_cast<std::size_t>(row));
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(xv.begin() + rows[i] * row, row, out.begin() + i * row);
  Shape shape = x.shape();
  shape[0] = static_cast<std::int64_t>(rows.size());
  return make_result(std::move(shape), std::move(out), {x}, "index_select", [rows, row](Node& o) {
    Node& p = parent(o, 0);
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::int64_t k = 0; k < row; ++k) g[rows[i] * row + k] += o.grad[i * row + k];
  });
}

Tensor pad2d(const Tensor& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right) {
  if (x.rank() < 2) throw DimensionError("pad2d needs rank >= 2, got " + shape_str(x.shape()));
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw ContractError("pad2d: negative padding");
  const std::int64_t h = x.dim(-2), w = x.dim(-1);
  const std::int64_t oh = h + top + bottom, ow = w + left + right;
  const std::int64_t planes = x.numel() / std::max<std::int64_t>(1, h * w);
  const auto xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(planes * oh * ow), 0.0);
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 0; y < h; ++y)
      std::copy_n(xv.begin() + (p * h + y) * w, w, out.begin() + (p * oh + y + top) * ow + left);
  Shape shape = x.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  return make_result(std::move(shape), std::move(out), {x}, "pad2d", [=](Node& o) {
    Node& pn = parent(o, 0);
    auto g = pn.grad_buffer();
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xx = 0; xx < w; ++xx) g[(p * h + y) * w + xx] += o.grad[(p * oh + y + top) * ow + left + xx];
  });
}

// ---- matmul ----------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::int64_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2)
    throw DimensionError("matmul: inner extents differ for " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Shape ba(a.shape().begin(), a.shape().end() - 2);
  Shape bb(b.shape().begin(), b.shape().end() - 2);
  Broadcast bc;
  try {
    bc = broadcast(ba, bb, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch extents not broadcastable for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::int64_t batches = numel(bc.out);
  auto ia = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(batches));
  auto ib = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(batches));
  for (std::int64_t t = 0; t < batches; ++t) {
    (*ia)[t] = bc.same ? t : bc.ia[t];
    (*ib)[t] = bc.same ? t : bc.ib[t];
  }
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(static_cast<std::size_t>(batches * m * n));
  for (std::int64_t t = 0; t < batches; ++t)
    kernels::gemm(false, false, m, n, k, av.data() + (*ia)[t] * m * k, bv.data() + (*ib)[t] * k * n,
                  out.data() + t * m * n, false);
  Shape shape = bc.out;
  shape.push_back(m);
  shape.push_back(n);
  return make_result(std::move(shape), std::move(out), {a, b}, "matmul", [=](Node& o) {
    Node& pa = parent(o, 0);
    Node& pb = parent(o, 1);
    // Broadcast batches accumulate into the same slot; iteration order is fixed.
    for (std::int64_t t = 0; t < batches; ++t) {
      const double* g = o.grad.data() + t * m * n;
      if (pa.requires_grad)
        kernels::gemm(false, true, m, k, n, g, pb.value.data() + (*ib)[t] * k * n,
                      pa.grad_buffer().data() + (*ia)[t] * m * k, true);
      if (pb.requires_grad)
        kernels::gemm(true, false, k, n, m, pa.value.data() + (*ia)[t] * m * k, g,
                      pb.grad_buffer().data() + (*ib)[t] * k * n, true);
    }
  });
}

// ---- convolution -----------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt) {
  if (x.rank() != 4 || w.rank() != 4)
    throw DimensionError("conv2d expects x[B,C,H,W] and w[O,C,kh,kw], got " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  if (opt.stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (opt.padding < 0) throw ContractError("conv2d: padding must be >= 0");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw DimensionError("conv2d: input channels of " + shape_str(x.shape()) + " do not match weight " +
                         shape_str(w.shape()));
  if (kh > H + 2 * opt.padding || kw > W + 2 * opt.padding)
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " + shape_str(x.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O))
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(O) + " outputs");

  const kernels::Conv2dGeometry g{C, H, W, kh, kw, opt.stride, opt.padding};
  const std::int64_t oh = g.out_h(), ow = g.out_w(), P = oh * ow, CK = C * kh * kw;
  const bool pointwise = kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0;
  const auto xv = x.data();
  const auto wv = w.data();
  std::vector<double> out(static_cast<std::size_t>(B * O * P));
  std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(CK * P));
  for (std::int64_t b = 0; b < B; ++b) {
    const double* xb = xv.data() + b * C * H * W;
    const double* colp = xb;
    if (!pointwise) {
      kernels::im2col(g, xb, cols.data());
      colp = cols.data();
    }
    double* yb = out.data() + b * O * P;
    if (bias.defined()) {
      const auto bv = bias.data();
      for (std::int64_t o = 0; o < O; ++o) std::fill_n(yb + o * P, P, bv[o]);
    }
    kernels::gemm(false, false, O, P, CK, wv.data(), colp, yb, bias.defined());
  }
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result({B, O, oh, ow}, std::move(out), inputs, "conv2d", [=](Node& o) {
    Node& px = parent(o, 0);
    Node& pw = parent(o, 1);
    std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(CK * P));
    std::vector<double> dcols(px.requires_grad && !pointwise ? static_cast<std::size_t>(CK * P) : 0);
    for (std::int64_t b = 0; b < B; ++b) {
      const double* gy = o.grad.data() + b * O * P;
      const double* xb = px.value.data() + b * C * H * W;
      if (pw.requires_grad) {
        const double* colp = xb;
        if (!pointwise) {
          kernels::im2col(g, xb, cols.data());
          colp = cols.data();
        }
        kernels::gemm(false, true, O, CK, P, gy, colp, pw.grad_buffer().data(), true);
      }
      if (px.requires_grad) {
        double* gx = px.grad_buffer().data() + b * C * H * W;
        if (pointwise) {
          kernels::gemm(true, false, CK, P, O, pw.value.data(), gy, gx, true);
        } else {
          kernels::gemm(true, false, CK, P, O, pw.value.data(), gy, dcols.data(), false);
          kernels::col2im(g, dcols.data(), gx);
        }
      }
      if (has_bias && parent(o, 2).requires_grad) {
        auto gb = parent(o, 2).grad_buffer();
        for (std::int64_t oc = 0; oc < O; ++oc) {
          double acc = 0.0;
          for (std::int64_t p = 0; p < P; ++p) acc += gy[oc * P + p];
          gb[oc] += acc;
        }
      }
    }
  });
}

Tensor pixel_shuffle(const Tensor& x, std::int64_t factor) {
  if (x.rank() != 4) throw DimensionError("pixel_shuffle expects [B,C,H,W], got " + shape_str(x.shape()));
  if (factor < 1) throw ContractError("pixel_shuffle: factor must be >= 1");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C % (factor * factor) != 0)
    throw DimensionError("pixel_shuffle: channels " + std::to_string(C) + " not divisible by factor^2");
  const std::int64_t Co = C / (factor * factor);
  Tensor t = reshape(x, {B, Co, factor, factor, H, W});
  t = permute(t, {0, 1, 4, 2, 5, 3});
  return reshape(t, {B, Co, H * factor, W * factor});
}

Tensor upsample_learned(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t factor) {
  if (weight.rank() != 4 || weight.dim(2) != 3 || weight.dim(3) != 3)
    throw DimensionError("upsample_learned: weight must be [C'*r*r, C, 3, 3], got " + shape_str(weight.shape()));
  return pixel_shuffle(conv2d(x, weight, bias, {1, 1}), factor);
}

Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  if (x.rank() < 2) throw DimensionError("resize_bilinear needs rank >= 2");
  if (out_h < 1 || out_w < 1) throw ContractError("resize_bilinear: output extents must be positive");
  const std::int64_t h = x.dim(-2), w = x.dim(-1);
  const std::int64_t planes = x.numel() / std::max<std::int64_t>(1, h * w);
  struct Tap {
    std::int64_t i0, i1;
    double w1;
  };
  auto taps = [](std::int64_t in, std::int64_t out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double s = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * s - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::int64_t>(std::floor(src));
      const auto i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps(w, out_w));
  const auto xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(planes * out_h * out_w));
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = (*ty)[oy];
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = (*tx)[ox];
        const double top = (1 - b.w1) * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1];
        const double bot = (1 - b.w1) * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1];
        dst[oy * out_w + ox] = (1 - a.w1) * top + a.w1 * bot;
      }
    }
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_h;
  shape[shape.size() - 1] = out_w;
  return make_result(std::move(shape), std::move(out), {x}, "resize_bilinear", [=](Node& o) {
    Node& pn = parent(o, 0);
    auto g = pn.grad_buffer();
    for (std::int64_t p = 0; p < planes; ++p) {
      double* dst = g.data() + p * h * w;
      const double* go = o.grad.data() + p * out_h * out_w;
      for (std::int64_t oy = 0; oy < out_h; ++oy) {
        const Tap& a = (*ty)[oy];
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          const Tap& b = (*tx)[ox];
          const double v = go[oy * out_w + ox];
          dst[a.i0 * w + b.i0] += (1 - a.w1) * (1 - b.w1) * v;
          dst[a.i0 * w + b.i1] += (1 - a.w1) * b.w1 * v;
          dst[a.i1 * w + b.i0] += a.w1 * (1 - b.w1) * v;
          dst[a.i1 * w + b.i1] += a.w1 * b.w1 * v;
        }
      }
    }
  });
}

// ---- sampling ------------------------------------------------------------------------------

SampleResult bilinear_sample(const Tensor& feat, const Tensor& grid) {
  if (feat.rank() != 3) throw DimensionError("bilinear_sample: feat must be [C,H,W], got " + shape_str(feat.shape()));
  if (grid.rank() != 3 || grid.dim(2) != 2)
    throw DimensionError("bilinear_sample: grid must be [H',W',2], got " + shape_str(grid.shape()));
  const std::int64_t C = feat.dim(0), H = feat.dim(1), W = feat.dim(2);
  const std::int64_t Ho = grid.dim(0), Wo = grid.dim(1), N = Ho * Wo;
  SampleResult r;
  r.valid.assign(static_cast<std::size_t>(N), 0);
  std::vector<double> out(static_cast<std::size_t>(C * N));
  kernels::bilinear_sample(C, H, W, feat.data().data(), N, grid.data().data(), out.data(), r.valid.data());
  r.values = make_result({C, Ho, Wo}, std::move(out), {feat, grid}, "bilinear_sample", [=](Node& o) {
    Node& pf = parent(o, 0);
    Node& pg = parent(o, 1);
    kernels::bilinear_sample_backward(C, H, W, pf.value.data(), N, pg.value.data(), o.grad.data(),
                                      pf.requires_grad ? pf.grad_buffer().data() : nullptr,
                                      pg.requires_grad ? pg.grad_buffer().data() : nullptr);
  });
  return r;
}

// ---- normalisation -----------------------------------------------------------------------

Tensor softmax(const Tensor& x, std::int64_t axis) {
  const std::int64_t a = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit sp = split_at(x.shape(), a);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t k = 0; k < sp.inner; ++k) {
      const std::int64_t base = o * sp.n * sp.inner + k;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t i = 0; i < sp.n; ++i) mx = std::max(mx, xv[base + i * sp.inner]);
      double z = 0.0;
      for (std::int64_t i = 0; i < sp.n; ++i) {
        const double e = std::exp(xv[base + i * sp.inner] - mx);
        out[base + i * sp.inner] = e;
        z += e;
      }
      for (std::int64_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] /= z;
    }
  return make_result(x.shape(), std::move(out), {x}, "softmax", [sp](Node& o) {
    Node& p = parent(o, 0);
    auto g = p.grad_buffer();
    for (std::int64_t oo = 0; oo < sp.outer; ++oo)
      for (std::int64_t k = 0; k < sp.inner; ++k) {
        const std::int64_t base = oo * sp.n * sp.inner + k;
        double dot = 0.0;
        for (std::int64_t i = 0; i < sp.n; ++i) dot += o.grad[base + i * sp.inner] * o.value[base + i * sp.inner];
        for (std::int64_t i = 0; i < sp.n; ++i) {
          const std::int64_t j = base + i * sp.inner;
          g[j] += o.value[j] * (o.grad[j] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& x, std::int64_t axis) {
  const std::int64_t a = normalize_axis(axis, x.rank(), "log_softmax");
  const AxisSplit sp = split_at(x.shape(), a);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t k = 0; k < sp.inner; ++k) {
      const std::int64_t base = o * sp.n * sp.inner + k;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t i = 0; i < sp.n; ++i) mx = std::max(mx, xv[base + i * sp.inner]);
      double z = 0.0;
      for (std::int64_t i = 0; i < sp.n; ++i) z += std::exp(xv[base + i * sp.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::int64_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] = xv[base + i * sp.inner] - lz;
    }
  return make_result(x.shape(), std::move(out), {x}, "log_softmax", [sp](Node& o) {
    Node& p = parent(o, 0);
    auto g = p.grad_buffer();
    for (std::int64_t oo = 0; oo < sp.outer; ++oo)
      for (std::int64_t k = 0; k < sp.inner; ++k) {
        const std::int64_t base = oo * sp.n * sp.inner + k;
        double gs = 0.0;
        for (std::int64_t i = 0; i < sp.n; ++i) gs += o.grad[base + i * sp.inner];
        for (std::int64_t i = 0; i < sp.n; ++i) {
          const std::int64_t j = base + i * sp.inner;
          g[j] += o.grad[j] - std::exp(o.value[j]) * gs;
        }
      }
  });
}

Tensor layer_normalize(const Tensor& x, std::int64_t axis, double eps) {
  const std::int64_t a = normalize_axis(axis, x.rank(), "layer_normalize");
  const AxisSplit sp = split_at(x.shape(), a);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(sp.outer * sp.inner));
  const double nn = static_cast<double>(sp.n);
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t k = 0; k < sp.inner; ++k) {
      const std::int64_t base = o * sp.n * sp.inner + k;
      double mu = 0.0;
      for (std::int64_t i = 0; i < sp.n; ++i) mu += xv[base + i * sp.inner];
      mu /= nn;
      double var = 0.0;
      for (std::int64_t i = 0; i < sp.n; ++i) {
        const double d = xv[base + i * sp.inner] - mu;
        var += d * d;
      }
      var /= nn;
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_sigma)[o * sp.inner + k] = is;
      for (std::int64_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] = (xv[base + i * sp.inner] - mu) * is;
    }
  return make_result(x.shape(), std::move(out), {x}, "layer_normalize", [sp, inv_sigma, nn](Node& o) {
    Node& p = parent(o, 0);
    auto g = p.grad_buffer();
    for (std::int64_t oo = 0; oo < sp.outer; ++oo)
      for (std::int64_t k = 0; k < sp.inner; ++k) {
        const std::int64_t base = oo * sp.n * sp.inner + k;
        double mg = 0.0, mgy = 0.0;
        for (std::int64_t i = 0; i < sp.n; ++i) {
          const std::int64_t j = base + i * sp.inner;
          mg += o.grad[j];
          mgy += o.grad[j] * o.value[j];
        }
        mg /= nn;
        mgy /= nn;
        const double is = (*inv_sigma)[oo * sp.inner + k];
        for (std::int64_t i = 0; i < sp.n; ++i) {
          const std::int64_t j = base + i * sp.inner;
          g[j] += is * (o.grad[j] - mg - o.value[j] * mgy);
        }
      }
  });
}

Tensor l2_normalize(const Tensor& x, std::int64_t axis, double eps) {
  const std::int64_t a = normalize_axis(axis, x.rank(), "l2_normalize");
  const AxisSplit sp = split_at(x.shape(), a);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  auto inv_norm = std::make_shared<std::vector<double>>(static_cast<std::size_t>(sp.outer * sp.inner));
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t k = 0; k < sp.inner; ++k) {
      const std::int64_t base = o * sp.n * sp.inner + k;
      double ss = eps;
      for (std::int64_t i = 0; i < sp.n; ++i) ss += xv[base + i * sp.inner] * xv[base + i * sp.inner];
      const double inv = 1.0 / std::sqrt(ss);
      (*inv_norm)[o * sp.inner + k] = inv;
      for (std::int64_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] = xv[base + i * sp.inner] * inv;
    }
  return make_result(x.shape(), std::move(out), {x}, "l2_normalize", [sp, inv_norm](Node& o) {
    Node& p = parent(o, 0);
    auto g = p.grad_buffer();
    for (std::int64_t oo = 0; oo < sp.outer; ++oo)
      for (std::int64_t k = 0; k < sp.inner; ++k) {
        const std::int64_t base = oo * sp.n * sp.inner + k;
        double dot = 0.0;
        for (std::int64_t i = 0; i < sp.n; ++i) dot += o.grad[base + i * sp.inner] * o.value[base + i * sp.inner];
        const double inv = (*inv_norm)[oo * sp.inner + k];
        for (std::int64_t i = 0; i < sp.n; ++i) {
          const std::int64_t j = base + i * sp.inner;
          g[j] += inv * (o.grad[j] - o.value[j] * dot);
        }
      }
  });
}

// ---- losses ----------------------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels, std::int32_t ignore_label) {
  if (logits.rank() < 1) throw DimensionError("cross_entropy: logits need a class axis");
  const std::int64_t K = logits.dim(0);
  const std::int64_t N = K == 0 ? 0 : logits.numel() / K;
  if (static_cast<std::int64_t>(labels.size()) != N)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
  const auto lv = logits.data();
  auto probs = std::make_shared<std::vector<double>>(lv.size());
  auto lab = std::make_shared<std::vector<std::int32_t>>(labels.begin(), labels.end());
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t p = 0; p < N; ++p) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < K; ++c) mx = std::max(mx, lv[c * N + p]);
    double z = 0.0;
    for (std::int64_t c = 0; c < K; ++c) {
      const double e = std::exp(lv[c * N + p] - mx);
      (*probs)[c * N + p] = e;
      z += e;
    }
    for (std::int64_t c = 0; c < K; ++c) (*probs)[c * N + p] /= z;
    const std::int32_t y = labels[p];
    if (y == ignore_label) continue;
    if (y < 0 || y >= K) throw DataError("cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(K) + ")");
    total += (mx + std::log(z)) - lv[y * N + p];
    ++count;
  }
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  return make_result({}, {total * inv}, {logits}, "cross_entropy", [=](Node& o) {
    Node& pl = parent(o, 0);
    auto g = pl.grad_buffer();
    const double s = o.grad[0] * inv;
    for (std::int64_t p = 0; p < N; ++p) {
      const std::int32_t y = (*lab)[p];
      if (y == ignore_label) continue;
      for (std::int64_t c = 0; c < K; ++c) g[c * N + p] += s * ((*probs)[c * N + p] - (c == y ? 1.0 : 0.0));
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets, std::span<const std::uint8_t> mask) {
  const std::int64_t n = logits.numel();
  if (static_cast<std::int64_t>(targets.size()) != n || (!mask.empty() && static_cast<std::int64_t>(mask.size()) != n))
    throw DimensionError("bce_with_logits: targets/mask do not match logits " + shape_str(logits.shape()));
  const auto lv = logits.data();
  auto t = std::make_shared<std::vector<double>>(targets.begin(), targets.end());
  auto m = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    if (!m->empty() && !(*m)[k]) continue;
    const double x = lv[k];
    total += std::max(x, 0.0) - x * targets[k] + std::log1p(std::exp(-std::fabs(x)));
    ++count;
  }
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  return make_result({}, {total * inv}, {logits}, "bce_with_logits", [=](Node& o) {
    Node& pl = parent(o, 0);
    auto g = pl.grad_buffer();
    const double s = o.grad[0] * inv;
    for (std::int64_t k = 0; k < n; ++k) {
      if (!m->empty() && !(*m)[k]) continue;
      g[k] += s * (stable_sigmoid(pl.value[k]) - (*t)[k]);
    }
  });
}

Tensor masked_l1(const Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> mask) {
  const std::int64_t n = pred.numel();
  if (static_cast<std::int64_t>(target.size()) != n || (!mask.empty() && static_cast<std::int64_t>(mask.size()) != n))
    throw DimensionError("masked_l1: target/mask do not match prediction " + shape_str(pred.shape()));
  const auto pv = pred.data();
  auto t = std::make_shared<std::vector<double>>(target.begin(), target.end());
  auto m = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    if (!m->empty() && !(*m)[k]) continue;
    total += std::fabs(pv[k] - target[k]);
    ++count;
  }
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  return make_result({}, {total * inv}, {pred}, "masked_l1", [=](Node& o) {
    Node& pp = parent(o, 0);
    auto g = pp.grad_buffer();
    const double s = o.grad[0] * inv;
    for (std::int64_t k = 0; k < n; ++k) {
      if (!m->empty() && !(*m)[k]) continue;
      const double d = pp.value[k] - (*t)[k];
      g[k] += s * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
    }
  });
}

}  // namespace cvm::ad
