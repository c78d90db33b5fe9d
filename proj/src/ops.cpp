#include "xg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

namespace xg {

namespace {

// Right-aligned strides of `in` against the broadcast result `out`;
// stride 0 where `in` is stretched.
std::vector<size_t> aligned_strides(const Shape& in, const Shape& out) {
  const int R = static_cast<int>(out.size());
  const int r = static_cast<int>(in.size());
  std::vector<size_t> st(static_cast<size_t>(R), 0);
  size_t acc = 1;
  for (int d = r - 1; d >= 0; --d) {
    const int od = R - r + d;
    st[static_cast<size_t>(od)] = (in[static_cast<size_t>(d)] == 1) ? 0 : acc;
    acc *= static_cast<size_t>(in[static_cast<size_t>(d)]);
  }
  return st;
}

// Odometer walk over `out`, applying f(a_i, b_i) elementwise.
template <class F>
std::vector<double> broadcast_eval(const Tensor& a, const Tensor& b, const Shape& out, F f) {
  const size_t n = shape_numel(out);
  std::vector<double> res(n);
  if (a.shape() == b.shape()) {
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n; ++i) res[i] = f(av[i], bv[i]);
    return res;
  }
  const int R = static_cast<int>(out.size());
  const auto sa = aligned_strides(a.shape(), out);
  const auto sb = aligned_strides(b.shape(), out);
  std::vector<int> coord(static_cast<size_t>(R), 0);
  const auto& av = a.data();
  const auto& bv = b.data();
  size_t oa = 0, ob = 0;
  for (size_t i = 0; i < n; ++i) {
    res[i] = f(av[oa], bv[ob]);
    for (int d = R - 1; d >= 0; --d) {
      const auto ud = static_cast<size_t>(d);
      ++coord[ud];
      oa += sa[ud];
      ob += sb[ud];
      if (coord[ud] < out[ud]) break;
      oa -= sa[ud] * static_cast<size_t>(out[ud]);
      ob -= sb[ud] * static_cast<size_t>(out[ud]);
      coord[ud] = 0;
    }
  }
  return res;
}

template <class F>
std::vector<double> unary_eval(const Tensor& a, F f) {
  std::vector<double> res(a.numel());
  const auto& av = a.data();
  for (size_t i = 0; i < res.size(); ++i) res[i] = f(av[i]);
  return res;
}

void check_axes(const Tensor& a, std::vector<int>& axes) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (int ax : axes)
    if (ax < 0 || ax >= a.rank())
      throw ShapeError("reduction axis " + std::to_string(ax) + " out of range for " +
                       shape_str(a.shape()));
}

Shape reduced_shape(const Shape& in, const std::vector<int>& axes, bool keepdims) {
  Shape out;
  for (int d = 0; d < static_cast<int>(in.size()); ++d) {
    const bool red = std::find(axes.begin(), axes.end(), d) != axes.end();
    if (red) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(in[static_cast<size_t>(d)]);
    }
  }
  return out;
}

// 512-column blocked (i,k,j) kernel; fixed summation order, no reassociation.
void matmul_kernel(const double* A, const double* B, double* C, int M, int K, int N) {
  constexpr int JB = 512;
  for (int j0 = 0; j0 < N; j0 += JB) {
    const int jw = std::min(JB, N - j0);
    for (int i = 0; i < M; ++i) {
      double* c = C + static_cast<size_t>(i) * N + j0;
      for (int j = 0; j < jw; ++j) c[j] = 0.0;
      const double* a = A + static_cast<size_t>(i) * K;
      for (int k = 0; k < K; ++k) {
        const double av = a[k];
        const double* b = B + static_cast<size_t>(k) * N + j0;
        for (int j = 0; j < jw; ++j) c[j] += av * b[j];
      }
    }
  }
}

Tensor embed_slice(const Tensor& g, const Shape& full, int axis, int start);

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const int R = std::max(a.size(), b.size());
  Shape out(static_cast<size_t>(R), 1);
  for (int d = 0; d < R; ++d) {
    const int ad = d - (R - static_cast<int>(a.size()));
    const int bd = d - (R - static_cast<int>(b.size()));
    const int av = ad >= 0 ? a[static_cast<size_t>(ad)] : 1;
    const int bv = bd >= 0 ? b[static_cast<size_t>(bd)] : 1;
    if (av != bv && av != 1 && bv != 1)
      throw ShapeError("broadcast mismatch " + shape_str(a) + " vs " + shape_str(b));
    out[static_cast<size_t>(d)] = std::max(av, bv);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shapes(a.shape(), b.shape());
  auto v = broadcast_eval(a, b, out, [](double x, double y) { return x + y; });
  Shape as = a.shape(), bs = b.shape();
  return make_node(std::move(out), std::move(v), "add", {a, b}, [as, bs](const Tensor& g) {
    return std::vector<Tensor>{sum_to_shape(g, as), sum_to_shape(g, bs)};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shapes(a.shape(), b.shape());
  auto v = broadcast_eval(a, b, out, [](double x, double y) { return x - y; });
  Shape as = a.shape(), bs = b.shape();
  return make_node(std::move(out), std::move(v), "sub", {a, b}, [as, bs](const Tensor& g) {
    return std::vector<Tensor>{sum_to_shape(g, as), sum_to_shape(neg(g), bs)};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shapes(a.shape(), b.shape());
  auto v = broadcast_eval(a, b, out, [](double x, double y) { return x * y; });
  return make_node(std::move(out), std::move(v), "mul", {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{sum_to_shape(mul(g, b), a.shape()),
                               sum_to_shape(mul(g, a), b.shape())};
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shapes(a.shape(), b.shape());
  auto v = broadcast_eval(a, b, out, [](double x, double y) { return x / y; });
  return make_node(std::move(out), std::move(v), "div", {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{sum_to_shape(div(g, b), a.shape()),
                               sum_to_shape(neg(div(mul(g, a), square(b))), b.shape())};
  });
}

Tensor neg(const Tensor& a) {
  auto v = unary_eval(a, [](double x) { return -x; });
  return make_node(a.shape(), std::move(v), "neg", {a},
                   [](const Tensor& g) { return std::vector<Tensor>{neg(g)}; });
}

Tensor scale(const Tensor& a, double s) {
  auto v = unary_eval(a, [s](double x) { return s * x; });
  return make_node(a.shape(), std::move(v), "scale", {a},
                   [s](const Tensor& g) { return std::vector<Tensor>{scale(g, s)}; });
}

Tensor add_scalar(const Tensor& a, double s) {
  auto v = unary_eval(a, [s](double x) { return x + s; });
  return make_node(a.shape(), std::move(v), "add_scalar", {a},
                   [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor relu(const Tensor& a) {
  auto v = unary_eval(a, [](double x) { return x > 0.0 ? x : 0.0; });
  // subgradient at 0 is 0; the mask is data, not graph
  auto mask = Tensor::from(unary_eval(a, [](double x) { return x > 0.0 ? 1.0 : 0.0; }), a.shape());
  return make_node(a.shape(), std::move(v), "relu", {a},
                   [mask](const Tensor& g) { return std::vector<Tensor>{mul(g, mask)}; });
}

Tensor softplus(const Tensor& a, double beta) {
  if (beta <= 0.0) throw ConfigError("softplus: beta must be positive");
  auto v = unary_eval(a, [beta](double x) {
    const double z = beta * x;
    return z > 0.0 ? x + std::log1p(std::exp(-z)) / beta : std::log1p(std::exp(z)) / beta;
  });
  return make_node(a.shape(), std::move(v), "softplus", {a}, [a, beta](const Tensor& g) {
    return std::vector<Tensor>{mul(g, sigmoid(scale(a, beta)))};
  });
}

Tensor sigmoid(const Tensor& a) {
  auto v = unary_eval(a, [](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  // recompute in backward instead of capturing the output (no self-cycles)
  return make_node(a.shape(), std::move(v), "sigmoid", {a}, [a](const Tensor& g) {
    Tensor s = sigmoid(a);
    return std::vector<Tensor>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
  });
}

Tensor exp_(const Tensor& a) {
  auto v = unary_eval(a, [](double x) { return std::exp(x); });
  return make_node(a.shape(), std::move(v), "exp", {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{mul(g, exp_(a))};
  });
}

Tensor log_(const Tensor& a) {
  auto v = unary_eval(a, [](double x) { return std::log(x); });
  return make_node(a.shape(), std::move(v), "log", {a},
                   [a](const Tensor& g) { return std::vector<Tensor>{div(g, a)}; });
}

Tensor sqrt_(const Tensor& a) {
  auto v = unary_eval(a, [](double x) { return std::sqrt(x); });
  return make_node(a.shape(), std::move(v), "sqrt", {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{div(g, scale(sqrt_(a), 2.0))};
  });
}

Tensor square(const Tensor& a) {
  auto v = unary_eval(a, [](double x) { return x * x; });
  return make_node(a.shape(), std::move(v), "square", {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{mul(g, scale(a, 2.0))};
  });
}

Tensor abs_(const Tensor& a) {
  auto v = unary_eval(a, [](double x) { return std::fabs(x); });
  auto sgn = Tensor::from(
      unary_eval(a, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }), a.shape());
  return make_node(a.shape(), std::move(v), "abs", {a},
                   [sgn](const Tensor& g) { return std::vector<Tensor>{mul(g, sgn)}; });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Shape as = a.shape();
  return make_node(std::move(shape), a.data(), "reshape", {a}, [as](const Tensor& g) {
    return std::vector<Tensor>{reshape(g, as)};
  });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  Shape chk = broadcast_shapes(a.shape(), shape);
  if (chk != shape)
    throw ShapeError("broadcast_to: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  const size_t n = shape_numel(shape);
  std::vector<double> v(n);
  const int R = static_cast<int>(shape.size());
  const auto st = aligned_strides(a.shape(), shape);
  std::vector<int> coord(static_cast<size_t>(R), 0);
  const auto& av = a.data();
  size_t oa = 0;
  for (size_t i = 0; i < n; ++i) {
    v[i] = av[oa];
    for (int d = R - 1; d >= 0; --d) {
      const auto ud = static_cast<size_t>(d);
      ++coord[ud];
      oa += st[ud];
      if (coord[ud] < shape[ud]) break;
      oa -= st[ud] * static_cast<size_t>(shape[ud]);
      coord[ud] = 0;
    }
  }
  Shape as = a.shape();
  return make_node(shape, std::move(v), "broadcast_to", {a}, [as](const Tensor& g) {
    return std::vector<Tensor>{sum_to_shape(g, as)};
  });
}

Tensor sum_to_shape(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  const int R = a.rank();
  const int r = static_cast<int>(shape.size());
  std::vector<int> axes;
  for (int d = 0; d < R; ++d) {
    const int td = d - (R - r);
    const int tv = td >= 0 ? shape[static_cast<size_t>(td)] : 1;
    if (a.shape()[static_cast<size_t>(d)] != tv) {
      if (tv != 1)
        throw ShapeError("sum_to_shape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
      axes.push_back(d);
    }
  }
  Tensor s = axes.empty() ? a : reduce_sum(a, axes, true);
  return reshape(s, shape);
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d: need rank 2, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> v(a.numel());
  const auto& av = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      v[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  return make_node({n, m}, std::move(v), "transpose2d", {a}, [](const Tensor& g) {
    return std::vector<Tensor>{transpose2d(g)};
  });
}

Tensor swap01(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("swap01: need rank >= 2");
  const int d0 = a.dim(0), d1 = a.dim(1);
  size_t inner = 1;
  for (int d = 2; d < a.rank(); ++d) inner *= static_cast<size_t>(a.dim(d));
  Shape out = a.shape();
  std::swap(out[0], out[1]);
  std::vector<double> v(a.numel());
  const auto& av = a.data();
  for (int i = 0; i < d0; ++i)
    for (int j = 0; j < d1; ++j)
      std::memcpy(v.data() + (static_cast<size_t>(j) * d0 + i) * inner,
                  av.data() + (static_cast<size_t>(i) * d1 + j) * inner, inner * sizeof(double));
  return make_node(std::move(out), std::move(v), "swap01", {a}, [](const Tensor& g) {
    return std::vector<Tensor>{swap01(g)};
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size())) throw ShapeError("concat: bad axis");
  Shape out = s0;
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(s0.size())) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < p.rank(); ++d)
      if (d != axis && p.dim(d) != s0[static_cast<size_t>(d)])
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape()));
    total += p.dim(axis);
  }
  out[static_cast<size_t>(axis)] = total;

  size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(s0[static_cast<size_t>(d)]);
  for (int d = axis + 1; d < static_cast<int>(s0.size()); ++d)
    inner *= static_cast<size_t>(s0[static_cast<size_t>(d)]);

  std::vector<double> v(shape_numel(out));
  size_t off = 0;
  std::vector<int> starts;
  for (const auto& p : parts) {
    starts.push_back(static_cast<int>(off));
    const size_t blk = static_cast<size_t>(p.dim(axis)) * inner;
    for (size_t o = 0; o < outer; ++o)
      std::memcpy(v.data() + (o * static_cast<size_t>(total) + off) * inner,
                  p.data().data() + o * blk, blk * sizeof(double));
    off += static_cast<size_t>(p.dim(axis));
  }
  std::vector<int> lens;
  for (const auto& p : parts) lens.push_back(p.dim(axis));
  return make_node(std::move(out), std::move(v), "concat", parts,
                   [axis, starts, lens](const Tensor& g) {
                     std::vector<Tensor> gs;
                     for (size_t i = 0; i < lens.size(); ++i)
                       gs.push_back(slice(g, axis, starts[i], lens[i]));
                     return gs;
                   });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("slice: bad axis");
  if (start < 0 || len <= 0 || start + len > a.dim(axis))
    throw ShapeError("slice: range out of bounds");
  Shape out = a.shape();
  out[static_cast<size_t>(axis)] = len;
  size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(a.dim(d));
  for (int d = axis + 1; d < a.rank(); ++d) inner *= static_cast<size_t>(a.dim(d));
  const size_t full = static_cast<size_t>(a.dim(axis)) * inner;
  const size_t blk = static_cast<size_t>(len) * inner;
  std::vector<double> v(shape_numel(out));
  for (size_t o = 0; o < outer; ++o)
    std::memcpy(v.data() + o * blk,
                a.data().data() + o * full + static_cast<size_t>(start) * inner,
                blk * sizeof(double));
  Shape as = a.shape();
  return make_node(std::move(out), std::move(v), "slice", {a},
                   [as, axis, start](const Tensor& g) {
                     return std::vector<Tensor>{embed_slice(g, as, axis, start)};
                   });
}

namespace {
// adjoint of slice: place g into zeros of `full` at `start` along `axis`
Tensor embed_slice(const Tensor& g, const Shape& full, int axis, int start) {
  size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(full[static_cast<size_t>(d)]);
  for (int d = axis + 1; d < static_cast<int>(full.size()); ++d)
    inner *= static_cast<size_t>(full[static_cast<size_t>(d)]);
  const int len = g.dim(axis);
  const size_t fullb = static_cast<size_t>(full[static_cast<size_t>(axis)]) * inner;
  const size_t blk = static_cast<size_t>(len) * inner;
  std::vector<double> v(shape_numel(full), 0.0);
  for (size_t o = 0; o < outer; ++o)
    std::memcpy(v.data() + o * fullb + static_cast<size_t>(start) * inner,
                g.data().data() + o * blk, blk * sizeof(double));
  return make_node(full, std::move(v), "embed_slice", {g}, [axis, start, len](const Tensor& g2) {
    return std::vector<Tensor>{slice(g2, axis, start, len)};
  });
}
}  // namespace

Tensor reduce_sum(const Tensor& a, std::vector<int> axes, bool keepdims) {
  check_axes(a, axes);
  Shape keep = reduced_shape(a.shape(), axes, true);
  Shape out = reduced_shape(a.shape(), axes, keepdims);
  if (out.empty() && !keepdims) out = Shape{};  // full reduction -> scalar

  const int R = a.rank();
  const auto ost = aligned_strides(keep, a.shape());  // 0 stride on reduced dims
  std::vector<double> v(shape_numel(keep), 0.0);
  std::vector<int> coord(static_cast<size_t>(R), 0);
  const auto& av = a.data();
  size_t oo = 0;
  for (size_t i = 0; i < a.numel(); ++i) {
    v[oo] += av[i];
    for (int d = R - 1; d >= 0; --d) {
      const auto ud = static_cast<size_t>(d);
      ++coord[ud];
      oo += ost[ud];
      if (coord[ud] < a.shape()[ud]) break;
      oo -= ost[ud] * static_cast<size_t>(a.shape()[ud]);
      coord[ud] = 0;
    }
  }
  Shape as = a.shape();
  return make_node(std::move(out), std::move(v), "reduce_sum", {a},
                   [as, keep](const Tensor& g) {
                     return std::vector<Tensor>{broadcast_to(reshape(g, keep), as)};
                   });
}

Tensor reduce_mean(const Tensor& a, std::vector<int> axes, bool keepdims) {
  check_axes(a, axes);
  size_t cnt = 1;
  for (int ax : axes) cnt *= static_cast<size_t>(a.dim(ax));
  return scale(reduce_sum(a, axes, keepdims), 1.0 / static_cast<double>(cnt));
}

Tensor reduce_max(const Tensor& a, std::vector<int> axes, bool keepdims) {
  check_axes(a, axes);
  Shape keep = reduced_shape(a.shape(), axes, true);
  Shape out = reduced_shape(a.shape(), axes, keepdims);

  const int R = a.rank();
  const auto ost = aligned_strides(keep, a.shape());
  const size_t on = shape_numel(keep);
  std::vector<double> v(on, -std::numeric_limits<double>::infinity());
  std::vector<size_t> argi(on, 0);
  std::vector<int> coord(static_cast<size_t>(R), 0);
  const auto& av = a.data();
  size_t oo = 0;
  for (size_t i = 0; i < a.numel(); ++i) {
    if (av[i] > v[oo]) {  // strict: first occurrence wins on ties
      v[oo] = av[i];
      argi[oo] = i;
    }
    for (int d = R - 1; d >= 0; --d) {
      const auto ud = static_cast<size_t>(d);
      ++coord[ud];
      oo += ost[ud];
      if (coord[ud] < a.shape()[ud]) break;
      oo -= ost[ud] * static_cast<size_t>(a.shape()[ud]);
      coord[ud] = 0;
    }
  }
  std::vector<double> maskv(a.numel(), 0.0);
  for (size_t j = 0; j < on; ++j) maskv[argi[j]] = 1.0;
  auto mask = Tensor::from(std::move(maskv), a.shape());
  Shape as = a.shape();
  return make_node(std::move(out), std::move(v), "reduce_max", {a},
                   [as, keep, mask](const Tensor& g) {
                     return std::vector<Tensor>{mul(broadcast_to(reshape(g, keep), as), mask)};
                   });
}

Tensor reduce_sum_all(const Tensor& a) {
  std::vector<int> axes(static_cast<size_t>(a.rank()));
  for (int d = 0; d < a.rank(); ++d) axes[static_cast<size_t>(d)] = d;
  if (a.rank() == 0) return a;
  return reduce_sum(a, axes, false);
}

Tensor reduce_mean_all(const Tensor& a) {
  return scale(reduce_sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor reduce_var(const Tensor& a, const std::vector<int>& axes, bool keepdims) {
  Tensor m = reduce_mean(a, axes, true);
  Tensor d = sub(a, m);
  return reduce_mean(square(d), axes, keepdims);
}

Tensor detach(const Tensor& a) { return a.detached(); }

Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad) {
  if (x.rank() != 4) throw ShapeError("im2col: need [M,C,H,W], got " + shape_str(x.shape()));
  const int M = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if ((H + 2 * pad - kh) % stride != 0 || (W + 2 * pad - kw) % stride != 0)
    throw ConfigError("im2col: non-integer output size for H=" + std::to_string(H) +
                      " W=" + std::to_string(W) + " k=" + std::to_string(kh) + "x" +
                      std::to_string(kw) + " stride=" + std::to_string(stride) +
                      " pad=" + std::to_string(pad));
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ConfigError("im2col: non-positive output size");

  const int rows = C * kh * kw;
  const size_t cols_n = static_cast<size_t>(M) * Ho * Wo;
  std::vector<double> v(static_cast<size_t>(rows) * cols_n, 0.0);
  const auto& xv = x.data();
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const size_t r = static_cast<size_t>((c * kh + ki) * kw + kj);
        double* dst = v.data() + r * cols_n;
        for (int m = 0; m < M; ++m) {
          const double* src = xv.data() + (static_cast<size_t>(m) * C + c) * H * W;
          for (int oh = 0; oh < Ho; ++oh) {
            const int ih = oh * stride - pad + ki;
            double* drow = dst + (static_cast<size_t>(m) * Ho + oh) * Wo;
            if (ih < 0 || ih >= H) continue;  // stays zero
            for (int ow = 0; ow < Wo; ++ow) {
              const int iw = ow * stride - pad + kj;
              if (iw >= 0 && iw < W) drow[ow] = src[static_cast<size_t>(ih) * W + iw];
            }
          }
        }
      }
  Shape xs = x.shape();
  return make_node({rows, static_cast<int>(cols_n)}, std::move(v), "im2col", {x},
                   [xs, kh, kw, stride, pad](const Tensor& g) {
                     return std::vector<Tensor>{col2im(g, xs, kh, kw, stride, pad)};
                   });
}

Tensor col2im(const Tensor& cols, const Shape& x_shape, int kh, int kw, int stride, int pad) {
  const int M = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3];
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  const size_t cols_n = static_cast<size_t>(M) * Ho * Wo;
  if (cols.rank() != 2 || cols.dim(0) != C * kh * kw ||
      static_cast<size_t>(cols.dim(1)) != cols_n)
    throw ShapeError("col2im: column shape mismatch " + shape_str(cols.shape()));

  std::vector<double> v(shape_numel(x_shape), 0.0);
  const auto& cv = cols.data();
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const size_t r = static_cast<size_t>((c * kh + ki) * kw + kj);
        const double* src = cv.data() + r * cols_n;
        for (int m = 0; m < M; ++m) {
          double* dst = v.data() + (static_cast<size_t>(m) * C + c) * H * W;
          for (int oh = 0; oh < Ho; ++oh) {
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= H) continue;
            const double* srow = src + (static_cast<size_t>(m) * Ho + oh) * Wo;
            for (int ow = 0; ow < Wo; ++ow) {
              const int iw = ow * stride - pad + kj;
              if (iw >= 0 && iw < W) dst[static_cast<size_t>(ih) * W + iw] += srow[ow];
            }
          }
        }
      }
  return make_node(x_shape, std::move(v), "col2im", {cols},
                   [kh, kw, stride, pad](const Tensor& g) {
                     return std::vector<Tensor>{im2col(g, kh, kw, stride, pad)};
                   });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<double> v(static_cast<size_t>(M) * N);
  matmul_kernel(a.data().data(), b.data().data(), v.data(), M, K, N);
  return make_node({M, N}, std::move(v), "matmul", {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{matmul(g, transpose2d(b)), matmul(transpose2d(a), g)};
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d: need x[M,Cin,H,W], w[Cout,Cin,kh,kw]");
  if (x.dim(1) != w.dim(1))
    throw ShapeError("conv2d: channel mismatch x" + shape_str(x.shape()) + " w" +
                     shape_str(w.shape()));
  const int M = x.dim(0), Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != Cout))
    throw ShapeError("conv2d: bias shape " + shape_str(b.shape()));
  Tensor cols = im2col(x, kh, kw, stride, pad);
  const int Ho = (x.dim(2) + 2 * pad - kh) / stride + 1;
  const int Wo = (x.dim(3) + 2 * pad - kw) / stride + 1;
  Tensor wmat = reshape(w, {Cout, w.dim(1) * kh * kw});
  Tensor out = matmul(wmat, cols);                       // [Cout, M*Ho*Wo]
  out = swap01(reshape(out, {Cout, M, Ho, Wo}));         // [M, Cout, Ho, Wo]
  if (b.defined()) out = add(out, reshape(b, {1, Cout, 1, 1}));
  return out;
}

namespace {
Tensor pool_gather(const Tensor& g2, const Shape& out_shape,
                   std::shared_ptr<std::vector<size_t>> idx);

Tensor pool_scatter(const Tensor& g, const Shape& x_shape,
                    std::shared_ptr<std::vector<size_t>> idx) {
  std::vector<double> v(shape_numel(x_shape), 0.0);
  const auto& gv = g.data();
  for (size_t i = 0; i < gv.size(); ++i) v[(*idx)[i]] += gv[i];
  Shape os = g.shape();
  return make_node(x_shape, std::move(v), "pool_scatter", {g}, [os, idx](const Tensor& g2) {
    return std::vector<Tensor>{pool_gather(g2, os, idx)};
  });
}

Tensor pool_gather(const Tensor& g2, const Shape& out_shape,
                   std::shared_ptr<std::vector<size_t>> idx) {
  std::vector<double> v(shape_numel(out_shape));
  const auto& gv = g2.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = gv[(*idx)[i]];
  Shape xs = g2.shape();
  return make_node(out_shape, std::move(v), "pool_gather", {g2}, [xs, idx](const Tensor& g3) {
    return std::vector<Tensor>{pool_scatter(g3, xs, idx)};
  });
}
}  // namespace

Tensor maxpool2d(const Tensor& x, int k, int stride) {
  if (x.rank() != 4) throw ShapeError("maxpool2d: need [M,C,H,W]");
  const int M = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if ((H - k) % stride != 0 || (W - k) % stride != 0)
    throw ConfigError("maxpool2d: non-integer output size");
  const int Ho = (H - k) / stride + 1;
  const int Wo = (W - k) / stride + 1;
  std::vector<double> v(static_cast<size_t>(M) * C * Ho * Wo);
  auto idx = std::make_shared<std::vector<size_t>>(v.size());
  const auto& xv = x.data();
  size_t o = 0;
  for (int m = 0; m < M; ++m)
    for (int c = 0; c < C; ++c) {
      const size_t base = (static_cast<size_t>(m) * C + c) * H * W;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          size_t bi = 0;
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
              const size_t pi = base + static_cast<size_t>(oh * stride + ki) * W +
                                static_cast<size_t>(ow * stride + kj);
              if (xv[pi] > best) {
                best = xv[pi];
                bi = pi;
              }
            }
          v[o] = best;
          (*idx)[o] = bi;
        }
    }
  Shape xs = x.shape();
  return make_node({M, C, Ho, Wo}, std::move(v), "maxpool2d", {x}, [xs, idx](const Tensor& g) {
    return std::vector<Tensor>{pool_scatter(g, xs, idx)};
  });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: need [M,C,H,W]");
  return reduce_mean(x, {2, 3}, false);
}

namespace {
struct LinWeights {
  // per-destination source corners and weights along one axis
  std::vector<int> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets (1-w1)
};

LinWeights axis_weights(int src, int dst) {
  LinWeights lw;
  lw.i0.resize(static_cast<size_t>(dst));
  lw.i1.resize(static_cast<size_t>(dst));
  lw.w1.resize(static_cast<size_t>(dst));
  for (int d = 0; d < dst; ++d) {
    double s = (d + 0.5) * static_cast<double>(src) / dst - 0.5;
    s = std::max(0.0, std::min(s, static_cast<double>(src - 1)));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, src - 1);
    lw.i0[static_cast<size_t>(d)] = i0;
    lw.i1[static_cast<size_t>(d)] = i1;
    lw.w1[static_cast<size_t>(d)] = s - i0;
  }
  return lw;
}
}  // namespace

Tensor upsample_bilinear(const Tensor& x, int h2, int w2) {
  if (x.rank() < 2) throw ShapeError("upsample_bilinear: need rank >= 2");
  const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  size_t lead = x.numel() / (static_cast<size_t>(h) * w);
  const auto rh = axis_weights(h, h2);
  const auto rw = axis_weights(w, w2);
  Shape out = x.shape();
  out[out.size() - 2] = h2;
  out[out.size() - 1] = w2;
  std::vector<double> v(shape_numel(out));
  const auto& xv = x.data();
  for (size_t l = 0; l < lead; ++l) {
    const double* src = xv.data() + l * h * w;
    double* dst = v.data() + l * static_cast<size_t>(h2) * w2;
    for (int i = 0; i < h2; ++i) {
      const auto ui = static_cast<size_t>(i);
      const double wy = rh.w1[ui];
      const double* r0 = src + static_cast<size_t>(rh.i0[ui]) * w;
      const double* r1 = src + static_cast<size_t>(rh.i1[ui]) * w;
      for (int j = 0; j < w2; ++j) {
        const auto uj = static_cast<size_t>(j);
        const double wx = rw.w1[uj];
        const double top = r0[rw.i0[uj]] * (1 - wx) + r0[rw.i1[uj]] * wx;
        const double bot = r1[rw.i0[uj]] * (1 - wx) + r1[rw.i1[uj]] * wx;
        dst[static_cast<size_t>(i) * w2 + j] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return make_node(std::move(out), std::move(v), "upsample_bilinear", {x},
                   [h, w](const Tensor& g) {
                     return std::vector<Tensor>{upsample_bilinear_adjoint(g, h, w)};
                   });
}

Tensor upsample_bilinear_adjoint(const Tensor& g, int h, int w) {
  if (g.rank() < 2) throw ShapeError("upsample_bilinear_adjoint: need rank >= 2");
  const int h2 = g.dim(g.rank() - 2), w2 = g.dim(g.rank() - 1);
  size_t lead = g.numel() / (static_cast<size_t>(h2) * w2);
  const auto rh = axis_weights(h, h2);
  const auto rw = axis_weights(w, w2);
  Shape out = g.shape();
  out[out.size() - 2] = h;
  out[out.size() - 1] = w;
  std::vector<double> v(shape_numel(out), 0.0);
  const auto& gv = g.data();
  for (size_t l = 0; l < lead; ++l) {
    const double* src = gv.data() + l * static_cast<size_t>(h2) * w2;
    double* dst = v.data() + l * static_cast<size_t>(h) * w;
    for (int i = 0; i < h2; ++i) {
      const auto ui = static_cast<size_t>(i);
      const double wy = rh.w1[ui];
      double* r0 = dst + static_cast<size_t>(rh.i0[ui]) * w;
      double* r1 = dst + static_cast<size_t>(rh.i1[ui]) * w;
      for (int j = 0; j < w2; ++j) {
        const auto uj = static_cast<size_t>(j);
        const double wx = rw.w1[uj];
        const double gval = src[static_cast<size_t>(i) * w2 + j];
        r0[rw.i0[uj]] += gval * (1 - wx) * (1 - wy);
        r0[rw.i1[uj]] += gval * wx * (1 - wy);
        r1[rw.i0[uj]] += gval * (1 - wx) * wy;
        r1[rw.i1[uj]] += gval * wx * wy;
      }
    }
  }
  return make_node(std::move(out), std::move(v), "upsample_bilinear_adjoint", {g},
                   [h2, w2](const Tensor& g2) {
                     return std::vector<Tensor>{upsample_bilinear(g2, h2, w2)};
                   });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out = matmul(x, transpose2d(w));
  if (b.defined()) out = add(out, reshape(b, {1, b.dim(0)}));
  return out;
}

Tensor pick_class(const Tensor& logits, const std::vector<int>& idx) {
  if (logits.rank() != 2) throw ShapeError("pick_class: need [M,K]");
  const int M = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(idx.size()) != M) throw ShapeError("pick_class: index count mismatch");
  std::vector<double> oh(static_cast<size_t>(M) * K, 0.0);
  for (int i = 0; i < M; ++i) {
    if (idx[static_cast<size_t>(i)] < 0 || idx[static_cast<size_t>(i)] >= K)
      throw DataError("pick_class: class index " + std::to_string(idx[static_cast<size_t>(i)]) +
                      " out of range for " + std::to_string(K) + " classes");
    oh[static_cast<size_t>(i) * K + idx[static_cast<size_t>(i)]] = 1.0;
  }
  return reduce_sum(mul(logits, Tensor::from(std::move(oh), {M, K})), {1}, false);
}

Tensor softmax_xent(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_xent: need [M,K]");
  const int M = logits.dim(0);
  Tensor m = detach(reduce_max(logits, {1}, true));
  Tensor z = sub(logits, m);
  Tensor lse = add(log_(reduce_sum(exp_(z), {1}, true)), m);  // [M,1]
  Tensor picked = pick_class(logits, labels);                 // [M]
  return reduce_mean_all(sub(reshape(lse, {M}), picked));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: need [M,K]");
  const int M = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(M));
  const auto& v = logits.data();
  for (int i = 0; i < M; ++i) {
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (v[static_cast<size_t>(i) * K + k] > v[static_cast<size_t>(i) * K + best]) best = k;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

Tensor normalize01_batched(const Tensor& maps, double tiny) {
  if (maps.rank() < 2) throw ShapeError("normalize01_batched: need batch + spatial axes");
  std::vector<int> axes;
  for (int d = 1; d < maps.rank(); ++d) axes.push_back(d);
  Tensor mx = reduce_max(maps, axes, true);
  Tensor mn = neg(reduce_max(neg(maps), axes, true));
  Tensor rng = sub(mx, mn);
  // constant-range samples collapse to all-zero with zero gradient
  std::vector<double> maskv(rng.numel());
  for (size_t i = 0; i < maskv.size(); ++i) maskv[i] = rng.data()[i] > tiny ? 1.0 : 0.0;
  Tensor mask = Tensor::from(std::move(maskv), rng.shape());
  Tensor denom = add(rng, add_scalar(neg(mask), 1.0));
  return mul(div(sub(maps, mn), denom), mask);
}

}  // namespace xg
