// SPDX-License-Identifier: Apache-2.0

#include "metauda/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>

namespace metauda::ad {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
  }
}

void require_defined(const char* op, const Tensor& a) {
  if (!a.defined()) throw ContractViolation(std::string(op) + ": undefined tensor");
}

std::vector<double> copy_data(const Tensor& t) {
  auto d = t.data();
  return {d.begin(), d.end()};
}

// Row-major strides of shape.
std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// For each flat index of `target`, the flat index into `source` under
// numpy broadcasting of source to target.
std::vector<std::size_t> broadcast_index(const Shape& source, const Shape& target) {
  if (source.size() > target.size()) {
    throw ContractViolation("broadcast: " + shape_str(source) + " has more axes than " +
                            shape_str(target));
  }
  const std::size_t offset = target.size() - source.size();
  Shape aligned(target.size(), 1);
  for (std::size_t i = 0; i < source.size(); ++i) {
    aligned[offset + i] = source[i];
    if (source[i] != 1 && source[i] != target[offset + i]) {
      throw ContractViolation("broadcast: cannot broadcast " + shape_str(source) + " to " +
                              shape_str(target));
    }
  }
  auto src_strides = strides_of(aligned);
  for (std::size_t i = 0; i < aligned.size(); ++i) {
    if (aligned[i] == 1) src_strides[i] = 0;
  }
  const std::size_t n = shape_numel(target);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(target.size(), 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    index[flat] = src;
    for (std::size_t ax = target.size(); ax-- > 0;) {
      ++counter[ax];
      src += src_strides[ax];
      if (counter[ax] < target[ax]) break;
      src -= src_strides[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return index;
}

template <class F>
Tensor unary_map(const char* op, const Tensor& x, F f, BackwardFn backward) {
  require_defined(op, x);
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(op, x.shape(), std::move(out), {x}, std::move(backward));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {a, b},
                     [](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{g, g};
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {a, b},
                     [](const Tensor& g, const std::vector<bool>& needed) {
                       return std::vector<Tensor>{g, needed[1] ? neg(g) : Tensor{}};
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {a, b},
                     [a, b](const Tensor& g, const std::vector<bool>& needed) {
                       return std::vector<Tensor>{needed[0] ? mul(g, b) : Tensor{},
                                                  needed[1] ? mul(g, a) : Tensor{}};
                     });
}

Tensor mul(const Tensor& a, double s) {
  require_defined("scale", a);
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return make_result("scale", a.shape(), std::move(out), {a},
                     [s](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{mul(g, s)};
                     });
}

Tensor neg(const Tensor& a) { return mul(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  if (a.dim() != 2 || b.dim() != 2) {
    throw ContractViolation("matmul: operands must be 2-D, got " + shape_str(a.shape()) +
                            " and " + shape_str(b.shape()));
  }
  const std::size_t m = ta ? a.size(1) : a.size(0);
  const std::size_t k = ta ? a.size(0) : a.size(1);
  const std::size_t kb = tb ? b.size(1) : b.size(0);
  const std::size_t n = tb ? b.size(0) : b.size(1);
  if (k != kb) {
    throw ContractViolation("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
  }
  auto A = a.data();
  auto B = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? A[p * m + i] : A[i * k + p];
      if (av == 0.0) continue;
      if (tb) {
        for (std::size_t j = 0; j < n; ++j) row[j] += av * B[j * k + p];
      } else {
        const double* brow = B.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
      }
    }
  }
  return make_result(
      "matmul", {m, n}, std::move(out), {a, b},
      [a, b, ta, tb](const Tensor& g, const std::vector<bool>& needed) {
        Tensor ga, gb;
        if (needed[0]) ga = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
        if (needed[1]) gb = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
        return std::vector<Tensor>{ga, gb};
      });
}

// ---------------------------------------------------------------------------
// Convolution. <conv2d(x, w), gy> = <x, grad_input(gy, w)> = <w, grad_weight(x, gy)>,
// so each of the three kernels differentiates into the other two.

namespace {

struct ConvGeom {
  std::size_t c, h, w, o, k, pad, oh, ow;
};

ConvGeom conv_geom(const Shape& x, const Shape& weight, std::size_t pad) {
  if (x.size() != 3 || weight.size() != 4 || weight[2] != weight[3] || weight[1] != x[0]) {
    throw ContractViolation("conv2d: incompatible input " + shape_str(x) + " and weight " +
                            shape_str(weight));
  }
  ConvGeom g{x[0], x[1], x[2], weight[0], weight[2], pad, 0, 0};
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k) {
    throw ContractViolation("conv2d: kernel larger than padded input");
  }
  g.oh = g.h + 2 * pad - g.k + 1;
  g.ow = g.w + 2 * pad - g.k + 1;
  return g;
}

// Output columns ox for which ix = ox + kx - pad lies in [0, w).
inline void valid_range(std::size_t kx, std::size_t pad, std::size_t w, std::size_t ow,
                        std::size_t& lo, std::size_t& hi) {
  const long shift = static_cast<long>(kx) - static_cast<long>(pad);
  long l = std::max(0L, -shift);
  long h = std::min(static_cast<long>(ow), static_cast<long>(w) - shift);
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(std::max(l, h));
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t pad) {
  const auto g = conv_geom(x.shape(), weight.shape(), pad);
  auto X = x.data();
  auto W = weight.data();
  std::vector<double> out(g.o * g.oh * g.ow, 0.0);
  for (std::size_t o = 0; o < g.o; ++o) {
    double* obase = out.data() + o * g.oh * g.ow;
    for (std::size_t c = 0; c < g.c; ++c) {
      const double* xbase = X.data() + c * g.h * g.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        std::size_t ylo, yhi;
        valid_range(ky, g.pad, g.h, g.oh, ylo, yhi);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const double wv = W[((o * g.c + c) * g.k + ky) * g.k + kx];
          if (wv == 0.0) continue;
          std::size_t xlo, xhi;
          valid_range(kx, g.pad, g.w, g.ow, xlo, xhi);
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const double* xrow = xbase + (oy + ky - g.pad) * g.w +
                                 (static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad));
            double* orow = obase + oy * g.ow;
            for (std::size_t ox = xlo; ox < xhi; ++ox) orow[ox] += wv * xrow[ox];
          }
        }
      }
    }
  }
  return make_result("conv2d", {g.o, g.oh, g.ow}, std::move(out), {x, weight},
                     [x, weight, pad](const Tensor& gy, const std::vector<bool>& needed) {
                       Tensor gx, gw;
                       if (needed[0]) gx = conv2d_grad_input(gy, weight, pad, x.shape());
                       if (needed[1]) gw = conv2d_grad_weight(x, gy, pad, weight.size(2));
                       return std::vector<Tensor>{gx, gw};
                     });
}

Tensor conv2d_grad_input(const Tensor& gy, const Tensor& weight, std::size_t pad,
                         const Shape& input_shape) {
  const auto g = conv_geom(input_shape, weight.shape(), pad);
  if (gy.shape() != Shape{g.o, g.oh, g.ow}) {
    throw ContractViolation("conv2d_grad_input: upstream shape " + shape_str(gy.shape()));
  }
  auto G = gy.data();
  auto W = weight.data();
  std::vector<double> out(g.c * g.h * g.w, 0.0);
  for (std::size_t o = 0; o < g.o; ++o) {
    const double* gbase = G.data() + o * g.oh * g.ow;
    for (std::size_t c = 0; c < g.c; ++c) {
      double* xbase = out.data() + c * g.h * g.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        std::size_t ylo, yhi;
        valid_range(ky, g.pad, g.h, g.oh, ylo, yhi);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const double wv = W[((o * g.c + c) * g.k + ky) * g.k + kx];
          if (wv == 0.0) continue;
          std::size_t xlo, xhi;
          valid_range(kx, g.pad, g.w, g.ow, xlo, xhi);
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            double* xrow = xbase + (oy + ky - g.pad) * g.w +
                                 (static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad));
            const double* grow = gbase + oy * g.ow;
            for (std::size_t ox = xlo; ox < xhi; ++ox) xrow[ox] += wv * grow[ox];
          }
        }
      }
    }
  }
  return make_result("conv2d_grad_input", input_shape, std::move(out), {gy, weight},
                     [gy, weight, pad](const Tensor& h, const std::vector<bool>& needed) {
                       Tensor ggy, gw;
                       if (needed[0]) ggy = conv2d(h, weight, pad);
                       if (needed[1]) gw = conv2d_grad_weight(h, gy, pad, weight.size(2));
                       return std::vector<Tensor>{ggy, gw};
                     });
}

Tensor conv2d_grad_weight(const Tensor& x, const Tensor& gy, std::size_t pad,
                          std::size_t kernel) {
  if (x.dim() != 3 || gy.dim() != 3) {
    throw ContractViolation("conv2d_grad_weight: expected 3-D operands");
  }
  const Shape wshape{gy.size(0), x.size(0), kernel, kernel};
  const auto g = conv_geom(x.shape(), wshape, pad);
  if (gy.shape() != Shape{g.o, g.oh, g.ow}) {
    throw ContractViolation("conv2d_grad_weight: upstream shape " + shape_str(gy.shape()));
  }
  auto X = x.data();
  auto G = gy.data();
  std::vector<double> out(g.o * g.c * g.k * g.k, 0.0);
  for (std::size_t o = 0; o < g.o; ++o) {
    const double* gbase = G.data() + o * g.oh * g.ow;
    for (std::size_t c = 0; c < g.c; ++c) {
      const double* xbase = X.data() + c * g.h * g.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        std::size_t ylo, yhi;
        valid_range(ky, g.pad, g.h, g.oh, ylo, yhi);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          std::size_t xlo, xhi;
          valid_range(kx, g.pad, g.w, g.ow, xlo, xhi);
          double acc = 0.0;
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const double* xrow = xbase + (oy + ky - g.pad) * g.w +
                                 (static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad));
            const double* grow = gbase + oy * g.ow;
            for (std::size_t ox = xlo; ox < xhi; ++ox) acc += grow[ox] * xrow[ox];
          }
          out[((o * g.c + c) * g.k + ky) * g.k + kx] = acc;
        }
      }
    }
  }
  return make_result("conv2d_grad_weight", wshape, std::move(out), {x, gy},
                     [x, gy, pad](const Tensor& h, const std::vector<bool>& needed) {
                       Tensor gx, ggy;
                       if (needed[0]) gx = conv2d_grad_input(gy, h, pad, x.shape());
                       if (needed[1]) ggy = conv2d(x, h, pad);
                       return std::vector<Tensor>{gx, ggy};
                     });
}

// ---------------------------------------------------------------------------

Tensor gather(const Tensor& x, const std::vector<std::size_t>& index, const Shape& out_shape) {
  require_defined("gather", x);
  if (shape_numel(out_shape) != index.size()) {
    throw ContractViolation("gather: index count does not match " + shape_str(out_shape));
  }
  auto X = x.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= X.size()) throw ContractViolation("gather: index out of range");
    out[i] = X[index[i]];
  }
  Shape in_shape = x.shape();
  return make_result("gather", out_shape, std::move(out), {x},
                     [index, in_shape](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{scatter_add(g, index, in_shape)};
                     });
}

Tensor scatter_add(const Tensor& g, const std::vector<std::size_t>& index,
                   const Shape& out_shape) {
  require_defined("scatter_add", g);
  if (g.numel() != index.size()) {
    throw ContractViolation("scatter_add: index count does not match upstream");
  }
  auto G = g.data();
  std::vector<double> out(shape_numel(out_shape), 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= out.size()) throw ContractViolation("scatter_add: index out of range");
    out[index[i]] += G[i];
  }
  Shape g_shape = g.shape();
  return make_result("scatter_add", out_shape, std::move(out), {g},
                     [index, g_shape](const Tensor& h, const std::vector<bool>&) {
                       return std::vector<Tensor>{gather(h, index, g_shape)};
                     });
}

Tensor max_pool2d(const Tensor& x, std::size_t k) {
  if (x.dim() != 3 || k == 0 || x.size(1) % k != 0 || x.size(2) % k != 0) {
    throw ContractViolation("max_pool2d: input " + shape_str(x.shape()) +
                            " not divisible by window " + std::to_string(k));
  }
  const std::size_t c = x.size(0), h = x.size(1), w = x.size(2);
  const std::size_t oh = h / k, ow = w / k;
  auto X = x.data();
  std::vector<std::size_t> index(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = ch * h * w + (oy * k) * w + ox * k;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t at = ch * h * w + (oy * k + dy) * w + ox * k + dx;
            if (X[at] > X[best]) best = at;
          }
        }
        index[(ch * oh + oy) * ow + ox] = best;
      }
    }
  }
  return gather(x, index, {c, oh, ow});
}

Tensor relu(const Tensor& x) {
  require_defined("relu", x);
  auto in = x.data();
  std::vector<double> mask(in.size()), out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    mask[i] = in[i] > 0.0 ? 1.0 : 0.0;
    out[i] = in[i] > 0.0 ? in[i] : 0.0;
  }
  Tensor m(x.shape(), std::move(mask));
  return make_result("relu", x.shape(), std::move(out), {x},
                     [m](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{mul(g, m)};
                     });
}

Tensor sigmoid(const Tensor& x) {
  return unary_map(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [x](const Tensor& g, const std::vector<bool>&) {
        Tensor s = sigmoid(x);
        Tensor one = Tensor::full(s.shape(), 1.0);
        return std::vector<Tensor>{mul(g, mul(s, sub(one, s)))};
      });
}

Tensor softmax_rows(const Tensor& z) {
  if (z.dim() != 2) throw ContractViolation("softmax_rows: expected (N,K)");
  const std::size_t n = z.size(0), k = z.size(1);
  auto Z = z.data();
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = Z.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += (out[i * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= total;
  }
  return make_result("softmax_rows", z.shape(), std::move(out), {z},
                     [z, n](const Tensor& g, const std::vector<bool>&) {
                       Tensor s = softmax_rows(z);
                       Tensor gs = mul(g, s);
                       Tensor r = broadcast_to(sum_to(gs, {n, 1}), s.shape());
                       return std::vector<Tensor>{mul(s, sub(g, r))};
                     });
}

Tensor softmax_cross_entropy(const Tensor& z, const std::vector<std::size_t>& labels) {
  if (z.dim() != 2 || z.size(0) != labels.size() || z.size(0) == 0) {
    throw ContractViolation("softmax_cross_entropy: logits " + shape_str(z.shape()) +
                            " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = z.size(0), k = z.size(1);
  for (auto l : labels) {
    if (l >= k) {
      throw ContractViolation("softmax_cross_entropy: label " + std::to_string(l) +
                              " out of range [0," + std::to_string(k) + ")");
    }
  }
  auto Z = z.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = Z.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - mx);
    loss += mx + std::log(total) - row[labels[i]];
  }
  loss /= static_cast<double>(n);
  std::vector<double> onehot(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) onehot[i * k + labels[i]] = 1.0;
  Tensor target(z.shape(), std::move(onehot));
  return make_result("softmax_cross_entropy", {}, {loss}, {z},
                     [z, target, n](const Tensor& g, const std::vector<bool>&) {
                       Tensor scale = broadcast_to(mul(g, 1.0 / static_cast<double>(n)),
                                                   z.shape());
                       return std::vector<Tensor>{mul(sub(softmax_rows(z), target), scale)};
                     });
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target) {
  require_same_shape("smooth_l1", pred, target);
  const std::size_t n = pred.numel();
  if (n == 0) throw ContractViolation("smooth_l1: empty input");
  auto P = pred.data();
  auto T = target.data();
  std::vector<double> inside(n), outside(n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = P[i] - T[i];
    const double a = std::abs(d);
    if (a < 1.0) {
      loss += 0.5 * d * d;
      inside[i] = 1.0;
      outside[i] = 0.0;
    } else {
      loss += a - 0.5;
      inside[i] = 0.0;
      outside[i] = d > 0.0 ? 1.0 : -1.0;
    }
  }
  loss /= static_cast<double>(n);
  Tensor in_mask(pred.shape(), std::move(inside));
  Tensor out_sign(pred.shape(), std::move(outside));
  return make_result(
      "smooth_l1", {}, {loss}, {pred, target},
      [pred, target, in_mask, out_sign, n](const Tensor& g, const std::vector<bool>& needed) {
        Tensor d = sub(pred, target);
        Tensor clipped = add(mul(d, in_mask), out_sign);
        Tensor gd = mul(clipped, broadcast_to(mul(g, 1.0 / static_cast<double>(n)),
                                              pred.shape()));
        return std::vector<Tensor>{gd, needed[1] ? neg(gd) : Tensor{}};
      });
}

Tensor sum(const Tensor& x) {
  require_defined("sum", x);
  double total = 0.0;
  for (double v : x.data()) total += v;
  Shape shape = x.shape();
  return make_result("sum", {}, {total}, {x},
                     [shape](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{broadcast_to(g, shape)};
                     });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractViolation("mean: empty tensor");
  return mul(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  require_defined("broadcast_to", x);
  if (x.shape() == shape) return x;
  const auto index = broadcast_index(x.shape(), shape);
  auto X = x.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = X[index[i]];
  Shape in_shape = x.shape();
  return make_result("broadcast_to", shape, std::move(out), {x},
                     [in_shape](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{sum_to(g, in_shape)};
                     });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  require_defined("sum_to", x);
  if (x.shape() == shape) return x;
  const auto index = broadcast_index(shape, x.shape());
  auto X = x.data();
  std::vector<double> out(shape_numel(shape), 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) out[index[i]] += X[i];
  Shape in_shape = x.shape();
  return make_result("sum_to", shape, std::move(out), {x},
                     [in_shape](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{broadcast_to(g, in_shape)};
                     });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  require_defined("reshape", x);
  if (shape_numel(shape) != x.numel()) {
    throw ContractViolation("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Shape in_shape = x.shape();
  return make_result("reshape", shape, copy_data(x), {x},
                     [in_shape](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{reshape(g, in_shape)};
                     });
}

Tensor slice(const Tensor& x, const std::vector<std::size_t>& begin,
             const std::vector<std::size_t>& end) {
  const Shape& in = x.shape();
  if (begin.size() != in.size() || end.size() != in.size()) {
    throw ContractViolation("slice: bounds rank mismatch");
  }
  Shape out_shape(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (begin[i] > end[i] || end[i] > in[i]) {
      throw ContractViolation("slice: bounds out of range on axis " + std::to_string(i));
    }
    out_shape[i] = end[i] - begin[i];
  }
  const auto strides = strides_of(in);
  const std::size_t n = shape_numel(out_shape);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(in.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t ax = 0; ax < in.size(); ++ax) src += (begin[ax] + counter[ax]) * strides[ax];
    index[flat] = src;
    for (std::size_t ax = in.size(); ax-- > 0;) {
      if (++counter[ax] < out_shape[ax]) break;
      counter[ax] = 0;
    }
  }
  return gather(x, index, out_shape);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractViolation("concat: no inputs");
  Shape out_shape = parts.front().shape();
  if (axis >= out_shape.size()) throw ContractViolation("concat: axis out of range");
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ContractViolation("concat: rank mismatch");
    for (std::size_t ax = 0; ax < s.size(); ++ax) {
      if (ax != axis && s[ax] != out_shape[ax]) {
        throw ContractViolation("concat: extent mismatch on axis " + std::to_string(ax));
      }
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t ax = 0; ax < axis; ++ax) outer *= out_shape[ax];
  for (std::size_t ax = axis + 1; ax < out_shape.size(); ++ax) inner *= out_shape[ax];
  std::vector<double> out(shape_numel(out_shape));
  const std::size_t out_block = out_shape[axis] * inner;
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.size(axis) * inner;
    auto P = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(P.data() + o * block, block, out.data() + o * out_block + offset * inner);
    }
    offset += p.size(axis);
  }
  std::vector<Shape> shapes;
  for (const auto& p : parts) shapes.push_back(p.shape());
  return make_result(
      "concat", out_shape, std::move(out), parts,
      [shapes, offsets, axis](const Tensor& g, const std::vector<bool>& needed) {
        std::vector<Tensor> grads(shapes.size());
        for (std::size_t i = 0; i < shapes.size(); ++i) {
          if (!needed[i]) continue;
          std::vector<std::size_t> b(shapes[i].size(), 0), e = g.shape();
          b[axis] = offsets[i];
          e[axis] = offsets[i] + shapes[i][axis];
          grads[i] = slice(g, b, e);
        }
        return grads;
      });
}

Tensor rows(const Tensor& x, const std::vector<std::size_t>& row_index) {
  if (x.dim() != 2) throw ContractViolation("rows: expected 2-D tensor");
  const std::size_t k = x.size(1);
  std::vector<std::size_t> index;
  index.reserve(row_index.size() * k);
  for (auto r : row_index) {
    if (r >= x.size(0)) throw ContractViolation("rows: row index out of range");
    for (std::size_t j = 0; j < k; ++j) index.push_back(r * k + j);
  }
  return gather(x, index, {row_index.size(), k});
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

}  // namespace metauda::ad
