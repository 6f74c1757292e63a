#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nvpf/core/tensor.hpp"

namespace nvpf {

namespace detail {

template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  std::vector<double> out(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  check_finite(out, name);
  return make_result(x.shape(), std::move(out), {x}, [df](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      in.grad[i] += self.grad[i] * df(in.value[i], self.value[i]);
  });
}

inline bool is_scalar_like(const Tensor& t) { return t.numel() == 1 && t.rank() <= 1; }

// Accumulates g * coeff(i) into a parent that is either full-shaped or a
// broadcast scalar.
template <typename Coeff>
void accumulate(Node& parent, std::span<const double> g, Coeff coeff) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  if (parent.value.size() == 1 && g.size() != 1) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * coeff(i);
    parent.grad[0] += s;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i] * coeff(i);
  }
}

template <typename F>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f,
              std::function<void(Node&)> bw) {
  Shape shape;
  if (a.shape() == b.shape()) {
    shape = a.shape();
  } else if (is_scalar_like(b)) {
    shape = a.shape();
  } else if (is_scalar_like(a)) {
    shape = b.shape();
  } else {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
  const std::size_t n = shape_numel(shape);
  auto as = a.data();
  auto bs = b.data();
  const bool a_b = as.size() == 1 && n != 1;
  const bool b_b = bs.size() == 1 && n != 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(as[a_b ? 0 : i], bs[b_b ? 0 : i]);
  check_finite(out, name);
  return make_result(std::move(shape), std::move(out), {a, b}, std::move(bw));
}

inline double bval(const Node& n, std::size_t i) {
  return n.value.size() == 1 ? n.value[0] : n.value[i];
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "add", [](double x, double y) { return x + y; },
                        [](detail::Node& s) {
                          detail::accumulate(*s.parents[0], s.grad, [](std::size_t) { return 1.0; });
                          detail::accumulate(*s.parents[1], s.grad, [](std::size_t) { return 1.0; });
                        });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "sub", [](double x, double y) { return x - y; },
                        [](detail::Node& s) {
                          detail::accumulate(*s.parents[0], s.grad, [](std::size_t) { return 1.0; });
                          detail::accumulate(*s.parents[1], s.grad, [](std::size_t) { return -1.0; });
                        });
}

// Product with scalar broadcasting.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, "mul", [](double x, double y) { return x * y; },
                        [](detail::Node& s) {
                          auto& pa = *s.parents[0];
                          auto& pb = *s.parents[1];
                          detail::accumulate(pa, s.grad, [&](std::size_t i) { return detail::bval(pb, i); });
                          detail::accumulate(pb, s.grad, [&](std::size_t i) { return detail::bval(pa, i); });
                        });
}

// Strict same-shape elementwise product.
inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("hadamard: shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  return mul(a, b);
}

inline Tensor neg(const Tensor& x) {
  return detail::unary(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, "exp", [](double v) { return std::exp(v); },
                       [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  return detail::unary(x, "log", [](double v) { return std::log(v); },
                       [](double v, double) { return 1.0 / v; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, "tanh", [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, "sigmoid",
      [](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(x, "scale", [c](double v) { return c * v; },
                       [c](double, double) { return c; });
}

inline Tensor shift(const Tensor& x, double c) {
  return detail::unary(x, "shift", [c](double v) { return v + c; },
                       [](double, double) { return 1.0; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(x, "square", [](double v) { return v * v; },
                       [](double v, double) { return 2.0 * v; });
}

enum class ElementwiseOp { add, sub, mul, hadamard, exp, tanh, sigmoid, log, neg, relu };

inline Tensor elementwise(ElementwiseOp op, std::span<const Tensor> args) {
  const bool is_binary = op == ElementwiseOp::add || op == ElementwiseOp::sub ||
                         op == ElementwiseOp::mul || op == ElementwiseOp::hadamard;
  if (args.size() != (is_binary ? 2u : 1u))
    throw ShapeError("elementwise: wrong operand count " + std::to_string(args.size()));
  switch (op) {
    case ElementwiseOp::add: return add(args[0], args[1]);
    case ElementwiseOp::sub: return sub(args[0], args[1]);
    case ElementwiseOp::mul: return mul(args[0], args[1]);
    case ElementwiseOp::hadamard: return hadamard(args[0], args[1]);
    case ElementwiseOp::exp: return exp(args[0]);
    case ElementwiseOp::tanh: return tanh(args[0]);
    case ElementwiseOp::sigmoid: return sigmoid(args[0]);
    case ElementwiseOp::log: return log(args[0]);
    case ElementwiseOp::neg: return neg(args[0]);
    case ElementwiseOp::relu: return relu(args[0]);
  }
  throw Error("unknown elementwise op");
}

// ---- linear algebra --------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  detail::check_finite(out, "matmul");
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& s) {
    auto& pa = *s.parents[0];
    auto& pb = *s.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += s.grad[i * n + j] * pb.value[p * n + j];
          pa.grad[i * k + p] += acc;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      // dB = A^T * G
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = pa.value[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) pb.grad[p * n + j] += aip * s.grad[i * n + j];
        }
    }
  });
}

// Matrix [m x k] times vector [k] -> vector [m].
inline Tensor matvec(const Tensor& w, const Tensor& x);

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  return detail::make_result(std::move(shape), x.values(), {x}, [](detail::Node& s) {
    auto& in = *s.parents[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    for (std::size_t i = 0; i < s.grad.size(); ++i) in.grad[i] += s.grad[i];
  });
}

inline Tensor flatten(const Tensor& x) { return reshape(x, {x.numel()}); }

inline Tensor matvec(const Tensor& w, const Tensor& x) {
  if (x.rank() != 1) throw ShapeError("matvec: expected a vector, got " + shape_string(x.shape()));
  auto y = matmul(w, reshape(x, {x.numel(), 1}));
  return reshape(y, {y.numel()});
}

// Concatenates along the last axis; all leading extents must agree.
inline Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no operands");
  const Shape& s0 = parts[0].shape();
  if (s0.empty()) throw ShapeError("concat_last: scalar operand");
  Shape lead(s0.begin(), s0.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size() || !std::equal(lead.begin(), lead.end(), p.shape().begin()))
      throw ShapeError("concat_last: mismatched shapes " + shape_string(s0) + " and " +
                       shape_string(p.shape()));
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + off + c] = v[r * widths[k] + c];
    off += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->value = std::move(out);
  bool track = false;
  if (GradMode::enabled())
    for (const auto& p : parts) track = track || p.requires_grad();
  if (track) {
    node->requires_grad = true;
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward_fn = [widths, rows, total](detail::Node& s) {
      std::size_t o = 0;
      for (std::size_t k = 0; k < s.parents.size(); ++k) {
        auto& p = *s.parents[k];
        if (p.requires_grad) {
          p.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < widths[k]; ++c)
              p.grad[r * widths[k] + c] += s.grad[r * total + o + c];
        }
        o += widths[k];
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

// ---- reductions ------------------------------------------------------------

enum class ReduceOp { sum, mean };

inline Tensor reduce(ReduceOp op, const Tensor& t, std::optional<std::size_t> axis = std::nullopt) {
  const double norm_all = op == ReduceOp::mean ? 1.0 / static_cast<double>(t.numel()) : 1.0;
  if (!axis) {
    double acc = 0.0;
    for (double v : t.data()) acc += v;
    return detail::make_result({}, {acc * norm_all}, {t}, [norm_all](detail::Node& s) {
      auto& in = *s.parents[0];
      if (!in.requires_grad) return;
      in.ensure_grad();
      for (auto& g : in.grad) g += s.grad[0] * norm_all;
    });
  }
  if (*axis >= t.rank())
    throw ShapeError("reduce: axis " + std::to_string(*axis) + " out of range for " +
                     shape_string(t.shape()));
  const Shape& in_shape = t.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < *axis; ++i) outer *= in_shape[i];
  for (std::size_t i = *axis + 1; i < in_shape.size(); ++i) inner *= in_shape[i];
  const std::size_t len = in_shape[*axis];
  const double norm = op == ReduceOp::mean ? 1.0 / static_cast<double>(len) : 1.0;
  Shape out_shape;
  for (std::size_t i = 0; i < in_shape.size(); ++i)
    if (i != *axis) out_shape.push_back(in_shape[i]);
  std::vector<double> out(outer * inner, 0.0);
  auto v = t.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += v[(o * len + l) * inner + i];
  for (auto& x : out) x *= norm;
  return detail::make_result(std::move(out_shape), std::move(out), {t},
                             [outer, inner, len, norm](detail::Node& s) {
                               auto& in = *s.parents[0];
                               if (!in.requires_grad) return;
                               in.ensure_grad();
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t l = 0; l < len; ++l)
                                   for (std::size_t i = 0; i < inner; ++i)
                                     in.grad[(o * len + l) * inner + i] += s.grad[o * inner + i] * norm;
                             });
}

inline Tensor sum(const Tensor& t) { return reduce(ReduceOp::sum, t); }
inline Tensor mean(const Tensor& t) { return reduce(ReduceOp::mean, t); }
inline Tensor sum(const Tensor& t, std::size_t axis) { return reduce(ReduceOp::sum, t, axis); }
inline Tensor mean(const Tensor& t, std::size_t axis) { return reduce(ReduceOp::mean, t, axis); }

// Sums an arbitrary number of same-shaped tensors without building a chain
// of pairwise nodes.
inline Tensor add_n(const std::vector<Tensor>& terms) {
  if (terms.empty()) throw ShapeError("add_n: no operands");
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

// ---- convolution -----------------------------------------------------------

struct ConvGeometry {
  std::size_t in_h, in_w, channels, kh, kw, out_c, stride, out_h, out_w, pad_top, pad_left;
};

// Same padding with zero fill: output extent is ceil(in / stride).
inline ConvGeometry conv_geometry(const Shape& in, const Shape& k, std::size_t stride,
                                  bool depthwise) {
  if (in.size() != 3) throw ShapeError("conv2d: input must be HxWxC, got " + shape_string(in));
  if (k.size() != 4) throw ShapeError("conv2d: kernel must be KHxKWxCxC_out, got " + shape_string(k));
  if (k[0] % 2 == 0 || k[1] % 2 == 0)
    throw ShapeError("conv2d: kernel extents must be odd, got " + shape_string(k));
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  if (k[2] != in[2])
    throw ShapeError("conv2d: channel mismatch, input " + shape_string(in) + " kernel " +
                     shape_string(k));
  if (depthwise && k[3] != 1)
    throw ShapeError("conv2d: depthwise kernel must have one output per channel, got " +
                     shape_string(k));
  ConvGeometry g{};
  g.in_h = in[0];
  g.in_w = in[1];
  g.channels = in[2];
  g.kh = k[0];
  g.kw = k[1];
  g.out_c = depthwise ? in[2] : k[3];
  g.stride = stride;
  g.out_h = (g.in_h + stride - 1) / stride;
  g.out_w = (g.in_w + stride - 1) / stride;
  const auto pad_total = [](std::size_t out, std::size_t s, std::size_t kk, std::size_t inn) {
    const long t = static_cast<long>((out - 1) * s + kk) - static_cast<long>(inn);
    return static_cast<std::size_t>(std::max(t, 0L));
  };
  g.pad_top = pad_total(g.out_h, stride, g.kh, g.in_h) / 2;
  g.pad_left = pad_total(g.out_w, stride, g.kw, g.in_w) / 2;
  return g;
}

namespace detail {

// Calls fn(out_index_base, in_index_base, kernel_tap) for every valid tap.
template <typename Fn>
void for_each_tap(const ConvGeometry& g, Fn&& fn) {
  for (std::size_t oy = 0; oy < g.out_h; ++oy)
    for (std::size_t ox = 0; ox < g.out_w; ++ox)
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad_top);
        if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad_left);
          if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
          fn(oy * g.out_w + ox, static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix),
             ky * g.kw + kx);
        }
      }
}

}  // namespace detail

// input [H x W x C], kernel [KH x KW x C x C_out] (C_out = 1 when depthwise).
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1,
                     bool depthwise = false) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, depthwise);
  std::vector<double> out(g.out_h * g.out_w * g.out_c, 0.0);
  auto x = input.data();
  auto k = kernel.data();
  const std::size_t C = g.channels, CO = g.out_c;
  if (depthwise) {
    detail::for_each_tap(g, [&](std::size_t o, std::size_t i, std::size_t tap) {
      double* op = &out[o * C];
      const double* ip = &x[i * C];
      const double* kp = &k[tap * C];
      for (std::size_t c = 0; c < C; ++c) op[c] += ip[c] * kp[c];
    });
  } else {
    detail::for_each_tap(g, [&](std::size_t o, std::size_t i, std::size_t tap) {
      double* op = &out[o * CO];
      const double* ip = &x[i * C];
      const double* kp = &k[tap * C * CO];
      for (std::size_t c = 0; c < C; ++c) {
        const double xv = ip[c];
        if (xv == 0.0) continue;
        const double* kr = kp + c * CO;
        for (std::size_t co = 0; co < CO; ++co) op[co] += xv * kr[co];
      }
    });
  }
  detail::check_finite(out, "conv2d");
  return detail::make_result({g.out_h, g.out_w, g.out_c}, std::move(out), {input, kernel},
                             [g, depthwise](detail::Node& s) {
                               auto& pi = *s.parents[0];
                               auto& pk = *s.parents[1];
                               const std::size_t C = g.channels, CO = g.out_c;
                               if (pi.requires_grad) pi.ensure_grad();
                               if (pk.requires_grad) pk.ensure_grad();
                               const bool gi = pi.requires_grad, gk = pk.requires_grad;
                               detail::for_each_tap(g, [&](std::size_t o, std::size_t i, std::size_t tap) {
                                 const double* go = &s.grad[o * CO];
                                 if (depthwise) {
                                   for (std::size_t c = 0; c < C; ++c) {
                                     if (gi) pi.grad[i * C + c] += go[c] * pk.value[tap * C + c];
                                     if (gk) pk.grad[tap * C + c] += go[c] * pi.value[i * C + c];
                                   }
                                 } else {
                                   for (std::size_t c = 0; c < C; ++c) {
                                     const std::size_t kb = (tap * C + c) * CO;
                                     const double xv = pi.value[i * C + c];
                                     double acc = 0.0;
                                     for (std::size_t co = 0; co < CO; ++co) {
                                       acc += go[co] * pk.value[kb + co];
                                       if (gk) pk.grad[kb + co] += go[co] * xv;
                                     }
                                     if (gi) pi.grad[i * C + c] += acc;
                                   }
                                 }
                               });
                             });
}

// y[..., c] = x[..., c] * scale[c] + shift[c] over the last axis. Pass
// std::nullopt to omit either vector.
inline Tensor channel_affine(const Tensor& x, const std::optional<Tensor>& scale_v,
                             const std::optional<Tensor>& shift_v) {
  if (x.rank() == 0) throw ShapeError("channel_affine: scalar input");
  const std::size_t C = x.shape().back();
  for (const auto* p : {&scale_v, &shift_v})
    if (*p && ((*p)->rank() != 1 || (*p)->dim(0) != C))
      throw ShapeError("channel_affine: expected [" + std::to_string(C) + "] parameters, got " +
                       shape_string((*p)->shape()));
  const Tensor sc = scale_v ? *scale_v : Tensor::full({C}, 1.0);
  const Tensor sh = shift_v ? *shift_v : Tensor::zeros({C});
  const std::size_t rows = x.numel() / C;
  std::vector<double> out(x.numel());
  auto xv = x.data();
  auto a = sc.data();
  auto b = sh.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = xv[r * C + c] * a[c] + b[c];
  detail::check_finite(out, "channel_affine");
  return detail::make_result(x.shape(), std::move(out), {x, sc, sh}, [rows, C](detail::Node& s) {
    auto& px = *s.parents[0];
    auto& pa = *s.parents[1];
    auto& pb = *s.parents[2];
    if (px.requires_grad) px.ensure_grad();
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double g = s.grad[r * C + c];
        if (px.requires_grad) px.grad[r * C + c] += g * pa.value[c];
        if (pa.requires_grad) pa.grad[c] += g * px.value[r * C + c];
        if (pb.requires_grad) pb.grad[c] += g;
      }
  });
}

// ---- softmax ---------------------------------------------------------------

// Numerically stable log-softmax of a vector.
inline Tensor log_softmax(const Tensor& logits) {
  if (logits.rank() != 1) throw ShapeError("log_softmax expects a vector");
  auto z = logits.data();
  const double mx = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (double v : z) denom += std::exp(v - mx);
  const double lse = mx + std::log(denom);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  detail::check_finite(out, "log_softmax");
  return detail::make_result(logits.shape(), std::move(out), {logits}, [](detail::Node& s) {
    auto& in = *s.parents[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    double gsum = 0.0;
    for (double g : s.grad) gsum += g;
    for (std::size_t i = 0; i < s.value.size(); ++i)
      in.grad[i] += s.grad[i] - std::exp(s.value[i]) * gsum;
  });
}

// Picks one element as a scalar tensor.
inline Tensor select(const Tensor& t, std::size_t index) {
  if (index >= t.numel()) throw ShapeError("select: index out of range");
  return detail::make_result({}, {t.data()[index]}, {t}, [index](detail::Node& s) {
    auto& in = *s.parents[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    in.grad[index] += s.grad[0];
  });
}

inline std::vector<double> softmax_values(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) denom += (p[i] = std::exp(z[i] - mx));
  for (auto& v : p) v /= denom;
  return p;
}

// ---- operator sugar --------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace nvpf
