#pragma once

// Elementwise, reduction, and shape ops on Tensor<T>.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rcagan/tensor.hpp"

namespace rcagan {

namespace detail {

// Same-rank broadcasting: each axis must agree or be 1 on one side.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

inline std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, std::string_view op) {
  if (a.size() != b.size()) throw DimensionError(std::string(op), "rank", a.size(), b.size());
  BroadcastPlan p;
  p.same = a == b;
  p.out.resize(a.size());
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  p.stride_a.resize(a.size());
  p.stride_b.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
      throw DimensionError(std::string(op), "axis " + std::to_string(i), a[i], b[i]);
    }
    p.out[i] = std::max(a[i], b[i]);
    p.stride_a[i] = a[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = b[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) over the broadcast output.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t total = numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      ia += p.stride_a[ax];
      ib += p.stride_b[ax];
      if (idx[ax] < p.out[ax]) break;
      ia -= p.stride_a[ax] * idx[ax];
      ib -= p.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

// fwd(a, b) -> value; dfa/dfb(a, b, out) -> local partial derivatives.
template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary_op(std::string_view op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, DA dfa,
                    DB dfb) {
  auto plan = broadcast_plan(a.shape(), b.shape(), op);
  std::vector<T> out(numel(plan.out));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = fwd(av[i], bv[j]); });
  Shape shape = plan.out;
  return make_result<T>(op, std::move(shape), std::move(out), {a, b},
                        [plan, dfa, dfb](const TensorImpl<T>& res) {
                          auto& ia = *res.node->inputs[0];
                          auto& ib = *res.node->inputs[1];
                          const bool ga = ia.requires_grad, gb = ib.requires_grad;
                          T* pa = ga ? ia.grad_buffer().data() : nullptr;
                          T* pb = gb ? ib.grad_buffer().data() : nullptr;
                          for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
                            const T g = res.grad[o];
                            if (ga) pa[i] += g * dfa(ia.data[i], ib.data[j], res.data[o]);
                            if (gb) pb[j] += g * dfb(ia.data[i], ib.data[j], res.data[o]);
                          });
                        });
}

// fwd(x) -> y; deriv(x, y) -> dy/dx.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(std::string_view op, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x}, [deriv](const TensorImpl<T>& res) {
    auto& in = *res.node->inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += res.grad[i] * deriv(in.data[i], res.data[i]);
  });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

// scale * x + shift
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift = T(0)) {
  return detail::unary_op<T>(
      "affine", x, [=](T v) { return scale * v + shift; }, [=](T, T) { return scale; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> pow(const Tensor<T>& x, T exponent) {
  return detail::unary_op<T>(
      "pow", x, [=](T v) { return std::pow(v, exponent); },
      [=](T v, T) { return exponent * std::pow(v, exponent - T(1)); });
}

// Gradient passes only where the input lies inside [lo, hi].
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary_op<T>(
      "clamp", x, [=](T v) { return std::clamp(v, lo, hi); },
      [=](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

enum class ActivationKind { relu, leaky_relu, sigmoid, tanh };

struct Activation {
  ActivationKind kind = ActivationKind::relu;
  double slope = 0.0;

  static Activation relu() { return {ActivationKind::relu, 0.0}; }
  static Activation leaky_relu(double slope) { return {ActivationKind::leaky_relu, slope}; }
  static Activation sigmoid() { return {ActivationKind::sigmoid, 0.0}; }
  static Activation tanh() { return {ActivationKind::tanh, 0.0}; }
};

// Sigmoid and tanh outputs are kept strictly inside their open ranges, even
// where the exact value would round onto the bound.
template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation act) {
  switch (act.kind) {
    case ActivationKind::relu:
      return detail::unary_op<T>(
          "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
    case ActivationKind::leaky_relu: {
      const T s = static_cast<T>(act.slope);
      return detail::unary_op<T>(
          "leaky_relu", x, [s](T v) { return v > T(0) ? v : s * v; },
          [s](T v, T) { return v > T(0) ? T(1) : s; });
    }
    case ActivationKind::sigmoid: {
      const T lo = std::nextafter(T(0), T(1));
      const T hi = std::nextafter(T(1), T(0));
      return detail::unary_op<T>(
          "sigmoid", x, [=](T v) { return std::clamp(T(1) / (T(1) + std::exp(-v)), lo, hi); },
          [](T, T y) { return y * (T(1) - y); });
    }
    case ActivationKind::tanh: {
      const T lo = std::nextafter(T(-1), T(0));
      const T hi = std::nextafter(T(1), T(0));
      return detail::unary_op<T>(
          "tanh", x, [=](T v) { return std::clamp(std::tanh(v), lo, hi); },
          [](T, T y) { return T(1) - y * y; });
    }
  }
  throw std::invalid_argument("activation: unknown kind");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Activation::relu());
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activation(x, Activation::sigmoid());
}

// Sum of all elements -> shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return make_result<T>("sum", Shape{1}, {acc}, {x}, [](const TensorImpl<T>& res) {
    auto& g = res.node->inputs[0]->grad_buffer();
    for (auto& v : g) v += res.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T n = static_cast<T>(x.size());
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return make_result<T>("mean", Shape{1}, {acc / n}, {x}, [n](const TensorImpl<T>& res) {
    auto& g = res.node->inputs[0]->grad_buffer();
    const T d = res.grad[0] / n;
    for (auto& v : g) v += d;
  });
}

// Sum along one axis, keeping it with extent 1.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("sum_axis", "axis", s.size(), axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape os = s;
  os[axis] = 1;
  std::vector<T> out(outer * inner, T(0));
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + k) * inner + i];
  return make_result<T>("sum_axis", std::move(os), std::move(out), {x},
                        [outer, inner, len](const TensorImpl<T>& res) {
                          auto& g = res.node->inputs[0]->grad_buffer();
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t k = 0; k < len; ++k)
                              for (std::size_t i = 0; i < inner; ++i)
                                g[(o * len + k) * inner + i] += res.grad[o * inner + i];
                        });
}

// Per-sample mean over all non-batch axes: [N, ...] -> [N].
template <typename T>
Tensor<T> mean_per_sample(const Tensor<T>& x) {
  const std::size_t n = x.dim(0);
  const std::size_t per = x.size() / n;
  std::vector<T> out(n, T(0));
  const auto xv = x.data();
  for (std::size_t b = 0; b < n; ++b) {
    T acc = T(0);
    for (std::size_t i = 0; i < per; ++i) acc += xv[b * per + i];
    out[b] = acc / static_cast<T>(per);
  }
  return make_result<T>("mean_per_sample", Shape{n}, std::move(out), {x}, [n, per](const TensorImpl<T>& res) {
    auto& g = res.node->inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < n; ++b) {
      const T d = res.grad[b] / static_cast<T>(per);
      for (std::size_t i = 0; i < per; ++i) g[b * per + i] += d;
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) throw DimensionError("reshape", "size", x.size(), numel(shape));
  return make_result<T>("reshape", std::move(shape), x.values(), {x}, [](const TensorImpl<T>& res) {
    auto& g = res.node->inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += res.grad[i];
  });
}

// NCHW -> NC11 spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw DimensionError("global_avg_pool", "H*W", 1, 0);
  std::vector<T> out(n * c, T(0));
  const auto xv = x.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    T acc = T(0);
    for (std::size_t i = 0; i < hw; ++i) acc += xv[p * hw + i];
    out[p] = acc / static_cast<T>(hw);
  }
  return make_result<T>("global_avg_pool", Shape{n, c, 1, 1}, std::move(out), {x},
                        [n, c, hw](const TensorImpl<T>& res) {
                          auto& g = res.node->inputs[0]->grad_buffer();
                          for (std::size_t p = 0; p < n * c; ++p) {
                            const T d = res.grad[p] / static_cast<T>(hw);
                            for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += d;
                          }
                        });
}

// Channels of `a` precede channels of `b`.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4) throw DimensionError("concat_channels", "rank", 4, a.rank() != 4 ? a.rank() : b.rank());
  const char* names[] = {"N", "C", "H", "W"};
  for (std::size_t ax : {0u, 2u, 3u}) {
    if (a.dim(ax) != b.dim(ax)) throw DimensionError("concat_channels", names[ax], a.dim(ax), b.dim(ax));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<T> out(n * (ca + cb) * hw);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.begin() + i * ca * hw, ca * hw, out.begin() + i * (ca + cb) * hw);
    std::copy_n(bv.begin() + i * cb * hw, cb * hw, out.begin() + (i * (ca + cb) + ca) * hw);
  }
  return make_result<T>("concat_channels", Shape{n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                        [n, ca, cb, hw](const TensorImpl<T>& res) {
                          auto& ia = *res.node->inputs[0];
                          auto& ib = *res.node->inputs[1];
                          for (std::size_t i = 0; i < n; ++i) {
                            const T* src = res.grad.data() + i * (ca + cb) * hw;
                            if (ia.requires_grad) {
                              T* dst = ia.grad_buffer().data() + i * ca * hw;
                              for (std::size_t k = 0; k < ca * hw; ++k) dst[k] += src[k];
                            }
                            if (ib.requires_grad) {
                              T* dst = ib.grad_buffer().data() + i * cb * hw;
                              for (std::size_t k = 0; k < cb * hw; ++k) dst[k] += src[ca * hw + k];
                            }
                          }
                        });
}

// Forward difference along H (axis 2) or W (axis 3); that axis shrinks by one.
template <typename T>
Tensor<T> diff(const Tensor<T>& x, std::size_t axis) {
  if (x.rank() != 4 || (axis != 2 && axis != 3)) throw DimensionError("diff", "axis", 3, axis);
  if (x.dim(axis) < 2) throw DimensionError("diff", axis == 2 ? "H" : "W", 2, x.dim(axis));
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = axis == 2 ? h - 1 : h, ow = axis == 3 ? w - 1 : w;
  const std::size_t step = axis == 2 ? w : 1;
  std::vector<T> out(nc * oh * ow);
  const auto xv = x.data();
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t src = (p * h + i) * w + j;
        out[(p * oh + i) * ow + j] = xv[src + step] - xv[src];
      }
  return make_result<T>("diff", Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                        [=](const TensorImpl<T>& res) {
                          auto& g = res.node->inputs[0]->grad_buffer();
                          for (std::size_t p = 0; p < nc; ++p)
                            for (std::size_t i = 0; i < oh; ++i)
                              for (std::size_t j = 0; j < ow; ++j) {
                                const std::size_t src = (p * h + i) * w + j;
                                const T d = res.grad[(p * oh + i) * ow + j];
                                g[src + step] += d;
                                g[src] -= d;
                              }
                        });
}

// Depthwise separable correlation with a 1-D kernel along both axes, no
// padding ("valid" region only).
template <typename T>
Tensor<T> separable_filter_valid(const Tensor<T>& x, const std::vector<T>& kernel) {
  const std::size_t k = kernel.size();
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < k) throw DimensionError("separable_filter_valid", "H", k, h);
  if (w < k) throw DimensionError("separable_filter_valid", "W", k, w);
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  std::vector<T> out(nc * oh * ow);
  std::vector<T> tmp(h * ow);
  const auto xv = x.data();
  for (std::size_t p = 0; p < nc; ++p) {
    const T* src = xv.data() + p * h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        T acc = T(0);
        for (std::size_t t = 0; t < k; ++t) acc += kernel[t] * src[i * w + j + t];
        tmp[i * ow + j] = acc;
      }
    T* dst = out.data() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        T acc = T(0);
        for (std::size_t t = 0; t < k; ++t) acc += kernel[t] * tmp[(i + t) * ow + j];
        dst[i * ow + j] = acc;
      }
  }
  return make_result<T>("separable_filter_valid", Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                        [=](const TensorImpl<T>& res) {
                          auto& g = res.node->inputs[0]->grad_buffer();
                          std::vector<T> gtmp(h * ow);
                          for (std::size_t p = 0; p < nc; ++p) {
                            std::fill(gtmp.begin(), gtmp.end(), T(0));
                            const T* go = res.grad.data() + p * oh * ow;
                            for (std::size_t i = 0; i < oh; ++i)
                              for (std::size_t j = 0; j < ow; ++j)
                                for (std::size_t t = 0; t < k; ++t) gtmp[(i + t) * ow + j] += kernel[t] * go[i * ow + j];
                            T* gi = g.data() + p * h * w;
                            for (std::size_t i = 0; i < h; ++i)
                              for (std::size_t j = 0; j < ow; ++j)
                                for (std::size_t t = 0; t < k; ++t) gi[i * w + j + t] += kernel[t] * gtmp[i * ow + j];
                          }
                        });
}

// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw DimensionError("avg_pool2", oh == 0 ? "H" : "W", 2, oh == 0 ? h : w);
  std::vector<T> out(nc * oh * ow);
  const auto xv = x.data();
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const T* s = xv.data() + (p * h + 2 * i) * w + 2 * j;
        out[(p * oh + i) * ow + j] = T(0.25) * (s[0] + s[1] + s[w] + s[w + 1]);
      }
  return make_result<T>("avg_pool2", Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                        [=](const TensorImpl<T>& res) {
                          auto& g = res.node->inputs[0]->grad_buffer();
                          for (std::size_t p = 0; p < nc; ++p)
                            for (std::size_t i = 0; i < oh; ++i)
                              for (std::size_t j = 0; j < ow; ++j) {
                                const T d = T(0.25) * res.grad[(p * oh + i) * ow + j];
                                T* s = g.data() + (p * h + 2 * i) * w + 2 * j;
                                s[0] += d;
                                s[1] += d;
                                s[w] += d;
                                s[w + 1] += d;
                              }
                        });
}

}  // namespace rcagan
