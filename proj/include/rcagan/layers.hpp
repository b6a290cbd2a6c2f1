#pragma once

// Convolution, transposed convolution, dense, and batch normalization.
// Convolutions lower to im2col + GEMM; the GEMM is delegated to Eigen.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rcagan/ops.hpp"
#include "rcagan/tensor.hpp"

namespace rcagan {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

// Row-major rows x cols block at p, used transposed when t is set.
template <typename T>
struct Operand {
  const T* p;
  std::size_t rows, cols;
  bool t = false;
};

inline bool is_aligned(const void* p) { return reinterpret_cast<std::uintptr_t>(p) % EIGEN_MAX_ALIGN_BYTES == 0; }

// Eigen picks vectorized paths, and so summation order, from operand
// addresses. Operands are therefore moved to aligned memory (same layout)
// when needed, so results never depend on where the heap put a buffer.
template <typename T>
void matmul_into(T* dst, bool accumulate, Operand<T> a, Operand<T> b) {
  AlignedVector<T> a_copy, b_copy;
  if (!is_aligned(a.p)) {
    a_copy.assign(a.p, a.p + a.rows * a.cols);
    a.p = a_copy.data();
  }
  if (!is_aligned(b.p)) {
    b_copy.assign(b.p, b.p + b.rows * b.cols);
    b.p = b_copy.data();
  }
  const ConstMatMap<T> ma(a.p, a.rows, a.cols), mb(b.p, b.rows, b.cols);
  const std::size_t m = a.t ? a.cols : a.rows, n = b.t ? b.rows : b.cols;
  auto product_into = [&](auto&& out) {
    if (a.t && b.t) {
      out.noalias() = ma.transpose() * mb.transpose();
    } else if (a.t) {
      out.noalias() = ma.transpose() * mb;
    } else if (b.t) {
      out.noalias() = ma * mb.transpose();
    } else {
      out.noalias() = ma * mb;
    }
  };
  if (!accumulate && is_aligned(dst)) {
    product_into(MatMap<T>(dst, m, n));
    return;
  }
  AlignedVector<T> tmp(m * n);
  product_into(MatMap<T>(tmp.data(), m, n));
  if (accumulate) {
    for (std::size_t i = 0; i < tmp.size(); ++i) dst[i] += tmp[i];
  } else {
    std::copy(tmp.begin(), tmp.end(), dst);
  }
}

// Geometry of a strided correlation over a (channels, in_h, in_w) image.
struct ConvGeometry {
  std::size_t channels, in_h, in_w, kh, kw, pad, stride, out_h, out_w;

  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

inline ConvGeometry conv_geometry(std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                                  std::size_t pad, std::size_t stride, std::string_view op) {
  if (h + 2 * pad < kh) throw DimensionError(std::string(op), "H", kh, h + 2 * pad);
  if (w + 2 * pad < kw) throw DimensionError(std::string(op), "W", kw, w + 2 * pad);
  return {c, h, w, kh, kw, pad, stride, (h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1};
}

// Output columns [lo, hi) whose input column ox * stride + k - pad lies inside [0, in).
inline std::pair<std::size_t, std::size_t> valid_span(std::size_t k, std::size_t pad, std::size_t stride,
                                                      std::size_t in, std::size_t out) {
  std::size_t lo = 0;
  if (k < pad) lo = (pad - k + stride - 1) / stride;
  std::size_t hi = 0;
  if (in + pad > k) hi = std::min(out, (in + pad - k - 1) / stride + 1);
  return {std::min(lo, hi), hi};
}

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const auto ph = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.cols();
        const auto [lo, hi] = valid_span(kx, g.pad, g.stride, g.in_w, g.out_w);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - ph;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          // img[base + ox * stride] is the input pixel for output column ox
          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>((c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + kx) - ph;
          std::fill_n(dst, lo, T(0));
          if (g.stride == 1) {
            std::copy(img + base + static_cast<std::ptrdiff_t>(lo), img + base + static_cast<std::ptrdiff_t>(hi), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = img[base + static_cast<std::ptrdiff_t>(ox * g.stride)];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
}

// Adjoint of im2col: scatters columns back, accumulating into img.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const auto ph = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.cols();
        const auto [lo, hi] = valid_span(kx, g.pad, g.stride, g.in_w, g.out_w);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - ph;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>((c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + kx) - ph;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = lo; ox < hi; ++ox) img[base + static_cast<std::ptrdiff_t>(ox * g.stride)] += src[ox];
        }
      }
}

inline void require_rank4(const Shape& s, std::string_view op, std::string_view what) {
  if (s.size() != 4) throw DimensionError(std::string(op), std::string(what) + " rank", 4, s.size());
}

}  // namespace detail

// input NCHW, kernel OIHW, bias O.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t pad,
                 std::size_t stride) {
  detail::require_rank4(input.shape(), "conv2d", "input");
  detail::require_rank4(kernel.shape(), "conv2d", "kernel");
  if (stride < 1) throw DimensionError("conv2d", "stride", 1, stride);
  if (kernel.dim(1) != input.dim(1)) throw DimensionError("conv2d", "C_in", kernel.dim(1), input.dim(1));
  if (bias.size() != kernel.dim(0)) throw DimensionError("conv2d", "bias", kernel.dim(0), bias.size());
  const std::size_t n = input.dim(0), out_c = kernel.dim(0);
  const auto g = detail::conv_geometry(input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3), pad,
                                       stride, "conv2d");
  const std::size_t in_size = g.channels * g.in_h * g.in_w, out_size = out_c * g.cols();
  std::vector<T> out(n * out_size);
  detail::AlignedVector<T> col(g.rows() * g.cols());
  const auto bv = bias.data();
  for (std::size_t i = 0; i < n; ++i) {
    detail::im2col(input.data().data() + i * in_size, g, col.data());
    T* y = out.data() + i * out_size;
    detail::matmul_into<T>(y, false, {kernel.data().data(), out_c, g.rows()}, {col.data(), g.rows(), g.cols()});
    for (std::size_t o = 0; o < out_c; ++o)
      for (std::size_t p = 0; p < g.cols(); ++p) y[o * g.cols() + p] += bv[o];
  }
  return make_result<T>(
      "conv2d", Shape{n, out_c, g.out_h, g.out_w}, std::move(out), {input, kernel, bias},
      [g, n, out_c, in_size, out_size](const TensorImpl<T>& res) {
        auto& x = *res.node->inputs[0];
        auto& k = *res.node->inputs[1];
        auto& b = *res.node->inputs[2];
        detail::AlignedVector<T> col(g.rows() * g.cols());
        for (std::size_t i = 0; i < n; ++i) {
          const T* dy = res.grad.data() + i * out_size;
          if (k.requires_grad) {
            detail::im2col(x.data.data() + i * in_size, g, col.data());
            detail::matmul_into<T>(k.grad_buffer().data(), true, {dy, out_c, g.cols()},
                                   {col.data(), g.rows(), g.cols(), true});
          }
          if (b.requires_grad) {
            auto& db = b.grad_buffer();
            for (std::size_t o = 0; o < out_c; ++o) {
              T acc = T(0);
              for (std::size_t p = 0; p < g.cols(); ++p) acc += dy[o * g.cols() + p];
              db[o] += acc;
            }
          }
          if (x.requires_grad) {
            detail::matmul_into<T>(col.data(), false, {k.data.data(), out_c, g.rows(), true}, {dy, out_c, g.cols()});
            detail::col2im(col.data(), g, x.grad_buffer().data() + i * in_size);
          }
        }
      });
}

// Exact adjoint of a strided conv2d. kernel is (C_in, C_out, kH, kW).
// Output extent: (H - 1) * stride - 2 * pad + kH + output_padding.
template <typename T>
Tensor<T> conv2d_transposed(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                            std::size_t stride, std::size_t pad, std::size_t output_padding) {
  detail::require_rank4(input.shape(), "conv2d_transposed", "input");
  detail::require_rank4(kernel.shape(), "conv2d_transposed", "kernel");
  if (stride < 1) throw DimensionError("conv2d_transposed", "stride", 1, stride);
  if (output_padding >= stride) throw DimensionError("conv2d_transposed", "output_padding", stride - 1, output_padding);
  if (kernel.dim(0) != input.dim(1)) throw DimensionError("conv2d_transposed", "C_in", kernel.dim(0), input.dim(1));
  if (bias.size() != kernel.dim(1)) throw DimensionError("conv2d_transposed", "bias", kernel.dim(1), bias.size());
  const std::size_t n = input.dim(0), in_c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t out_c = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  const std::ptrdiff_t oh_s = static_cast<std::ptrdiff_t>((h - 1) * stride + kh + output_padding) - 2 * static_cast<std::ptrdiff_t>(pad);
  const std::ptrdiff_t ow_s = static_cast<std::ptrdiff_t>((w - 1) * stride + kw + output_padding) - 2 * static_cast<std::ptrdiff_t>(pad);
  if (oh_s <= 0 || ow_s <= 0) throw DimensionError("conv2d_transposed", "H", 1, 0);
  const auto oh = static_cast<std::size_t>(oh_s), ow = static_cast<std::size_t>(ow_s);
  // The forward conv this op is the adjoint of maps (out_c, oh, ow) -> (in_c, h, w).
  detail::ConvGeometry g{out_c, oh, ow, kh, kw, pad, stride, h, w};
  const std::size_t in_size = in_c * h * w, out_size = out_c * oh * ow;
  std::vector<T> out(n * out_size, T(0));
  detail::AlignedVector<T> col(g.rows() * g.cols());
  const auto bv = bias.data();
  for (std::size_t i = 0; i < n; ++i) {
    detail::matmul_into<T>(col.data(), false, {kernel.data().data(), in_c, g.rows(), true},
                           {input.data().data() + i * in_size, in_c, h * w});
    T* y = out.data() + i * out_size;
    detail::col2im(col.data(), g, y);
    for (std::size_t o = 0; o < out_c; ++o)
      for (std::size_t p = 0; p < oh * ow; ++p) y[o * oh * ow + p] += bv[o];
  }
  return make_result<T>(
      "conv2d_transposed", Shape{n, out_c, oh, ow}, std::move(out), {input, kernel, bias},
      [g, n, in_c, out_c, h, w, in_size, out_size](const TensorImpl<T>& res) {
        auto& x = *res.node->inputs[0];
        auto& k = *res.node->inputs[1];
        auto& b = *res.node->inputs[2];
        detail::AlignedVector<T> col(g.rows() * g.cols());
        for (std::size_t i = 0; i < n; ++i) {
          const T* dy = res.grad.data() + i * out_size;
          if (b.requires_grad) {
            auto& db = b.grad_buffer();
            const std::size_t plane = g.in_h * g.in_w;
            for (std::size_t o = 0; o < out_c; ++o) {
              T acc = T(0);
              for (std::size_t p = 0; p < plane; ++p) acc += dy[o * plane + p];
              db[o] += acc;
            }
          }
          if (!x.requires_grad && !k.requires_grad) continue;
          detail::im2col(dy, g, col.data());
          if (x.requires_grad) {
            detail::matmul_into<T>(x.grad_buffer().data() + i * in_size, true, {k.data.data(), in_c, g.rows()},
                                   {col.data(), g.rows(), g.cols()});
          }
          if (k.requires_grad) {
            detail::matmul_into<T>(k.grad_buffer().data(), true, {x.data.data() + i * in_size, in_c, h * w},
                                   {col.data(), g.rows(), g.cols(), true});
          }
        }
      });
}

// Padding chosen so the output is exactly stride * input per axis
// (kernel 3, stride 2 -> pad 1, output_padding 1).
template <typename T>
Tensor<T> conv2d_transposed(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                            std::size_t stride) {
  detail::require_rank4(kernel.shape(), "conv2d_transposed", "kernel");
  const std::size_t k = kernel.dim(2);
  const std::size_t pad = (k - 1) / 2;
  if (stride + 2 * pad < k || stride + 2 * pad - k >= stride) {
    throw DimensionError("conv2d_transposed", "kernel", stride + 1, k);
  }
  return conv2d_transposed(input, kernel, bias, stride, pad, stride + 2 * pad - k);
}

// input N x F, weight F x G, bias G.
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (input.rank() != 2) throw DimensionError("dense", "input rank", 2, input.rank());
  if (weight.rank() != 2) throw DimensionError("dense", "weight rank", 2, weight.rank());
  if (weight.dim(0) != input.dim(1)) throw DimensionError("dense", "F", weight.dim(0), input.dim(1));
  if (bias.size() != weight.dim(1)) throw DimensionError("dense", "G", weight.dim(1), bias.size());
  const std::size_t n = input.dim(0), f = input.dim(1), gdim = weight.dim(1);
  std::vector<T> out(n * gdim);
  detail::matmul_into<T>(out.data(), false, {input.data().data(), n, f}, {weight.data().data(), f, gdim});
  const auto bv = bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < gdim; ++j) out[i * gdim + j] += bv[j];
  return make_result<T>("dense", Shape{n, gdim}, std::move(out), {input, weight, bias},
                        [n, f, gdim](const TensorImpl<T>& res) {
                          auto& x = *res.node->inputs[0];
                          auto& wt = *res.node->inputs[1];
                          auto& b = *res.node->inputs[2];
                          if (x.requires_grad) {
                            detail::matmul_into<T>(x.grad_buffer().data(), true, {res.grad.data(), n, gdim},
                                                   {wt.data.data(), f, gdim, true});
                          }
                          if (wt.requires_grad) {
                            detail::matmul_into<T>(wt.grad_buffer().data(), true, {x.data.data(), n, f, true},
                                                   {res.grad.data(), n, gdim});
                          }
                          if (b.requires_grad) {
                            auto& db = b.grad_buffer();
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < gdim; ++j) db[j] += res.grad[i * gdim + j];
                          }
                        });
}

enum class BatchNormMode { train, eval };

// Running statistics are plain (non-differentiable) buffers updated in place
// during train-mode forwards: running = momentum * running + (1 - momentum) * batch.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.9;
  double eps = 1e-5;
};

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift, BatchNormMode mode,
                     BatchNormStats<T>& stats) {
  detail::require_rank4(input.shape(), "batch_norm", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (scale.size() != c) throw DimensionError("batch_norm", "scale", c, scale.size());
  if (shift.size() != c) throw DimensionError("batch_norm", "shift", c, shift.size());
  if (stats.running_mean.size() != c) throw DimensionError("batch_norm", "running_mean", c, stats.running_mean.size());
  if (stats.running_var.size() != c) throw DimensionError("batch_norm", "running_var", c, stats.running_var.size());
  if (mode == BatchNormMode::train && n < 2) {
    throw std::invalid_argument("batch_norm: train mode needs batch size >= 2 (got " + std::to_string(n) + ")");
  }
  const T eps = static_cast<T>(stats.eps);
  const std::size_t m = n * hw;
  const auto xv = input.data();
  std::vector<T> mu(c), inv_std(c);
  if (mode == BatchNormMode::train) {
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    const T mom = static_cast<T>(stats.momentum);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) s += xv[(i * c + ch) * hw + p];
      const double mean_d = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) {
          const double d = xv[(i * c + ch) * hw + p] - mean_d;
          v += d * d;
        }
      const double var = v / static_cast<double>(m);
      mu[ch] = static_cast<T>(mean_d);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + stats.eps));
      rm[ch] = mom * rm[ch] + (T(1) - mom) * static_cast<T>(mean_d);
      rv[ch] = mom * rv[ch] + (T(1) - mom) * static_cast<T>(var * static_cast<double>(m) / static_cast<double>(m - 1));
    }
  } else {
    const auto rm = stats.running_mean.data();
    const auto rv = stats.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = rm[ch];
      inv_std[ch] = T(1) / std::sqrt(rv[ch] + eps);
    }
  }
  const auto gv = scale.data();
  const auto sv = shift.data();
  std::vector<T> xhat(input.size()), out(input.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t idx = (i * c + ch) * hw + p;
        xhat[idx] = (xv[idx] - mu[ch]) * inv_std[ch];
        out[idx] = gv[ch] * xhat[idx] + sv[ch];
      }
  const bool batch_stats = mode == BatchNormMode::train;
  return make_result<T>(
      "batch_norm", input.shape(), std::move(out), {input, scale, shift},
      [n, c, hw, m, batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorImpl<T>& res) {
        auto& x = *res.node->inputs[0];
        auto& gamma = *res.node->inputs[1];
        auto& beta = *res.node->inputs[2];
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) {
              const std::size_t idx = (i * c + ch) * hw + p;
              sum_dy += res.grad[idx];
              sum_dy_xhat += res.grad[idx] * xhat[idx];
            }
          if (gamma.requires_grad) gamma.grad_buffer()[ch] += sum_dy_xhat;
          if (beta.requires_grad) beta.grad_buffer()[ch] += sum_dy;
          if (!x.requires_grad) continue;
          auto& dx = x.grad_buffer();
          const T gk = gamma.data[ch] * inv_std[ch];
          const T mt = static_cast<T>(m);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) {
              const std::size_t idx = (i * c + ch) * hw + p;
              if (batch_stats) {
                dx[idx] += gk * (res.grad[idx] - sum_dy / mt - xhat[idx] * sum_dy_xhat / mt);
              } else {
                dx[idx] += gk * res.grad[idx];
              }
            }
        }
      });
}

}  // namespace rcagan
