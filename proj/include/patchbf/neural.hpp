// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal NCHW tensor operations with explicit reverse-mode counterparts.
// Every *_backward takes the upstream gradient and returns (or accumulates)
// gradients for the forward inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "patchbf/error.hpp"

namespace patchbf::nn {

template <typename T>
struct Tensor4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<T> values;

  Tensor4() = default;
  Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), values(n_ * c_ * h_ * w_, fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t plane() const { return h * w; }
  T& at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) {
    return values[((b * c + ch) * h + y) * w + x];
  }
  T at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return values[((b * c + ch) * h + y) * w + x];
  }
  T* plane_ptr(std::size_t b, std::size_t ch) { return values.data() + (b * c + ch) * plane(); }
  const T* plane_ptr(std::size_t b, std::size_t ch) const {
    return values.data() + (b * c + ch) * plane();
  }
  bool same_dims(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  bool operator==(const Tensor4&) const = default;
};

template <typename T>
inline void debug_check_finite([[maybe_unused]] const Tensor4<T>& t,
                               [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  for (T v : t.values)
    if (!std::isfinite(static_cast<double>(v)))
      fail(ErrorKind::numerical, std::string("non-finite value after ") + op);
#endif
}

inline constexpr std::size_t kKernel = 3;

namespace detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Unfolds one image [c x h x w] into columns [c*9 x h*w] with zero padding.
template <typename T>
void im2col(const T* src, std::size_t c, std::size_t h, std::size_t w, RowMajor<T>& cols) {
  cols.setZero(static_cast<Eigen::Index>(c * kKernel * kKernel), static_cast<Eigen::Index>(h * w));
  for (std::size_t i = 0; i < c; ++i) {
    const T* plane = src + i * h * w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        T* row = cols.data() + ((i * kKernel + ky) * kKernel + kx) * h * w;
        const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? h - 1 : h;
        const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? w - 1 : w;
        for (std::size_t y = y0; y < y1; ++y) {
          const T* irow = plane + (y + ky - 1) * w;
          T* orow = row + y * w;
          for (std::size_t x = x0; x < x1; ++x) orow[x] = irow[x + kx - 1];
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters columns back onto the image, accumulating.
template <typename T>
void col2im(const RowMajor<T>& cols, std::size_t c, std::size_t h, std::size_t w, T* dst) {
  for (std::size_t i = 0; i < c; ++i) {
    T* plane = dst + i * h * w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        const T* row = cols.data() + ((i * kKernel + ky) * kKernel + kx) * h * w;
        const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? h - 1 : h;
        const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? w - 1 : w;
        for (std::size_t y = y0; y < y1; ++y) {
          T* grow = plane + (y + ky - 1) * w;
          const T* crow = row + y * w;
          for (std::size_t x = x0; x < x1; ++x) grow[x + kx - 1] += crow[x];
        }
      }
    }
  }
}

}  // namespace detail

/// 3x3 cross-correlation, zero padding 1, stride 1. kernel is
/// [out_ch x in_ch x 3 x 3], bias is [out_ch].
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& in, std::span<const T> kernel, std::span<const T> bias,
                  std::size_t out_ch) {
  require(bias.size() == out_ch && kernel.size() == out_ch * in.c * kKernel * kKernel,
          ErrorKind::shape, "conv2d: kernel does not match input channels");
  using Mat = detail::RowMajor<T>;
  const auto hw = static_cast<Eigen::Index>(in.h * in.w);
  const auto taps = static_cast<Eigen::Index>(in.c * kKernel * kKernel);
  const auto oc = static_cast<Eigen::Index>(out_ch);
  Eigen::Map<const Mat> k(kernel.data(), oc, taps);
  Eigen::Map<const Eigen::Vector<T, Eigen::Dynamic>> b(bias.data(), oc);
  Tensor4<T> out(in.n, out_ch, in.h, in.w);
  Mat cols;
  for (std::size_t n = 0; n < in.n; ++n) {
    detail::im2col(in.plane_ptr(n, 0), in.c, in.h, in.w, cols);
    Eigen::Map<Mat> dst(out.plane_ptr(n, 0), oc, hw);
    dst.noalias() = k * cols;
    dst.colwise() += b;
  }
  debug_check_finite(out, "conv2d");
  return out;
}

/// Gradients of conv2d. grad_kernel / grad_bias are accumulated into; the
/// input gradient is returned.
template <typename T>
Tensor4<T> conv2d_backward(const Tensor4<T>& in, std::span<const T> kernel,
                           const Tensor4<T>& grad_out, std::span<T> grad_kernel,
                           std::span<T> grad_bias) {
  require(grad_out.n == in.n && grad_out.h == in.h && grad_out.w == in.w, ErrorKind::shape,
          "conv2d_backward: gradient dims mismatch");
  using Mat = detail::RowMajor<T>;
  const auto hw = static_cast<Eigen::Index>(in.h * in.w);
  const auto taps = static_cast<Eigen::Index>(in.c * kKernel * kKernel);
  const auto oc = static_cast<Eigen::Index>(grad_out.c);
  require(kernel.size() == static_cast<std::size_t>(oc * taps) &&
              grad_kernel.size() == kernel.size() && grad_bias.size() == grad_out.c,
          ErrorKind::shape, "conv2d_backward: kernel does not match input channels");
  Eigen::Map<const Mat> k(kernel.data(), oc, taps);
  Eigen::Map<Mat> gk(grad_kernel.data(), oc, taps);
  Tensor4<T> grad_in(in.n, in.c, in.h, in.w);
  Mat cols, gcols;
  for (std::size_t n = 0; n < in.n; ++n) {
    Eigen::Map<const Mat> g(grad_out.plane_ptr(n, 0), oc, hw);
    detail::im2col(in.plane_ptr(n, 0), in.c, in.h, in.w, cols);
    // Plain loop: Eigen's vectorised reductions pick their summation order
    // from pointer alignment, which would make training depend on the heap.
    for (std::size_t o = 0; o < grad_out.c; ++o) {
      const T* row = grad_out.plane_ptr(n, o);
      T acc = T(0);
      for (std::size_t i = 0; i < grad_out.plane(); ++i) acc += row[i];
      grad_bias[o] += acc;
    }
    gk.noalias() += g * cols.transpose();
    gcols.noalias() = k.transpose() * g;
    detail::col2im(gcols, in.c, in.h, in.w, grad_in.plane_ptr(n, 0));
  }
  return grad_in;
}

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& in, T slope = T(0.1)) {
  Tensor4<T> out = in;
  for (T& v : out.values)
    if (v < T(0)) v *= slope;
  return out;
}

template <typename T>
Tensor4<T> leaky_relu_backward(const Tensor4<T>& in, const Tensor4<T>& grad_out,
                               T slope = T(0.1)) {
  Tensor4<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (in.values[i] < T(0)) g.values[i] *= slope;
  return g;
}

/// 2x2 max pooling. `argmax` receives, per output element, the flat input
/// index it was taken from (first maximum in row-major window order).
template <typename T>
Tensor4<T> maxpool2(const Tensor4<T>& in, std::vector<std::size_t>& argmax) {
  require(in.h % 2 == 0 && in.w % 2 == 0, ErrorKind::shape, "maxpool2 needs even dims");
  Tensor4<T> out(in.n, in.c, in.h / 2, in.w / 2);
  argmax.assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t b = 0; b < in.n; ++b)
    for (std::size_t ch = 0; ch < in.c; ++ch)
      for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t x = 0; x < out.w; ++x, ++o) {
          std::size_t best = ((b * in.c + ch) * in.h + 2 * y) * in.w + 2 * x;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((b * in.c + ch) * in.h + 2 * y + dy) * in.w + 2 * x + dx;
              if (in.values[idx] > in.values[best]) best = idx;
            }
          out.values[o] = in.values[best];
          argmax[o] = best;
        }
  return out;
}

template <typename T>
Tensor4<T> maxpool2(const Tensor4<T>& in) {
  std::vector<std::size_t> unused;
  return maxpool2(in, unused);
}

template <typename T>
Tensor4<T> maxpool2_backward(const Tensor4<T>& in_dims, const std::vector<std::size_t>& argmax,
                             const Tensor4<T>& grad_out) {
  Tensor4<T> g(in_dims.n, in_dims.c, in_dims.h, in_dims.w);
  for (std::size_t o = 0; o < grad_out.size(); ++o) g.values[argmax[o]] += grad_out.values[o];
  return g;
}

/// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor4<T> upsample2(const Tensor4<T>& in) {
  Tensor4<T> out(in.n, in.c, in.h * 2, in.w * 2);
  for (std::size_t b = 0; b < in.n; ++b)
    for (std::size_t ch = 0; ch < in.c; ++ch)
      for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t x = 0; x < out.w; ++x) out.at(b, ch, y, x) = in.at(b, ch, y / 2, x / 2);
  return out;
}

template <typename T>
Tensor4<T> upsample2_backward(const Tensor4<T>& grad_out) {
  Tensor4<T> g(grad_out.n, grad_out.c, grad_out.h / 2, grad_out.w / 2);
  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t ch = 0; ch < g.c; ++ch)
      for (std::size_t y = 0; y < g.h; ++y)
        for (std::size_t x = 0; x < g.w; ++x)
          g.at(b, ch, y, x) = grad_out.at(b, ch, 2 * y, 2 * x) + grad_out.at(b, ch, 2 * y, 2 * x + 1) +
                              grad_out.at(b, ch, 2 * y + 1, 2 * x) +
                              grad_out.at(b, ch, 2 * y + 1, 2 * x + 1);
  return g;
}

/// Channel stacking [a; b]. An operand with zero channels is allowed.
template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.c == 0) return b;
  if (b.c == 0) return a;
  require(a.n == b.n && a.h == b.h && a.w == b.w, ErrorKind::shape,
          "concat_channels: spatial mismatch");
  Tensor4<T> out(a.n, a.c + b.c, a.h, a.w);
  const std::size_t p = a.plane();
  for (std::size_t n = 0; n < a.n; ++n) {
    std::copy_n(a.plane_ptr(n, 0), a.c * p, out.plane_ptr(n, 0));
    std::copy_n(b.plane_ptr(n, 0), b.c * p, out.plane_ptr(n, a.c));
  }
  return out;
}

template <typename T>
void concat_channels_backward(const Tensor4<T>& grad_out, std::size_t a_channels,
                              Tensor4<T>& grad_a, Tensor4<T>& grad_b) {
  const std::size_t p = grad_out.plane();
  const std::size_t b_channels = grad_out.c - a_channels;
  grad_a = Tensor4<T>(grad_out.n, a_channels, grad_out.h, grad_out.w);
  grad_b = Tensor4<T>(grad_out.n, b_channels, grad_out.h, grad_out.w);
  for (std::size_t n = 0; n < grad_out.n; ++n) {
    std::copy_n(grad_out.plane_ptr(n, 0), a_channels * p, grad_a.values.data() + n * a_channels * p);
    std::copy_n(grad_out.plane_ptr(n, a_channels), b_channels * p,
                grad_b.values.data() + n * b_channels * p);
  }
}

}  // namespace patchbf::nn
