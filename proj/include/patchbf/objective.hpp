// SPDX-License-Identifier: Apache-2.0
#pragma once

// Range rescaling against the DAS reference and the MAE/SSIM hybrid loss,
// each with its gradient with respect to the prediction.

#include <algorithm>
#include <cmath>
#include <utility>

#include "patchbf/array.hpp"
#include "patchbf/error.hpp"

namespace patchbf {

struct LossWeights {
  double alpha = 0.9;  // MAE
  double beta = 0.1;   // SSIM

  void validate() const {
    require(alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0, ErrorKind::config,
            "loss weights must be non-negative with a positive sum");
  }
};

namespace detail {
inline std::pair<std::size_t, std::size_t> argminmax(const Matrix& m) {
  const auto [lo, hi] = std::minmax_element(m.data.begin(), m.data.end());
  return {static_cast<std::size_t>(lo - m.data.begin()),
          static_cast<std::size_t>(hi - m.data.begin())};
}
}  // namespace detail

/// Affine min-max map of h onto [min(reference), max(reference)].
/// Constant h maps to the reference mid-range; a constant reference maps
/// everything to its value. When both ranges already coincide the map is
/// the identity and h is returned untouched.
inline Matrix scale(const Matrix& h, const Matrix& reference) {
  require_same_shape(h, reference, "scale: shape mismatch");
  require(h.size() > 0, ErrorKind::shape, "scale: empty input");
  const auto [hlo, hhi] = detail::argminmax(h);
  const auto [rlo, rhi] = detail::argminmax(reference);
  const double hmin = h.data[hlo], hmax = h.data[hhi];
  const double rmin = reference.data[rlo], rmax = reference.data[rhi];
  if (hmax == hmin) return Matrix(h.rows, h.cols, 0.5 * (rmin + rmax));
  if (rmax == rmin) return Matrix(h.rows, h.cols, rmin);
  if (hmin == rmin && hmax == rmax) return h;
  const double s = (rmax - rmin) / (hmax - hmin);
  Matrix out(h.rows, h.cols);
  for (std::size_t i = 0; i < h.size(); ++i) out.data[i] = (h.data[i] - hmin) * s + rmin;
  return out;
}

/// d scale / d h (the reference is a constant). Ties for min/max route the
/// extremum's gradient to the first occurrence.
inline Matrix scale_backward(const Matrix& h, const Matrix& reference, const Matrix& grad_out) {
  Matrix g(h.rows, h.cols);
  const auto [hlo, hhi] = detail::argminmax(h);
  const auto [rlo, rhi] = detail::argminmax(reference);
  const double hmin = h.data[hlo], hmax = h.data[hhi];
  const double rmin = reference.data[rlo], rmax = reference.data[rhi];
  if (hmax == hmin || rmax == rmin) return g;
  const double span = hmax - hmin;
  const double s = (rmax - rmin) / span;
  double total = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    g.data[i] = s * grad_out.data[i];
    total += grad_out.data[i];
    weighted += grad_out.data[i] * (h.data[i] - hmin);
  }
  g.data[hlo] += -s * total + weighted * s / span;
  g.data[hhi] -= weighted * s / span;
  return g;
}

inline double mae(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "mae: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a.data[i] - b.data[i]);
  return acc / static_cast<double>(a.size());
}

/// d mae / d a; zero where a == b.
inline Matrix mae_backward(const Matrix& a, const Matrix& b, double grad_out = 1.0) {
  Matrix g(a.rows, a.cols);
  const double k = grad_out / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    g.data[i] = d > 0.0 ? k : (d < 0.0 ? -k : 0.0);
  }
  return g;
}

struct SsimParams {
  std::size_t window = 7;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Mean SSIM over all valid (fully inside) uniform windows. Local moments
/// use population (1/N) normalisation. When grad_a / grad_b are given they
/// receive d ssim / d a and d ssim / d b.
inline double ssim(const Matrix& a, const Matrix& b, const SsimParams& prm = {},
                   Matrix* grad_a = nullptr, Matrix* grad_b = nullptr) {
  require_same_shape(a, b, "ssim: shape mismatch");
  const std::size_t win = prm.window;
  require(win >= 1 && a.rows >= win && a.cols >= win, ErrorKind::shape,
          "ssim: image smaller than window");
  const std::size_t wr = a.rows - win + 1, wc = a.cols - win + 1;
  const double n = static_cast<double>(win * win);
  const double n_windows = static_cast<double>(wr * wc);
  if (grad_a) *grad_a = Matrix(a.rows, a.cols);
  if (grad_b) *grad_b = Matrix(a.rows, a.cols);

  double total = 0.0;
  for (std::size_t r0 = 0; r0 < wr; ++r0) {
    for (std::size_t c0 = 0; c0 < wc; ++c0) {
      double sa = 0, sb = 0;
      for (std::size_t r = r0; r < r0 + win; ++r)
        for (std::size_t c = c0; c < c0 + win; ++c) {
          sa += a(r, c);
          sb += b(r, c);
        }
      const double mu_a = sa / n, mu_b = sb / n;
      double vaa = 0, vbb = 0, vab = 0;
      for (std::size_t r = r0; r < r0 + win; ++r)
        for (std::size_t c = c0; c < c0 + win; ++c) {
          const double da = a(r, c) - mu_a, db = b(r, c) - mu_b;
          vaa += da * da;
          vbb += db * db;
          vab += da * db;
        }
      vaa /= n;
      vbb /= n;
      vab /= n;
      const double a1 = 2.0 * mu_a * mu_b + prm.c1;
      const double a2 = 2.0 * vab + prm.c2;
      const double b1 = mu_a * mu_a + mu_b * mu_b + prm.c1;
      const double b2 = vaa + vbb + prm.c2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s;

      auto accumulate = [&](Matrix* g, const Matrix& x, const Matrix& y, double mu_x, double mu_y) {
        if (!g) return;
        const double k = s / (n * n_windows);
        for (std::size_t r = r0; r < r0 + win; ++r)
          for (std::size_t c = c0; c < c0 + win; ++c) {
            const double dx = x(r, c) - mu_x, dy = y(r, c) - mu_y;
            (*g)(r, c) += k * (2.0 * mu_y / a1 + 2.0 * dy / a2 - 2.0 * mu_x / b1 - 2.0 * dx / b2);
          }
      };
      accumulate(grad_a, a, b, mu_a, mu_b);
      accumulate(grad_b, b, a, mu_b, mu_a);
    }
  }
  return total / n_windows;
}

struct LossTerms {
  double loss = 0.0, mae = 0.0, ssim = 0.0;
};

/// alpha * MAE - beta * SSIM; identical inputs give exactly -beta.
inline LossTerms hybrid_loss(const Matrix& pred, const Matrix& target, const LossWeights& w,
                             const SsimParams& prm = {}, Matrix* grad_pred = nullptr) {
  LossTerms t;
  t.mae = mae(pred, target);
  Matrix gs;
  t.ssim = ssim(pred, target, prm, grad_pred ? &gs : nullptr);
  t.loss = w.alpha * t.mae - w.beta * t.ssim;
  if (grad_pred) {
    *grad_pred = mae_backward(pred, target, w.alpha);
    for (std::size_t i = 0; i < gs.size(); ++i) grad_pred->data[i] -= w.beta * gs.data[i];
  }
  return t;
}

}  // namespace patchbf
