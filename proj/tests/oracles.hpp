// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent reference implementations used by the tests. Nothing here
// calls into the library code it checks.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include "patchbf/array.hpp"
#include "patchbf/rng.hpp"

namespace oracle {

using patchbf::Cube;
using patchbf::Matrix;

/// Central differences of f at x with step h.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-4) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-12) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> random_vector(patchbf::Rng& rng, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Matrix random_matrix(patchbf::Rng& rng, std::size_t r, std::size_t c, double lo = 0.0,
                            double hi = 1.0) {
  Matrix m(r, c);
  for (double& x : m.data) x = rng.uniform(lo, hi);
  return m;
}

/// Smoothed covariance straight from its definition: every (p, k) snapshot
/// outer product summed entry by entry.
inline Matrix brute_covariance(const Cube& data, std::size_t iz, std::size_t ix, std::size_t l,
                               std::size_t k_window) {
  const std::size_t m = data.planes;
  const int half = static_cast<int>(k_window / 2);
  Matrix r(l, l);
  for (std::size_t p = 0; p + l <= m; ++p) {
    for (int k = -half; k <= half; ++k) {
      const int zi = std::clamp(static_cast<int>(iz) + k, 0, static_cast<int>(data.rows) - 1);
      for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < l; ++j)
          r(i, j) += data(p + i, static_cast<std::size_t>(zi), ix) *
                     data(p + j, static_cast<std::size_t>(zi), ix);
    }
  }
  const double norm = static_cast<double>((m - l + 1) * k_window);
  for (double& v : r.data) v /= norm;
  return r;
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> gauss_solve(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
    std::swap(b[col], b[piv]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
    x[i] = s / a(i, i);
  }
  return x;
}

/// Capon weights R^-1 a / (a^T R^-1 a) with a = ones, after loading.
inline std::vector<double> brute_mvdr_weights(Matrix r, double loading) {
  const std::size_t l = r.rows;
  double trace = 0.0;
  for (std::size_t i = 0; i < l; ++i) trace += r(i, i);
  const double add = trace > 0.0 ? loading * trace / static_cast<double>(l)
                                 : loading * std::numeric_limits<double>::epsilon();
  for (std::size_t i = 0; i < l; ++i) r(i, i) += add;
  const auto y = gauss_solve(r, std::vector<double>(l, 1.0));
  double s = 0.0;
  for (double v : y) s += v;
  std::vector<double> w(l);
  for (std::size_t i = 0; i < l; ++i) w[i] = y[i] / s;
  return w;
}

/// Brute-force MVDR output for one pixel.
inline double brute_mvdr_pixel(const Cube& data, std::size_t iz, std::size_t ix, std::size_t l,
                               std::size_t k_window, double loading) {
  const auto w = brute_mvdr_weights(brute_covariance(data, iz, ix, l, k_window), loading);
  const std::size_t n_sub = data.planes - l + 1;
  double out = 0.0;
  for (std::size_t p = 0; p < n_sub; ++p)
    for (std::size_t i = 0; i < l; ++i) out += w[i] * data(p + i, iz, ix);
  return out / static_cast<double>(n_sub);
}

/// Two-sided bandwidth (Hz) at which the magnitude spectrum of a sampled
/// signal falls to `level` times its peak, measured by direct DFT on a fine
/// frequency grid and linear interpolation of the crossings.
inline double measured_bandwidth(const std::function<double(double)>& signal, double t_half,
                                 double fs, double f_lo, double f_hi, double level = 0.5) {
  std::vector<double> t;
  for (double v = -t_half; v <= t_half; v += 1.0 / fs) t.push_back(v);
  const std::size_t n_freq = 4000;
  std::vector<double> f(n_freq), mag(n_freq);
  for (std::size_t i = 0; i < n_freq; ++i) {
    f[i] = f_lo + (f_hi - f_lo) * static_cast<double>(i) / static_cast<double>(n_freq - 1);
    std::complex<double> acc = 0.0;
    for (double tv : t) acc += signal(tv) * std::polar(1.0, -2.0 * std::numbers::pi * f[i] * tv);
    mag[i] = std::abs(acc);
  }
  const auto peak_it = std::max_element(mag.begin(), mag.end());
  const std::size_t peak = static_cast<std::size_t>(peak_it - mag.begin());
  const double target = level * *peak_it;
  std::size_t lo = peak, hi = peak;
  while (lo > 0 && mag[lo] > target) --lo;
  while (hi + 1 < n_freq && mag[hi] > target) ++hi;
  auto cross = [&](std::size_t a, std::size_t b) {
    return f[a] + (target - mag[a]) * (f[b] - f[a]) / (mag[b] - mag[a]);
  };
  return cross(hi - 1, hi) - cross(lo, lo + 1);
}

}  // namespace oracle
