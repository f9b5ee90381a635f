// SPDX-License-Identifier: Apache-2.0
#pragma once

// Real-valued minimum-variance distortionless-response beamformer with
// subaperture (spatial) smoothing, temporal averaging over K depth samples
// and trace-scaled diagonal loading.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "patchbf/array.hpp"
#include "patchbf/delayrf.hpp"
#include "patchbf/error.hpp"
#include "patchbf/parallel.hpp"

namespace patchbf {

struct MvdrConfig {
  std::size_t subaperture = 0;  // L
  std::size_t temporal_window = 9;  // K, odd
  double diagonal_loading = 0.0;  // Delta

  static MvdrConfig defaults_for(std::size_t n_elements) {
    MvdrConfig cfg;
    cfg.subaperture = std::max<std::size_t>(1, n_elements / 2);
    cfg.temporal_window = 9;
    cfg.diagonal_loading = 1.0 / (100.0 * static_cast<double>(cfg.subaperture));
    return cfg;
  }

  void validate(std::size_t n_elements) const {
    require(subaperture >= 1 && subaperture <= n_elements, ErrorKind::config,
            "mvdr.subaperture must lie in [1, n_elements]");
    require(temporal_window >= 1 && temporal_window % 2 == 1, ErrorKind::config,
            "mvdr.temporal_window must be odd and at least 1");
    require(diagonal_loading >= 0.0 && std::isfinite(diagonal_loading), ErrorKind::config,
            "mvdr.diagonal_loading must be non-negative");
  }
};

namespace detail {

inline void gather_column(const Cube& data, std::size_t iz, std::size_t ix,
                          std::vector<double>& col) {
  col.resize(data.planes);
  for (std::size_t m = 0; m < data.planes; ++m) col[m] = data(m, iz, ix);
}

// Upper triangle accumulation of the smoothed covariance, mirrored at the end.
inline void accumulate_covariance(const Cube& data, std::size_t iz, std::size_t ix,
                                  const MvdrConfig& cfg, std::vector<double>& col, Matrix& r) {
  const std::size_t m_count = data.planes;
  const std::size_t l = cfg.subaperture;
  const std::size_t n_sub = m_count - l + 1;
  const auto half = static_cast<std::ptrdiff_t>(cfg.temporal_window / 2);
  r = Matrix(l, l);
  for (std::ptrdiff_t k = -half; k <= half; ++k) {
    const auto zk = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
        static_cast<std::ptrdiff_t>(iz) + k, 0, static_cast<std::ptrdiff_t>(data.rows) - 1));
    gather_column(data, zk, ix, col);
    for (std::size_t p = 0; p < n_sub; ++p) {
      const double* x = col.data() + p;
      for (std::size_t i = 0; i < l; ++i) {
        const double xi = x[i];
        double* ri = &r.data[i * l];
        for (std::size_t j = i; j < l; ++j) ri[j] += xi * x[j];
      }
    }
  }
  const double norm = 1.0 / (static_cast<double>(n_sub) * static_cast<double>(cfg.temporal_window));
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = i; j < l; ++j) {
      r(i, j) *= norm;
      r(j, i) = r(i, j);
    }
  }
}

}  // namespace detail

/// Spatially smoothed sample covariance at one pixel; depth neighbours
/// outside the tensor are clamped to its first/last row.
inline Matrix spatial_covariance(const Cube& data, std::size_t iz, std::size_t ix,
                                 const MvdrConfig& cfg) {
  cfg.validate(data.planes);
  require(iz < data.rows && ix < data.cols, ErrorKind::shape, "pixel outside tensor");
  std::vector<double> col;
  Matrix r;
  detail::accumulate_covariance(data, iz, ix, cfg, col, r);
  return r;
}

/// R + (Delta trace(R) / L) I; a zero-trace R gets Delta * machine epsilon.
inline Matrix diagonal_load(Matrix r, double loading) {
  const std::size_t l = r.rows;
  double trace = 0.0;
  for (std::size_t i = 0; i < l; ++i) trace += r(i, i);
  const double add = trace > 0.0 ? loading * trace / static_cast<double>(l)
                                 : loading * std::numeric_limits<double>::epsilon();
  if (add != 0.0)
    for (std::size_t i = 0; i < l; ++i) r(i, i) += add;
  return r;
}

/// In-place Cholesky factorisation (lower triangle). Returns false when a
/// pivot is not strictly positive.
inline bool cholesky_factor(Matrix& a) {
  const std::size_t n = a.rows;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    a(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / ljj;
    }
  }
  return true;
}

/// w = R^-1 a / (a^T R^-1 a) with a = ones, via a Cholesky solve.
inline std::vector<double> mvdr_weights(Matrix r_loaded) {
  const std::size_t l = r_loaded.rows;
  require(l > 0 && r_loaded.cols == l, ErrorKind::shape, "covariance must be square");
  if (!cholesky_factor(r_loaded)) fail(ErrorKind::numerical, "singular covariance");
  std::vector<double> y(l);
  for (std::size_t i = 0; i < l; ++i) {
    double s = 1.0;
    for (std::size_t k = 0; k < i; ++k) s -= r_loaded(i, k) * y[k];
    y[i] = s / r_loaded(i, i);
  }
  for (std::size_t ii = l; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < l; ++k) s -= r_loaded(k, ii) * y[k];
    y[ii] = s / r_loaded(ii, ii);
  }
  double denom = 0.0;
  for (double v : y) denom += v;
  require(std::isfinite(denom) && denom != 0.0, ErrorKind::numerical, "singular covariance");
  for (double& v : y) v /= denom;
  return y;
}

struct MvdrDiagnostics {
  double max_constraint_error = 0.0;  // max over pixels of |sum(w) - 1|
};

/// Beamformed (pre-envelope) MVDR image on the tensor's grid.
inline Matrix mvdr_beamform(const DelayedTensor& delayed, const MvdrConfig& cfg,
                            unsigned threads = 1, MvdrDiagnostics* diagnostics = nullptr) {
  const Cube& data = delayed.data;
  cfg.validate(data.planes);
  const std::size_t l = cfg.subaperture;
  const std::size_t n_sub = data.planes - l + 1;
  Matrix out(data.rows, data.cols);
  std::vector<double> row_error(data.rows, 0.0);

  parallel_for(data.rows, threads, [&](std::size_t iz) {
    std::vector<double> col, mean(l);
    Matrix r;
    for (std::size_t ix = 0; ix < data.cols; ++ix) {
      detail::accumulate_covariance(data, iz, ix, cfg, col, r);
      const auto w = mvdr_weights(diagonal_load(std::move(r), cfg.diagonal_loading));
      detail::gather_column(data, iz, ix, col);
      std::fill(mean.begin(), mean.end(), 0.0);
      for (std::size_t p = 0; p < n_sub; ++p)
        for (std::size_t i = 0; i < l; ++i) mean[i] += col[p + i];
      double acc = 0.0, wsum = 0.0;
      for (std::size_t i = 0; i < l; ++i) {
        acc += w[i] * mean[i];
        wsum += w[i];
      }
      out(iz, ix) = acc / static_cast<double>(n_sub);
      row_error[iz] = std::max(row_error[iz], std::abs(wsum - 1.0));
    }
  });
  if (diagnostics) {
    diagnostics->max_constraint_error = *std::max_element(row_error.begin(), row_error.end());
  }
  return out;
}

}  // namespace patchbf
