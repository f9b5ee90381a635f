// SPDX-License-Identifier: Apache-2.0
#pragma once

// Delay-and-sum apodization, envelope detection and log compression, with
// the reverse-mode derivatives needed to train through them.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "patchbf/array.hpp"
#include "patchbf/delayrf.hpp"
#include "patchbf/domain.hpp"
#include "patchbf/fft.hpp"

namespace patchbf {

enum class Window { boxcar, hann };

struct ApodizationProfile {
  double f_number = 1.5;
  Window window = Window::hann;
  PixelGrid grid;
  std::size_t n_elements = 0;
  Matrix weights;  // [n_elements x n_pixels]

  double weight(std::size_t m, std::size_t iz, std::size_t ix) const {
    return weights(m, iz * grid.n_x + ix);
  }
};

/// Elements with |x_e - x_p| <= z / (2 f#) are active. Hann weights follow
/// 0.5 (1 + cos(pi d / half_width)), so elements sitting exactly on the
/// aperture edge get zero. A pixel without any positive weight falls back to
/// its nearest element with weight 1.
inline ApodizationProfile das_weights(const PixelGrid& grid, const ArrayGeometry& array,
                                      double f_number, Window window) {
  require(f_number > 0.0 && std::isfinite(f_number), ErrorKind::config,
          "f_number must be positive");
  ApodizationProfile apod;
  apod.f_number = f_number;
  apod.window = window;
  apod.grid = grid;
  apod.n_elements = array.n_elements;
  apod.weights = Matrix(array.n_elements, grid.n_pixels());
  for (std::size_t iz = 0; iz < grid.n_z; ++iz) {
    const double half_width = grid.z(iz) / (2.0 * f_number);
    for (std::size_t ix = 0; ix < grid.n_x; ++ix) {
      const std::size_t p = iz * grid.n_x + ix;
      const double xp = grid.x(ix);
      double total = 0.0;
      std::size_t nearest = 0;
      for (std::size_t m = 0; m < array.n_elements; ++m) {
        const double d = std::abs(array.element_x[m] - xp);
        if (d < std::abs(array.element_x[nearest] - xp)) nearest = m;
        if (d > half_width) continue;
        const double w = window == Window::boxcar
                             ? 1.0
                             : 0.5 * (1.0 + std::cos(std::numbers::pi * d / half_width));
        apod.weights(m, p) = w;
        total += w;
      }
      if (total <= 0.0) {
        for (std::size_t m = 0; m < array.n_elements; ++m) apod.weights(m, p) = 0.0;
        apod.weights(nearest, p) = 1.0;
      }
    }
  }
  return apod;
}

/// out[r][c] = sum_m w_m(pixel) data[m][r][c] for a block of channel data
/// whose top-left pixel is (origin_iz, origin_ix) in the apodization grid.
inline Matrix das_sum(const Cube& data, std::size_t origin_iz, std::size_t origin_ix,
                      const ApodizationProfile& apod) {
  require(data.planes == apod.n_elements, ErrorKind::shape,
          "das_sum: element count does not match apodization");
  require(origin_iz + data.rows <= apod.grid.n_z && origin_ix + data.cols <= apod.grid.n_x,
          ErrorKind::shape, "das_sum: block exceeds apodization grid");
  Matrix out(data.rows, data.cols);
  const std::size_t nx = apod.grid.n_x;
  for (std::size_t m = 0; m < data.planes; ++m) {
    const auto w = apod.weights.row(m);
    for (std::size_t r = 0; r < data.rows; ++r) {
      const double* wrow = w.data() + (origin_iz + r) * nx + origin_ix;
      const double* drow = &data.data[(m * data.rows + r) * data.cols];
      double* orow = &out.data[r * data.cols];
      for (std::size_t c = 0; c < data.cols; ++c) orow[c] += wrow[c] * drow[c];
    }
  }
  return out;
}

inline Matrix das_sum(const RFPatch& patch, const ApodizationProfile& apod) {
  return das_sum(patch.data, patch.origin_iz, patch.origin_ix, apod);
}

inline Matrix das_sum(const DelayedTensor& tensor, const ApodizationProfile& apod) {
  return das_sum(tensor.data, 0, 0, apod);
}

/// Adjoint of das_sum: grad_data[m][r][c] = w_m(pixel) grad_out[r][c].
inline Cube das_sum_backward(const Matrix& grad_out, std::size_t origin_iz, std::size_t origin_ix,
                             const ApodizationProfile& apod) {
  Cube g(apod.n_elements, grad_out.rows, grad_out.cols);
  for (std::size_t m = 0; m < apod.n_elements; ++m)
    for (std::size_t r = 0; r < grad_out.rows; ++r)
      for (std::size_t c = 0; c < grad_out.cols; ++c)
        g(m, r, c) = apod.weight(m, origin_iz + r, origin_ix + c) * grad_out(r, c);
  return g;
}

/// Imaginary part of the analytic signal for length-P real lines, computed in
/// the frequency domain on a zero-padded transform of size next_pow2(2P).
/// The operator is linear, so its P x P matrix is also kept for the adjoint.
class HilbertOperator {
 public:
  explicit HilbertOperator(std::size_t length)
      : length_(length), fft_size_(next_pow2(2 * length)), matrix_(length, length) {
    require(length >= 4, ErrorKind::shape, "envelope needs at least 4 samples per line");
    std::vector<double> unit(length, 0.0), column(length);
    for (std::size_t k = 0; k < length; ++k) {
      unit[k] = 1.0;
      apply(unit, column);
      unit[k] = 0.0;
      for (std::size_t i = 0; i < length; ++i) matrix_(i, k) = column[i];
    }
  }

  std::size_t length() const { return length_; }
  const Matrix& matrix() const { return matrix_; }

  void apply(std::span<const double> x, std::span<double> q) const {
    std::vector<std::complex<double>> buf(fft_size_);
    for (std::size_t i = 0; i < length_; ++i) buf[i] = x[i];
    fft(buf);
    const std::size_t half = fft_size_ / 2;
    for (std::size_t k = 1; k < half; ++k) buf[k] *= 2.0;
    for (std::size_t k = half + 1; k < fft_size_; ++k) buf[k] = 0.0;
    fft(buf, true);
    for (std::size_t i = 0; i < length_; ++i) q[i] = buf[i].imag();
  }

  /// q_adj = H^T g
  void apply_transpose(std::span<const double> g, std::span<double> out) const {
    for (std::size_t k = 0; k < length_; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < length_; ++i) acc += matrix_(i, k) * g[i];
      out[k] = acc;
    }
  }

 private:
  std::size_t length_;
  std::size_t fft_size_;
  Matrix matrix_;
};

inline const HilbertOperator& hilbert_operator(std::size_t length) {
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<HilbertOperator>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[length];
  if (!slot) slot = std::make_unique<HilbertOperator>(length);
  return *slot;
}

/// Analytic-signal magnitude along each column (the depth axis).
inline Matrix envelope(const Matrix& beamformed) {
  const auto& hil = hilbert_operator(beamformed.rows);
  Matrix out(beamformed.rows, beamformed.cols);
  std::vector<double> line(beamformed.rows), q(beamformed.rows);
  for (std::size_t c = 0; c < beamformed.cols; ++c) {
    for (std::size_t r = 0; r < beamformed.rows; ++r) line[r] = beamformed(r, c);
    hil.apply(line, q);
    for (std::size_t r = 0; r < beamformed.rows; ++r)
      out(r, c) = std::sqrt(line[r] * line[r] + q[r] * q[r]);
  }
  return out;
}

/// Gradient of the smoothed envelope sqrt(x^2 + q^2 + eps) with respect to
/// the beamformed input.
inline Matrix envelope_backward(const Matrix& beamformed, const Matrix& grad_env,
                                double eps = 1e-12) {
  const auto& hil = hilbert_operator(beamformed.rows);
  const std::size_t n = beamformed.rows;
  Matrix grad(n, beamformed.cols);
  std::vector<double> line(n), q(n), gq(n), back(n);
  for (std::size_t c = 0; c < beamformed.cols; ++c) {
    for (std::size_t r = 0; r < n; ++r) line[r] = beamformed(r, c);
    hil.apply(line, q);
    for (std::size_t r = 0; r < n; ++r) {
      const double e = std::sqrt(line[r] * line[r] + q[r] * q[r] + eps);
      gq[r] = grad_env(r, c) * q[r] / e;
      grad(r, c) = grad_env(r, c) * line[r] / e;
    }
    hil.apply_transpose(gq, back);
    for (std::size_t r = 0; r < n; ++r) grad(r, c) += back[r];
  }
  return grad;
}

/// Envelope computed independently on every side x side tile of an image.
inline Matrix tiled_envelope(const Matrix& beamformed, std::size_t side) {
  require(beamformed.rows % side == 0 && beamformed.cols % side == 0, ErrorKind::shape,
          "image not tileable by patch side");
  Matrix out(beamformed.rows, beamformed.cols);
  Matrix tile(side, side);
  for (std::size_t r0 = 0; r0 < beamformed.rows; r0 += side) {
    for (std::size_t c0 = 0; c0 < beamformed.cols; c0 += side) {
      for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) tile(r, c) = beamformed(r0 + r, c0 + c);
      const Matrix env = envelope(tile);
      for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) out(r0 + r, c0 + c) = env(r, c);
    }
  }
  return out;
}

inline double max_value(const Matrix& m) {
  double best = 0.0;
  for (double v : m.data) best = std::max(best, v);
  return best;
}

inline constexpr double kDefaultDynamicRangeDb = 60.0;

/// v = clamp(20 log10(env / reference), -DR, 0) / DR + 1. A non-positive
/// reference (all-zero envelope) yields an all-zero image.
inline Matrix log_compress(const Matrix& env, double reference, double dynamic_range_db) {
  Matrix out(env.rows, env.cols);
  if (!(reference > 0.0)) return out;
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double e = env.data[i];
    if (e <= 0.0) continue;
    const double db = std::clamp(20.0 * std::log10(e / reference), -dynamic_range_db, 0.0);
    out.data[i] = db / dynamic_range_db + 1.0;
  }
  return out;
}

/// Compression relative to the image's own maximum.
inline Matrix log_compress(const Matrix& env) {
  return log_compress(env, max_value(env), kDefaultDynamicRangeDb);
}

inline Matrix log_compress_to_max(const Matrix& env, double dynamic_range_db) {
  return log_compress(env, max_value(env), dynamic_range_db);
}

/// Derivative of the compression for a fixed reference, with log smoothed as
/// log(e + eps). Clamped pixels carry no gradient.
inline Matrix log_compress_backward(const Matrix& env, const Matrix& grad_out, double reference,
                                    double dynamic_range_db = kDefaultDynamicRangeDb,
                                    double eps = 1e-12) {
  Matrix g(env.rows, env.cols);
  if (!(reference > 0.0)) return g;
  const double k = 20.0 / (dynamic_range_db * std::numbers::ln10);
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double e = env.data[i];
    if (e <= 0.0) continue;
    const double db = 20.0 * std::log10(e / reference);
    if (db > -dynamic_range_db && db <= 0.0) g.data[i] = grad_out.data[i] * k / (e + eps);
  }
  return g;
}

/// Maps compressed values back to envelope relative to the reference.
inline double expand_db(double value, double dynamic_range_db = kDefaultDynamicRangeDb) {
  return std::pow(10.0, (value - 1.0) * dynamic_range_db / 20.0);
}

struct BModePatch {
  Matrix values;
  std::size_t origin_iz = 0, origin_ix = 0;
};

}  // namespace patchbf
