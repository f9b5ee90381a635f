// SPDX-License-Identifier: Apache-2.0
#pragma once

// Single-scattering plane-wave simulator: no attenuation, no element
// directivity, geometric spreading clamped below 1 mm.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "patchbf/array.hpp"
#include "patchbf/domain.hpp"
#include "patchbf/error.hpp"
#include "patchbf/parallel.hpp"
#include "patchbf/rng.hpp"

namespace patchbf {

struct RFFrame {
  Matrix samples;  // [n_elements x n_time]
  double t0 = 0.0;
  double fs = 0.0;
  ArrayGeometry geometry;
  PlaneWaveTx tx;

  std::size_t n_elements() const { return samples.rows; }
  std::size_t n_time() const { return samples.cols; }
};

/// Gaussian envelope width giving a -6 dB two-sided bandwidth of
/// fractional_bandwidth * f0. The spectrum magnitude of exp(-t^2 / 2 s^2) is
/// exp(-2 pi^2 s^2 df^2); setting it to 1/2 at df = bw f0 / 2 gives
/// s = sqrt(2 ln 2) / (pi bw f0).
inline double pulse_sigma(double f0, double fractional_bandwidth) {
  return std::sqrt(2.0 * std::numbers::ln2) / (std::numbers::pi * fractional_bandwidth * f0);
}

/// Half-width beyond which the pulse is treated as zero (exp(-18) ~ 1.5e-8).
inline double pulse_half_support(double f0, double fractional_bandwidth) {
  return 6.0 * pulse_sigma(f0, fractional_bandwidth);
}

inline double pulse(double t, double f0, double fractional_bandwidth) {
  const double s = pulse_sigma(f0, fractional_bandwidth);
  return std::cos(2.0 * std::numbers::pi * f0 * t) * std::exp(-t * t / (2.0 * s * s));
}

inline double tx_delay(double x, double z, const PlaneWaveTx& tx, double c) {
  return (z * std::cos(tx.steering_angle) + x * std::sin(tx.steering_angle)) / c;
}

inline double rx_delay(double x, double z, double element_x, double c) {
  return std::hypot(x - element_x, z) / c;
}

/// Background speckle drawn uniformly over the field of view with |N(0,1)|
/// amplitudes, followed by the explicit scatterers; cyst echogenicity scales
/// every scatterer inside a cyst and removes those inside anechoic cysts.
inline std::vector<Scatterer> realize_phantom(const PhantomSpec& spec, const PixelGrid& fov) {
  validate_phantom(spec, fov);
  std::vector<Scatterer> out;
  const double area = (fov.x_max - fov.x_min) * (fov.z_max - fov.z_min);
  const auto n_background =
      static_cast<std::size_t>(std::llround(spec.background_scatterer_density * area));
  Rng rng(spec.rng_seed);
  out.reserve(n_background + spec.scatterers.size());
  for (std::size_t i = 0; i < n_background; ++i) {
    Scatterer s;
    s.x = rng.uniform(fov.x_min, fov.x_max);
    s.z = rng.uniform(fov.z_min, fov.z_max);
    s.amplitude = std::abs(rng.normal());
    out.push_back(s);
  }
  out.insert(out.end(), spec.scatterers.begin(), spec.scatterers.end());

  std::vector<Scatterer> kept;
  kept.reserve(out.size());
  for (auto s : out) {
    bool removed = false;
    for (const auto& c : spec.cysts) {
      if (std::hypot(s.x - c.center_x, s.z - c.center_z) < c.radius) {
        if (c.echogenicity == 0.0) {
          removed = true;
          break;
        }
        s.amplitude *= c.echogenicity;
      }
    }
    if (!removed) kept.push_back(s);
  }
  return kept;
}

struct SimulationOptions {
  double fractional_bandwidth = 0.6;
  double t0 = 0.0;
  unsigned threads = 1;
};

/// Latest echo arrival (plus pulse tail) for any point of the grid, relative
/// to t0. Frames at least this long cover every pixel.
inline double required_duration(const PixelGrid& grid, const ArrayGeometry& array,
                                const PlaneWaveTx& tx, const SimulationOptions& opt = {}) {
  double latest = 0.0;
  const double c = array.sound_speed;
  for (double x : {grid.x_min, grid.x_max})
    for (double ex : array.element_x)
      latest = std::max(latest, tx_delay(x, grid.z_max, tx, c) + rx_delay(x, grid.z_max, ex, c));
  return latest + pulse_half_support(array.center_frequency, opt.fractional_bandwidth) - opt.t0;
}

inline RFFrame synthesize_rf(std::span<const Scatterer> scatterers, const ArrayGeometry& array,
                             const PlaneWaveTx& tx, double duration,
                             const SimulationOptions& opt = {}) {
  require(duration > 0.0 && std::isfinite(duration), ErrorKind::config,
          "duration must be positive");
  require(opt.fractional_bandwidth > 0.0 && opt.fractional_bandwidth < 2.0, ErrorKind::config,
          "fractional_bandwidth must lie in (0, 2)");
  const double fs = array.sampling_frequency;
  const double c = array.sound_speed;
  const double f0 = array.center_frequency;
  const double support = pulse_half_support(f0, opt.fractional_bandwidth);
  const auto n_time = static_cast<std::size_t>(std::ceil(duration * fs));

  for (const auto& s : scatterers) {
    for (double ex : array.element_x) {
      const double arrival = tx_delay(s.x, s.z, tx, c) + rx_delay(s.x, s.z, ex, c);
      require(arrival + support <= opt.t0 + static_cast<double>(n_time) / fs, ErrorKind::config,
              "duration too short: frame cannot contain the deepest echo");
    }
  }

  RFFrame frame;
  frame.samples = Matrix(array.n_elements, n_time);
  frame.t0 = opt.t0;
  frame.fs = fs;
  frame.geometry = array;
  frame.tx = tx;

  parallel_for(array.n_elements, opt.threads, [&](std::size_t m) {
    auto trace = frame.samples.row(m);
    const double ex = array.element_x[m];
    for (const auto& s : scatterers) {
      const double arrival = tx_delay(s.x, s.z, tx, c) + rx_delay(s.x, s.z, ex, c);
      const double spreading = std::max(std::hypot(s.x - ex, s.z), 1e-3);
      const double gain = s.amplitude / spreading;
      const double k_lo = std::ceil((arrival - support - opt.t0) * fs);
      const double k_hi = std::floor((arrival + support - opt.t0) * fs);
      const auto first = static_cast<std::size_t>(std::max(0.0, k_lo));
      const auto last = static_cast<std::ptrdiff_t>(
          std::min(k_hi, static_cast<double>(n_time) - 1.0));
      for (std::ptrdiff_t k = static_cast<std::ptrdiff_t>(first); k <= last; ++k) {
        const double t = static_cast<double>(k) / fs + opt.t0 - arrival;
        trace[static_cast<std::size_t>(k)] += gain * pulse(t, f0, opt.fractional_bandwidth);
      }
    }
  });
  return frame;
}

inline RFFrame synthesize_rf(const PhantomSpec& phantom, const PixelGrid& fov,
                             const ArrayGeometry& array, const PlaneWaveTx& tx, double duration,
                             const SimulationOptions& opt = {}) {
  const auto scatterers = realize_phantom(phantom, fov);
  return synthesize_rf(scatterers, array, tx, duration, opt);
}

}  // namespace patchbf
