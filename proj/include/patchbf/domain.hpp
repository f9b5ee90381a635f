// SPDX-License-Identifier: Apache-2.0
#pragma once

// Acquisition and imaging geometry. SI units throughout (m, s, Hz); depth z
// points away from the transducer face, which sits at z = 0.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "patchbf/error.hpp"
#include "patchbf/hash.hpp"

namespace patchbf {

struct ArrayGeometry {
  std::size_t n_elements = 0;
  double pitch = 0.0;
  std::vector<double> element_x;
  double center_frequency = 0.0;
  double sampling_frequency = 0.0;
  double sound_speed = 0.0;

  double wavelength() const { return sound_speed / center_frequency; }

  /// Fingerprint stored in file headers so frames can be matched to geometry.
  std::string hash() const {
    Fnv1a h;
    h.value(static_cast<std::uint64_t>(n_elements));
    h.value(pitch);
    h.value(center_frequency);
    h.value(sampling_frequency);
    h.value(sound_speed);
    return h.hex();
  }
};

/// Builds a centered uniform linear array.
inline ArrayGeometry make_linear_array(std::size_t n_elements, double pitch, double f0, double fs,
                                       double c) {
  require(n_elements >= 2, ErrorKind::config, "n_elements must be at least 2");
  require(pitch > 0.0 && std::isfinite(pitch), ErrorKind::config, "pitch must be positive");
  require(f0 > 0.0 && std::isfinite(f0), ErrorKind::config,
          "center_frequency must be positive");
  require(fs > 0.0 && std::isfinite(fs), ErrorKind::config,
          "sampling_frequency must be positive");
  require(c > 0.0 && std::isfinite(c), ErrorKind::config, "sound_speed must be positive");
  require(fs >= 4.0 * f0, ErrorKind::config,
          "undersampled pulse: sampling_frequency must be at least 4 x center_frequency");

  ArrayGeometry g;
  g.n_elements = n_elements;
  g.pitch = pitch;
  g.center_frequency = f0;
  g.sampling_frequency = fs;
  g.sound_speed = c;
  g.element_x.resize(n_elements);
  // Index offsets are exact half-integers, so x_i = -x_{n-1-i} bit-for-bit.
  const double mid = 0.5 * static_cast<double>(n_elements - 1);
  for (std::size_t i = 0; i < n_elements; ++i)
    g.element_x[i] = (static_cast<double>(i) - mid) * pitch;
  return g;
}

struct PixelGrid {
  double x_min = 0.0, x_max = 0.0;
  double z_min = 0.0, z_max = 0.0;
  std::size_t n_x = 0, n_z = 0;
  std::size_t patch_side = 32;

  double dx() const { return (x_max - x_min) / static_cast<double>(n_x - 1); }
  double dz() const { return (z_max - z_min) / static_cast<double>(n_z - 1); }
  double x(std::size_t ix) const { return x_min + static_cast<double>(ix) * dx(); }
  double z(std::size_t iz) const { return z_min + static_cast<double>(iz) * dz(); }
  std::size_t n_pixels() const { return n_x * n_z; }
  std::size_t patches_x() const { return n_x / patch_side; }
  std::size_t patches_z() const { return n_z / patch_side; }
  std::size_t n_patches() const { return patches_x() * patches_z(); }

  /// Nearest pixel index, clamped to the grid.
  std::size_t nearest_ix(double xv) const { return nearest(xv, x_min, dx(), n_x); }
  std::size_t nearest_iz(double zv) const { return nearest(zv, z_min, dz(), n_z); }

  bool contains(double xv, double zv) const {
    return xv >= x_min && xv <= x_max && zv >= z_min && zv <= z_max;
  }

 private:
  static std::size_t nearest(double v, double lo, double step, std::size_t n) {
    const double idx = std::round((v - lo) / step);
    if (idx <= 0.0) return 0;
    if (idx >= static_cast<double>(n - 1)) return n - 1;
    return static_cast<std::size_t>(idx);
  }
};

inline PixelGrid make_pixel_grid(double x_lo, double x_hi, double z_lo, double z_hi,
                                 std::size_t n_x, std::size_t n_z, std::size_t patch_side = 32) {
  require(std::isfinite(x_lo) && std::isfinite(x_hi) && x_hi > x_lo, ErrorKind::config,
          "degenerate lateral span");
  require(std::isfinite(z_lo) && std::isfinite(z_hi) && z_hi > z_lo, ErrorKind::config,
          "degenerate depth span");
  require(z_lo > 0.0, ErrorKind::config, "grid must start below the transducer face (z_min > 0)");
  require(patch_side >= 1, ErrorKind::config, "patch_side must be positive");
  require(n_x > 0 && n_z > 0 && n_x % patch_side == 0 && n_z % patch_side == 0,
          ErrorKind::config, "grid not tileable: n_x and n_z must be multiples of patch_side");
  require(n_x >= 2 && n_z >= 2, ErrorKind::config, "grid needs at least two pixels per axis");
  return PixelGrid{x_lo, x_hi, z_lo, z_hi, n_x, n_z, patch_side};
}

struct PlaneWaveTx {
  double steering_angle = 0.0;  // radians

  static PlaneWaveTx make(double angle) {
    require(std::isfinite(angle) && std::abs(angle) < std::numbers::pi / 4.0, ErrorKind::config,
            "steering_angle must satisfy |angle| < pi/4");
    return PlaneWaveTx{angle};
  }
};

struct Scatterer {
  double x = 0.0, z = 0.0, amplitude = 0.0;
  bool operator==(const Scatterer&) const = default;
};

struct Cyst {
  double center_x = 0.0, center_z = 0.0, radius = 0.0;
  double echogenicity = 0.0;  // 0 = anechoic, 1 = same as background
  bool operator==(const Cyst&) const = default;
};

struct PhantomSpec {
  std::vector<Scatterer> scatterers;
  std::vector<Cyst> cysts;
  double background_scatterer_density = 0.0;  // per m^2
  std::uint64_t rng_seed = 0;
  bool operator==(const PhantomSpec&) const = default;
};

/// Checks that everything in the phantom lies inside the field of view.
inline void validate_phantom(const PhantomSpec& spec, const PixelGrid& fov) {
  require(spec.background_scatterer_density >= 0.0 &&
              std::isfinite(spec.background_scatterer_density),
          ErrorKind::config, "phantom.background_scatterer_density must be non-negative");
  for (const auto& s : spec.scatterers) {
    require(std::isfinite(s.amplitude), ErrorKind::config, "phantom scatterer amplitude not finite");
    require(fov.contains(s.x, s.z), ErrorKind::config,
            "phantom scatterer lies outside the field of view");
  }
  for (const auto& c : spec.cysts) {
    require(c.radius > 0.0, ErrorKind::config, "phantom cyst radius must be positive");
    require(c.echogenicity >= 0.0 && c.echogenicity <= 1.0, ErrorKind::config,
            "phantom cyst echogenicity must lie in [0, 1]");
    require(fov.contains(c.center_x - c.radius, c.center_z - c.radius) &&
                fov.contains(c.center_x + c.radius, c.center_z + c.radius),
            ErrorKind::config, "phantom cyst extends outside the field of view");
  }
}

}  // namespace patchbf
