// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dynamic receive focusing onto the pixel grid and 2-D tiling of the result.

#include <cmath>
#include <cstdint>
#include <vector>

#include "patchbf/array.hpp"
#include "patchbf/domain.hpp"
#include "patchbf/parallel.hpp"
#include "patchbf/simulator.hpp"

namespace patchbf {

struct DelayedTensor {
  Cube data;                   // [n_elements x n_z x n_x]
  PixelGrid grid;
  std::vector<std::uint8_t> valid;  // same layout as data; 0 = read outside the trace

  std::size_t n_elements() const { return data.planes; }
};

struct RFPatch {
  Cube data;  // [n_elements x side x side]
  std::size_t origin_iz = 0, origin_ix = 0;

  std::size_t side() const { return data.rows; }
};

struct NoReadObserver {
  void operator()(std::size_t, double, std::size_t) const {}
};

/// Linear interpolation of a trace at a fractional sample index. Returns
/// false (and leaves `out` at 0) when the index lies outside [0, n-1].
inline bool interpolate_trace(std::span<const double> trace, double index, double& out) {
  out = 0.0;
  const auto last = static_cast<double>(trace.size()) - 1.0;
  if (!(index >= 0.0 && index <= last)) return false;
  const double base = std::floor(index);
  const auto i0 = static_cast<std::size_t>(base);
  const double frac = index - base;
  if (frac == 0.0) {
    out = trace[i0];
  } else {
    out = trace[i0] + frac * (trace[i0 + 1] - trace[i0]);
  }
  return true;
}

/// data[m][iz][ix] = trace_m(tx_delay + rx_delay - t0). `observe(m, index,
/// n_time)` sees every unmasked read; tests use it to audit bounds.
template <typename Observer = NoReadObserver>
DelayedTensor delay_compensate(const RFFrame& frame, const PixelGrid& grid, unsigned threads = 1,
                               Observer observe = {}) {
  const auto& geo = frame.geometry;
  const std::size_t m_count = frame.n_elements();
  require(m_count == geo.n_elements, ErrorKind::shape, "frame/geometry element count mismatch");
  const double c = geo.sound_speed;

  DelayedTensor out;
  out.grid = grid;
  out.data = Cube(m_count, grid.n_z, grid.n_x);
  out.valid.assign(out.data.data.size(), 0);

  std::vector<double> tx(grid.n_pixels());
  for (std::size_t iz = 0; iz < grid.n_z; ++iz)
    for (std::size_t ix = 0; ix < grid.n_x; ++ix)
      tx[iz * grid.n_x + ix] = tx_delay(grid.x(ix), grid.z(iz), frame.tx, c);

  parallel_for(m_count, threads, [&](std::size_t m) {
    const auto trace = frame.samples.row(m);
    const double ex = geo.element_x[m];
    for (std::size_t iz = 0; iz < grid.n_z; ++iz) {
      const double z = grid.z(iz);
      for (std::size_t ix = 0; ix < grid.n_x; ++ix) {
        const double t = tx[iz * grid.n_x + ix] + rx_delay(grid.x(ix), z, ex, c) - frame.t0;
        const double index = t * frame.fs;
        double v;
        const bool ok = interpolate_trace(trace, index, v);
        const std::size_t at = (m * grid.n_z + iz) * grid.n_x + ix;
        if (ok) {
          observe(m, index, trace.size());
          out.data.data[at] = v;
          out.valid[at] = 1;
        }
      }
    }
  });

  bool any = false;
  for (auto f : out.valid) any = any || f;
  require(any, ErrorKind::numerical, "empty overlap: every delayed sample falls outside the frame");
  return out;
}

/// Non-overlapping tiles in row-major patch order (depth rows outer).
inline std::vector<RFPatch> extract_patches(const Cube& data, std::size_t side) {
  require(side > 0 && data.rows % side == 0 && data.cols % side == 0, ErrorKind::shape,
          "grid not tileable by patch side");
  std::vector<RFPatch> out;
  out.reserve((data.rows / side) * (data.cols / side));
  for (std::size_t pz = 0; pz < data.rows / side; ++pz) {
    for (std::size_t px = 0; px < data.cols / side; ++px) {
      RFPatch p;
      p.origin_iz = pz * side;
      p.origin_ix = px * side;
      p.data = Cube(data.planes, side, side);
      for (std::size_t m = 0; m < data.planes; ++m)
        for (std::size_t r = 0; r < side; ++r)
          for (std::size_t col = 0; col < side; ++col)
            p.data(m, r, col) = data(m, p.origin_iz + r, p.origin_ix + col);
      out.push_back(std::move(p));
    }
  }
  return out;
}

inline std::vector<RFPatch> extract_patches(const DelayedTensor& tensor) {
  return extract_patches(tensor.data, tensor.grid.patch_side);
}

/// Inverse of extract_patches.
inline Cube assemble_patches(const std::vector<RFPatch>& patches, std::size_t planes,
                             std::size_t rows, std::size_t cols) {
  Cube out(planes, rows, cols);
  for (const auto& p : patches) {
    require(p.data.planes == planes && p.origin_iz + p.side() <= rows &&
                p.origin_ix + p.data.cols <= cols,
            ErrorKind::shape, "patch does not fit the target cube");
    for (std::size_t m = 0; m < planes; ++m)
      for (std::size_t r = 0; r < p.data.rows; ++r)
        for (std::size_t c = 0; c < p.data.cols; ++c)
          out(m, p.origin_iz + r, p.origin_ix + c) = p.data(m, r, c);
  }
  return out;
}

}  // namespace patchbf
