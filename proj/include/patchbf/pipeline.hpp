// SPDX-License-Identifier: Apache-2.0
#pragma once

// Patch-level inference: transform the delay-compensated patch, apply DAS
// apodization, detect the envelope, log-compress and rescale onto the range
// of the plain DAS patch. Patches are then stitched without overlap.

#include <cmath>
#include <string>
#include <vector>

#include "patchbf/array.hpp"
#include "patchbf/das.hpp"
#include "patchbf/delayrf.hpp"
#include "patchbf/mvdr.hpp"
#include "patchbf/neural.hpp"
#include "patchbf/objective.hpp"
#include "patchbf/parallel.hpp"
#include "patchbf/simulator.hpp"
#include "patchbf/unet.hpp"

namespace patchbf {

struct BModeImage {
  Matrix values;  // [n_z x n_x], in [0, 1]
  PixelGrid grid;
  std::string method;  // das | mvdr | learned
  double dynamic_range_db = kDefaultDynamicRangeDb;
};

struct DasConfig {
  double f_number = 1.5;
  Window window = Window::hann;
};

struct ImagingConfig {
  DasConfig das;
  MvdrConfig mvdr;
  double dynamic_range_db = kDefaultDynamicRangeDb;
  unsigned threads = 1;
};

/// Everything one frame contributes that is independent of the network:
/// the delayed tensor, its patches, the DAS B-mode image and the shared
/// compression reference.
struct ImageContext {
  DelayedTensor delayed;
  ApodizationProfile apod;
  std::vector<RFPatch> patches;
  Matrix das_bmode;
  double das_reference = 0.0;  // global max of the tiled DAS envelope
  double dynamic_range_db = kDefaultDynamicRangeDb;
};

/// RMS of a patch's channel data; 1 for an all-zero patch.
inline double patch_scale(const Cube& data) {
  double acc = 0.0;
  for (double v : data.data) acc += v * v;
  const double rms = data.data.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(data.data.size()));
  return rms > 0.0 ? rms : 1.0;
}

inline ImageContext prepare_image(const RFFrame& frame, const PixelGrid& grid,
                                  const ImagingConfig& cfg) {
  ImageContext ctx;
  ctx.dynamic_range_db = cfg.dynamic_range_db;
  ctx.delayed = delay_compensate(frame, grid, cfg.threads);
  ctx.apod = das_weights(grid, frame.geometry, cfg.das.f_number, cfg.das.window);
  ctx.patches = extract_patches(ctx.delayed);
  const Matrix env = tiled_envelope(das_sum(ctx.delayed, ctx.apod), grid.patch_side);
  ctx.das_reference = max_value(env);
  ctx.das_bmode = log_compress(env, ctx.das_reference, cfg.dynamic_range_db);
  return ctx;
}

inline Matrix crop(const Matrix& m, std::size_t r0, std::size_t c0, std::size_t rows,
                   std::size_t cols) {
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = m(r0 + r, c0 + c);
  return out;
}

inline BModePatch das_patch(const ImageContext& ctx, const RFPatch& z) {
  return {crop(ctx.das_bmode, z.origin_iz, z.origin_ix, z.side(), z.data.cols), z.origin_iz,
          z.origin_ix};
}

/// Network bypass: z' = z. The pipeline then reproduces DAS exactly.
struct Bypass {
  Cube operator()(const RFPatch& z) const { return z.data; }
};

template <typename T>
nn::Tensor4<T> to_network_input(const Cube& data, double input_scale) {
  nn::Tensor4<T> x(1, data.planes, data.rows, data.cols);
  for (std::size_t i = 0; i < data.data.size(); ++i)
    x.values[i] = static_cast<T>(data.data[i] / input_scale);
  return x;
}

template <typename T>
Cube from_network_output(const nn::Tensor4<T>& y, double input_scale) {
  Cube out(y.c, y.h, y.w);
  for (std::size_t i = 0; i < y.values.size(); ++i)
    out.data[i] = static_cast<double>(y.values[i]) * input_scale;
  return out;
}

/// z' = s * Phi(z / s) with s the patch RMS, which keeps the network's
/// operating range independent of absolute echo amplitude and depth.
template <typename T>
struct NetworkTransform {
  const nn::UNetParams<T>& params;

  Cube operator()(const RFPatch& z) const {
    const double s = patch_scale(z.data);
    return from_network_output(nn::unet_forward(params, to_network_input<T>(z.data, s)), s);
  }
};

/// Differentiable B-operator plus Scale for one patch. forward() keeps the
/// intermediates that backward() needs.
struct PatchChain {
  const ApodizationProfile* apod = nullptr;
  double log_reference = 0.0;
  double dynamic_range_db = kDefaultDynamicRangeDb;
  std::size_t origin_iz = 0, origin_ix = 0;

  Matrix beamformed, env, compressed;

  Matrix forward(const Cube& transformed, const Matrix& das_reference_patch) {
    beamformed = das_sum(transformed, origin_iz, origin_ix, *apod);
    env = envelope(beamformed);
    compressed = log_compress(env, log_reference, dynamic_range_db);
    return scale(compressed, das_reference_patch);
  }

  Cube backward(const Matrix& das_reference_patch, const Matrix& grad_out) const {
    const Matrix g_h = scale_backward(compressed, das_reference_patch, grad_out);
    const Matrix g_e = log_compress_backward(env, g_h, log_reference, dynamic_range_db);
    const Matrix g_b = envelope_backward(beamformed, g_e);
    return das_sum_backward(g_b, origin_iz, origin_ix, *apod);
  }
};

/// y' = Scale(log_compress(envelope(das_sum(transform(z)))), das patch).
template <typename Transform>
BModePatch infer_patch(const Transform& transform, const RFPatch& z,
                       const ApodizationProfile& apod, const BModePatch& das_reference_patch,
                       double log_reference, double dynamic_range_db = kDefaultDynamicRangeDb) {
  PatchChain chain{&apod, log_reference, dynamic_range_db, z.origin_iz, z.origin_ix, {}, {}, {}};
  return {chain.forward(transform(z), das_reference_patch.values), z.origin_iz, z.origin_ix};
}

inline Matrix stitch(const std::vector<BModePatch>& patches, std::size_t rows, std::size_t cols) {
  Matrix out(rows, cols);
  for (const auto& p : patches) {
    require(p.origin_iz + p.values.rows <= rows && p.origin_ix + p.values.cols <= cols,
            ErrorKind::shape, "patch does not fit the image");
    for (std::size_t r = 0; r < p.values.rows; ++r)
      for (std::size_t c = 0; c < p.values.cols; ++c)
        out(p.origin_iz + r, p.origin_ix + c) = p.values(r, c);
  }
  return out;
}

/// Patch-parallel inference over a prepared frame; `order` optionally
/// permutes the processing order (the result must not depend on it).
template <typename Transform>
BModeImage infer_image(const ImageContext& ctx, const Transform& transform, unsigned threads = 1,
                       const std::vector<std::size_t>* order = nullptr) {
  const auto& grid = ctx.delayed.grid;
  std::vector<BModePatch> out(ctx.patches.size());
  parallel_for(ctx.patches.size(), threads, [&](std::size_t i) {
    const std::size_t k = order ? (*order)[i] : i;
    const auto& z = ctx.patches[k];
    out[k] = infer_patch(transform, z, ctx.apod, das_patch(ctx, z), ctx.das_reference,
                         ctx.dynamic_range_db);
  });
  return {stitch(out, grid.n_z, grid.n_x), grid, "learned", ctx.dynamic_range_db};
}

template <typename Transform>
BModeImage infer_image(const RFFrame& frame, const PixelGrid& grid, const Transform& transform,
                       const ImagingConfig& cfg) {
  return infer_image(prepare_image(frame, grid, cfg), transform, cfg.threads);
}

template <typename T>
BModeImage infer_image(const RFFrame& frame, const PixelGrid& grid,
                       const nn::UNetParams<T>& params, const ImagingConfig& cfg) {
  const ImageContext ctx = prepare_image(frame, grid, cfg);
  return infer_image(ctx, NetworkTransform<T>{params}, cfg.threads);
}

inline BModeImage das_image(const ImageContext& ctx) {
  return {ctx.das_bmode, ctx.delayed.grid, "das", ctx.dynamic_range_db};
}

/// MVDR image with the same per-patch envelope and its own global reference.
inline BModeImage mvdr_image(const DelayedTensor& delayed, const ImagingConfig& cfg,
                             MvdrDiagnostics* diag = nullptr) {
  const Matrix env =
      tiled_envelope(mvdr_beamform(delayed, cfg.mvdr, cfg.threads, diag), delayed.grid.patch_side);
  return {log_compress(env, max_value(env), cfg.dynamic_range_db), delayed.grid, "mvdr",
          cfg.dynamic_range_db};
}

/// Side-by-side comparison: learned | MVDR | DAS.
inline Matrix triptych(const BModeImage& learned, const BModeImage& mvdr, const BModeImage& das) {
  const std::size_t rows = das.values.rows, cols = das.values.cols;
  require(learned.values.rows == rows && mvdr.values.rows == rows &&
              learned.values.cols == cols && mvdr.values.cols == cols,
          ErrorKind::shape, "triptych: image sizes differ");
  Matrix out(rows, 3 * cols);
  const BModeImage* order[] = {&learned, &mvdr, &das};
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out(r, k * cols + c) = order[k]->values(r, c);
  return out;
}

}  // namespace patchbf
