// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "patchbf/das.hpp"
#include "patchbf/error.hpp"
#include "patchbf/objective.hpp"
#include "patchbf/pipeline.hpp"

namespace patchbf {

struct CystROI {
  double center_x = 0.0, center_z = 0.0;
  double inner_radius = 0.0, outer_radius = 0.0;

  void validate(const PixelGrid& grid) const {
    require(inner_radius > 0.0 && outer_radius > inner_radius, ErrorKind::config,
            "roi: need 0 < inner_radius < outer_radius");
    require(grid.contains(center_x - outer_radius, center_z - outer_radius) &&
                grid.contains(center_x + outer_radius, center_z + outer_radius),
            ErrorKind::config, "roi: outer circle leaves the grid");
  }
};

/// Linear-scale envelope (relative to the compression reference) recovered
/// from compressed display values.
inline Matrix linear_envelope(const BModeImage& image) {
  Matrix out(image.values.rows, image.values.cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = expand_db(image.values.data[i], image.dynamic_range_db);
  return out;
}

/// 20 log10(mu_inner / mu_outer) on linear envelope values. The outer
/// region contains the inner disc unless `disjoint_annulus` is set. Both
/// means are accumulated as offsets from one shared pixel value, so a
/// uniform image gives exactly 0 dB.
inline double contrast_ratio(const Matrix& envelope_values, const PixelGrid& grid,
                             const CystROI& roi, bool disjoint_annulus = false) {
  double sum_in = 0.0, sum_out = 0.0, shift = 0.0;
  std::size_t n_in = 0, n_out = 0;
  bool have_shift = false;
  for (std::size_t iz = 0; iz < grid.n_z; ++iz) {
    for (std::size_t ix = 0; ix < grid.n_x; ++ix) {
      const double d = std::hypot(grid.x(ix) - roi.center_x, grid.z(iz) - roi.center_z);
      if (d > roi.outer_radius) continue;
      const double v = envelope_values(iz, ix);
      if (!have_shift) {
        shift = v;
        have_shift = true;
      }
      const bool inner = d <= roi.inner_radius;
      if (inner) {
        sum_in += v - shift;
        ++n_in;
      }
      if (!(disjoint_annulus && inner)) {
        sum_out += v - shift;
        ++n_out;
      }
    }
  }
  require(n_in > 0 && n_out > 0, ErrorKind::numerical, "empty ROI");
  const double mu_in = shift + sum_in / static_cast<double>(n_in);
  const double mu_out = shift + sum_out / static_cast<double>(n_out);
  require(mu_out > 0.0, ErrorKind::numerical, "zero background");
  return 20.0 * std::log10(mu_in / mu_out);
}

inline double contrast_ratio(const BModeImage& image, const CystROI& roi,
                             bool disjoint_annulus = false) {
  return contrast_ratio(linear_envelope(image), image.grid, roi, disjoint_annulus);
}

/// Width at half of the peak value, interpolating linearly between samples
/// on each flank.
inline double fwhm_of_profile(std::span<const double> profile, std::size_t peak, double spacing) {
  const double half = 0.5 * profile[peak];
  std::optional<double> left, right;
  for (std::size_t i = peak; i-- > 0;) {
    if (profile[i] < half) {
      const double t = (profile[i + 1] - half) / (profile[i + 1] - profile[i]);
      left = static_cast<double>(i + 1) - t;
      break;
    }
  }
  for (std::size_t i = peak + 1; i < profile.size(); ++i) {
    if (profile[i] < half) {
      const double t = (profile[i - 1] - half) / (profile[i - 1] - profile[i]);
      right = static_cast<double>(i - 1) + t;
      break;
    }
  }
  require(left.has_value() && right.has_value(), ErrorKind::numerical,
          "no half crossing: lateral profile does not drop below half maximum inside the grid");
  return (*right - *left) * spacing;
}

/// Lateral FWHM (meters) of the target near (x, z): the peak is searched in
/// a +-search pixel neighbourhood and the profile is taken along its row.
inline double fwhm_lateral(const BModeImage& image, double x, double z, std::size_t search = 2) {
  const auto& grid = image.grid;
  const Matrix env = linear_envelope(image);
  const std::size_t cz = grid.nearest_iz(z), cx = grid.nearest_ix(x);
  std::size_t pz = cz, px = cx;
  for (std::size_t iz = cz > search ? cz - search : 0; iz <= std::min(grid.n_z - 1, cz + search); ++iz)
    for (std::size_t ix = cx > search ? cx - search : 0; ix <= std::min(grid.n_x - 1, cx + search);
         ++ix)
      if (env(iz, ix) > env(pz, px)) {
        pz = iz;
        px = ix;
      }
  return fwhm_of_profile(env.row(pz), px, grid.dx());
}

enum class Method { das, mvdr, learned };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::das: return "das";
    case Method::mvdr: return "mvdr";
    case Method::learned: return "learned";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "das") return Method::das;
  if (s == "mvdr") return Method::mvdr;
  if (s == "learned") return Method::learned;
  fail(ErrorKind::config, "unknown method '" + s + "' (expected das, mvdr or learned)");
}

struct StageTimes {
  double delay_ms = 0.0, beamform_ms = 0.0, envelope_ms = 0.0;
  double total() const { return delay_ms + beamform_ms + envelope_ms; }
};

struct BenchResult {
  Method method = Method::das;
  std::size_t repetitions = 0;
  double median_ms = 0.0, min_ms = 0.0;
  StageTimes median_stage;
  std::size_t n_patches = 0;
};

namespace detail {
inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

class Stopwatch {
 public:
  double lap_ms() {
    const auto now = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(now - last_).count();
    last_ = now;
    return ms;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};
}  // namespace detail

/// One timed image formation. File I/O and simulation are outside the
/// measured region.
template <typename T>
StageTimes time_once(Method method, const RFFrame& frame, const PixelGrid& grid,
                     const ImagingConfig& cfg, const nn::UNetParams<T>* params) {
  StageTimes st;
  detail::Stopwatch sw;
  const DelayedTensor delayed = delay_compensate(frame, grid, cfg.threads);
  st.delay_ms = sw.lap_ms();
  if (method == Method::mvdr) {
    const Matrix bf = mvdr_beamform(delayed, cfg.mvdr, cfg.threads);
    st.beamform_ms = sw.lap_ms();
    const Matrix env = tiled_envelope(bf, grid.patch_side);
    volatile double sink = log_compress(env, max_value(env), cfg.dynamic_range_db).data[0];
    (void)sink;
    st.envelope_ms = sw.lap_ms();
    return st;
  }
  const ApodizationProfile apod = das_weights(grid, frame.geometry, cfg.das.f_number, cfg.das.window);
  const Matrix das_bf = das_sum(delayed, apod);
  if (method == Method::das) {
    st.beamform_ms = sw.lap_ms();
    const Matrix env = tiled_envelope(das_bf, grid.patch_side);
    volatile double sink = log_compress(env, max_value(env), cfg.dynamic_range_db).data[0];
    (void)sink;
    st.envelope_ms = sw.lap_ms();
    return st;
  }
  require(params != nullptr, ErrorKind::config, "learned benchmark needs network parameters");
  const auto patches = extract_patches(delayed);
  std::vector<Matrix> beamformed(patches.size());
  parallel_for(patches.size(), cfg.threads, [&](std::size_t i) {
    beamformed[i] = das_sum(NetworkTransform<T>{*params}(patches[i]), patches[i].origin_iz,
                            patches[i].origin_ix, apod);
  });
  st.beamform_ms = sw.lap_ms();
  const Matrix das_env = tiled_envelope(das_bf, grid.patch_side);
  const double ref = max_value(das_env);
  const Matrix das_b = log_compress(das_env, ref, cfg.dynamic_range_db);
  std::vector<BModePatch> out(patches.size());
  parallel_for(patches.size(), cfg.threads, [&](std::size_t i) {
    const auto& z = patches[i];
    const Matrix h = log_compress(envelope(beamformed[i]), ref, cfg.dynamic_range_db);
    out[i] = {scale(h, crop(das_b, z.origin_iz, z.origin_ix, z.side(), z.data.cols)), z.origin_iz,
              z.origin_ix};
  });
  volatile double sink = stitch(out, grid.n_z, grid.n_x).data[0];
  (void)sink;
  st.envelope_ms = sw.lap_ms();
  return st;
}

/// Median and minimum wall-clock over `repetitions` runs after `warmup`
/// untimed runs.
template <typename T = float>
BenchResult benchmark(Method method, const RFFrame& frame, const PixelGrid& grid,
                      const ImagingConfig& cfg, std::size_t repetitions,
                      const nn::UNetParams<T>* params = nullptr, std::size_t warmup = 1) {
  require(repetitions >= 1, ErrorKind::config, "bench.repetitions must be at least 1");
  require(warmup >= 1, ErrorKind::config, "bench.warmup must be at least 1");
  for (std::size_t i = 0; i < warmup; ++i) time_once(method, frame, grid, cfg, params);
  std::vector<StageTimes> runs;
  for (std::size_t i = 0; i < repetitions; ++i) runs.push_back(time_once(method, frame, grid, cfg, params));
  std::vector<double> total, d, b, e;
  for (const auto& r : runs) {
    total.push_back(r.total());
    d.push_back(r.delay_ms);
    b.push_back(r.beamform_ms);
    e.push_back(r.envelope_ms);
  }
  BenchResult res;
  res.method = method;
  res.repetitions = repetitions;
  res.median_ms = detail::median(total);
  res.min_ms = *std::min_element(total.begin(), total.end());
  res.median_stage = {detail::median(d), detail::median(b), detail::median(e)};
  res.n_patches = grid.n_patches();
  return res;
}

struct RoiMetrics {
  std::string label;
  double depth = 0.0;
  double cr_learned = NAN, cr_mvdr = NAN, cr_das = NAN;
};

struct PointMetrics {
  double x = 0.0, z = 0.0;
  double fwhm_learned = NAN, fwhm_mvdr = NAN, fwhm_das = NAN;  // meters
};

struct MetricsReport {
  std::vector<RoiMetrics> rois;
  std::vector<PointMetrics> points;
  double ssim_learned_vs_mvdr = NAN, ssim_das_vs_mvdr = NAN;
  double mae_learned_vs_mvdr = NAN, mae_das_vs_mvdr = NAN;
  std::vector<BenchResult> timings;
};

/// Whole-image report. Any of the three images may be absent (nullptr); its
/// columns are then left NaN.
inline MetricsReport make_report(const BModeImage* learned, const BModeImage* mvdr,
                                 const BModeImage* das, const std::vector<CystROI>& rois,
                                 const std::vector<std::pair<double, double>>& points,
                                 bool disjoint_annulus = false) {
  MetricsReport rep;
  auto cr = [&](const BModeImage* im, const CystROI& roi) {
    return im ? contrast_ratio(*im, roi, disjoint_annulus) : NAN;
  };
  auto fw = [&](const BModeImage* im, double x, double z) {
    return im ? fwhm_lateral(*im, x, z) : NAN;
  };
  for (std::size_t i = 0; i < rois.size(); ++i) {
    const auto& roi = rois[i];
    rep.rois.push_back({"roi" + std::to_string(i), roi.center_z, cr(learned, roi), cr(mvdr, roi),
                        cr(das, roi)});
  }
  for (const auto& [x, z] : points)
    rep.points.push_back({x, z, fw(learned, x, z), fw(mvdr, x, z), fw(das, x, z)});
  if (mvdr) {
    const SsimParams prm{};
    if (learned) {
      rep.ssim_learned_vs_mvdr = ssim(learned->values, mvdr->values, prm);
      rep.mae_learned_vs_mvdr = mae(learned->values, mvdr->values);
    }
    if (das) {
      rep.ssim_das_vs_mvdr = ssim(das->values, mvdr->values, prm);
      rep.mae_das_vs_mvdr = mae(das->values, mvdr->values);
    }
  }
  return rep;
}

}  // namespace patchbf
