// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "patchbf/config.hpp"
#include "patchbf/evalbench.hpp"

using namespace patchbf;

namespace {

const PixelGrid kGrid = make_pixel_grid(-5e-3, 5e-3, 10e-3, 20e-3, 64, 64, 32);
const CystROI kRoi{0.0, 15e-3, 2e-3, 3.5e-3};

BModeImage image_of(const Matrix& env, double dr = 60.0) {
  return {log_compress(env, max_value(env), dr), kGrid, "das", dr};
}

bool inside(const PixelGrid& g, std::size_t iz, std::size_t ix, double r) {
  return std::hypot(g.x(ix) - kRoi.center_x, g.z(iz) - kRoi.center_z) <= r;
}

}  // namespace

TEST(Contrast, UniformImageIsExactlyZero) {
  EXPECT_EQ(contrast_ratio(Matrix(64, 64, 0.5), kGrid, kRoi), 0.0);
  EXPECT_EQ(contrast_ratio(Matrix(64, 64, 0.5), kGrid, kRoi, true), 0.0);
  BModeImage flat{Matrix(64, 64, 1.0), kGrid, "das", 60.0};
  EXPECT_EQ(contrast_ratio(flat, kRoi), 0.0);
  for (double v : {0.1, 0.75, 1.0 / 3.0, 0.987654321}) {
    const BModeImage im{Matrix(64, 64, v), kGrid, "das", 60.0};
    for (double r : {1e-3, 2e-3, 2.7e-3}) {
      const CystROI roi{0.3e-3, 14e-3, r, r + 1.9e-3};
      EXPECT_EQ(contrast_ratio(im, roi), 0.0) << v << " " << r;
      EXPECT_EQ(contrast_ratio(im, roi, true), 0.0) << v << " " << r;
    }
  }
}

TEST(Contrast, TenfoldDarkerInsideIsMinusTwentyDb) {
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t iz = 0; iz < 64; ++iz)
    for (std::size_t ix = 0; ix < 64; ++ix) {
      n_in += inside(kGrid, iz, ix, kRoi.inner_radius);
      n_out += inside(kGrid, iz, ix, kRoi.outer_radius);
    }
  // Inner value 1; background b chosen so the outer mean (inner included) is 10.
  const double b = (10.0 * n_out - n_in) / static_cast<double>(n_out - n_in);
  Matrix env(64, 64, b);
  for (std::size_t iz = 0; iz < 64; ++iz)
    for (std::size_t ix = 0; ix < 64; ++ix)
      if (inside(kGrid, iz, ix, kRoi.inner_radius)) env(iz, ix) = 1.0;
  EXPECT_NEAR(contrast_ratio(env, kGrid, kRoi), -20.0, 1e-9);
  EXPECT_NEAR(contrast_ratio(env, kGrid, kRoi, true), 20.0 * std::log10(1.0 / b), 1e-9);
}

TEST(Contrast, InvariantToEnvelopeScaling) {
  Rng rng(3);
  const Matrix env = oracle::random_matrix(rng, 64, 64, 0.01, 1.0);
  const double base = contrast_ratio(image_of(env), kRoi);
  for (double a : {1e-3, 0.5, 7.0, 1e4}) {
    Matrix s = env;
    for (double& v : s.data) v *= a;
    EXPECT_NEAR(contrast_ratio(image_of(s), kRoi), base, 1e-9);
    EXPECT_NEAR(contrast_ratio(s, kGrid, kRoi), contrast_ratio(env, kGrid, kRoi), 1e-9);
  }
}

TEST(Contrast, Errors) {
  const CystROI tiny{0.05e-3, 15.05e-3, 1e-6, 2e-6};
  try {
    contrast_ratio(Matrix(64, 64, 1.0), kGrid, tiny);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("empty ROI"), std::string::npos);
  }
  try {
    contrast_ratio(Matrix(64, 64), kGrid, kRoi);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("zero background"), std::string::npos);
  }
  EXPECT_THROW(CystROI({0.0, 15e-3, 3e-3, 2e-3}).validate(kGrid), Error);
  EXPECT_THROW(CystROI({4e-3, 15e-3, 1e-3, 2e-3}).validate(kGrid), Error);
}

TEST(Fwhm, GaussianProfile) {
  for (double sigma : {0.3e-3, 0.5e-3, 1.1e-3}) {
    Matrix env(64, 64, 1e-6);
    const std::size_t row = 30;
    for (std::size_t ix = 0; ix < 64; ++ix) {
      const double d = kGrid.x(ix) - 0.2e-3;
      env(row, ix) = std::exp(-d * d / (2 * sigma * sigma));
    }
    const double w = fwhm_lateral(image_of(env), 0.2e-3, kGrid.z(row));
    EXPECT_NEAR(w, 2.0 * std::sqrt(2.0 * std::log(2.0)) * sigma, kGrid.dx()) << sigma;
  }
}

TEST(Fwhm, ProfileThatNeverDropsIsAnError) {
  Matrix env(64, 64, 1e-6);
  for (std::size_t ix = 0; ix < 64; ++ix) env(20, ix) = 1.0 - 0.001 * static_cast<double>(ix);
  try {
    fwhm_lateral(image_of(env), kGrid.x(0), kGrid.z(20));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no half crossing"), std::string::npos);
  }
}

TEST(Fwhm, HandInterpolation) {
  const std::vector<double> p{0.0, 0.25, 1.0, 0.75, 0.25, 0.0};
  // Left crossing at 1 + 0.25 / 0.75, right at 3 + 0.25 / 0.5.
  EXPECT_NEAR(fwhm_of_profile(p, 2, 0.1), (3.5 - (1.0 + 1.0 / 3.0)) * 0.1, 1e-15);
}

TEST(Bench, SingleRepetitionMedianEqualsMin) {
  const auto c = toy_config();
  const auto frame = simulate_frame(c, c.phantom);
  const auto r = benchmark(Method::das, frame, c.pixel_grid(), c.imaging(), 1);
  EXPECT_EQ(r.median_ms, r.min_ms);
  EXPECT_EQ(r.repetitions, 1u);
  EXPECT_GT(r.median_ms, 0.0);
  EXPECT_THROW(benchmark(Method::das, frame, c.pixel_grid(), c.imaging(), 0), Error);
  EXPECT_THROW(benchmark(Method::learned, frame, c.pixel_grid(), c.imaging(), 1), Error);
}

TEST(Bench, MvdrIsSlowerThanDasOnTheDefaultConfig) {
  const auto c = default_config();
  const auto frame = simulate_frame(c, c.phantom);
  const auto das = benchmark(Method::das, frame, c.pixel_grid(), c.imaging(), 3);
  const auto mvdr = benchmark(Method::mvdr, frame, c.pixel_grid(), c.imaging(), 1);
  EXPECT_GT(mvdr.min_ms, das.median_ms);
}

TEST(Bench, LearnedCostGrowsLinearlyWithPatchCount) {
  auto c = default_config();
  const auto params = nn::init_unet<float>(c.architecture(), 1);
  auto network_ms = [&](std::size_t n_x, std::size_t n_z) {
    c.grid.n_x = n_x;
    c.grid.n_z = n_z;
    c.grid.x_max = c.grid.x_min + (n_x - 1) * 0.3e-3;
    c.grid.z_max = c.grid.z_min + (n_z - 1) * 0.05e-3;
    const auto frame = simulate_frame(c, c.phantom);
    const auto r = benchmark<float>(Method::learned, frame, c.pixel_grid(), c.imaging(), 3, &params);
    EXPECT_EQ(r.n_patches, n_x * n_z / (32 * 32));
    return r.median_stage.beamform_ms;
  };
  const double t8 = network_ms(64, 128), t32 = network_ms(128, 256);
  const double ratio = t32 / t8;
  EXPECT_GT(ratio, 2.5);
  EXPECT_LT(ratio, 6.0);
}

TEST(Report, MissingImagesLeaveNaN) {
  Rng rng(4);
  const BModeImage a = image_of(oracle::random_matrix(rng, 64, 64, 0.1, 1.0));
  const BModeImage b = image_of(oracle::random_matrix(rng, 64, 64, 0.1, 1.0));
  const auto rep = make_report(nullptr, &a, &b, {kRoi}, {});
  ASSERT_EQ(rep.rois.size(), 1u);
  EXPECT_TRUE(std::isnan(rep.rois[0].cr_learned));
  EXPECT_EQ(rep.rois[0].cr_mvdr, contrast_ratio(a, kRoi));
  EXPECT_EQ(rep.ssim_das_vs_mvdr, ssim(b.values, a.values));
  EXPECT_TRUE(std::isnan(rep.ssim_learned_vs_mvdr));
  const auto again = make_report(nullptr, &a, &b, {kRoi}, {});
  EXPECT_EQ(again.rois[0].cr_das, rep.rois[0].cr_das);
}

TEST(Report, MethodNames) {
  for (Method m : {Method::das, Method::mvdr, Method::learned}) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("capon"), Error);
}
