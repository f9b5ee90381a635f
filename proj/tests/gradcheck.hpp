// SPDX-License-Identifier: Apache-2.0
#pragma once

// Finite-difference checks of every hand-written backward pass. Each
// function draws one random instance and returns the relative error between
// the analytic and the central-difference gradient.

#include <functional>
#include <vector>

#include "oracles.hpp"
#include "patchbf/das.hpp"
#include "patchbf/neural.hpp"
#include "patchbf/objective.hpp"
#include "patchbf/pipeline.hpp"
#include "patchbf/unet.hpp"

namespace gradcheck {

using namespace patchbf;
using nn::Tensor4;
using Vec = std::vector<double>;

inline Tensor4<double> random_tensor(Rng& rng, std::size_t n, std::size_t c, std::size_t h,
                                     std::size_t w) {
  Tensor4<double> t(n, c, h, w);
  for (double& v : t.values) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Values at least `gap` away from zero.
inline Tensor4<double> off_kink_tensor(Rng& rng, std::size_t n, std::size_t c, std::size_t h,
                                       std::size_t w, double gap) {
  Tensor4<double> t(n, c, h, w);
  for (double& v : t.values) {
    const double mag = rng.uniform(gap, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

inline Tensor4<double> with_values(Tensor4<double> t, const Vec& v) {
  t.values = v;
  return t;
}

inline double conv(Rng& rng) {
  const std::size_t ci = 1 + rng.below(4), co = 1 + rng.below(4);
  const std::size_t h = 2 + rng.below(6), w = 2 + rng.below(6);
  const auto x = random_tensor(rng, 1 + rng.below(2), ci, h, w);
  const Vec k = oracle::random_vector(rng, co * ci * 9), b = oracle::random_vector(rng, co);
  const auto probe = random_tensor(rng, x.n, co, h, w);

  // Pack [x, k, b] into one vector.
  Vec all = x.values;
  all.insert(all.end(), k.begin(), k.end());
  all.insert(all.end(), b.begin(), b.end());
  auto unpack = [&](const Vec& v, Tensor4<double>& xx, Vec& kk, Vec& bb) {
    xx = x;
    std::copy_n(v.begin(), x.size(), xx.values.begin());
    kk.assign(v.begin() + static_cast<std::ptrdiff_t>(x.size()),
              v.begin() + static_cast<std::ptrdiff_t>(x.size() + k.size()));
    bb.assign(v.end() - static_cast<std::ptrdiff_t>(co), v.end());
  };
  auto loss = [&](const Vec& v) {
    Tensor4<double> xx;
    Vec kk, bb;
    unpack(v, xx, kk, bb);
    return oracle::dot(nn::conv2d<double>(xx, kk, bb, co).values, probe.values);
  };
  Vec gk(k.size(), 0.0), gb(co, 0.0);
  const auto gx = nn::conv2d_backward<double>(x, k, probe, gk, gb);
  Vec analytic = gx.values;
  analytic.insert(analytic.end(), gk.begin(), gk.end());
  analytic.insert(analytic.end(), gb.begin(), gb.end());
  return oracle::relative_error(analytic, oracle::numeric_gradient(loss, all, 1e-4));
}

inline double leaky_relu(Rng& rng) {
  const auto x = off_kink_tensor(rng, 1, 3, 4, 4, 1e-3);
  const auto probe = random_tensor(rng, 1, 3, 4, 4);
  const double slope = rng.uniform(0.0, 0.5);
  auto loss = [&](const Vec& v) {
    return oracle::dot(nn::leaky_relu(with_values(x, v), slope).values, probe.values);
  };
  return oracle::relative_error(nn::leaky_relu_backward(x, probe, slope).values,
                                oracle::numeric_gradient(loss, x.values, 1e-4));
}

inline double maxpool(Rng& rng) {
  // Distinct values separated by at least 1e-3 so no window has a near tie.
  Tensor4<double> x(1, 2, 4, 6);
  Vec levels(x.size());
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = static_cast<double>(i) * 2e-3;
  for (std::size_t i = levels.size(); i-- > 1;) std::swap(levels[i], levels[rng.below(i + 1)]);
  x.values = levels;
  const auto probe = random_tensor(rng, 1, 2, 2, 3);
  auto loss = [&](const Vec& v) {
    return oracle::dot(nn::maxpool2(with_values(x, v)).values, probe.values);
  };
  std::vector<std::size_t> arg;
  nn::maxpool2(x, arg);
  return oracle::relative_error(nn::maxpool2_backward(x, arg, probe).values,
                                oracle::numeric_gradient(loss, x.values, 1e-4));
}

inline double upsample(Rng& rng) {
  const auto x = random_tensor(rng, 2, 2, 3, 2);
  const auto probe = random_tensor(rng, 2, 2, 6, 4);
  auto loss = [&](const Vec& v) {
    return oracle::dot(nn::upsample2(with_values(x, v)).values, probe.values);
  };
  return oracle::relative_error(nn::upsample2_backward(probe).values,
                                oracle::numeric_gradient(loss, x.values, 1e-4));
}

inline double concat(Rng& rng) {
  const auto a = random_tensor(rng, 2, 1 + rng.below(3), 3, 3);
  const auto b = random_tensor(rng, 2, 1 + rng.below(3), 3, 3);
  const auto probe = random_tensor(rng, 2, a.c + b.c, 3, 3);
  Vec all = a.values;
  all.insert(all.end(), b.values.begin(), b.values.end());
  auto loss = [&](const Vec& v) {
    auto aa = a, bb = b;
    std::copy_n(v.begin(), a.size(), aa.values.begin());
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(a.size()), v.end(), bb.values.begin());
    return oracle::dot(nn::concat_channels(aa, bb).values, probe.values);
  };
  Tensor4<double> ga, gb;
  nn::concat_channels_backward(probe, a.c, ga, gb);
  Vec analytic = ga.values;
  analytic.insert(analytic.end(), gb.values.begin(), gb.values.end());
  return oracle::relative_error(analytic, oracle::numeric_gradient(loss, all, 1e-4));
}

inline double mae(Rng& rng) {
  const Matrix b = oracle::random_matrix(rng, 6, 5);
  Matrix a(6, 5);
  for (std::size_t i = 0; i < a.size(); ++i)
    a.data[i] = b.data[i] + (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(1e-3, 0.5);
  const double w = rng.uniform(0.1, 2.0);
  auto loss = [&](const Vec& v) {
    Matrix m = a;
    m.data = v;
    return w * patchbf::mae(m, b);
  };
  return oracle::relative_error(mae_backward(a, b, w).data,
                                oracle::numeric_gradient(loss, a.data, 1e-4));
}

inline double ssim(Rng& rng) {
  const std::size_t r = 7 + rng.below(5), c = 7 + rng.below(5);
  const Matrix a = oracle::random_matrix(rng, r, c), b = oracle::random_matrix(rng, r, c);
  Vec all = a.data;
  all.insert(all.end(), b.data.begin(), b.data.end());
  auto loss = [&](const Vec& v) {
    Matrix aa = a, bb = b;
    std::copy_n(v.begin(), a.size(), aa.data.begin());
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(a.size()), v.end(), bb.data.begin());
    return patchbf::ssim(aa, bb);
  };
  Matrix ga, gb;
  patchbf::ssim(a, b, {}, &ga, &gb);
  Vec analytic = ga.data;
  analytic.insert(analytic.end(), gb.data.begin(), gb.data.end());
  return oracle::relative_error(analytic, oracle::numeric_gradient(loss, all, 1e-4));
}

inline double envelope(Rng& rng) {
  const std::size_t n = 8 << rng.below(2);
  const Matrix x = oracle::random_matrix(rng, n, 3, -1, 1);
  const Matrix probe = oracle::random_matrix(rng, n, 3, -1, 1);
  auto loss = [&](const Vec& v) {
    Matrix m = x;
    m.data = v;
    return oracle::dot(patchbf::envelope(m).data, probe.data);
  };
  return oracle::relative_error(envelope_backward(x, probe).data,
                                oracle::numeric_gradient(loss, x.data, 1e-4));
}

inline double log_compress(Rng& rng) {
  const double dr = rng.uniform(30.0, 70.0), ref = rng.uniform(0.5, 5.0);
  // Stay clear of both clamp edges.
  Matrix env(5, 5);
  for (double& v : env.data) v = ref * std::pow(10.0, -rng.uniform(0.02, 0.98) * dr / 20.0);
  const Matrix probe = oracle::random_matrix(rng, 5, 5, -1, 1);
  auto loss = [&](const Vec& v) {
    Matrix m = env;
    m.data = v;
    return oracle::dot(patchbf::log_compress(m, ref, dr).data, probe.data);
  };
  const Vec numeric = [&] {
    Vec g(env.size());
    for (std::size_t i = 0; i < env.size(); ++i) {
      Vec up = env.data, down = env.data;
      const double step = 1e-6 * env.data[i];
      up[i] += step;
      down[i] -= step;
      g[i] = (loss(up) - loss(down)) / (2.0 * step);
    }
    return g;
  }();
  return oracle::relative_error(log_compress_backward(env, probe, ref, dr).data, numeric);
}

/// A small toy-shaped problem for the whole differentiable chain:
/// z -> U-Net -> DAS -> envelope -> log -> Scale -> hybrid loss.
struct ChainProblem {
  ApodizationProfile apod;
  nn::UNetParams<double> params;
  RFPatch z;
  Matrix das_ref, target;
  double log_reference = 0.0;
  LossWeights weights{0.9, 0.1};

  double loss(const nn::UNetParams<double>& p, const Cube& input) const {
    RFPatch zz = z;
    zz.data = input;
    PatchChain chain{&apod, log_reference, 60.0, z.origin_iz, z.origin_ix, {}, {}, {}};
    const Matrix pred = chain.forward(NetworkTransform<double>{p}(zz), das_ref);
    return hybrid_loss(pred, target, weights).loss;
  }

  // Analytic gradient with respect to parameters and input, following the
  // same composition as the training loop.
  double gradient(Vec& g_params, Vec& g_input) const {
    const double s = patch_scale(z.data);
    nn::UNetTape<double> tape;
    const auto out = nn::unet_forward(params, to_network_input<double>(z.data, s), &tape);
    PatchChain chain{&apod, log_reference, 60.0, z.origin_iz, z.origin_ix, {}, {}, {}};
    const Matrix pred = chain.forward(from_network_output(out, s), das_ref);
    Matrix g_pred;
    const auto terms = hybrid_loss(pred, target, weights, {}, &g_pred);
    const Cube g_y = chain.backward(das_ref, g_pred);
    nn::Tensor4<double> g_out(1, g_y.planes, g_y.rows, g_y.cols);
    for (std::size_t i = 0; i < g_y.data.size(); ++i) g_out.values[i] = g_y.data[i] * s;
    g_params.assign(params.values.size(), 0.0);
    const auto g_in = nn::unet_backward(params, tape, g_out, std::span<double>(g_params));
    // g_in is with respect to u = z / s. The RMS s also depends on z, with
    // d s / d z_i = z_i / (N s).
    const double n = static_cast<double>(z.data.data.size());
    double d_s = 0.0;
    for (std::size_t i = 0; i < g_y.data.size(); ++i)
      d_s += g_y.data[i] * out.values[i] - g_in.values[i] * z.data.data[i] / (s * s);
    g_input.resize(z.data.data.size());
    for (std::size_t i = 0; i < g_input.size(); ++i)
      g_input[i] = g_in.values[i] / s + d_s * z.data.data[i] / (n * s);
    return terms.loss;
  }
};

inline ChainProblem make_chain_problem(Rng& rng, std::size_t n_elements = 4, std::size_t side = 8,
                                       std::size_t width = 8) {
  ChainProblem p;
  const auto array = make_linear_array(n_elements, 1.5e-3, 2e6, 8e6, 1540);
  const auto grid = make_pixel_grid(-5e-3, 5e-3, 10e-3, 10e-3 + 0.14e-3 * (2 * side - 1), 2 * side,
                                    2 * side, side);
  p.apod = das_weights(grid, array, 1.0, Window::hann);
  nn::UNetArchitecture arch{n_elements, 2, width, 2 * width, 0.1};
  p.params = nn::init_unet<double>(arch, rng.next_u64());
  for (double& v : p.params.values) v += rng.uniform(-0.05, 0.05);  // biases off zero
  p.z.origin_iz = side;
  p.z.origin_ix = side * rng.below(2);
  p.z.data = Cube(n_elements, side, side);
  for (double& v : p.z.data.data) v = rng.normal();
  Matrix env = tiled_envelope(das_sum(p.z.data, p.z.origin_iz, p.z.origin_ix, p.apod), side);
  p.log_reference = 1.5 * max_value(env);
  p.das_ref = log_compress(env, p.log_reference, 60.0);
  p.target = oracle::random_matrix(rng, side, side, 0.2, 1.0);
  return p;
}

inline std::size_t& rejected_chain_draws() {
  static std::size_t count = 0;
  return count;
}

/// Directional check of the full chain: one random direction in parameter
/// space and one in input space per draw. The chain is only piecewise
/// smooth (leaky ReLU, pooling, MAE, Scale's extrema), so a draw whose
/// difference segment straddles a kink is detected by comparing the central
/// differences at h and h/4 and replaced by a fresh draw.
inline double chain(Rng& rng) {
  for (;;) {
    const ChainProblem p = make_chain_problem(rng);
    Vec gp, gz;
    p.gradient(gp, gz);
    const Vec dp = oracle::random_vector(rng, gp.size());
    const Vec dz = oracle::random_vector(rng, gz.size());
    const double hp = 1e-6, hz = 1e-6 * patch_scale(p.z.data);
    auto shifted = [&](double t) {
      nn::UNetParams<double> q = p.params;
      for (std::size_t i = 0; i < dp.size(); ++i) q.values[i] += t * hp * dp[i];
      Cube input = p.z.data;
      for (std::size_t i = 0; i < dz.size(); ++i) input.data[i] += t * hz * dz[i];
      return p.loss(q, input);
    };
    const double numeric = (shifted(1.0) - shifted(-1.0)) / 2.0;
    const double refined = (shifted(0.25) - shifted(-0.25)) * 2.0;
    if (std::abs(numeric - refined) > 1e-5 * std::abs(refined)) {
      ++rejected_chain_draws();
      continue;
    }
    const double analytic = hp * oracle::dot(gp, dp) + hz * oracle::dot(gz, dz);
    return std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-300});
  }
}

struct Check {
  const char* name;
  double (*draw)(Rng&);
  double tolerance;
};

inline const std::vector<Check>& all_checks() {
  static const std::vector<Check> checks = {
      {"conv", conv, 1e-6},           {"leaky_relu", leaky_relu, 1e-6},
      {"maxpool", maxpool, 1e-6},     {"upsample", upsample, 1e-6},
      {"concat", concat, 1e-6},       {"mae", mae, 1e-6},
      {"ssim", ssim, 1e-5},           {"envelope", envelope, 1e-6},
      {"log_compress", log_compress, 1e-6}, {"chain", chain, 1e-4},
  };
  return checks;
}

}  // namespace gradcheck
