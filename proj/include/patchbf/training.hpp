// SPDX-License-Identifier: Apache-2.0
#pragma once

// Patch dataset assembly, Adam, and the training loop that fits the U-Net so
// that DAS applied to its output matches the MVDR patch.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include "patchbf/error.hpp"
#include "patchbf/hash.hpp"
#include "patchbf/objective.hpp"
#include "patchbf/parallel.hpp"
#include "patchbf/pipeline.hpp"
#include "patchbf/rng.hpp"
#include "patchbf/unet.hpp"

namespace patchbf {

struct PatchSample {
  RFPatch z;
  BModePatch target;  // MVDR
  BModePatch das;     // plain DAS, the Scale reference
  std::size_t frame_id = 0;
};

struct FrameInfo {
  double das_reference = 0.0;
  bool validation = false;
};

struct PatchDataset {
  PixelGrid grid;
  ImagingConfig imaging;
  ApodizationProfile apod;
  std::vector<FrameInfo> frames;
  std::vector<PatchSample> samples;
  std::vector<std::size_t> train, val;  // indices into samples

  std::size_t n_elements() const { return apod.n_elements; }

  std::string hash() const {
    Fnv1a h;
    h.value(static_cast<std::uint64_t>(samples.size()));
    h.value(imaging.mvdr.subaperture);
    h.value(imaging.mvdr.temporal_window);
    h.value(imaging.mvdr.diagonal_loading);
    h.value(imaging.das.f_number);
    h.value(imaging.dynamic_range_db);
    for (const auto& f : frames) {
      h.value(f.das_reference);
      h.value(f.validation);
    }
    for (const auto& s : samples) {
      h.values(std::span<const double>(s.z.data.data));
      h.values(std::span<const double>(s.target.values.data));
      h.values(std::span<const double>(s.das.values.data));
      h.value(static_cast<std::uint64_t>(s.frame_id));
    }
    return h.hex();
  }
};

/// Number of training frames for a split fraction; both splits non-empty.
inline std::size_t train_frame_count(std::size_t n_frames, double fraction) {
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n_frames)));
  return std::clamp<std::size_t>(n, 1, n_frames - 1);
}

/// The first floor(fraction * n) frames train, the rest validate; the split
/// is by frame so no image contributes patches to both sides.
inline PatchDataset build_dataset(const std::vector<RFFrame>& frames, const PixelGrid& grid,
                                  const ImagingConfig& imaging, double train_fraction = 0.8) {
  require(frames.size() >= 2, ErrorKind::config, "build_dataset needs at least two frames");
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorKind::config,
          "training.split must lie in (0, 1)");
  PatchDataset ds;
  ds.grid = grid;
  ds.imaging = imaging;
  const std::size_t n_train = train_frame_count(frames.size(), train_fraction);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    require(frames[f].geometry.hash() == frames.front().geometry.hash(), ErrorKind::config,
            "all frames in a dataset must share one array geometry");
    ImageContext ctx = prepare_image(frames[f], grid, imaging);
    const BModeImage target = mvdr_image(ctx.delayed, imaging);
    if (f == 0) ds.apod = ctx.apod;
    FrameInfo info{ctx.das_reference, f >= n_train};
    ds.frames.push_back(info);
    for (auto& z : ctx.patches) {
      PatchSample s;
      s.frame_id = f;
      s.das = das_patch(ctx, z);
      s.target = {crop(target.values, z.origin_iz, z.origin_ix, z.side(), z.data.cols), z.origin_iz,
                  z.origin_ix};
      s.z = std::move(z);
      (info.validation ? ds.val : ds.train).push_back(ds.samples.size());
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

/// Uniform draws with replacement from the training split.
inline std::vector<std::size_t> sample_batch(const PatchDataset& ds, std::size_t batch, Rng& rng) {
  require(!ds.train.empty(), ErrorKind::config, "sample_batch: empty training split");
  std::vector<std::size_t> out(batch);
  for (auto& i : out) i = ds.train[rng.below(ds.train.size())];
  return out;
}

struct AdamState {
  std::uint64_t step = 0;
  std::vector<double> m, v;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

template <typename T>
void adam_step(std::span<T> params, std::span<const double> grads, AdamState& st) {
  require(params.size() == grads.size() && st.m.size() == params.size() &&
              st.v.size() == params.size(),
          ErrorKind::shape, "adam_step: dimension mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      std::ostringstream msg;
      msg << "non-finite gradient at parameter " << i << " (step " << st.step + 1 << ")";
      fail(ErrorKind::numerical, msg.str());
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    const double update = st.lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + st.epsilon);
    params[i] = static_cast<T>(static_cast<double>(params[i]) - update);
  }
}

struct TrainConfig {
  std::size_t steps = 14000;
  std::size_t batch = 64;
  LossWeights weights{0.9, 0.1};
  std::uint64_t seed = 0;
  std::size_t validate_every = 100;
  std::size_t depth_levels = 3;
  std::size_t base_channels = 0;  // 0 = n_elements
  std::size_t channel_cap = 128;
  double learning_rate = 1e-3;
  unsigned threads = 1;

  nn::UNetArchitecture architecture(std::size_t n_elements) const {
    nn::UNetArchitecture a;
    a.n_elements = n_elements;
    a.depth_levels = depth_levels;
    a.base_channels = base_channels ? base_channels : n_elements;
    a.channel_cap = std::max(channel_cap, a.base_channels);
    return a;
  }
};

struct CurvePoint {
  std::size_t step = 0;
  double train_loss = 0.0, val_loss = 0.0, val_mae = 0.0, val_ssim = 0.0;
};

struct EvalResult {
  double loss = 0.0, mae = 0.0, ssim = 0.0;
};

/// Mean loss terms of `predict(sample) -> Matrix` over the given samples.
template <typename Predict>
EvalResult evaluate_with(const PatchDataset& ds, const std::vector<std::size_t>& indices,
                         const LossWeights& w, Predict&& predict, unsigned threads = 1) {
  std::vector<LossTerms> terms(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t i) {
    const auto& s = ds.samples[indices[i]];
    terms[i] = hybrid_loss(predict(s), s.target.values, w);
  });
  EvalResult r;
  for (const auto& t : terms) {
    r.loss += t.loss;
    r.mae += t.mae;
    r.ssim += t.ssim;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, indices.size()));
  r.loss /= n;
  r.mae /= n;
  r.ssim /= n;
  return r;
}

template <typename T>
Matrix predict_patch(const PatchDataset& ds, const nn::UNetParams<T>& params, const PatchSample& s) {
  const FrameInfo& f = ds.frames[s.frame_id];
  return infer_patch(NetworkTransform<T>{params}, s.z, ds.apod, s.das,
                     f.das_reference, ds.imaging.dynamic_range_db)
      .values;
}

template <typename T>
EvalResult evaluate(const PatchDataset& ds, const nn::UNetParams<T>& params,
                    const std::vector<std::size_t>& indices, const LossWeights& w,
                    unsigned threads = 1) {
  return evaluate_with(
      ds, indices, w, [&](const PatchSample& s) { return predict_patch(ds, params, s); }, threads);
}

/// Plain DAS patches scored against the MVDR targets.
inline EvalResult evaluate_das(const PatchDataset& ds, const std::vector<std::size_t>& indices,
                               const LossWeights& w) {
  return evaluate_with(ds, indices, w, [](const PatchSample& s) { return s.das.values; });
}

/// A network that outputs zeros: Scale collapses to the DAS mid-range.
inline EvalResult evaluate_zero_network(const PatchDataset& ds,
                                        const std::vector<std::size_t>& indices,
                                        const LossWeights& w) {
  return evaluate_with(ds, indices, w, [](const PatchSample& s) {
    return scale(Matrix(s.das.values.rows, s.das.values.cols), s.das.values);
  });
}

/// Loss and parameter gradient (accumulated into grad) for one sample.
template <typename T>
LossTerms sample_gradient(const PatchDataset& ds, const nn::UNetParams<T>& params,
                          const PatchSample& s, const LossWeights& w, std::span<T> grad) {
  const FrameInfo& f = ds.frames[s.frame_id];
  const double in_scale = patch_scale(s.z.data);
  nn::UNetTape<T> tape;
  const auto out = nn::unet_forward(params, to_network_input<T>(s.z.data, in_scale), &tape);
  PatchChain chain{&ds.apod, f.das_reference, ds.imaging.dynamic_range_db, s.z.origin_iz,
                   s.z.origin_ix, {}, {}, {}};
  const Matrix pred = chain.forward(from_network_output(out, in_scale), s.das.values);
  Matrix g_pred;
  const LossTerms terms = hybrid_loss(pred, s.target.values, w, {}, &g_pred);
  const Cube g_z = chain.backward(s.das.values, g_pred);
  nn::Tensor4<T> g_out(1, g_z.planes, g_z.rows, g_z.cols);
  for (std::size_t i = 0; i < g_z.data.size(); ++i)
    g_out.values[i] = static_cast<T>(g_z.data[i] * in_scale);
  nn::unet_backward(params, tape, g_out, grad);
  return terms;
}

template <typename T>
struct TrainResult {
  nn::UNetParams<T> final_params;
  nn::UNetParams<T> best_params;
  std::size_t best_step = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<CurvePoint> curve;
};

/// Thrown when a step produces a non-finite loss; carries the best
/// checkpoint seen so far.
template <typename T>
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, nn::UNetParams<T> last_good, std::size_t step)
      : Error(ErrorKind::numerical, what), last_good(std::move(last_good)), last_good_step(step) {}
  nn::UNetParams<T> last_good;
  std::size_t last_good_step;
};

/// Per step: draw a batch, run z -> Phi -> DAS -> envelope -> log -> Scale,
/// average the hybrid loss, backpropagate and apply Adam. Gradients of the
/// batch are reduced in sample order, so results do not depend on the
/// thread count.
template <typename T = float>
TrainResult<T> train(const PatchDataset& ds, const TrainConfig& cfg) {
  cfg.weights.validate();
  require(cfg.batch >= 1 && cfg.validate_every >= 1, ErrorKind::config,
          "training.batch and validate_every must be positive");
  TrainResult<T> result;
  result.final_params = nn::init_unet<T>(cfg.architecture(ds.n_elements()), cfg.seed);
  result.best_params = result.final_params;
  if (cfg.steps == 0) return result;

  auto& params = result.final_params;
  const std::size_t n_params = params.values.size();
  AdamState adam(n_params);
  adam.lr = cfg.learning_rate;
  Rng rng(cfg.seed ^ 0x5eed5a3b1e5ULL);

  auto record = [&](std::size_t step) {
    const EvalResult tr = evaluate(ds, params, ds.train, cfg.weights, cfg.threads);
    const EvalResult va = evaluate(ds, params, ds.val, cfg.weights, cfg.threads);
    result.curve.push_back({step, tr.loss, va.loss, va.mae, va.ssim});
    if (!std::isfinite(tr.loss) || !std::isfinite(va.loss)) {
      throw TrainingAborted<T>("non-finite loss at step " + std::to_string(step),
                               result.best_params, result.best_step);
    }
    if (va.loss < result.best_val_loss) {
      result.best_val_loss = va.loss;
      result.best_step = step;
      result.best_params = params;
    }
  };

  record(0);
  constexpr std::size_t kWave = 8;
  std::vector<std::vector<T>> slot(std::min(kWave, cfg.batch), std::vector<T>(n_params));
  std::vector<LossTerms> slot_terms(slot.size());
  std::vector<double> grad(n_params);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto batch = sample_batch(ds, cfg.batch, rng);
    std::fill(grad.begin(), grad.end(), 0.0);
    double batch_loss = 0.0;
    for (std::size_t start = 0; start < batch.size(); start += slot.size()) {
      const std::size_t count = std::min(slot.size(), batch.size() - start);
      parallel_for(count, cfg.threads, [&](std::size_t k) {
        std::fill(slot[k].begin(), slot[k].end(), T(0));
        slot_terms[k] = sample_gradient(ds, params, ds.samples[batch[start + k]], cfg.weights,
                                        std::span<T>(slot[k]));
      });
      for (std::size_t k = 0; k < count; ++k) {
        batch_loss += slot_terms[k].loss;
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += static_cast<double>(slot[k][i]);
      }
    }
    if (!std::isfinite(batch_loss)) {
      throw TrainingAborted<T>("non-finite loss at step " + std::to_string(step),
                               result.best_params, result.best_step);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& g : grad) g *= inv;
    adam_step(std::span<T>(params.values), std::span<const double>(grad), adam);
    if (step % cfg.validate_every == 0 || step == cfg.steps) record(step);
  }
  return result;
}

}  // namespace patchbf
