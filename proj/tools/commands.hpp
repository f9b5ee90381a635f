// SPDX-License-Identifier: Apache-2.0
#pragma once

// The workflows behind the patchbf command line. Every command reads a
// RunConfig, writes its artifacts under the run directory and records the
// hashes of what it read and wrote in <run_dir>/manifest.json.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "patchbf/config.hpp"
#include "patchbf/evalbench.hpp"
#include "patchbf/io.hpp"
#include "patchbf/training.hpp"

namespace patchbf::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

/// Shape errors come from inputs that disagree with the configuration, so
/// they share the config exit code.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::numerical: return kExitNumerical;
    case ErrorKind::io: return kExitIo;
    case ErrorKind::config:
    case ErrorKind::shape: break;
  }
  return kExitConfig;
}

inline const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::io: return "io";
    case ErrorKind::shape: return "shape";
  }
  return "unknown";
}

struct Run {
  RunConfig config;
  fs::path dir;
  unsigned threads = 1;

  fs::path frames_dir() const { return dir / "frames"; }
  fs::path images_dir() const { return dir / "images"; }
  fs::path phantom_frame() const { return frames_dir() / "phantom.json"; }
  fs::path dataset_frame(std::size_t i) const {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.json", i);
    return frames_dir() / name;
  }
  fs::path image(const std::string& stem, const std::string& method) const {
    return images_dir() / (stem + "_" + method + ".json");
  }
};

/// Loads `config_path` when given, else the named preset, then validates.
inline Run open_run(const std::string& preset_name, const std::string& config_path,
                    const std::string& out_dir, unsigned threads) {
  Run run;
  run.config = config_path.empty() ? preset(preset_name) : parse_config(io::read_text(config_path));
  run.config.validate();
  run.dir = out_dir.empty() ? fs::path(run.config.run_dir()) : fs::path(out_dir);
  run.threads = std::max(1u, threads);
  return run;
}

// Manifest ------------------------------------------------------------------

class Manifest {
 public:
  Manifest(const Run& run, std::string command) : run_(run), command_(std::move(command)) {
    entry_["config_hash"] = config_hash(run.config);
  }

  static std::string config_hash(const RunConfig& c) {
    Fnv1a h;
    h.text(serialize_config(c));
    return h.hex();
  }

  void input(const fs::path& p) { entry_["inputs"][relative(p)] = io::file_hash(p); }
  void output(const fs::path& p) { entry_["outputs"][relative(p)] = io::file_hash(p); }
  void container(const fs::path& header) {
    output(header);
    output(io::payload_path(header));
  }
  void input_container(const fs::path& header) {
    input(header);
    input(io::payload_path(header));
  }
  json& parameters() { return entry_["parameters"]; }

  /// Merges this command's entry into the run manifest; other commands'
  /// entries are kept.
  void write() const {
    const fs::path path = run_.dir / "manifest.json";
    json m = json::object();
    if (fs::exists(path)) {
      try {
        m = json::parse(io::read_text(path));
      } catch (const json::exception&) {
        m = json::object();
      }
    }
    m["run"] = run_.config.name;
    m["config"] = to_json(run_.config);
    m["commands"][command_] = entry_;
    io::write_text(path, m.dump(2) + "\n");
  }

 private:
  std::string relative(const fs::path& p) const {
    const fs::path rel = fs::weakly_canonical(p).lexically_relative(fs::weakly_canonical(run_.dir));
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return fs::weakly_canonical(p).generic_string();
  }

  const Run& run_;
  std::string command_;
  json entry_ = json::object();
};

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline void save_image_files(const fs::path& header, const BModeImage& im, Manifest& m) {
  io::save_image(header, im);
  fs::path pgm = header;
  pgm.replace_extension(".pgm");
  io::write_pgm(pgm, im.values);
  m.container(header);
  m.output(pgm);
}

// simulate ------------------------------------------------------------------

struct SimulateOptions {
  bool dataset = true;
  bool phantom = true;
};

/// Writes the evaluation phantom frame and the training frames. Frames
/// depend only on the configuration, so reruns reproduce identical bytes.
inline std::vector<fs::path> cmd_simulate(const Run& run, const SimulateOptions& opt = {}) {
  Manifest m(run, "simulate");
  std::vector<fs::path> written;
  if (opt.phantom) {
    io::save_rf_frame(run.phantom_frame(), simulate_frame(run.config, run.config.phantom, run.threads));
    m.container(run.phantom_frame());
    written.push_back(run.phantom_frame());
  }
  if (opt.dataset) {
    for (std::size_t i = 0; i < run.config.dataset.n_frames; ++i) {
      const fs::path p = run.dataset_frame(i);
      io::save_rf_frame(p, simulate_frame(run.config, dataset_phantom(run.config, i), run.threads));
      m.container(p);
      written.push_back(p);
    }
  }
  m.parameters()["n_frames"] = opt.dataset ? run.config.dataset.n_frames : 0;
  m.parameters()["phantom"] = opt.phantom;
  m.write();
  return written;
}

inline void ensure_phantom_frame(const Run& run) {
  if (!fs::exists(run.phantom_frame())) cmd_simulate(run, {false, true});
}

inline void ensure_dataset_frames(const Run& run) {
  for (std::size_t i = 0; i < run.config.dataset.n_frames; ++i)
    if (!fs::exists(run.dataset_frame(i))) {
      cmd_simulate(run, {true, false});
      return;
    }
}

inline std::string frame_stem(const fs::path& p) { return p.stem().string(); }

// beamform ------------------------------------------------------------------

/// DAS and/or MVDR images of each frame (default: the phantom frame) as
/// float containers plus PGM previews, and a per-image summary CSV.
inline std::vector<fs::path> cmd_beamform(const Run& run, std::vector<fs::path> frames,
                                          const std::string& method) {
  require(method == "das" || method == "mvdr" || method == "both", ErrorKind::config,
          "unknown method '" + method + "' (expected das, mvdr or both)");
  if (frames.empty()) {
    ensure_phantom_frame(run);
    frames.push_back(run.phantom_frame());
  }
  Manifest m(run, "beamform");
  const ImagingConfig cfg = run.config.imaging(run.threads);
  const PixelGrid grid = run.config.pixel_grid();
  std::vector<fs::path> written;
  std::string csv = "frame,method,mean_value,max_constraint_error\n";
  for (const auto& f : frames) {
    const RFFrame frame = io::load_rf_frame(f);
    m.input_container(f);
    const ImageContext ctx = prepare_image(frame, grid, cfg);
    auto emit = [&](const BModeImage& im, const std::string& extra) {
      const fs::path out = run.image(frame_stem(f), im.method);
      save_image_files(out, im, m);
      written.push_back(out);
      double mean = 0.0;
      for (double v : im.values.data) mean += v;
      mean /= static_cast<double>(std::max<std::size_t>(1, im.values.size()));
      csv += frame_stem(f) + "," + im.method + "," + format_number(mean) + "," + extra + "\n";
    };
    if (method != "mvdr") emit(das_image(ctx), "");
    if (method != "das") {
      MvdrDiagnostics diag;
      const BModeImage im = mvdr_image(ctx.delayed, cfg, &diag);
      emit(im, format_number(diag.max_constraint_error));
    }
  }
  io::write_text(run.dir / "beamform.csv", csv);
  m.output(run.dir / "beamform.csv");
  m.parameters()["method"] = method;
  m.write();
  return written;
}

// train ---------------------------------------------------------------------

struct TrainOutputs {
  fs::path best_checkpoint, final_checkpoint, loss_csv;
  double best_val_loss = 0.0, zero_val_loss = 0.0, das_val_ssim = 0.0, best_val_ssim = 0.0;
  std::size_t best_step = 0;
};

inline std::string loss_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "step,train_loss,val_loss,val_mae,val_ssim\n";
  for (const auto& p : curve)
    out += std::to_string(p.step) + "," + format_number(p.train_loss) + "," +
           format_number(p.val_loss) + "," + format_number(p.val_mae) + "," +
           format_number(p.val_ssim) + "\n";
  return out;
}

/// Trains on the dataset frames (simulating any that are missing) and writes
/// the best and final checkpoints, the loss curve and a summary with the
/// DAS and zero-network baselines on the validation split.
inline TrainOutputs cmd_train(const Run& run) {
  require(run.config.training.seed.has_value(), ErrorKind::config,
          "training.seed is required for train");
  ensure_dataset_frames(run);
  Manifest m(run, "train");
  std::vector<RFFrame> frames;
  for (std::size_t i = 0; i < run.config.dataset.n_frames; ++i) {
    frames.push_back(io::load_rf_frame(run.dataset_frame(i)));
    m.input_container(run.dataset_frame(i));
  }
  const PatchDataset ds = build_dataset(frames, run.config.pixel_grid(), run.config.imaging(run.threads),
                                        run.config.training.split);
  const TrainConfig tc = run.config.train_config(run.threads);
  TrainResult<float> result;
  try {
    result = train<float>(ds, tc);
  } catch (const TrainingAborted<float>& e) {
    io::save_checkpoint(run.dir / "checkpoints" / "last_good.json", e.last_good,
                        {tc.seed, e.last_good_step});
    throw;
  }

  TrainOutputs out;
  out.best_checkpoint = run.dir / "checkpoints" / "best.json";
  out.final_checkpoint = run.dir / "checkpoints" / "final.json";
  out.loss_csv = run.dir / "loss.csv";
  io::save_checkpoint(out.best_checkpoint, result.best_params, {tc.seed, result.best_step});
  io::save_checkpoint(out.final_checkpoint, result.final_params, {tc.seed, tc.steps});
  io::write_text(out.loss_csv, loss_csv(result.curve));

  const EvalResult zero = evaluate_zero_network(ds, ds.val, tc.weights);
  const EvalResult das = evaluate_das(ds, ds.val, tc.weights);
  const EvalResult best = evaluate(ds, result.best_params, ds.val, tc.weights, run.threads);
  out.best_val_loss = result.best_val_loss;
  out.best_step = result.best_step;
  out.zero_val_loss = zero.loss;
  out.das_val_ssim = das.ssim;
  out.best_val_ssim = best.ssim;
  const json summary = {{"best_step", result.best_step},
                        {"best_val_loss", result.best_val_loss},
                        {"best_val_ssim", best.ssim},
                        {"zero_network_val_loss", zero.loss},
                        {"das_val_loss", das.loss},
                        {"das_val_ssim", das.ssim},
                        {"train_patches", ds.train.size()},
                        {"val_patches", ds.val.size()},
                        {"dataset_hash", ds.hash()}};
  io::write_text(run.dir / "train_summary.json", summary.dump(2) + "\n");

  m.container(out.best_checkpoint);
  m.container(out.final_checkpoint);
  m.output(out.loss_csv);
  m.output(run.dir / "train_summary.json");
  m.parameters()["seed"] = tc.seed;
  m.parameters()["steps"] = tc.steps;
  m.write();
  return out;
}

// infer ---------------------------------------------------------------------

/// Learned images of each frame. With no checkpoint the network stage is
/// the identity and the result equals the DAS image.
inline std::vector<fs::path> cmd_infer(const Run& run, const std::optional<fs::path>& checkpoint,
                                       std::vector<fs::path> frames) {
  if (frames.empty()) {
    ensure_phantom_frame(run);
    frames.push_back(run.phantom_frame());
  }
  Manifest m(run, "infer");
  std::optional<nn::UNetParams<float>> params;
  if (checkpoint) {
    params = io::load_checkpoint<float>(*checkpoint);
    m.input_container(*checkpoint);
    require(params->arch.n_elements == run.config.array.n_elements, ErrorKind::config,
            "checkpoint element count does not match array.n_elements");
  }
  const ImagingConfig cfg = run.config.imaging(run.threads);
  std::vector<fs::path> written;
  for (const auto& f : frames) {
    const RFFrame frame = io::load_rf_frame(f);
    m.input_container(f);
    const ImageContext ctx = prepare_image(frame, run.config.pixel_grid(), cfg);
    const BModeImage im = params ? infer_image(ctx, NetworkTransform<float>{*params}, run.threads)
                                 : infer_image(ctx, Bypass{}, run.threads);
    const fs::path out = run.image(frame_stem(f), "learned");
    save_image_files(out, im, m);
    written.push_back(out);
  }
  m.parameters()["identity"] = !checkpoint.has_value();
  m.write();
  return written;
}

// eval ----------------------------------------------------------------------

struct EvalInputs {
  std::optional<fs::path> learned, mvdr, das;
};

inline std::string table_csv(const MetricsReport& r) {
  std::string out = "depth_mm,learned_cr_db,mvdr_cr_db,das_cr_db\n";
  for (const auto& roi : r.rois)
    out += format_number(roi.depth * 1e3) + "," + format_number(roi.cr_learned) + "," +
           format_number(roi.cr_mvdr) + "," + format_number(roi.cr_das) + "\n";
  return out;
}

inline std::string table_text(const MetricsReport& r) {
  std::ostringstream s;
  char line[128];
  std::snprintf(line, sizeof(line), "%-12s %12s %12s %12s\n", "Depth (mm)", "Learned", "MVDR", "DAS");
  s << "Contrast ratio (dB)\n" << line;
  for (const auto& roi : r.rois) {
    std::snprintf(line, sizeof(line), "%-12.2f %12.3f %12.3f %12.3f\n", roi.depth * 1e3,
                  roi.cr_learned, roi.cr_mvdr, roi.cr_das);
    s << line;
  }
  if (!r.points.empty()) {
    s << "\nLateral FWHM (mm)\n";
    for (const auto& p : r.points) {
      std::snprintf(line, sizeof(line), "(%.2f, %.2f)  %12.3f %12.3f %12.3f\n", p.x * 1e3, p.z * 1e3,
                    p.fwhm_learned * 1e3, p.fwhm_mvdr * 1e3, p.fwhm_das * 1e3);
      s << line;
    }
  }
  std::snprintf(line, sizeof(line), "\nSSIM vs MVDR: learned %.4f, DAS %.4f\n", r.ssim_learned_vs_mvdr,
                r.ssim_das_vs_mvdr);
  s << line;
  std::snprintf(line, sizeof(line), "MAE vs MVDR:  learned %.4f, DAS %.4f\n", r.mae_learned_vs_mvdr,
                r.mae_das_vs_mvdr);
  s << line;
  return s.str();
}

/// Contrast per configured ROI, FWHM per point target and similarity to the
/// MVDR image. Paths not given default to the phantom images in the run
/// directory; a missing default leaves that method's columns NaN.
inline MetricsReport cmd_eval(const Run& run, const EvalInputs& in) {
  Manifest m(run, "eval");
  auto load = [&](const std::optional<fs::path>& given, const std::string& method)
      -> std::optional<BModeImage> {
    const fs::path p = given ? *given : run.image("phantom", method);
    if (!given && !fs::exists(p)) return std::nullopt;
    BModeImage im = io::load_image(p);
    m.input_container(p);
    const PixelGrid g = run.config.pixel_grid();
    require(im.grid.n_x == g.n_x && im.grid.n_z == g.n_z, ErrorKind::config,
            p.string() + " does not match the configured grid");
    return im;
  };
  const auto learned = load(in.learned, "learned");
  const auto mvdr = load(in.mvdr, "mvdr");
  const auto das = load(in.das, "das");
  auto ptr = [](const std::optional<BModeImage>& o) { return o ? &*o : nullptr; };
  const MetricsReport r = make_report(ptr(learned), ptr(mvdr), ptr(das), run.config.eval.rois,
                                      run.config.eval.point_targets,
                                      run.config.eval.disjoint_annulus);

  std::string points = "x_mm,z_mm,learned_fwhm_mm,mvdr_fwhm_mm,das_fwhm_mm\n";
  for (const auto& p : r.points)
    points += format_number(p.x * 1e3) + "," + format_number(p.z * 1e3) + "," +
              format_number(p.fwhm_learned * 1e3) + "," + format_number(p.fwhm_mvdr * 1e3) + "," +
              format_number(p.fwhm_das * 1e3) + "\n";
  const std::string similarity = "method,ssim_vs_mvdr,mae_vs_mvdr\nlearned," +
                                 format_number(r.ssim_learned_vs_mvdr) + "," +
                                 format_number(r.mae_learned_vs_mvdr) + "\ndas," +
                                 format_number(r.ssim_das_vs_mvdr) + "," +
                                 format_number(r.mae_das_vs_mvdr) + "\n";
  for (const auto& [name, text] : {std::pair<std::string, std::string>{"metrics.csv", table_csv(r)},
                                   {"metrics_points.csv", points},
                                   {"metrics_similarity.csv", similarity},
                                   {"metrics.txt", table_text(r)}}) {
    io::write_text(run.dir / name, text);
    m.output(run.dir / name);
  }
  m.parameters()["disjoint_annulus"] = run.config.eval.disjoint_annulus;
  m.write();
  return r;
}

// bench ---------------------------------------------------------------------

struct BenchOptions {
  bool parallel = false;  // per-patch threads for all three methods
  std::optional<fs::path> checkpoint;
};

/// Times DAS, MVDR and the learned pipeline on the phantom frame. Without a
/// checkpoint the network uses its seeded initialisation; its cost does not
/// depend on the weights.
inline std::vector<BenchResult> cmd_bench(const Run& run, const BenchOptions& opt) {
  ensure_phantom_frame(run);
  Manifest m(run, "bench");
  const RFFrame frame = io::load_rf_frame(run.phantom_frame());
  m.input_container(run.phantom_frame());
  const unsigned threads = opt.parallel ? run.threads : 1u;
  const ImagingConfig cfg = run.config.imaging(threads);
  nn::UNetParams<float> params;
  if (opt.checkpoint) {
    params = io::load_checkpoint<float>(*opt.checkpoint);
    m.input_container(*opt.checkpoint);
  } else {
    params = nn::init_unet<float>(run.config.architecture(), run.config.training.seed.value_or(0));
  }
  std::vector<BenchResult> results;
  std::string csv =
      "method,threads,repetitions,median_ms,min_ms,delay_ms,beamform_ms,envelope_ms,n_patches\n";
  for (Method method : {Method::das, Method::mvdr, Method::learned}) {
    const BenchResult r = benchmark<float>(method, frame, run.config.pixel_grid(), cfg,
                                           run.config.bench.repetitions, &params,
                                           run.config.bench.warmup);
    csv += to_string(method) + "," + std::to_string(threads) + "," + std::to_string(r.repetitions) +
           "," + format_number(r.median_ms) + "," + format_number(r.min_ms) + "," +
           format_number(r.median_stage.delay_ms) + "," + format_number(r.median_stage.beamform_ms) +
           "," + format_number(r.median_stage.envelope_ms) + "," + std::to_string(r.n_patches) + "\n";
    results.push_back(r);
  }
  io::write_text(run.dir / "bench.csv", csv);
  m.output(run.dir / "bench.csv");
  m.parameters()["threads"] = threads;
  m.parameters()["repetitions"] = run.config.bench.repetitions;
  m.write();
  return results;
}

}  // namespace patchbf::cli
