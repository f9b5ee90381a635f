// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: one JSON document with array, grid, transmit, phantom,
// dataset, das, mvdr, imaging, network, training, eval, bench and paths
// sections.
// All lengths are in meters. Unknown keys are rejected so typos surface as
// configuration errors naming the offending field.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchbf/das.hpp"
#include "patchbf/domain.hpp"
#include "patchbf/evalbench.hpp"
#include "patchbf/mvdr.hpp"
#include "patchbf/pipeline.hpp"
#include "patchbf/rng.hpp"
#include "patchbf/simulator.hpp"
#include "patchbf/training.hpp"

namespace patchbf {

using json = nlohmann::json;

struct ArrayConfig {
  std::size_t n_elements = 64;
  double pitch = 3e-4;
  double center_frequency = 5e6;
  double sampling_frequency = 2e7;
  double sound_speed = 1540.0;
  double fractional_bandwidth = 0.6;
};

struct GridConfig {
  double x_min = -9.45e-3, x_max = 9.45e-3;
  double z_min = 27e-3, z_max = 33.35e-3;
  std::size_t n_x = 64, n_z = 128;
  std::size_t patch_side = 32;
};

/// Random phantoms for training frames: per frame, a number of cysts and
/// bright point targets are scattered over the field of view on top of
/// speckle at the phantom's background density.
struct DatasetConfig {
  std::size_t n_frames = 84;
  std::uint64_t seed = 1;
  std::size_t cysts_min = 1, cysts_max = 3;
  double radius_min = 1.5e-3, radius_max = 3e-3;
  std::size_t point_targets = 2;
  double point_amplitude = 8.0;
};

struct NetworkConfig {
  std::size_t depth_levels = 3;
  std::size_t base_channels = 0;  // 0 = n_elements
  std::size_t channel_cap = 128;
  double leaky_slope = 0.1;
};

struct TrainingSection {
  std::size_t steps = 14000;
  std::size_t batch = 64;
  double alpha = 0.9;
  double beta = 0.1;
  std::optional<std::uint64_t> seed;
  double split = 0.8;
  std::size_t validate_every = 100;
  double learning_rate = 1e-3;
};

struct EvalSection {
  std::vector<CystROI> rois;
  std::vector<std::pair<double, double>> point_targets;
  bool disjoint_annulus = false;
};

struct BenchSection {
  std::size_t repetitions = 5;
  std::size_t warmup = 1;
};

struct PathsSection {
  std::string run_dir;  // empty = runs/<name>
};

struct RunConfig {
  std::string name = "default";
  ArrayConfig array;
  GridConfig grid;
  double steering_angle = 0.0;
  PhantomSpec phantom;
  DatasetConfig dataset;
  DasConfig das;
  std::size_t mvdr_subaperture = 0;  // 0 = n_elements / 2
  std::size_t mvdr_temporal_window = 9;
  double mvdr_diagonal_loading = -1.0;  // < 0 = 1 / (100 L)
  double dynamic_range_db = kDefaultDynamicRangeDb;
  NetworkConfig network;
  TrainingSection training;
  EvalSection eval;
  BenchSection bench;
  PathsSection paths;

  std::string run_dir() const { return paths.run_dir.empty() ? "runs/" + name : paths.run_dir; }

  ArrayGeometry geometry() const {
    return make_linear_array(array.n_elements, array.pitch, array.center_frequency,
                             array.sampling_frequency, array.sound_speed);
  }
  PixelGrid pixel_grid() const {
    return make_pixel_grid(grid.x_min, grid.x_max, grid.z_min, grid.z_max, grid.n_x, grid.n_z,
                           grid.patch_side);
  }
  PlaneWaveTx transmit() const { return PlaneWaveTx::make(steering_angle); }

  MvdrConfig mvdr() const {
    MvdrConfig m = MvdrConfig::defaults_for(array.n_elements);
    if (mvdr_subaperture) m.subaperture = mvdr_subaperture;
    m.temporal_window = mvdr_temporal_window;
    m.diagonal_loading = mvdr_diagonal_loading >= 0.0
                             ? mvdr_diagonal_loading
                             : 1.0 / (100.0 * static_cast<double>(m.subaperture));
    return m;
  }

  ImagingConfig imaging(unsigned threads = 1) const {
    return {das, mvdr(), dynamic_range_db, threads};
  }

  SimulationOptions simulation(unsigned threads = 1) const {
    return {array.fractional_bandwidth, 0.0, threads};
  }

  TrainConfig train_config(unsigned threads = 1) const {
    TrainConfig t;
    t.steps = training.steps;
    t.batch = training.batch;
    t.weights = {training.alpha, training.beta};
    t.seed = training.seed.value_or(0);
    t.validate_every = training.validate_every;
    t.depth_levels = network.depth_levels;
    t.base_channels = network.base_channels;
    t.channel_cap = network.channel_cap;
    t.learning_rate = training.learning_rate;
    t.threads = threads;
    return t;
  }

  nn::UNetArchitecture architecture() const {
    auto a = train_config().architecture(array.n_elements);
    a.leaky_slope = network.leaky_slope;
    return a;
  }

  /// Throws ErrorKind::config with the section name prefixed.
  void validate() const {
    auto section = [](const char* name, auto&& fn) {
      try {
        fn();
      } catch (const Error& e) {
        fail(ErrorKind::config, std::string(name) + ": " + e.what());
      }
    };
    section("array", [&] {
      geometry();
      require(array.fractional_bandwidth > 0.0 && array.fractional_bandwidth < 2.0,
              ErrorKind::config, "fractional_bandwidth must lie in (0, 2)");
    });
    section("grid", [&] { pixel_grid(); });
    section("transmit", [&] { transmit(); });
    section("phantom", [&] { validate_phantom(phantom, pixel_grid()); });
    section("dataset", [&] {
      require(dataset.n_frames >= 1, ErrorKind::config, "n_frames must be at least 1");
      require(dataset.cysts_min <= dataset.cysts_max, ErrorKind::config,
              "cysts_min must not exceed cysts_max");
      require(dataset.radius_min > 0.0 && dataset.radius_min <= dataset.radius_max,
              ErrorKind::config, "need 0 < radius_min <= radius_max");
    });
    section("das", [&] {
      require(das.f_number > 0.0, ErrorKind::config, "f_number must be positive");
    });
    section("mvdr", [&] { mvdr().validate(array.n_elements); });
    section("imaging", [&] {
      require(dynamic_range_db > 0.0, ErrorKind::config, "dynamic_range_db must be positive");
    });
    section("network", [&] {
      architecture().validate();
      const std::size_t scale = std::size_t{1} << (network.depth_levels - 1);
      require(grid.patch_side % scale == 0, ErrorKind::config,
              "grid.patch_side must be divisible by 2^(depth_levels-1)");
    });
    section("training", [&] {
      LossWeights{training.alpha, training.beta}.validate();
      require(training.batch >= 1, ErrorKind::config, "batch must be positive");
      require(training.split > 0.0 && training.split < 1.0, ErrorKind::config,
              "split must lie in (0, 1)");
      require(training.validate_every >= 1, ErrorKind::config, "validate_every must be positive");
      require(training.learning_rate > 0.0, ErrorKind::config, "learning_rate must be positive");
    });
    section("eval", [&] {
      const auto g = pixel_grid();
      for (const auto& r : eval.rois) r.validate(g);
      for (const auto& [x, z] : eval.point_targets)
        require(g.contains(x, z), ErrorKind::config, "point target outside the grid");
    });
    section("bench", [&] {
      require(bench.repetitions >= 1 && bench.warmup >= 1, ErrorKind::config,
              "repetitions and warmup must be at least 1");
    });
  }
};

namespace detail {

inline void check_keys(const json& j, const char* section, std::initializer_list<const char*> keys) {
  require(j.is_object(), ErrorKind::config, std::string(section) + " must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    require(allowed.count(k) > 0, ErrorKind::config,
            std::string("unknown field ") + section + "." + k);
}

template <typename V>
void read(const json& j, const char* section, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, std::string(section) + "." + key + " has the wrong type");
  }
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
  json scatterers = json::array(), cysts = json::array(), rois = json::array(),
       points = json::array();
  for (const auto& s : c.phantom.scatterers)
    scatterers.push_back({{"x", s.x}, {"z", s.z}, {"amplitude", s.amplitude}});
  for (const auto& cy : c.phantom.cysts)
    cysts.push_back({{"center_x", cy.center_x},
                     {"center_z", cy.center_z},
                     {"radius", cy.radius},
                     {"echogenicity", cy.echogenicity}});
  for (const auto& r : c.eval.rois)
    rois.push_back({{"center_x", r.center_x},
                    {"center_z", r.center_z},
                    {"inner_radius", r.inner_radius},
                    {"outer_radius", r.outer_radius}});
  for (const auto& [x, z] : c.eval.point_targets) points.push_back({{"x", x}, {"z", z}});
  return {
      {"name", c.name},
      {"array",
       {{"n_elements", c.array.n_elements},
        {"pitch", c.array.pitch},
        {"center_frequency", c.array.center_frequency},
        {"sampling_frequency", c.array.sampling_frequency},
        {"sound_speed", c.array.sound_speed},
        {"fractional_bandwidth", c.array.fractional_bandwidth}}},
      {"grid",
       {{"x_min", c.grid.x_min},
        {"x_max", c.grid.x_max},
        {"z_min", c.grid.z_min},
        {"z_max", c.grid.z_max},
        {"n_x", c.grid.n_x},
        {"n_z", c.grid.n_z},
        {"patch_side", c.grid.patch_side}}},
      {"transmit", {{"steering_angle", c.steering_angle}}},
      {"phantom",
       {{"scatterers", scatterers},
        {"cysts", cysts},
        {"background_scatterer_density", c.phantom.background_scatterer_density},
        {"rng_seed", c.phantom.rng_seed}}},
      {"dataset",
       {{"n_frames", c.dataset.n_frames},
        {"seed", c.dataset.seed},
        {"cysts_min", c.dataset.cysts_min},
        {"cysts_max", c.dataset.cysts_max},
        {"radius_min", c.dataset.radius_min},
        {"radius_max", c.dataset.radius_max},
        {"point_targets", c.dataset.point_targets},
        {"point_amplitude", c.dataset.point_amplitude}}},
      {"das",
       {{"f_number", c.das.f_number},
        {"window", c.das.window == Window::hann ? "hann" : "boxcar"}}},
      {"mvdr",
       {{"subaperture", c.mvdr_subaperture},
        {"temporal_window", c.mvdr_temporal_window},
        {"diagonal_loading", c.mvdr_diagonal_loading}}},
      {"imaging", {{"dynamic_range_db", c.dynamic_range_db}}},
      {"network",
       {{"depth_levels", c.network.depth_levels},
        {"base_channels", c.network.base_channels},
        {"channel_cap", c.network.channel_cap},
        {"leaky_slope", c.network.leaky_slope}}},
      {"training",
       {{"steps", c.training.steps},
        {"batch", c.training.batch},
        {"alpha", c.training.alpha},
        {"beta", c.training.beta},
        {"seed", c.training.seed ? json(*c.training.seed) : json(nullptr)},
        {"split", c.training.split},
        {"validate_every", c.training.validate_every},
        {"learning_rate", c.training.learning_rate}}},
      {"eval",
       {{"rois", rois}, {"point_targets", points}, {"disjoint_annulus", c.eval.disjoint_annulus}}},
      {"bench", {{"repetitions", c.bench.repetitions}, {"warmup", c.bench.warmup}}},
      {"paths", {{"run_dir", c.paths.run_dir}}}};
}

/// Missing sections and fields keep their defaults.
inline RunConfig config_from_json(const json& j) {
  using detail::check_keys;
  using detail::read;
  RunConfig c;
  check_keys(j, "config",
             {"name", "array", "grid", "transmit", "phantom", "dataset", "das", "mvdr", "imaging",
              "network", "training", "eval", "bench", "paths"});
  read(j, "config", "name", c.name);
  if (j.contains("array")) {
    const auto& s = j["array"];
    check_keys(s, "array",
               {"n_elements", "pitch", "center_frequency", "sampling_frequency", "sound_speed",
                "fractional_bandwidth"});
    read(s, "array", "n_elements", c.array.n_elements);
    read(s, "array", "pitch", c.array.pitch);
    read(s, "array", "center_frequency", c.array.center_frequency);
    read(s, "array", "sampling_frequency", c.array.sampling_frequency);
    read(s, "array", "sound_speed", c.array.sound_speed);
    read(s, "array", "fractional_bandwidth", c.array.fractional_bandwidth);
  }
  if (j.contains("grid")) {
    const auto& s = j["grid"];
    check_keys(s, "grid", {"x_min", "x_max", "z_min", "z_max", "n_x", "n_z", "patch_side"});
    read(s, "grid", "x_min", c.grid.x_min);
    read(s, "grid", "x_max", c.grid.x_max);
    read(s, "grid", "z_min", c.grid.z_min);
    read(s, "grid", "z_max", c.grid.z_max);
    read(s, "grid", "n_x", c.grid.n_x);
    read(s, "grid", "n_z", c.grid.n_z);
    read(s, "grid", "patch_side", c.grid.patch_side);
  }
  if (j.contains("transmit")) {
    check_keys(j["transmit"], "transmit", {"steering_angle"});
    read(j["transmit"], "transmit", "steering_angle", c.steering_angle);
  }
  if (j.contains("phantom")) {
    const auto& s = j["phantom"];
    check_keys(s, "phantom", {"scatterers", "cysts", "background_scatterer_density", "rng_seed"});
    read(s, "phantom", "background_scatterer_density", c.phantom.background_scatterer_density);
    read(s, "phantom", "rng_seed", c.phantom.rng_seed);
    for (const auto& e : s.value("scatterers", json::array())) {
      check_keys(e, "phantom.scatterers[]", {"x", "z", "amplitude"});
      c.phantom.scatterers.push_back(
          {e.at("x").get<double>(), e.at("z").get<double>(), e.value("amplitude", 1.0)});
    }
    for (const auto& e : s.value("cysts", json::array())) {
      check_keys(e, "phantom.cysts[]", {"center_x", "center_z", "radius", "echogenicity"});
      c.phantom.cysts.push_back({e.at("center_x").get<double>(), e.at("center_z").get<double>(),
                                 e.at("radius").get<double>(), e.value("echogenicity", 0.0)});
    }
  }
  if (j.contains("dataset")) {
    const auto& s = j["dataset"];
    check_keys(s, "dataset",
               {"n_frames", "seed", "cysts_min", "cysts_max", "radius_min", "radius_max",
                "point_targets", "point_amplitude"});
    read(s, "dataset", "n_frames", c.dataset.n_frames);
    read(s, "dataset", "seed", c.dataset.seed);
    read(s, "dataset", "cysts_min", c.dataset.cysts_min);
    read(s, "dataset", "cysts_max", c.dataset.cysts_max);
    read(s, "dataset", "radius_min", c.dataset.radius_min);
    read(s, "dataset", "radius_max", c.dataset.radius_max);
    read(s, "dataset", "point_targets", c.dataset.point_targets);
    read(s, "dataset", "point_amplitude", c.dataset.point_amplitude);
  }
  if (j.contains("das")) {
    const auto& s = j["das"];
    check_keys(s, "das", {"f_number", "window"});
    read(s, "das", "f_number", c.das.f_number);
    std::string w = c.das.window == Window::hann ? "hann" : "boxcar";
    read(s, "das", "window", w);
    require(w == "hann" || w == "boxcar", ErrorKind::config,
            "das.window must be 'hann' or 'boxcar'");
    c.das.window = w == "hann" ? Window::hann : Window::boxcar;
  }
  if (j.contains("mvdr")) {
    const auto& s = j["mvdr"];
    check_keys(s, "mvdr", {"subaperture", "temporal_window", "diagonal_loading"});
    read(s, "mvdr", "subaperture", c.mvdr_subaperture);
    read(s, "mvdr", "temporal_window", c.mvdr_temporal_window);
    read(s, "mvdr", "diagonal_loading", c.mvdr_diagonal_loading);
  }
  if (j.contains("imaging")) {
    check_keys(j["imaging"], "imaging", {"dynamic_range_db"});
    read(j["imaging"], "imaging", "dynamic_range_db", c.dynamic_range_db);
  }
  if (j.contains("network")) {
    const auto& s = j["network"];
    check_keys(s, "network", {"depth_levels", "base_channels", "channel_cap", "leaky_slope"});
    read(s, "network", "depth_levels", c.network.depth_levels);
    read(s, "network", "base_channels", c.network.base_channels);
    read(s, "network", "channel_cap", c.network.channel_cap);
    read(s, "network", "leaky_slope", c.network.leaky_slope);
  }
  if (j.contains("training")) {
    const auto& s = j["training"];
    check_keys(s, "training",
               {"steps", "batch", "alpha", "beta", "seed", "split", "validate_every",
                "learning_rate"});
    read(s, "training", "steps", c.training.steps);
    read(s, "training", "batch", c.training.batch);
    read(s, "training", "alpha", c.training.alpha);
    read(s, "training", "beta", c.training.beta);
    if (s.contains("seed") && !s["seed"].is_null()) {
      std::uint64_t seed = 0;
      read(s, "training", "seed", seed);
      c.training.seed = seed;
    }
    read(s, "training", "split", c.training.split);
    read(s, "training", "validate_every", c.training.validate_every);
    read(s, "training", "learning_rate", c.training.learning_rate);
  }
  if (j.contains("eval")) {
    const auto& s = j["eval"];
    check_keys(s, "eval", {"rois", "point_targets", "disjoint_annulus"});
    for (const auto& e : s.value("rois", json::array())) {
      check_keys(e, "eval.rois[]", {"center_x", "center_z", "inner_radius", "outer_radius"});
      c.eval.rois.push_back({e.at("center_x").get<double>(), e.at("center_z").get<double>(),
                             e.at("inner_radius").get<double>(), e.at("outer_radius").get<double>()});
    }
    for (const auto& e : s.value("point_targets", json::array())) {
      check_keys(e, "eval.point_targets[]", {"x", "z"});
      c.eval.point_targets.emplace_back(e.at("x").get<double>(), e.at("z").get<double>());
    }
    read(s, "eval", "disjoint_annulus", c.eval.disjoint_annulus);
  }
  if (j.contains("bench")) {
    check_keys(j["bench"], "bench", {"repetitions", "warmup"});
    read(j["bench"], "bench", "repetitions", c.bench.repetitions);
    read(j["bench"], "bench", "warmup", c.bench.warmup);
  }
  if (j.contains("paths")) {
    check_keys(j["paths"], "paths", {"run_dir"});
    read(j["paths"], "paths", "run_dir", c.paths.run_dir);
  }
  return c;
}

inline std::string serialize_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("config: ") + e.what());
  }
}

/// Phantom used for training frame `index`: random cysts and point targets
/// over speckle, everything derived from (dataset.seed, index).
inline PhantomSpec dataset_phantom(const RunConfig& c, std::size_t index) {
  const PixelGrid g = c.pixel_grid();
  Rng rng(c.dataset.seed * 0x9e3779b97f4a7c15ULL + index + 1);
  PhantomSpec p;
  p.background_scatterer_density = c.phantom.background_scatterer_density;
  p.rng_seed = c.dataset.seed * 1000003ULL + 7919ULL * index;
  const std::size_t n_cysts =
      c.dataset.cysts_min + rng.below(c.dataset.cysts_max - c.dataset.cysts_min + 1);
  for (std::size_t i = 0; i < n_cysts; ++i) {
    Cyst cy;
    cy.radius = rng.uniform(c.dataset.radius_min, c.dataset.radius_max);
    cy.radius = std::min({cy.radius, 0.49 * (g.x_max - g.x_min), 0.49 * (g.z_max - g.z_min)});
    cy.center_x = rng.uniform(g.x_min + cy.radius, g.x_max - cy.radius);
    cy.center_z = rng.uniform(g.z_min + cy.radius, g.z_max - cy.radius);
    cy.echogenicity = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.1, 0.6);
    p.cysts.push_back(cy);
  }
  for (std::size_t i = 0; i < c.dataset.point_targets; ++i) {
    Scatterer s;
    s.x = rng.uniform(g.x_min, g.x_max);
    s.z = rng.uniform(g.z_min, g.z_max);
    s.amplitude = c.dataset.point_amplitude;
    p.scatterers.push_back(s);
  }
  return p;
}

/// Desk-scale setup: 64 elements, 64 x 128 grid at 0.3 mm lateral and
/// 0.05 mm axial spacing, one point target on a pixel center.
inline RunConfig default_config() {
  RunConfig c;
  c.name = "default";
  c.phantom.scatterers = {{0.15e-3, 29.4e-3, 1.0}};
  c.phantom.background_scatterer_density = 0.0;
  c.eval.point_targets = {{0.15e-3, 29.4e-3}};
  c.training.seed = 1;
  return c;
}

/// Small enough to train in well under a minute: 4 elements, 8 x 8
/// patches, 8 random cyst frames. The evaluation phantom holds four
/// anechoic cysts at increasing depth.
inline RunConfig toy_config() {
  RunConfig c;
  c.name = "toy";
  c.array = {4, 1.5e-3, 2e6, 8e6, 1540.0, 0.6};
  c.grid = {-5e-3, 5e-3, 8e-3, 8e-3 + 255 * 0.14e-3, 32, 256, 8};
  c.das.f_number = 1.0;
  c.phantom.background_scatterer_density = 1e7;
  c.phantom.rng_seed = 2024;
  for (double z : {12.5e-3, 21.25e-3, 30e-3, 38.75e-3}) {
    c.phantom.cysts.push_back({0.0, z, 3e-3, 0.0});
    c.eval.rois.push_back({0.0, z, 3e-3, 4.5e-3});
  }
  c.dataset = {8, 7, 1, 3, 1.5e-3, 3.5e-3, 1, 6.0};
  c.mvdr_temporal_window = 3;
  c.network = {2, 64, 64, 0.1};
  c.training.steps = 300;
  c.training.batch = 32;
  c.training.seed = 11;
  c.training.validate_every = 25;
  c.bench.repetitions = 3;
  return c;
}

/// Full-size training setup: 84 frames of a 64-element array on a
/// 64 x 128 grid spanning 10..50 mm, 32 x 32 patches, 14000 steps.
inline RunConfig paper_scale_config() {
  RunConfig c;
  c.name = "paper-scale";
  c.grid = {-10e-3, 10e-3, 10e-3, 50e-3, 64, 128, 32};
  c.phantom.background_scatterer_density = 2e8;
  c.phantom.rng_seed = 2024;
  const double depths[] = {15e-3, 25e-3, 35e-3, 45e-3};
  for (double z : depths) {
    c.phantom.cysts.push_back({0.0, z, 3e-3, 0.0});
    c.eval.rois.push_back({0.0, z, 3e-3, 4.5e-3});
  }
  c.dataset = {84, 7, 1, 3, 2e-3, 4e-3, 2, 8.0};
  c.training.seed = 1;
  return c;
}

inline RunConfig preset(const std::string& name) {
  if (name == "default") return default_config();
  if (name == "toy") return toy_config();
  if (name == "paper-scale") return paper_scale_config();
  fail(ErrorKind::config, "unknown preset '" + name + "' (expected default, toy or paper-scale)");
}

/// Simulates one frame of the given phantom with a duration covering the grid.
inline RFFrame simulate_frame(const RunConfig& c, const PhantomSpec& phantom, unsigned threads = 1) {
  const auto array = c.geometry();
  const auto grid = c.pixel_grid();
  const auto tx = c.transmit();
  const auto sim = c.simulation(threads);
  return synthesize_rf(phantom, grid, array, tx, required_duration(grid, array, tx, sim), sim);
}

}  // namespace patchbf
