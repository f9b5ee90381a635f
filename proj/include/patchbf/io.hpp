// SPDX-License-Identifier: Apache-2.0
#pragma once

// On-disk formats. Every array is stored as a JSON header file plus a
// sidecar payload of little-endian float32 values (same stem, ".f32"):
//
//   frame.json  {"kind": "rf_frame", "dims": [n_elements, n_time], ...}
//   frame.f32   n_elements * n_time floats, element-major
//
// Headers are written with sorted keys and shortest round-trip numbers, so
// save -> load -> save reproduces both files byte for byte.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchbf/array.hpp"
#include "patchbf/delayrf.hpp"
#include "patchbf/error.hpp"
#include "patchbf/hash.hpp"
#include "patchbf/pipeline.hpp"
#include "patchbf/simulator.hpp"
#include "patchbf/unet.hpp"

namespace patchbf::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline fs::path payload_path(const fs::path& header) {
  fs::path p = header;
  p.replace_extension(".f32");
  return p;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

inline std::string file_hash(const fs::path& path) {
  const std::string bytes = read_text(path);
  Fnv1a h;
  h.text(bytes);
  return h.hex();
}

inline std::string encode_f32(std::span<const double> values) {
  std::string out(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return out;
}

inline std::vector<double> decode_f32(const std::string& bytes, std::size_t expected) {
  require(bytes.size() == expected * 4, ErrorKind::io,
          "payload size mismatch: expected " + std::to_string(expected) + " float32 values");
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

inline void write_container(const fs::path& header_path, json header,
                            std::span<const double> payload) {
  header["payload"] = payload_path(header_path).filename().string();
  header["dtype"] = "float32-le";
  header["count"] = payload.size();
  write_text(header_path, header.dump(2) + "\n");
  write_text(payload_path(header_path), encode_f32(payload));
}

struct Container {
  json header;
  std::vector<double> payload;
};

inline Container read_container(const fs::path& header_path, const std::string& kind) {
  Container c;
  try {
    c.header = json::parse(read_text(header_path));
  } catch (const json::exception& e) {
    fail(ErrorKind::io, "malformed header " + header_path.string() + ": " + e.what());
  }
  require(c.header.value("kind", "") == kind, ErrorKind::io,
          header_path.string() + " is not a " + kind + " file");
  const auto count = c.header.at("count").get<std::size_t>();
  c.payload = decode_f32(read_text(header_path.parent_path() / c.header.at("payload").get<std::string>()),
                         count);
  return c;
}

inline json grid_to_json(const PixelGrid& g) {
  return {{"x_min", g.x_min}, {"x_max", g.x_max}, {"z_min", g.z_min}, {"z_max", g.z_max},
          {"n_x", g.n_x},     {"n_z", g.n_z},     {"patch_side", g.patch_side}};
}

inline PixelGrid grid_from_json(const json& j) {
  return make_pixel_grid(j.at("x_min").get<double>(), j.at("x_max").get<double>(),
                         j.at("z_min").get<double>(), j.at("z_max").get<double>(),
                         j.at("n_x").get<std::size_t>(), j.at("n_z").get<std::size_t>(),
                         j.value("patch_side", std::size_t{32}));
}

// RF frames -----------------------------------------------------------------

inline void save_rf_frame(const fs::path& path, const RFFrame& f) {
  const auto& g = f.geometry;
  json h = {{"kind", "rf_frame"},
            {"n_elements", f.n_elements()},
            {"n_time", f.n_time()},
            {"fs", f.fs},
            {"t0", f.t0},
            {"angle", f.tx.steering_angle},
            {"geometry_hash", g.hash()},
            {"geometry",
             {{"pitch", g.pitch},
              {"center_frequency", g.center_frequency},
              {"sound_speed", g.sound_speed}}}};
  write_container(path, std::move(h), f.samples.data);
}

inline RFFrame load_rf_frame(const fs::path& path) {
  Container c = read_container(path, "rf_frame");
  const auto& h = c.header;
  RFFrame f;
  const auto n_el = h.at("n_elements").get<std::size_t>();
  const auto n_t = h.at("n_time").get<std::size_t>();
  require(c.payload.size() == n_el * n_t, ErrorKind::io, "rf_frame dims do not match payload");
  f.fs = h.at("fs").get<double>();
  f.t0 = h.at("t0").get<double>();
  f.tx = PlaneWaveTx::make(h.at("angle").get<double>());
  const auto& g = h.at("geometry");
  f.geometry = make_linear_array(n_el, g.at("pitch").get<double>(),
                                 g.at("center_frequency").get<double>(), f.fs,
                                 g.at("sound_speed").get<double>());
  require(f.geometry.hash() == h.at("geometry_hash").get<std::string>(), ErrorKind::io,
          "rf_frame geometry hash mismatch in " + path.string());
  f.samples = Matrix(n_el, n_t);
  f.samples.data = std::move(c.payload);
  return f;
}

// Delayed tensors: payload = data block followed by the validity block. ------

inline void save_delayed(const fs::path& path, const DelayedTensor& t) {
  std::vector<double> payload = t.data.data;
  payload.reserve(2 * t.data.data.size());
  for (auto v : t.valid) payload.push_back(v ? 1.0 : 0.0);
  json h = {{"kind", "delayed_tensor"},
            {"dims", {t.data.planes, t.data.rows, t.data.cols}},
            {"blocks", {"data", "valid"}},
            {"grid", grid_to_json(t.grid)}};
  write_container(path, std::move(h), payload);
}

inline DelayedTensor load_delayed(const fs::path& path) {
  Container c = read_container(path, "delayed_tensor");
  const auto dims = c.header.at("dims").get<std::vector<std::size_t>>();
  require(dims.size() == 3, ErrorKind::io, "delayed_tensor needs three dims");
  DelayedTensor t;
  t.grid = grid_from_json(c.header.at("grid"));
  t.data = Cube(dims[0], dims[1], dims[2]);
  const std::size_t n = t.data.data.size();
  require(c.payload.size() == 2 * n, ErrorKind::io, "delayed_tensor payload size mismatch");
  std::copy_n(c.payload.begin(), n, t.data.data.begin());
  t.valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.valid[i] = c.payload[n + i] != 0.0;
  return t;
}

// B-mode images ---------------------------------------------------------------

inline void save_image(const fs::path& path, const BModeImage& im) {
  json h = {{"kind", "bmode"},
            {"method", im.method},
            {"dims", {im.values.rows, im.values.cols}},
            {"dynamic_range_db", im.dynamic_range_db},
            {"grid", grid_to_json(im.grid)}};
  write_container(path, std::move(h), im.values.data);
}

inline BModeImage load_image(const fs::path& path) {
  Container c = read_container(path, "bmode");
  BModeImage im;
  im.method = c.header.at("method").get<std::string>();
  im.dynamic_range_db = c.header.at("dynamic_range_db").get<double>();
  im.grid = grid_from_json(c.header.at("grid"));
  const auto dims = c.header.at("dims").get<std::vector<std::size_t>>();
  require(dims.size() == 2 && dims[0] * dims[1] == c.payload.size(), ErrorKind::io,
          "bmode dims do not match payload");
  im.values = Matrix(dims[0], dims[1]);
  im.values.data = std::move(c.payload);
  return im;
}

/// 8-bit binary PGM with round(v * 255), values clamped to [0, 1].
inline void write_pgm(const fs::path& path, const Matrix& values) {
  std::string out = "P5\n" + std::to_string(values.cols) + " " + std::to_string(values.rows) + "\n255\n";
  for (double v : values.data)
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  write_text(path, out);
}

// Checkpoints -------------------------------------------------------------------

inline json architecture_to_json(const nn::UNetArchitecture& a) {
  return {{"n_elements", a.n_elements},
          {"depth_levels", a.depth_levels},
          {"base_channels", a.base_channels},
          {"channel_cap", a.channel_cap},
          {"leaky_slope", a.leaky_slope}};
}

inline nn::UNetArchitecture architecture_from_json(const json& j) {
  nn::UNetArchitecture a;
  a.n_elements = j.at("n_elements").get<std::size_t>();
  a.depth_levels = j.at("depth_levels").get<std::size_t>();
  a.base_channels = j.at("base_channels").get<std::size_t>();
  a.channel_cap = j.at("channel_cap").get<std::size_t>();
  a.leaky_slope = j.at("leaky_slope").get<double>();
  a.validate();
  return a;
}

struct CheckpointInfo {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

template <typename T>
void save_checkpoint(const fs::path& path, const nn::UNetParams<T>& p, const CheckpointInfo& info) {
  json blocks = json::array();
  for (const auto& b : p.blocks) blocks.push_back({{"in_ch", b.in_ch}, {"out_ch", b.out_ch}});
  json h = {{"kind", "checkpoint"},
            {"architecture", architecture_to_json(p.arch)},
            {"blocks", blocks},
            {"seed", info.seed},
            {"step", info.step}};
  std::vector<double> payload(p.values.begin(), p.values.end());
  write_container(path, std::move(h), payload);
}

template <typename T>
nn::UNetParams<T> load_checkpoint(const fs::path& path, CheckpointInfo* info = nullptr) {
  Container c = read_container(path, "checkpoint");
  nn::UNetParams<T> p;
  p.arch = architecture_from_json(c.header.at("architecture"));
  p.blocks = nn::unet_layout(p.arch);
  const auto& blocks = c.header.at("blocks");
  require(blocks.size() == p.blocks.size(), ErrorKind::io, "checkpoint block count mismatch");
  for (std::size_t i = 0; i < blocks.size(); ++i)
    require(blocks[i].at("in_ch").get<std::size_t>() == p.blocks[i].in_ch &&
                blocks[i].at("out_ch").get<std::size_t>() == p.blocks[i].out_ch,
            ErrorKind::io, "checkpoint block layout mismatch");
  const auto& last = p.blocks.back();
  require(c.payload.size() == last.bias_offset + last.out_ch, ErrorKind::io,
          "checkpoint parameter count mismatch");
  p.values.assign(c.payload.begin(), c.payload.end());
  if (info) {
    info->seed = c.header.at("seed").get<std::uint64_t>();
    info->step = c.header.at("step").get<std::uint64_t>();
  }
  return p;
}

}  // namespace patchbf::io
