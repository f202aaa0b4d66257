#pragma once

// Patch extraction over a scene raster and the training-time augmentations
// (flips, quarter-turn rotations, Gaussian blur).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vqburn/common.hpp"
#include "vqburn/raster_io.hpp"
#include "vqburn/volume.hpp"

namespace vqburn {

struct PatchPosition {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const PatchPosition&, const PatchPosition&) = default;
};

struct PatchSet {
  int patch_size = 0;
  int stride = 0;
  int source_height = 0;
  int source_width = 0;
  int channels = 0;
  std::vector<Volume<float>> patches;
  std::vector<PatchPosition> positions;
  // Metadata carried with the set so training can record it in checkpoints.
  std::vector<BandRole> channel_roles;
  std::optional<BandStats> stats;

  std::size_t size() const { return patches.size(); }

  friend bool operator==(const PatchSet&, const PatchSet&) = default;
};

/// Window anchors along one axis: a regular grid 0, stride, 2*stride, ...
/// plus one window flush with the trailing edge when the grid does not land
/// on it exactly.
inline std::vector<int> window_anchors(int extent, int size, int stride) {
  if (size < 1) throw config_error("patch size must be >= 1");
  if (stride < 1 || stride > size) throw config_error("stride must satisfy 1 <= stride <= size");
  if (extent < size)
    throw data_error("raster extent " + std::to_string(extent) + " is smaller than patch size " + std::to_string(size));
  std::vector<int> anchors;
  for (int a = 0; a + size <= extent; a += stride) anchors.push_back(a);
  if (anchors.back() + size < extent) anchors.push_back(extent - size);
  return anchors;
}

inline PatchSet extract_patches(const Raster& raster, int size, int stride) {
  validate(raster);
  PatchSet ps;
  ps.patch_size = size;
  ps.stride = stride;
  ps.source_height = raster.height;
  ps.source_width = raster.width;
  ps.channels = raster.bands;
  const auto rows = window_anchors(raster.height, size, stride);
  const auto cols = window_anchors(raster.width, size, stride);
  ps.patches.reserve(rows.size() * cols.size());
  for (int r : rows) {
    for (int c : cols) {
      Volume<float> p(raster.bands, size, size);
      for (int b = 0; b < raster.bands; ++b)
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) p.at(b, y, x) = raster.at(b, r + y, c + x);
      ps.patches.push_back(std::move(p));
      ps.positions.push_back({r, c});
    }
  }
  // Record which roles the channels carry, in channel order.
  ps.channel_roles.assign(raster.bands, BandRole::kNir);
  std::vector<bool> known(raster.bands, false);
  for (const auto& [role, idx] : raster.band_roles) {
    ps.channel_roles[idx] = role;
    known[idx] = true;
  }
  if (!std::all_of(known.begin(), known.end(), [](bool k) { return k; })) ps.channel_roles.clear();
  return ps;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  bool h_flip = true;
  bool v_flip = true;
  std::vector<int> rotations = {1, 2, 3};  // quarter turns counter-clockwise
  bool blur = true;
  int blur_kernel = 11;
  double blur_sigma = 5.0;
  double p_h_flip = 0.5;
  double p_v_flip = 0.5;
  double p_rotate = 0.5;
  double p_blur = 1.0;

  void validate() const {
    if (blur_kernel < 1 || blur_kernel % 2 == 0) throw config_error("blur kernel must be odd and >= 1");
    if (!(blur_sigma > 0.0)) throw config_error("blur sigma must be positive");
    for (double p : {p_h_flip, p_v_flip, p_rotate, p_blur})
      if (!(p >= 0.0 && p <= 1.0)) throw config_error("augmentation probabilities must lie in [0, 1]");
    for (int q : rotations)
      if (q < 1 || q > 3) throw config_error("rotations are quarter turns in {1, 2, 3}");
  }

  /// Preparation-time part: blur only.
  AugmentConfig blur_only() const {
    AugmentConfig c = *this;
    c.h_flip = c.v_flip = false;
    c.rotations.clear();
    return c;
  }

  /// Load-time part: flips and rotations only.
  AugmentConfig geometric_only() const {
    AugmentConfig c = *this;
    c.blur = false;
    return c;
  }
};

template <typename T>
Volume<T> flip_horizontal(const Volume<T>& p) {
  Volume<T> out(p.channels, p.height, p.width);
  for (int c = 0; c < p.channels; ++c)
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x) out.at(c, y, x) = p.at(c, y, p.width - 1 - x);
  return out;
}

template <typename T>
Volume<T> flip_vertical(const Volume<T>& p) {
  Volume<T> out(p.channels, p.height, p.width);
  for (int c = 0; c < p.channels; ++c)
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x) out.at(c, y, x) = p.at(c, p.height - 1 - y, x);
  return out;
}

/// Rotate a square patch by `quarter_turns` * 90 degrees counter-clockwise.
template <typename T>
Volume<T> rotate_quarter(const Volume<T>& p, int quarter_turns) {
  if (p.height != p.width) throw data_error("rotation requires a square patch");
  Volume<T> cur = p;
  const int n = p.width;
  for (int q = 0; q < ((quarter_turns % 4) + 4) % 4; ++q) {
    Volume<T> next(cur.channels, n, n);
    for (int c = 0; c < cur.channels; ++c)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) next.at(c, y, x) = cur.at(c, x, n - 1 - y);
    cur = std::move(next);
  }
  return cur;
}

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw config_error("blur kernel must be odd and >= 1");
  const int r = size / 2;
  std::vector<double> k(size);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + r];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Mirror index into [0, n) with edge repetition (…2 1 0 | 0 1 2 … n-1 | n-1 n-2…).
inline int reflect_index(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

/// Separable Gaussian blur per channel with reflected borders. Output is
/// clamped to each channel's input range so rounding cannot leave it.
inline Volume<float> gaussian_blur(const Volume<float>& p, int kernel, double sigma) {
  const auto k = gaussian_kernel(kernel, sigma);
  const int r = kernel / 2;
  Volume<float> out(p.channels, p.height, p.width);
  std::vector<double> tmp(p.plane_size());
  for (int c = 0; c < p.channels; ++c) {
    const auto plane = p.plane(c);
    const auto [lo_it, hi_it] = std::minmax_element(plane.begin(), plane.end());
    const float lo = *lo_it, hi = *hi_it;
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * p.at(c, y, reflect_index(x + i, p.width));
        tmp[static_cast<std::size_t>(y) * p.width + x] = acc;
      }
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += k[i + r] * tmp[static_cast<std::size_t>(reflect_index(y + i, p.height)) * p.width + x];
        out.at(c, y, x) = std::clamp(static_cast<float>(acc), lo, hi);
      }
  }
  return out;
}

/// Applies the configured flips, rotation and blur, each with its own
/// probability. Deterministic in (patch, cfg, seed).
inline Volume<float> augment(const Volume<float>& patch, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (patch.height != patch.width) throw data_error("augment requires a square patch");
  Rng rng(seed);
  // Draw every decision up front so enabling one op never shifts another's stream.
  const bool do_h = rng.bernoulli(cfg.p_h_flip);
  const bool do_v = rng.bernoulli(cfg.p_v_flip);
  const bool do_rot = rng.bernoulli(cfg.p_rotate);
  const std::uint64_t rot_pick = rng.next();
  const bool do_blur = rng.bernoulli(cfg.p_blur);

  Volume<float> out = patch;
  if (cfg.h_flip && do_h) out = flip_horizontal(out);
  if (cfg.v_flip && do_v) out = flip_vertical(out);
  if (!cfg.rotations.empty() && do_rot) out = rotate_quarter(out, cfg.rotations[rot_pick % cfg.rotations.size()]);
  if (cfg.blur && do_blur) out = gaussian_blur(out, cfg.blur_kernel, cfg.blur_sigma);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: manifest JSON + a raster pair holding the stacked patches.

inline void save_patchset(const PatchSet& ps, const std::filesystem::path& manifest_path) {
  namespace fs = std::filesystem;
  const fs::path data_path = manifest_path.parent_path() / (manifest_path.stem().string() + "_data.bin");
  if (ps.size() == 0) throw data_error("refusing to save an empty patch set");
  Raster stack(static_cast<int>(ps.size()) * ps.channels, ps.patch_size, ps.patch_size);
  for (std::size_t i = 0; i < ps.size(); ++i)
    std::copy(ps.patches[i].data.begin(), ps.patches[i].data.end(),
              stack.data.begin() + static_cast<std::ptrdiff_t>(i * ps.patches[i].size()));
  write_raster(stack, data_path);

  nlohmann::json m;
  m["patch_size"] = ps.patch_size;
  m["stride"] = ps.stride;
  m["source_height"] = ps.source_height;
  m["source_width"] = ps.source_width;
  m["channels"] = ps.channels;
  m["count"] = ps.size();
  nlohmann::json pos = nlohmann::json::array();
  for (const auto& p : ps.positions) pos.push_back({p.row, p.col});
  m["positions"] = pos;
  std::vector<std::string> roles;
  for (auto r : ps.channel_roles) roles.push_back(to_string(r));
  m["channel_roles"] = roles;
  m["normalization"] = ps.stats ? to_json(*ps.stats) : nlohmann::json(nullptr);
  m["data"] = data_path.filename().string();
  write_file_atomic(manifest_path, m.dump(2) + "\n");
}

inline PatchSet load_patchset(const std::filesystem::path& manifest_path) {
  if (!std::filesystem::exists(manifest_path)) throw data_error("missing patch manifest: " + manifest_path.string());
  PatchSet ps;
  try {
    const auto m = nlohmann::json::parse(read_file(manifest_path));
    ps.patch_size = m.at("patch_size").get<int>();
    ps.stride = m.at("stride").get<int>();
    ps.source_height = m.at("source_height").get<int>();
    ps.source_width = m.at("source_width").get<int>();
    ps.channels = m.at("channels").get<int>();
    for (const auto& p : m.at("positions")) ps.positions.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    for (const auto& r : m.at("channel_roles")) ps.channel_roles.push_back(band_role_from_string(r.get<std::string>()));
    if (!m.at("normalization").is_null()) ps.stats = band_stats_from_json(m["normalization"]);
    const Raster stack = read_raster(manifest_path.parent_path() / m.at("data").get<std::string>());
    const std::size_t n = m.at("count").get<std::size_t>();
    if (stack.bands != static_cast<int>(n) * ps.channels || stack.height != ps.patch_size ||
        stack.width != ps.patch_size || ps.positions.size() != n)
      throw data_error("patch data does not match manifest " + manifest_path.string());
    const std::size_t per = static_cast<std::size_t>(ps.channels) * ps.patch_size * ps.patch_size;
    for (std::size_t i = 0; i < n; ++i) {
      Volume<float> v(ps.channels, ps.patch_size, ps.patch_size);
      std::copy_n(stack.data.begin() + static_cast<std::ptrdiff_t>(i * per), per, v.data.begin());
      ps.patches.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed patch manifest " + manifest_path.string() + ": " + e.what());
  }
  return ps;
}

}  // namespace vqburn
