#pragma once

// Per-patch anomaly maps (alignment map from the latent space, reconstruction
// map from the decoder output), their fusion, and stitching of patch maps
// into scene-sized maps.

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "vqburn/common.hpp"
#include "vqburn/dataset.hpp"
#include "vqburn/raster_io.hpp"
#include "vqburn/volume.hpp"
#include "vqburn/vqvae.hpp"

namespace vqburn {

struct FuseMode {
  enum class Kind { kAmOnly, kSmOnly, kWeighted };
  Kind kind = Kind::kAmOnly;
  double weight = 0.5;  // weight of the normalized AM under kWeighted

  static FuseMode am_only() { return {}; }
  static FuseMode sm_only() { return {Kind::kSmOnly, 0.0}; }
  static FuseMode weighted(double w) { return {Kind::kWeighted, w}; }

  /// "am", "sm" or "fused(weighted,<w>)"; stored as raster provenance.
  std::string provenance() const {
    switch (kind) {
      case Kind::kAmOnly: return "am";
      case Kind::kSmOnly: return "sm";
      case Kind::kWeighted: {
        char buf[64];
        std::snprintf(buf, sizeof buf, "fused(weighted,%.6g)", weight);
        return buf;
      }
    }
    return "?";
  }
};

inline FuseMode fuse_mode_from_string(const std::string& s, double weight = 0.5) {
  if (s == "am_only" || s == "am") return FuseMode::am_only();
  if (s == "sm_only" || s == "sm") return FuseMode::sm_only();
  if (s == "weighted") return FuseMode::weighted(weight);
  throw config_error("unknown scoring mode '" + s + "' (expected am_only, sm_only or weighted)");
}

struct AnomalyMap {
  Grid<float> scores;
  std::string provenance = "am";
};

/// Nearest-neighbour replication of each cell into a factor x factor block.
template <typename T>
Grid<T> upsample_nearest(const Grid<T>& g, int factor) {
  Grid<T> out(g.height * factor, g.width * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(y, x) = g.at(y / factor, x / factor);
  return out;
}

/// Per-pixel squared error averaged over bands.
template <typename T>
Grid<T> squared_error_map(const Volume<T>& a, const Volume<T>& b) {
  if (!a.same_shape(b)) throw data_error("squared_error_map: shape mismatch");
  Grid<T> out(a.height, a.width);
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        const T d = a.at(c, y, x) - b.at(c, y, x);
        out.at(y, x) += d * d;
      }
  for (T& v : out.data) v /= static_cast<T>(a.channels);
  return out;
}

/// Latent quantization distance per position, replicated up to pixel resolution.
template <typename T>
Grid<T> alignment_map(const ModelParams<T>& params, const Volume<T>& patch) {
  const LatentGrid<T> lat = quantize(params.codebook, encode(params, patch));
  return upsample_nearest(lat.distances, params.config.downsample());
}

template <typename T>
Grid<T> reconstruction_map(const ModelParams<T>& params, const Volume<T>& patch) {
  const LatentGrid<T> lat = quantize(params.codebook, encode(params, patch));
  return squared_error_map(patch, decode(params, lat.z_q));
}

/// Min-max rescale to [0, 1]; a constant map becomes all zeros.
template <typename T>
Grid<T> minmax_normalize(const Grid<T>& g) {
  Grid<T> out = g;
  if (g.data.empty()) return out;
  const auto [lo, hi] = std::minmax_element(g.data.begin(), g.data.end());
  const T range = *hi - *lo;
  for (T& v : out.data) v = range > T(0) ? (v - *lo) / range : T(0);
  return out;
}

template <typename T>
Grid<T> fuse(const Grid<T>& am, const Grid<T>& sm, const FuseMode& mode) {
  if (!am.same_shape(sm)) throw data_error("fuse: AM and SM shapes differ");
  switch (mode.kind) {
    case FuseMode::Kind::kAmOnly: return am;
    case FuseMode::Kind::kSmOnly: return sm;
    case FuseMode::Kind::kWeighted: break;
  }
  if (!(mode.weight >= 0.0 && mode.weight <= 1.0)) throw config_error("fusion weight must lie in [0, 1]");
  const Grid<T> a = minmax_normalize(am), s = minmax_normalize(sm);
  Grid<T> out(am.height, am.width);
  const T w = static_cast<T>(mode.weight);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = w * a.data[i] + (T(1) - w) * s.data[i];
  return out;
}

/// Scores one model-ready patch under the requested mode.
template <typename T>
Grid<T> score_patch(const ModelParams<T>& params, const Volume<T>& patch, const FuseMode& mode) {
  const LatentGrid<T> lat = quantize(params.codebook, encode(params, patch));
  if (mode.kind == FuseMode::Kind::kAmOnly) return upsample_nearest(lat.distances, params.config.downsample());
  const Grid<T> sm = squared_error_map(patch, decode(params, lat.z_q));
  if (mode.kind == FuseMode::Kind::kSmOnly) return sm;
  return fuse(upsample_nearest(lat.distances, params.config.downsample()), sm, mode);
}

/// Averages overlapping patch maps into a scene map. Patches are summed in
/// position order (double accumulators, one division at the end), so the
/// result does not depend on the order of the inputs.
inline Grid<float> stitch(const std::vector<Grid<float>>& maps, const std::vector<PatchPosition>& positions,
                          int scene_height, int scene_width) {
  if (maps.size() != positions.size()) throw data_error("stitch: map and position counts differ");
  std::vector<std::size_t> order(maps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (positions[a] != positions[b]) return positions[a] < positions[b];
    return std::lexicographical_compare(maps[a].data.begin(), maps[a].data.end(), maps[b].data.begin(),
                                        maps[b].data.end());
  });

  std::vector<double> sum(static_cast<std::size_t>(scene_height) * scene_width, 0.0);
  std::vector<int> count(sum.size(), 0);
  for (std::size_t i : order) {
    const auto& m = maps[i];
    const auto& p = positions[i];
    if (p.row < 0 || p.col < 0 || p.row + m.height > scene_height || p.col + m.width > scene_width)
      throw data_error("stitch: patch at (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                       ") extends outside the scene");
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        const std::size_t idx = static_cast<std::size_t>(p.row + y) * scene_width + (p.col + x);
        sum[idx] += static_cast<double>(m.at(y, x));
        ++count[idx];
      }
  }
  Grid<float> out(scene_height, scene_width);
  for (std::size_t i = 0; i < sum.size(); ++i) {
    if (count[i] == 0)
      throw data_error("stitch: pixel (" + std::to_string(i / scene_width) + "," + std::to_string(i % scene_width) +
                       ") is not covered by any patch");
    out.data[i] = static_cast<float>(sum[i] / count[i]);
  }
  return out;
}

/// Selects the model's input bands from a scene and applies its stored
/// normalization.
inline Raster prepare_model_input(const ModelParams<float>& params, const Raster& scene) {
  Raster input;
  if (!params.channel_roles.empty()) {
    for (auto r : params.channel_roles)
      if (!scene.has_role(r))
        throw data_error("scene lacks the " + to_string(r) + " band the model was trained on (model expects " +
                         std::to_string(params.config.in_channels) + " bands, scene has " +
                         std::to_string(scene.bands) + ")");
    input = select_bands(scene, params.channel_roles);
  } else {
    input = scene;
  }
  if (input.bands != params.config.in_channels)
    throw data_error("band count mismatch: model expects " + std::to_string(params.config.in_channels) +
                     " bands, scene provides " + std::to_string(input.bands));
  if (params.stats) input = apply_band_stats(input, *params.stats, /*clip=*/false);
  return input;
}

/// Tiles a scene with model-sized patches, scores each and stitches the result.
inline AnomalyMap score_scene(const ModelParams<float>& params, const Raster& scene, int stride,
                              const FuseMode& mode = FuseMode::am_only()) {
  const Raster input = prepare_model_input(params, scene);
  const PatchSet ps = extract_patches(input, params.config.input_size, stride);
  std::vector<Grid<float>> maps;
  maps.reserve(ps.size());
  for (const auto& p : ps.patches) maps.push_back(score_patch(params, p, mode));
  AnomalyMap am;
  am.scores = stitch(maps, ps.positions, scene.height, scene.width);
  am.provenance = mode.provenance();
  return am;
}

inline Raster to_raster(const AnomalyMap& m) {
  Raster r(1, m.scores.height, m.scores.width);
  r.data = m.scores.data;
  r.tags["provenance"] = m.provenance;
  return r;
}

inline AnomalyMap anomaly_map_from_raster(const Raster& r) {
  if (r.bands != 1) throw data_error("anomaly map raster must have exactly 1 band");
  AnomalyMap m;
  m.scores = Grid<float>(r.height, r.width);
  m.scores.data = r.data;
  auto it = r.tags.find("provenance");
  m.provenance = it == r.tags.end() ? "am" : it->second;
  return m;
}

}  // namespace vqburn
