#pragma once

// Multiband float rasters and their on-disk pair format:
//   name.bin   little-endian float32, band-interleaved planes [bands][h][w]
//   name.json  {bands, height, width, band_roles, nodata, geotransform, dtype}

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqburn/common.hpp"

namespace vqburn {

enum class BandRole { kNir, kRed, kGreen, kBlue };

inline std::string to_string(BandRole role) {
  switch (role) {
    case BandRole::kNir: return "NIR";
    case BandRole::kRed: return "Red";
    case BandRole::kGreen: return "Green";
    case BandRole::kBlue: return "Blue";
  }
  return "?";
}

inline BandRole band_role_from_string(const std::string& s) {
  if (s == "NIR") return BandRole::kNir;
  if (s == "Red") return BandRole::kRed;
  if (s == "Green") return BandRole::kGreen;
  if (s == "Blue") return BandRole::kBlue;
  throw config_error("unknown band role '" + s + "' (expected NIR, Red, Green or Blue)");
}

using GeoTransform = std::array<double, 6>;

struct Raster {
  int bands = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;  // [bands][height][width]
  std::map<BandRole, int> band_roles;
  std::optional<double> nodata;
  std::optional<GeoTransform> geotransform;
  // Free-form string metadata carried in the sidecar (e.g. provenance).
  std::map<std::string, std::string> tags;

  Raster() = default;
  Raster(int b, int h, int w, float fill = 0.0f)
      : bands(b), height(h), width(w), data(static_cast<std::size_t>(b) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }

  float& at(int b, int y, int x) { return data[b * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  float at(int b, int y, int x) const { return data[b * plane_size() + static_cast<std::size_t>(y) * width + x]; }

  std::span<float> band(int b) { return {data.data() + b * plane_size(), plane_size()}; }
  std::span<const float> band(int b) const { return {data.data() + b * plane_size(), plane_size()}; }

  bool has_role(BandRole role) const { return band_roles.count(role) != 0; }

  std::span<const float> role(BandRole r) const {
    auto it = band_roles.find(r);
    if (it == band_roles.end()) throw data_error("raster has no " + to_string(r) + " band");
    return band(it->second);
  }

  bool is_nodata(float v) const {
    if (!nodata) return false;
    if (std::isnan(*nodata)) return std::isnan(v);
    return static_cast<double>(v) == *nodata;
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Throws if the raster violates its structural invariants.
inline void validate(const Raster& r) {
  if (r.bands < 1 || r.height < 1 || r.width < 1)
    throw data_error("raster dimensions must be positive");
  if (r.data.size() != static_cast<std::size_t>(r.bands) * r.plane_size())
    throw data_error("raster payload size does not match bands*height*width");
  std::vector<bool> used(r.bands, false);
  for (const auto& [role, idx] : r.band_roles) {
    if (idx < 0 || idx >= r.bands)
      throw data_error("band role " + to_string(role) + " points at missing band " + std::to_string(idx));
    if (used[idx]) throw data_error("two band roles map to band " + std::to_string(idx));
    used[idx] = true;
  }
}

/// New raster holding only the requested roles, in the given order.
inline Raster select_bands(const Raster& src, std::span<const BandRole> roles) {
  Raster out(static_cast<int>(roles.size()), src.height, src.width);
  out.nodata = src.nodata;
  out.geotransform = src.geotransform;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    auto plane = src.role(roles[i]);
    std::copy(plane.begin(), plane.end(), out.band(static_cast<int>(i)).begin());
    out.band_roles[roles[i]] = static_cast<int>(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline std::filesystem::path sidecar_path(std::filesystem::path p) { return p.replace_extension(".json"); }
inline std::filesystem::path payload_path(std::filesystem::path p) { return p.replace_extension(".bin"); }

inline nlohmann::json raster_header(const Raster& r) {
  nlohmann::json h;
  h["bands"] = r.bands;
  h["height"] = r.height;
  h["width"] = r.width;
  h["dtype"] = "f32";
  nlohmann::json roles = nlohmann::json::object();
  for (const auto& [role, idx] : r.band_roles) roles[to_string(role)] = idx;
  h["band_roles"] = roles;
  h["nodata"] = r.nodata ? nlohmann::json(*r.nodata) : nlohmann::json(nullptr);
  h["geotransform"] = r.geotransform ? nlohmann::json(*r.geotransform) : nlohmann::json(nullptr);
  if (!r.tags.empty()) h["tags"] = r.tags;
  return h;
}

/// Writes `path` with .bin and .json extensions (any given extension is replaced).
inline void write_raster(const Raster& r, const std::filesystem::path& path) {
  validate(r);
  if (r.nodata && !std::isfinite(*r.nodata)) throw data_error("nodata must be finite to be stored in the header");
  write_file_atomic(payload_path(path), encode_f32(r.data));
  write_file_atomic(sidecar_path(path), raster_header(r).dump(2) + "\n");
}

inline Raster read_raster(const std::filesystem::path& path) {
  const auto header_file = sidecar_path(path);
  const auto payload_file = payload_path(path);
  if (!std::filesystem::exists(header_file)) throw data_error("missing raster header: " + header_file.string());
  if (!std::filesystem::exists(payload_file)) throw data_error("missing raster payload: " + payload_file.string());

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(read_file(header_file));
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed raster header " + header_file.string() + ": " + e.what());
  }

  Raster r;
  try {
    if (h.value("dtype", "f32") != "f32") throw data_error("unsupported dtype " + h["dtype"].dump());
    r.bands = h.at("bands").get<int>();
    r.height = h.at("height").get<int>();
    r.width = h.at("width").get<int>();
    if (h.contains("band_roles") && !h["band_roles"].is_null())
      for (const auto& [name, idx] : h["band_roles"].items()) r.band_roles[band_role_from_string(name)] = idx.get<int>();
    if (h.contains("nodata") && !h["nodata"].is_null()) r.nodata = h["nodata"].get<double>();
    if (h.contains("geotransform") && !h["geotransform"].is_null()) r.geotransform = h["geotransform"].get<GeoTransform>();
    if (h.contains("tags")) r.tags = h["tags"].get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed raster header " + header_file.string() + ": " + e.what());
  } catch (const Error& e) {
    throw data_error("malformed raster header " + header_file.string() + ": " + e.what());
  }
  if (r.bands < 1 || r.height < 1 || r.width < 1)
    throw data_error("malformed raster header " + header_file.string() + ": non-positive dimensions");

  const std::string bytes = read_file(payload_file);
  const std::size_t expected = static_cast<std::size_t>(r.bands) * r.height * r.width * 4;
  if (bytes.size() != expected)
    throw data_error("malformed raster header " + header_file.string() + ": declares " + std::to_string(r.bands) +
                     " bands of " + std::to_string(r.height) + "x" + std::to_string(r.width) + " (" +
                     std::to_string(expected) + " bytes) but payload has " + std::to_string(bytes.size()) + " bytes");
  r.data = decode_f32(bytes);
  validate(r);
  return r;
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormMethod { kMinMax, kPercentile };

struct NormSpec {
  NormMethod method = NormMethod::kPercentile;
  double p_low = 2.0;
  double p_high = 98.0;
};

struct BandStats {
  NormMethod method = NormMethod::kPercentile;
  double p_low_pct = 2.0;
  double p_high_pct = 98.0;
  std::vector<double> min, max, p_low, p_high;

  /// The affine window [lo, hi] that maps onto [0, 1] for band b.
  double lo(std::size_t b) const { return method == NormMethod::kMinMax ? min[b] : p_low[b]; }
  double hi(std::size_t b) const { return method == NormMethod::kMinMax ? max[b] : p_high[b]; }

  friend bool operator==(const BandStats&, const BandStats&) = default;
};

/// Linear-interpolated percentile of an ascending-sorted sample, pct in [0, 100].
inline double percentile_sorted(std::span<const float> sorted, double pct) {
  if (sorted.empty()) throw data_error("percentile of empty sample");
  const double pos = pct / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) + frac * (static_cast<double>(sorted[hi]) - static_cast<double>(sorted[lo]));
}

inline BandStats fit_band_stats(const Raster& r, const NormSpec& spec) {
  if (spec.method == NormMethod::kPercentile &&
      !(0.0 <= spec.p_low && spec.p_low < spec.p_high && spec.p_high <= 100.0))
    throw config_error("percentile bounds must satisfy 0 <= low < high <= 100");
  BandStats s;
  s.method = spec.method;
  s.p_low_pct = spec.p_low;
  s.p_high_pct = spec.p_high;
  for (int b = 0; b < r.bands; ++b) {
    std::vector<float> vals;
    vals.reserve(r.plane_size());
    for (float v : r.band(b))
      if (!r.is_nodata(v)) vals.push_back(v);
    if (vals.empty()) throw data_error("band " + std::to_string(b) + " has no valid pixels");
    std::sort(vals.begin(), vals.end());
    s.min.push_back(vals.front());
    s.max.push_back(vals.back());
    s.p_low.push_back(percentile_sorted(vals, spec.p_low));
    s.p_high.push_back(percentile_sorted(vals, spec.p_high));
    if (!(s.hi(b) > s.lo(b))) throw data_error("degenerate band " + std::to_string(b) + ": zero value range");
  }
  return s;
}

/// Re-applies previously fitted stats; nodata pixels pass through untouched.
/// With `clip`, values outside the fitted window clamp to [0, 1]. Without
/// it the affine map extrapolates, which keeps out-of-range scene values
/// (the anomalies) distinguishable at prediction time.
inline Raster apply_band_stats(const Raster& r, const BandStats& s, bool clip = true) {
  if (s.min.size() != static_cast<std::size_t>(r.bands))
    throw data_error("normalization stats cover " + std::to_string(s.min.size()) + " bands, raster has " +
                     std::to_string(r.bands));
  Raster out = r;
  for (int b = 0; b < r.bands; ++b) {
    const double lo = s.lo(b);
    const double range = s.hi(b) - lo;
    for (float& v : out.band(b)) {
      if (r.is_nodata(v)) continue;
      const double t = (static_cast<double>(v) - lo) / range;
      v = static_cast<float>(clip ? std::clamp(t, 0.0, 1.0) : t);
    }
  }
  return out;
}

inline std::pair<Raster, BandStats> normalize(const Raster& r, const NormSpec& spec = {}) {
  validate(r);
  BandStats s = fit_band_stats(r, spec);
  return {apply_band_stats(r, s), std::move(s)};
}

inline nlohmann::json to_json(const BandStats& s) {
  return {{"method", s.method == NormMethod::kMinMax ? "minmax" : "percentile"},
          {"p_low_pct", s.p_low_pct},
          {"p_high_pct", s.p_high_pct},
          {"min", s.min},
          {"max", s.max},
          {"p_low", s.p_low},
          {"p_high", s.p_high}};
}

inline BandStats band_stats_from_json(const nlohmann::json& j) {
  BandStats s;
  s.method = j.at("method").get<std::string>() == "minmax" ? NormMethod::kMinMax : NormMethod::kPercentile;
  s.p_low_pct = j.at("p_low_pct").get<double>();
  s.p_high_pct = j.at("p_high_pct").get<double>();
  s.min = j.at("min").get<std::vector<double>>();
  s.max = j.at("max").get<std::vector<double>>();
  s.p_low = j.at("p_low").get<std::vector<double>>();
  s.p_high = j.at("p_high").get<std::vector<double>>();
  return s;
}

}  // namespace vqburn
