#pragma once

// The single JSON run configuration shared by every CLI subcommand.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqburn/anomaly_scoring.hpp"
#include "vqburn/checkpoint.hpp"
#include "vqburn/common.hpp"
#include "vqburn/dataset.hpp"
#include "vqburn/postprocess.hpp"
#include "vqburn/raster_io.hpp"
#include "vqburn/vqvae.hpp"

namespace vqburn {

struct RunPaths {
  std::filesystem::path train_raster;  // normal (pre-event) scene for `prepare`
  std::filesystem::path scene_raster;  // scene to score and post-process
  std::filesystem::path blue_raster;   // optional single-band Blue aligned with the scene
  std::filesystem::path ground_truth;  // 1-band 0/1 raster
  std::filesystem::path valid_mask;    // optional 1-band 0/1 raster of pixels to evaluate
  std::filesystem::path manifest;
  std::filesystem::path checkpoint;
  std::filesystem::path anomaly_map;
  std::filesystem::path mask;
};

struct RunConfig {
  std::filesystem::path output_dir = "run";
  std::uint64_t seed = 0;
  RunPaths paths;
  ModelConfig model;
  AugmentConfig augment;
  int stride = 128;
  std::optional<int> max_patches;  // seeded subsample of the training grid
  NormSpec normalization;
  std::vector<BandRole> model_bands = {BandRole::kNir, BandRole::kRed, BandRole::kGreen};
  FuseMode scoring;
  BinarizeMethod binarization;
  IndexThresholds thresholds;
  bool threshold_search = false;
  ThresholdGrids threshold_grids;
  int min_component_pixels = 0;
  std::vector<int> report_patches = {0};
  bool resume = false;

  /// Fills unset artifact paths with defaults under output_dir and pushes
  /// the run seed into the model config.
  void finalize() {
    if (paths.manifest.empty()) paths.manifest = output_dir / "patches.json";
    if (paths.checkpoint.empty()) paths.checkpoint = output_dir / "checkpoint";
    if (paths.anomaly_map.empty()) paths.anomaly_map = output_dir / "anomaly_map";
    if (paths.mask.empty()) paths.mask = output_dir / "mask";
    model.seed = seed;
    model.in_channels = static_cast<int>(model_bands.size());
  }

  void validate() const {
    model.validate();
    augment.validate();
    thresholds.validate();
    if (stride < 1 || stride > model.input_size) throw config_error("stride must satisfy 1 <= stride <= patch size");
    if (max_patches && *max_patches < 1) throw config_error("max_patches must be >= 1");
    if (min_component_pixels < 0) throw config_error("min_component_pixels must be >= 0");
    if (model_bands.empty()) throw config_error("model_bands must not be empty");
  }
};

namespace detail {

inline std::vector<double> parse_grid(const nlohmann::json& j) {
  if (j.is_array()) return j.get<std::vector<double>>();
  if (j.is_object()) return linspace(j.at("min").get<double>(), j.at("max").get<double>(), j.at("steps").get<int>());
  if (j.is_null()) return {};
  throw config_error("threshold grid must be a list or {min, max, steps}");
}

inline std::optional<double> opt_double(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace detail

/// Parses a run config. Relative paths inside the file resolve against `base_dir`.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  auto path_of = [&](const nlohmann::json& obj, const char* key) -> std::filesystem::path {
    if (!obj.contains(key) || obj[key].is_null()) return {};
    std::filesystem::path p = obj[key].get<std::string>();
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("output_dir")) c.output_dir = path_of(j, "output_dir");
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      c.paths.train_raster = path_of(p, "train_raster");
      c.paths.scene_raster = path_of(p, "scene_raster");
      c.paths.blue_raster = path_of(p, "blue_raster");
      c.paths.ground_truth = path_of(p, "ground_truth");
      c.paths.valid_mask = path_of(p, "valid_mask");
      c.paths.manifest = path_of(p, "manifest");
      c.paths.checkpoint = path_of(p, "checkpoint");
      c.paths.anomaly_map = path_of(p, "anomaly_map");
      c.paths.mask = path_of(p, "mask");
    }
    if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      auto& g = c.augment;
      g.h_flip = a.value("h_flip", g.h_flip);
      g.v_flip = a.value("v_flip", g.v_flip);
      g.rotations = a.value("rotations", g.rotations);
      g.blur = a.value("blur", g.blur);
      g.blur_kernel = a.value("blur_kernel", g.blur_kernel);
      g.blur_sigma = a.value("blur_sigma", g.blur_sigma);
      g.p_h_flip = a.value("p_h_flip", g.p_h_flip);
      g.p_v_flip = a.value("p_v_flip", g.p_v_flip);
      g.p_rotate = a.value("p_rotate", g.p_rotate);
      g.p_blur = a.value("p_blur", g.p_blur);
    }
    if (j.contains("patch")) {
      const auto& p = j["patch"];
      if (p.contains("size")) c.model.input_size = p["size"].get<int>();
      c.stride = p.value("stride", c.stride);
      if (p.contains("max_patches") && !p["max_patches"].is_null()) c.max_patches = p["max_patches"].get<int>();
    }
    if (j.contains("normalization")) {
      const auto& n = j["normalization"];
      const std::string m = n.value("method", "percentile");
      if (m == "minmax") c.normalization.method = NormMethod::kMinMax;
      else if (m == "percentile") c.normalization.method = NormMethod::kPercentile;
      else throw config_error("unknown normalization method '" + m + "'");
      c.normalization.p_low = n.value("p_low", c.normalization.p_low);
      c.normalization.p_high = n.value("p_high", c.normalization.p_high);
    }
    if (j.contains("model_bands")) {
      c.model_bands.clear();
      for (const auto& b : j["model_bands"]) c.model_bands.push_back(band_role_from_string(b.get<std::string>()));
    }
    if (j.contains("scoring")) {
      const auto& s = j["scoring"];
      c.scoring = fuse_mode_from_string(s.value("mode", "am_only"), s.value("weight", 0.5));
    }
    if (j.contains("binarization")) {
      const auto& b = j["binarization"];
      const std::string m = b.value("method", "otsu");
      if (m == "otsu") c.binarization = BinarizeMethod::otsu();
      else if (m == "fixed") c.binarization = BinarizeMethod::fixed(b.at("value").get<double>());
      else if (m == "quantile") c.binarization = BinarizeMethod::quantile(b.at("value").get<double>());
      else throw config_error("unknown binarization method '" + m + "'");
    }
    if (j.contains("thresholds")) {
      const auto& t = j["thresholds"];
      c.thresholds.ndvi_max = detail::opt_double(t, "ndvi_max");
      c.thresholds.ndwi_max = detail::opt_double(t, "ndwi_max");
      c.thresholds.tmbi_max = detail::opt_double(t, "tmbi_max");
    }
    if (j.contains("threshold_search")) {
      const auto& t = j["threshold_search"];
      c.threshold_search = t.value("enabled", false);
      if (t.contains("ndvi")) c.threshold_grids.ndvi = detail::parse_grid(t["ndvi"]);
      if (t.contains("ndwi")) c.threshold_grids.ndwi = detail::parse_grid(t["ndwi"]);
      if (t.contains("tmbi")) c.threshold_grids.tmbi = detail::parse_grid(t["tmbi"]);
    }
    c.min_component_pixels = j.value("min_component_pixels", c.min_component_pixels);
    if (j.contains("report")) c.report_patches = j["report"].value("patches", c.report_patches);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("invalid run config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw config_error("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config is not valid JSON: " + std::string(e.what()));
  }
  return run_config_from_json(j, path.parent_path());
}

}  // namespace vqburn
