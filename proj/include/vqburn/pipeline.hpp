#pragma once

// The subcommands behind the CLI. Each reads its inputs from a RunConfig,
// writes its artifacts atomically and returns a short summary.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqburn/anomaly_scoring.hpp"
#include "vqburn/checkpoint.hpp"
#include "vqburn/config.hpp"
#include "vqburn/dataset.hpp"
#include "vqburn/evaluation.hpp"
#include "vqburn/png.hpp"
#include "vqburn/postprocess.hpp"
#include "vqburn/raster_io.hpp"
#include "vqburn/synth_bench.hpp"
#include "vqburn/vqvae.hpp"

namespace vqburn {

namespace detail {

inline const std::filesystem::path& require_path(const std::filesystem::path& p, const char* key) {
  if (p.empty()) throw config_error(std::string("config is missing paths.") + key);
  return p;
}

inline const std::filesystem::path& require_existing(const std::filesystem::path& p, const char* key) {
  require_path(p, key);
  if (!std::filesystem::exists(std::filesystem::path(p).replace_extension(".json")) && !std::filesystem::exists(p))
    throw data_error(std::string("paths.") + key + " does not exist: " + p.string());
  return p;
}

inline std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string loss_row(const EpochRecord& r) {
  return std::to_string(r.epoch) + "," + format_g9(r.loss.total) + "," + format_g9(r.loss.reconstruction) + "," +
         format_g9(r.loss.regularization) + "," + format_g9(r.loss.alignment) + "\n";
}

inline const char* kLossHeader = "epoch,total,rec,reg,align\n";

}  // namespace detail

inline std::filesystem::path loss_csv_path(const RunConfig& cfg) { return cfg.output_dir / "loss.csv"; }
inline std::filesystem::path threshold_csv_path(const RunConfig& cfg) { return cfg.output_dir / "threshold_search.csv"; }
inline std::filesystem::path raw_mask_path(const RunConfig& cfg) { return cfg.output_dir / "mask_raw"; }
inline std::filesystem::path report_dir(const RunConfig& cfg) { return cfg.output_dir / "report"; }

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  SceneSpec spec;
  std::filesystem::path out;  // scene raster; burn scenes add <out>_truth and <out>_clouds
};

struct SynthResult {
  std::vector<std::filesystem::path> written;
};

inline SynthResult cmd_synth(const SynthOptions& opt) {
  detail::require_path(opt.out, "out");
  SynthResult res;
  auto sibling = [&](const char* suffix) {
    return opt.out.parent_path() / (opt.out.stem().string() + suffix);
  };
  if (opt.spec.n_burns == 0) {
    write_raster(generate_normal_scene(opt.spec), opt.out);
    res.written.push_back(opt.out);
    return res;
  }
  const BurnScene s = generate_burn_scene(opt.spec);
  write_raster(s.raster, opt.out);
  write_raster(to_raster(s.truth), sibling("_truth"));
  write_raster(to_raster(s.clouds), sibling("_clouds"));
  res.written = {opt.out, sibling("_truth"), sibling("_clouds")};
  return res;
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareResult {
  std::filesystem::path manifest;
  std::size_t patches = 0;
};

/// Normalizes the training scene, tiles it, optionally subsamples the tiles
/// and applies the preparation-time blur.
inline PrepareResult cmd_prepare(const RunConfig& cfg) {
  cfg.validate();
  const Raster scene = read_raster(detail::require_existing(cfg.paths.train_raster, "train_raster"));
  for (auto r : cfg.model_bands)
    if (!scene.has_role(r)) throw data_error("training raster has no " + to_string(r) + " band");
  const Raster input = select_bands(scene, cfg.model_bands);
  auto [norm, stats] = normalize(input, cfg.normalization);
  PatchSet ps = extract_patches(norm, cfg.model.input_size, cfg.stride);

  if (cfg.max_patches && static_cast<std::size_t>(*cfg.max_patches) < ps.size()) {
    std::vector<std::size_t> idx(ps.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, 0x5a3b));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    idx.resize(*cfg.max_patches);
    std::sort(idx.begin(), idx.end());
    PatchSet sub = ps;
    sub.patches.clear();
    sub.positions.clear();
    for (std::size_t i : idx) {
      sub.patches.push_back(std::move(ps.patches[i]));
      sub.positions.push_back(ps.positions[i]);
    }
    ps = std::move(sub);
  }

  const AugmentConfig prep = cfg.augment.blur_only();
  if (prep.blur)
    for (std::size_t i = 0; i < ps.size(); ++i) ps.patches[i] = augment(ps.patches[i], prep, derive_seed(cfg.seed, 0xb1, i));
  ps.channel_roles = cfg.model_bands;
  ps.stats = stats;
  save_patchset(ps, cfg.paths.manifest);
  return {cfg.paths.manifest, ps.size()};
}

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
  std::filesystem::path checkpoint;
  std::vector<EpochRecord> history;  // this invocation only
  int epochs_completed = 0;
};

inline TrainSummary cmd_train(const RunConfig& cfg, const EpochCallback& on_epoch = nullptr) {
  cfg.validate();
  const PatchSet ps = load_patchset(cfg.paths.manifest);
  if (ps.channels != cfg.model.in_channels)
    throw data_error("patch set has " + std::to_string(ps.channels) + " channels, model expects " +
                     std::to_string(cfg.model.in_channels));

  std::optional<TrainState<float>> resume;
  std::string csv = detail::kLossHeader;
  if (cfg.resume) {
    resume = load_checkpoint(cfg.paths.checkpoint);
    // Keep the rows already recorded for the epochs being continued.
    if (std::filesystem::exists(loss_csv_path(cfg))) {
      std::istringstream in(read_file(loss_csv_path(cfg)));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty() && std::stoi(line.substr(0, line.find(','))) <= resume->epochs_completed) csv += line + "\n";
    }
  }
  TrainResult res = train(ps, cfg.model, cfg.augment, std::move(resume), on_epoch);
  for (const auto& r : res.history) csv += detail::loss_row(r);
  save_checkpoint(res.state, cfg.paths.checkpoint);
  write_file_atomic(loss_csv_path(cfg), csv);
  return {cfg.paths.checkpoint, std::move(res.history), res.state.epochs_completed};
}

// ---------------------------------------------------------------------------
// predict

inline AnomalyMap cmd_predict(const RunConfig& cfg) {
  cfg.validate();
  const TrainState<float> state = load_checkpoint(cfg.paths.checkpoint);
  const Raster scene = read_raster(detail::require_existing(cfg.paths.scene_raster, "scene_raster"));
  AnomalyMap am = score_scene(state.params, scene, cfg.stride, cfg.scoring);
  write_raster(to_raster(am), cfg.paths.anomaly_map);
  return am;
}

// ---------------------------------------------------------------------------
// postprocess

struct PostprocessResult {
  BinaryMask raw;    // binarized anomaly map
  BinaryMask final;  // after index filters and component cleanup
  double score_threshold = 0.0;
  IndexThresholds thresholds;
  std::size_t search_rows = 0;
};

inline Raster load_scene_with_aux(const RunConfig& cfg) {
  Raster scene = read_raster(detail::require_existing(cfg.paths.scene_raster, "scene_raster"));
  if (!cfg.paths.blue_raster.empty() && !scene.has_role(BandRole::kBlue))
    scene = attach_band(scene, read_raster(cfg.paths.blue_raster), BandRole::kBlue);
  return scene;
}

inline std::optional<BinaryMask> load_valid_mask(const RunConfig& cfg) {
  if (cfg.paths.valid_mask.empty()) return std::nullopt;
  return mask_from_raster(read_raster(cfg.paths.valid_mask));
}

inline PostprocessResult cmd_postprocess(const RunConfig& cfg) {
  cfg.validate();
  const AnomalyMap am = anomaly_map_from_raster(read_raster(cfg.paths.anomaly_map));
  PostprocessResult res;
  const BinarizeResult bin = binarize(am.scores, cfg.binarization);
  res.raw = bin.mask;
  res.score_threshold = bin.threshold;
  res.thresholds = cfg.thresholds;

  const bool filtering = cfg.threshold_search || cfg.thresholds.ndvi_max || cfg.thresholds.ndwi_max ||
                         cfg.thresholds.tmbi_max;
  Raster scene;
  if (filtering) {
    scene = load_scene_with_aux(cfg);
    if (scene.height != am.scores.height || scene.width != am.scores.width)
      throw data_error("scene and anomaly map sizes differ");
  }
  if (cfg.threshold_search) {
    const BinaryMask truth = mask_from_raster(read_raster(detail::require_existing(cfg.paths.ground_truth, "ground_truth")));
    const auto valid = load_valid_mask(cfg);
    const ThresholdSelection sel = select_thresholds(res.raw, scene, truth, cfg.threshold_grids, valid ? &*valid : nullptr);
    res.thresholds = sel.thresholds;
    res.search_rows = sel.table.size();
    write_file_atomic(threshold_csv_path(cfg), to_csv(sel.table));
  }
  res.final = filtering ? apply_index_filters(res.raw, scene, res.thresholds) : res.raw;
  if (cfg.min_component_pixels > 0) res.final = remove_small_components(res.final, cfg.min_component_pixels);

  write_raster(to_raster(res.raw), raw_mask_path(cfg));
  write_raster(to_raster(res.final), cfg.paths.mask);
  nlohmann::json info;
  info["binarization_threshold"] = res.score_threshold;
  for (SpectralIndex i : kAllIndices) {
    const auto& t = res.thresholds.get(i);
    info[to_string(i) + "_max"] = t ? nlohmann::json(*t) : nlohmann::json(nullptr);
  }
  info["min_component_pixels"] = cfg.min_component_pixels;
  write_file_atomic(cfg.output_dir / "postprocess.json", info.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// evaluate

inline Metrics cmd_evaluate(const RunConfig& cfg) {
  const BinaryMask pred = mask_from_raster(read_raster(cfg.paths.mask));
  const BinaryMask truth = mask_from_raster(read_raster(detail::require_existing(cfg.paths.ground_truth, "ground_truth")));
  if (!pred.same_shape(truth)) throw data_error("prediction and ground-truth sizes differ");
  const auto valid = load_valid_mask(cfg);
  const Metrics m = evaluate(pred, truth, valid ? &*valid : nullptr);
  write_file_atomic(cfg.output_dir / "metrics.json", to_json(m).dump(2) + "\n");
  write_file_atomic(cfg.output_dir / "metrics.csv", to_csv(m));
  return m;
}

// ---------------------------------------------------------------------------
// report

/// Writes report/patch_<i>.png (input | reconstruction | alignment map) for
/// each requested patch index and, when a mask exists, report/mask_overlay.png.
inline std::vector<std::filesystem::path> cmd_report(const RunConfig& cfg) {
  cfg.validate();
  const TrainState<float> state = load_checkpoint(cfg.paths.checkpoint);
  const auto& params = state.params;
  const Raster scene = read_raster(detail::require_existing(cfg.paths.scene_raster, "scene_raster"));
  const Raster input = prepare_model_input(params, scene);
  const PatchSet ps = extract_patches(input, params.config.input_size, cfg.stride);

  std::vector<std::filesystem::path> written;
  for (int i : cfg.report_patches) {
    if (i < 0 || static_cast<std::size_t>(i) >= ps.size())
      throw config_error("report patch " + std::to_string(i) + " out of range (scene has " + std::to_string(ps.size()) +
                         " patches)");
    const Volume<float>& x = ps.patches[i];
    const LatentGrid<float> lat = quantize(params.codebook, encode(params, x));
    const Volume<float> recon = decode(params, lat.z_q);
    const Grid<float> am = upsample_nearest(lat.distances, params.config.downsample());
    const auto path = report_dir(cfg) / ("patch_" + std::to_string(i) + ".png");
    write_png(hconcat({false_color(x), false_color(recon), heatmap(am)}), path);
    written.push_back(path);
  }

  const auto mask_header = std::filesystem::path(cfg.paths.mask).replace_extension(".json");
  if (std::filesystem::exists(mask_header)) {
    const BinaryMask mask = mask_from_raster(read_raster(cfg.paths.mask));
    if (mask.height != input.height || mask.width != input.width) throw data_error("mask and scene sizes differ");
    Volume<float> v(input.bands, input.height, input.width);
    v.data = input.data;
    RgbImage img = false_color(v);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        if (mask.at(y, x)) {
          std::uint8_t* p = img.at(y, x);
          p[0] = static_cast<std::uint8_t>((p[0] + 255) / 2);
          p[1] = static_cast<std::uint8_t>(p[1] / 2);
          p[2] = static_cast<std::uint8_t>(p[2] / 2);
        }
    const auto path = report_dir(cfg) / "mask_overlay.png";
    write_png(img, path);
    written.push_back(path);
  }
  return written;
}

}  // namespace vqburn
