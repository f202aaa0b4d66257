// vqburn: command-line front end for the burnt-area pipeline.
//
//   vqburn synth --out data/normal --seed 1
//   vqburn prepare --config run.json
//   vqburn train --config run.json [--epochs N] [--resume]
//   vqburn predict --config run.json [--mode am_only|sm_only|weighted]
//   vqburn postprocess --config run.json
//   vqburn evaluate --config run.json
//   vqburn report --config run.json [--patches 0,3]
//   vqburn run --config run.json        (prepare through evaluate)

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vqburn/pipeline.hpp"

using namespace vqburn;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
};

struct Overrides {
  std::optional<int> epochs;
  bool resume = false;
  std::string mode;
  std::optional<double> weight;
  std::string scene;
  std::string binarize;
  std::optional<double> binarize_value;
  std::vector<int> patches;
};

RunConfig load(const Common& c, const Overrides& o) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  if (o.epochs) cfg.model.epochs = *o.epochs;
  cfg.resume = o.resume;
  if (!o.mode.empty()) cfg.scoring = fuse_mode_from_string(o.mode, o.weight.value_or(cfg.scoring.weight));
  else if (o.weight) cfg.scoring.weight = *o.weight;
  if (!o.scene.empty()) cfg.paths.scene_raster = o.scene;
  if (!o.binarize.empty()) {
    if (o.binarize == "otsu") cfg.binarization = BinarizeMethod::otsu();
    else if (!o.binarize_value) throw config_error("--binarize " + o.binarize + " needs --binarize-value");
    else if (o.binarize == "fixed") cfg.binarization = BinarizeMethod::fixed(*o.binarize_value);
    else if (o.binarize == "quantile") cfg.binarization = BinarizeMethod::quantile(*o.binarize_value);
    else throw config_error("unknown binarization method '" + o.binarize + "'");
  }
  if (!o.patches.empty()) cfg.report_patches = o.patches;
  cfg.finalize();
  cfg.validate();
  return cfg;
}

void print_metrics(const Metrics& m) {
  std::printf("precision %s  recall %s  f1 %s\n", format_metric(m.precision).c_str(),
              format_metric(m.recall).c_str(), format_metric(m.f1).c_str());
}

void log_epoch(const EpochRecord& r) {
  std::fprintf(stderr, "epoch %d  loss %.6g  rec %.6g  reg %.6g  align %.6g  codes %d\n", r.epoch, r.loss.total,
               r.loss.reconstruction, r.loss.regularization, r.loss.alignment, r.codes_used);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised burnt-area mapping with a VQ-VAE alignment map"};
  app.require_subcommand(1);
  Common common;
  Overrides ov;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run config");
    sub->add_option("--seed", common.seed, "Override the run seed");
    sub->add_option("--output-dir", common.output_dir, "Override the output directory");
  };

  SynthOptions synth;
  std::string synth_out;
  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic scene (and truth mask when burns > 0)");
  s_synth->add_option("--out", synth_out, "Output raster path")->required();
  s_synth->add_option("--seed", synth.spec.seed);
  s_synth->add_option("--height", synth.spec.height);
  s_synth->add_option("--width", synth.spec.width);
  s_synth->add_option("--burns", synth.spec.n_burns);
  s_synth->add_option("--clouds", synth.spec.n_clouds);
  s_synth->add_option("--burn-radius-min", synth.spec.burn_radius_min);
  s_synth->add_option("--burn-radius-max", synth.spec.burn_radius_max);
  s_synth->add_option("--cloud-gain", synth.spec.cloud_gain);

  auto* s_prepare = app.add_subcommand("prepare", "Normalize and tile the training scene");
  auto* s_train = app.add_subcommand("train", "Train the VQ-VAE on prepared patches");
  s_train->add_option("--epochs", ov.epochs);
  s_train->add_flag("--resume", ov.resume, "Continue from the existing checkpoint");
  auto* s_predict = app.add_subcommand("predict", "Score a scene into an anomaly map");
  auto* s_post = app.add_subcommand("postprocess", "Binarize and filter the anomaly map");
  auto* s_eval = app.add_subcommand("evaluate", "Compare the final mask with ground truth");
  auto* s_report = app.add_subcommand("report", "Write PNG triptychs and a mask overlay");
  s_report->add_option("--patches", ov.patches, "Patch indices to render")->delimiter(',');
  auto* s_run = app.add_subcommand("run", "prepare, train, predict, postprocess and evaluate");
  s_run->add_option("--epochs", ov.epochs);

  for (auto* sub : {s_prepare, s_train, s_predict, s_post, s_eval, s_report, s_run}) add_common(sub);
  for (auto* sub : {s_predict, s_report, s_run}) {
    sub->add_option("--scene", ov.scene, "Scene raster to score");
  }
  for (auto* sub : {s_predict, s_run}) {
    sub->add_option("--mode", ov.mode, "am_only, sm_only or weighted");
    sub->add_option("--weight", ov.weight, "AM weight for weighted fusion");
  }
  for (auto* sub : {s_post, s_run}) {
    sub->add_option("--binarize", ov.binarize, "otsu, fixed or quantile");
    sub->add_option("--binarize-value", ov.binarize_value);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (s_synth->parsed()) {
      synth.out = synth_out;
      for (const auto& p : cmd_synth(synth).written) std::printf("wrote %s\n", p.string().c_str());
      return 0;
    }
    const RunConfig cfg = load(common, ov);
    if (s_prepare->parsed()) {
      const auto r = cmd_prepare(cfg);
      std::printf("wrote %s (%zu patches)\n", r.manifest.string().c_str(), r.patches);
    } else if (s_train->parsed()) {
      const auto r = cmd_train(cfg, log_epoch);
      std::printf("wrote %s (%d epochs)\n", r.checkpoint.string().c_str(), r.epochs_completed);
    } else if (s_predict->parsed()) {
      const auto am = cmd_predict(cfg);
      std::printf("wrote %s (%s)\n", cfg.paths.anomaly_map.string().c_str(), am.provenance.c_str());
    } else if (s_post->parsed()) {
      const auto r = cmd_postprocess(cfg);
      std::printf("wrote %s (threshold %.6g)\n", cfg.paths.mask.string().c_str(), r.score_threshold);
    } else if (s_eval->parsed()) {
      print_metrics(cmd_evaluate(cfg));
    } else if (s_report->parsed()) {
      for (const auto& p : cmd_report(cfg)) std::printf("wrote %s\n", p.string().c_str());
    } else if (s_run->parsed()) {
      cmd_prepare(cfg);
      cmd_train(cfg, log_epoch);
      cmd_predict(cfg);
      cmd_postprocess(cfg);
      print_metrics(cmd_evaluate(cfg));
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
