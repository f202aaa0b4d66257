// Drives the vqburn binary end to end through std::system.

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "test_util.hpp"
#include "vqburn/pipeline.hpp"

using namespace vqburn;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code;
  std::string output;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(VQBURN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

// Small scenes and a toy model so the whole file runs in well under a minute.
class CliTest : public ::testing::Test {
 protected:
  TempDir dir;

  RunResult cli(const std::string& args) { return run_cli(args, dir / "log.txt"); }

  void SetUp() override {
    ASSERT_EQ(cli("synth --out " + (dir / "train").string() + " --seed 1 --height 128 --width 128").code, 0);
    ASSERT_EQ(cli("synth --out " + (dir / "scene").string() +
                  " --seed 2 --height 128 --width 128 --burns 1 --clouds 1 --burn-radius-min 10 --burn-radius-max 14")
                  .code,
              0);
    config = nlohmann::json::parse(R"({
      "seed": 7,
      "output_dir": "out",
      "paths": {"train_raster": "train", "scene_raster": "scene", "ground_truth": "scene_truth"},
      "model": {"hidden_channels": [8, 16], "latent_dim": 8, "codebook_size": 16, "epochs": 2, "batch_size": 4},
      "patch": {"size": 64, "stride": 32, "max_patches": 6}
    })");
    write_config();
  }

  void write_config() { write_file_atomic(dir / "run.json", config.dump(2)); }
  std::string cfg() const { return "--config " + (dir / "run.json").string(); }
  fs::path out(const std::string& name) const { return dir / "out" / name; }

  nlohmann::json config;
};

}  // namespace

TEST_F(CliTest, SynthWritesSceneTruthAndClouds) {
  EXPECT_TRUE(fs::exists(dir / "train.bin"));
  EXPECT_TRUE(fs::exists(dir / "scene_truth.json"));
  EXPECT_TRUE(fs::exists(dir / "scene_clouds.bin"));
  EXPECT_FALSE(fs::exists(dir / "train_truth.json"));
}

TEST_F(CliTest, PrepareTilesDefaultGrid) {
  ASSERT_EQ(cli("synth --out " + (dir / "big").string() + " --seed 3").code, 0);  // 512 x 512
  config["paths"]["train_raster"] = "big";
  config.erase("patch");
  write_config();
  const auto r = cli("prepare " + cfg());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto m = nlohmann::json::parse(slurp(out("patches.json")));
  EXPECT_EQ(m["count"], 9);
  EXPECT_EQ(m["positions"].size(), 9u);
  const std::string first = slurp(out("patches.json"));
  ASSERT_EQ(cli("prepare " + cfg()).code, 0);
  EXPECT_EQ(slurp(out("patches.json")), first);
}

TEST_F(CliTest, PrepareRejectsSceneSmallerThanPatch) {
  config["patch"] = {{"size", 256}, {"stride", 128}};
  write_config();
  const auto r = cli("prepare " + cfg());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("error"), std::string::npos);
}

TEST_F(CliTest, TrainResumePredictPostprocessEvaluateReport) {
  ASSERT_EQ(cli("prepare " + cfg()).code, 0);
  auto r = cli("train " + cfg());
  ASSERT_EQ(r.code, 0) << r.output;
  std::string loss = slurp(out("loss.csv"));
  EXPECT_EQ(loss.rfind("epoch,total,rec,reg,align\n", 0), 0u);
  EXPECT_EQ(line_count(loss), 3u);

  r = cli("train " + cfg() + " --resume --epochs 1");
  ASSERT_EQ(r.code, 0) << r.output;
  loss = slurp(out("loss.csv"));
  EXPECT_EQ(line_count(loss), 4u);
  EXPECT_NE(loss.find("\n3,"), std::string::npos);

  r = cli("predict " + cfg());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(anomaly_map_from_raster(read_raster(out("anomaly_map"))).provenance, "am");
  ASSERT_EQ(cli("predict " + cfg() + " --mode sm_only").code, 0);
  EXPECT_EQ(anomaly_map_from_raster(read_raster(out("anomaly_map"))).provenance, "sm");
  ASSERT_EQ(cli("predict " + cfg()).code, 0);

  // No filters: the final mask equals the binarized map.
  r = cli("postprocess " + cfg());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_raster(out("mask")), read_raster(out("mask_raw")));

  config["threshold_search"] = {{"enabled", true}, {"ndvi", {{"min", -0.2}, {"max", 1.0}, {"steps", 7}}},
                                {"tmbi", {0.1, 0.3}}};
  write_config();
  r = cli("postprocess " + cfg());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(line_count(slurp(out("threshold_search.csv"))), 1u + 7 + 2);
  const auto raw = mask_from_raster(read_raster(out("mask_raw")));
  const auto fin = mask_from_raster(read_raster(out("mask")));
  for (std::size_t i = 0; i < raw.size(); ++i) ASSERT_LE(fin.data[i], raw.data[i]);

  r = cli("evaluate " + cfg());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("f1"), std::string::npos);
  EXPECT_TRUE(fs::exists(out("metrics.csv")));
  const auto metrics = nlohmann::json::parse(slurp(out("metrics.json")));
  EXPECT_TRUE(metrics.contains("precision"));

  r = cli("report " + cfg() + " --patches 0,2");
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string png = slurp(out("report/patch_2.png"));
  EXPECT_EQ(png.substr(1, 3), "PNG");
  EXPECT_TRUE(fs::exists(out("report/patch_0.png")));
  EXPECT_TRUE(fs::exists(out("report/mask_overlay.png")));
  ASSERT_EQ(cli("report " + cfg() + " --patches 0,2").code, 0);
  EXPECT_EQ(slurp(out("report/patch_2.png")), png);
  EXPECT_EQ(cli("report " + cfg() + " --patches 99").code, 2);
}

TEST_F(CliTest, EvaluatePerfectAndEmptyMasks) {
  const Raster truth = read_raster(dir / "scene_truth");
  fs::create_directories(dir / "out");
  write_raster(truth, out("mask"));
  auto r = cli("evaluate " + cfg());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(nlohmann::json::parse(slurp(out("metrics.json")))["f1"], 1.0);

  write_raster(Raster(1, truth.height, truth.width, 0.0f), out("mask"));
  ASSERT_EQ(cli("evaluate " + cfg()).code, 0);
  const auto m = nlohmann::json::parse(slurp(out("metrics.json")));
  EXPECT_EQ(m["recall"], 0.0);
  EXPECT_EQ(m["precision"], "undefined");
}

TEST_F(CliTest, ErrorsMapToExitCodes) {
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("train --epochs notanumber").code, 2);
  EXPECT_EQ(cli("train --config " + (dir / "nope.json").string()).code, 2);
  // Missing manifest and missing checkpoint are data errors.
  EXPECT_EQ(cli("train " + cfg()).code, 3);
  EXPECT_EQ(cli("predict " + cfg()).code, 3);
  EXPECT_EQ(cli("report " + cfg()).code, 3);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(CliTest, PredictReportsBandMismatch) {
  ASSERT_EQ(cli("prepare " + cfg()).code, 0);
  ASSERT_EQ(cli("train " + cfg() + " --epochs 1").code, 0);
  Raster two(2, 128, 128, 0.3f);
  two.band_roles = {{BandRole::kNir, 0}, {BandRole::kRed, 1}};
  write_raster(two, dir / "two");
  const auto r = cli("predict " + cfg() + " --scene " + (dir / "two").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("Green"), std::string::npos) << r.output;
}
