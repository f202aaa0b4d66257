#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "vqburn/anomaly_scoring.hpp"

using namespace vqburn;

namespace {

ModelParams<float> small_model() {
  ModelConfig c;
  c.input_size = 16;
  c.hidden_channels = {4, 8};
  c.latent_dim = 4;
  c.codebook_size = 8;
  c.seed = 3;
  return init_params<float>(c);
}

Grid<float> random_map(int h, int w, Rng& rng) {
  Grid<float> g(h, w);
  for (float& v : g.data) v = static_cast<float>(rng.uniform());
  return g;
}

}  // namespace

TEST(Upsample, ReplicatesBlocks) {
  Grid<float> d(2, 2);
  d.data = {0, 1, 2, 3};
  const auto up = upsample_nearest(d, 2);
  ASSERT_EQ(up.height, 4);
  const std::vector<float> want = {0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3};
  EXPECT_EQ(up.data, want);
}

TEST(AlignmentMap, ZeroWhenLatentsOnCodebook) {
  auto p = small_model();
  Volume<float> x(3, 16, 16);
  Rng rng(1);
  for (float& v : x.data) v = static_cast<float>(rng.uniform());
  // Replace the codebook with the encoder outputs themselves (2x2 latent grid = 4 rows).
  const auto ze = encode(p, x);
  for (int pos = 0; pos < 4; ++pos)
    for (int d = 0; d < 4; ++d) p.codebook.row(pos)[d] = ze.data[d * 4 + pos];
  const auto am = alignment_map(p, x);
  EXPECT_EQ(am.height, 16);
  for (float v : am.data) EXPECT_EQ(v, 0.0f);
}

TEST(AlignmentMap, NonNegativeAndBlockConstant) {
  const auto p = small_model();
  Volume<float> x(3, 16, 16);
  Rng rng(2);
  for (float& v : x.data) v = static_cast<float>(rng.uniform());
  const auto am = alignment_map(p, x);
  for (int y = 0; y < 16; ++y)
    for (int xx = 0; xx < 16; ++xx) {
      EXPECT_GE(am.at(y, xx), 0.0f);
      EXPECT_EQ(am.at(y, xx), am.at(y / 8 * 8, xx / 8 * 8));
    }
}

TEST(ReconstructionMap, ConstantOffsetOnOneBand) {
  Volume<double> a(3, 4, 4, 0.2), b = a;
  for (double& v : b.plane(1)) v += 0.5;
  const auto sm = squared_error_map(a, b);
  for (double v : sm.data) EXPECT_NEAR(v, 0.25 / 3, 1e-15);
  for (double v : squared_error_map(a, a).data) EXPECT_EQ(v, 0.0);
}

TEST(ReconstructionMap, FiniteNonNegative) {
  const auto p = small_model();
  Volume<float> x(3, 16, 16, 0.3f);
  for (float v : reconstruction_map(p, x).data) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0f);
  }
}

TEST(Fuse, Modes) {
  Rng rng(3);
  const auto am = random_map(4, 4, rng), sm = random_map(4, 4, rng);
  EXPECT_EQ(fuse(am, sm, FuseMode::am_only()), am);
  EXPECT_EQ(fuse(am, sm, FuseMode::sm_only()), sm);
  EXPECT_EQ(fuse(am, sm, FuseMode::weighted(1.0)), minmax_normalize(am));
  const auto n = minmax_normalize(am);
  EXPECT_EQ(fuse(n, n, FuseMode::weighted(0.5)), n);
  EXPECT_THROW(fuse(am, sm, FuseMode::weighted(1.5)), Error);
  EXPECT_THROW(fuse(am, Grid<float>(3, 3), FuseMode::am_only()), Error);
}

TEST(Fuse, ProvenanceStrings) {
  EXPECT_EQ(FuseMode::am_only().provenance(), "am");
  EXPECT_EQ(FuseMode::sm_only().provenance(), "sm");
  EXPECT_EQ(FuseMode::weighted(0.25).provenance(), "fused(weighted,0.25)");
  EXPECT_THROW(fuse_mode_from_string("max"), Error);
}

TEST(Stitch, SinglePatchIsIdentity) {
  Rng rng(4);
  const auto m = random_map(8, 8, rng);
  EXPECT_EQ(stitch({m}, {{0, 0}}, 8, 8), m);
}

TEST(Stitch, OverlapAveragesAgainstReference) {
  // Two 4x4 maps on a 4x6 scene overlapping in columns 2-3.
  const Grid<float> a(4, 4, 0.0f), b(4, 4, 1.0f);
  const auto out = stitch({a, b}, {{0, 0}, {0, 2}}, 4, 6);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) {
      const double sum = (x < 4 ? 0.0 : 0.0) + (x >= 2 ? 1.0 : 0.0);
      const int cnt = (x < 4) + (x >= 2);
      EXPECT_EQ(out.at(y, x), static_cast<float>(sum / cnt));
    }
  EXPECT_EQ(out.at(0, 2), 0.5f);

  const Grid<float> c(4, 4, 0.7f);
  for (float v : stitch({c, c}, {{0, 0}, {0, 2}}, 4, 6).data) EXPECT_EQ(v, 0.7f);
}

TEST(Stitch, InverseOfExtraction) {
  Rng rng(5);
  Raster r(1, 37, 23);
  for (float& v : r.data) v = static_cast<float>(rng.uniform(-10, 10));
  const PatchSet ps = extract_patches(r, 8, 3);
  std::vector<Grid<float>> maps;
  for (const auto& p : ps.patches) {
    Grid<float> g(8, 8);
    g.data = p.data;
    maps.push_back(g);
  }
  const auto out = stitch(maps, ps.positions, 37, 23);
  EXPECT_EQ(out.data, r.data);
}

TEST(Stitch, PermutationInvariantBitExact) {
  Rng rng(6);
  std::vector<Grid<float>> maps;
  std::vector<PatchPosition> pos;
  for (int r = 0; r <= 12; r += 4)
    for (int c = 0; c <= 12; c += 3) {
      maps.push_back(random_map(8, 8, rng));
      pos.push_back({r, c});
    }
  const auto ref = stitch(maps, pos, 20, 20);
  std::vector<std::size_t> order(maps.size());
  std::iota(order.begin(), order.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<Grid<float>> m2;
    std::vector<PatchPosition> p2;
    for (auto i : order) {
      m2.push_back(maps[i]);
      p2.push_back(pos[i]);
    }
    const auto out = stitch(m2, p2, 20, 20);
    ASSERT_EQ(std::memcmp(out.data.data(), ref.data.data(), ref.data.size() * 4), 0);
  }
}

TEST(Stitch, CoverageAndBoundsErrors) {
  const Grid<float> m(4, 4, 1.0f);
  EXPECT_THROW(stitch({m}, {{0, 0}}, 4, 5), Error);
  EXPECT_THROW(stitch({m}, {{1, 0}}, 4, 4), Error);
  EXPECT_THROW(stitch({m, m}, {{0, 0}}, 4, 4), Error);
}

TEST(ScoreScene, ShapeProvenanceAndBandMismatch) {
  auto p = small_model();
  p.channel_roles = {BandRole::kNir, BandRole::kRed, BandRole::kGreen};
  Raster scene(4, 24, 40);
  scene.band_roles = {{BandRole::kBlue, 0}, {BandRole::kGreen, 1}, {BandRole::kRed, 2}, {BandRole::kNir, 3}};
  Rng rng(7);
  for (float& v : scene.data) v = static_cast<float>(rng.uniform());
  const auto am = score_scene(p, scene, 8);
  EXPECT_EQ(am.scores.height, 24);
  EXPECT_EQ(am.scores.width, 40);
  EXPECT_EQ(am.provenance, "am");
  for (float v : am.scores.data) EXPECT_GE(v, 0.0f);
  EXPECT_EQ(score_scene(p, scene, 8, FuseMode::sm_only()).provenance, "sm");

  Raster two(2, 24, 40);
  two.band_roles = {{BandRole::kNir, 0}, {BandRole::kRed, 1}};
  try {
    score_scene(p, two, 8);
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("3"), std::string::npos);
    EXPECT_NE(msg.find("2"), std::string::npos);
  }
}

TEST(AnomalyMapRaster, RoundTripKeepsProvenance) {
  AnomalyMap m;
  m.scores = Grid<float>(2, 3, 0.5f);
  m.provenance = "sm";
  const auto back = anomaly_map_from_raster(to_raster(m));
  EXPECT_EQ(back.scores, m.scores);
  EXPECT_EQ(back.provenance, "sm");
}
