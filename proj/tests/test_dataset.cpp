#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "vqburn/dataset.hpp"
#include "test_util.hpp"

using namespace vqburn;

namespace {

Raster noise_raster(int b, int h, int w, std::uint64_t seed) {
  Raster r(b, h, w);
  Rng rng(seed);
  for (float& v : r.data) v = static_cast<float>(rng.uniform());
  return r;
}

Volume<float> noise_patch(int c, int s, std::uint64_t seed) {
  Volume<float> v(c, s, s);
  Rng rng(seed);
  for (float& x : v.data) x = static_cast<float>(rng.uniform());
  return v;
}

double variance(const std::vector<float>& v) {
  double m = 0, q = 0;
  for (float x : v) m += x;
  m /= v.size();
  for (float x : v) q += (x - m) * (x - m);
  return q / v.size();
}

}  // namespace

TEST(ExtractPatches, SinglePatchCoversExactFit) {
  const PatchSet ps = extract_patches(Raster(3, 256, 256), 256, 128);
  ASSERT_EQ(ps.size(), 1u);
  EXPECT_EQ(ps.positions[0], (PatchPosition{0, 0}));
}

TEST(ExtractPatches, GridRuleCount512) {
  // Anchors by the grid rule: 0, 128, 256 per axis (256 + 256 == 512, flush).
  std::vector<int> anchors;
  for (int a = 0; a + 256 <= 512; a += 128) anchors.push_back(a);
  ASSERT_EQ(anchors, (std::vector<int>{0, 128, 256}));
  const PatchSet ps = extract_patches(Raster(1, 512, 512), 256, 128);
  EXPECT_EQ(ps.size(), anchors.size() * anchors.size());
  EXPECT_EQ(window_anchors(512, 256, 128), anchors);
}

TEST(ExtractPatches, TrailingEdgeAnchor) {
  EXPECT_EQ(window_anchors(300, 256, 128), (std::vector<int>{0, 44}));
  EXPECT_EQ(window_anchors(10, 4, 3), (std::vector<int>{0, 3, 6}));
  EXPECT_EQ(window_anchors(11, 4, 3), (std::vector<int>{0, 3, 6, 7}));
}

TEST(ExtractPatches, TooSmallIsDataError) {
  try {
    extract_patches(Raster(1, 100, 300), 256, 128);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
  EXPECT_THROW(window_anchors(10, 4, 5), Error);
  EXPECT_THROW(window_anchors(10, 4, 0), Error);
}

TEST(ExtractPatches, PositionsSortedUniqueAndCropsMatch) {
  const Raster r = noise_raster(2, 37, 29, 5);
  const PatchSet ps = extract_patches(r, 8, 5);
  EXPECT_TRUE(std::is_sorted(ps.positions.begin(), ps.positions.end()));
  EXPECT_EQ(std::set<PatchPosition>(ps.positions.begin(), ps.positions.end()).size(), ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto [row, col] = ps.positions[i];
    ASSERT_LE(row + 8, r.height);
    ASSERT_LE(col + 8, r.width);
    for (int b = 0; b < 2; ++b)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) ASSERT_EQ(ps.patches[i].at(b, y, x), r.at(b, row + y, col + x));
  }
  // Every pixel covered.
  std::vector<int> cover(r.plane_size(), 0);
  for (auto p : ps.positions)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) ++cover[(p.row + y) * r.width + p.col + x];
  EXPECT_EQ(std::count(cover.begin(), cover.end(), 0), 0);
}

TEST(ExtractPatches, ChannelRolesFollowBandOrder) {
  Raster r(2, 4, 4);
  r.band_roles = {{BandRole::kRed, 1}, {BandRole::kNir, 0}};
  const PatchSet ps = extract_patches(r, 4, 4);
  EXPECT_EQ(ps.channel_roles, (std::vector<BandRole>{BandRole::kNir, BandRole::kRed}));
}

TEST(Augment, ConstantPatchStaysConstant) {
  Volume<float> p(3, 16, 16, 0.37f);
  AugmentConfig cfg;
  cfg.p_h_flip = cfg.p_v_flip = cfg.p_rotate = cfg.p_blur = 1.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) EXPECT_EQ(augment(p, cfg, seed), p);
}

TEST(Augment, FlipsAreInvolutions) {
  const auto p = noise_patch(2, 9, 1);
  EXPECT_EQ(flip_horizontal(flip_horizontal(p)), p);
  EXPECT_EQ(flip_vertical(flip_vertical(p)), p);
  EXPECT_NE(flip_horizontal(p), p);
}

TEST(Augment, RotationGroup) {
  const auto p = noise_patch(1, 5, 2);
  EXPECT_EQ(rotate_quarter(rotate_quarter(p, 1), 3), p);
  EXPECT_EQ(rotate_quarter(p, 4), p);
  EXPECT_EQ(rotate_quarter(p, 2), flip_vertical(flip_horizontal(p)));
  // Counter-clockwise: the top-right corner moves to the top-left.
  EXPECT_EQ(rotate_quarter(p, 1).at(0, 0, 0), p.at(0, 0, 4));
}

TEST(Augment, BlurLowersVarianceAgainstReference) {
  const auto p = noise_patch(1, 32, 3);
  const auto out = gaussian_blur(p, 11, 5.0);
  EXPECT_LT(variance(out.data), variance(p.data));

  // Direct 2-D convolution with the same separable kernel and edge-repeating reflection.
  std::vector<double> k(11);
  double ks = 0;
  for (int i = -5; i <= 5; ++i) ks += k[i + 5] = std::exp(-i * i / 50.0);
  auto refl = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      double acc = 0;
      for (int dy = -5; dy <= 5; ++dy)
        for (int dx = -5; dx <= 5; ++dx)
          acc += k[dy + 5] * k[dx + 5] / (ks * ks) * p.at(0, refl(y + dy, 32), refl(x + dx, 32));
      ASSERT_NEAR(out.at(0, y, x), acc, 1e-6);
    }
}

TEST(Augment, RangePreservedAndDeterministic) {
  const auto p = noise_patch(3, 16, 4);
  AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = augment(p, cfg, seed);
    EXPECT_EQ(a, augment(p, cfg, seed));
    EXPECT_TRUE(a.same_shape(p));
    for (int c = 0; c < 3; ++c) {
      const auto in = p.plane(c), out = a.plane(c);
      EXPECT_GE(*std::min_element(out.begin(), out.end()), *std::min_element(in.begin(), in.end()));
      EXPECT_LE(*std::max_element(out.begin(), out.end()), *std::max_element(in.begin(), in.end()));
    }
  }
}

TEST(Augment, GeometricOnlyIsPermutation) {
  const auto p = noise_patch(1, 8, 5);
  auto sorted = p.data;
  std::sort(sorted.begin(), sorted.end());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto a = augment(p, AugmentConfig{}.geometric_only(), seed).data;
    std::sort(a.begin(), a.end());
    EXPECT_EQ(a, sorted);
  }
}

TEST(Augment, EvenKernelIsConfigError) {
  AugmentConfig cfg;
  cfg.blur_kernel = 10;
  try {
    augment(noise_patch(1, 8, 1), cfg, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
  cfg.blur_kernel = 11;
  cfg.p_blur = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(ReflectIndex, EdgeRepeat) {
  EXPECT_EQ(reflect_index(-1, 5), 0);
  EXPECT_EQ(reflect_index(-2, 5), 1);
  EXPECT_EQ(reflect_index(5, 5), 4);
  EXPECT_EQ(reflect_index(6, 5), 3);
  EXPECT_EQ(reflect_index(3, 1), 0);
}

TEST(PatchSetIo, RoundTrip) {
  TempDir dir;
  Raster r = noise_raster(3, 20, 20, 8);
  r.band_roles = {{BandRole::kNir, 0}, {BandRole::kRed, 1}, {BandRole::kGreen, 2}};
  auto [n, stats] = normalize(r);
  PatchSet ps = extract_patches(n, 8, 6);
  ps.stats = stats;
  save_patchset(ps, dir / "patches.json");
  EXPECT_EQ(load_patchset(dir / "patches.json"), ps);
  EXPECT_THROW(load_patchset(dir / "absent.json"), Error);
}
