#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "vqburn/raster_io.hpp"
#include "test_util.hpp"

using namespace vqburn;

namespace {

Raster random_raster(int b, int h, int w, std::uint64_t seed) {
  Raster r(b, h, w);
  Rng rng(seed);
  for (float& v : r.data) v = static_cast<float>(rng.uniform(-5.0, 5.0));
  return r;
}

}  // namespace

TEST(RasterIo, RoundTripIsBitExact) {
  TempDir dir;
  Raster r = random_raster(3, 2, 2, 1);
  r.band_roles = {{BandRole::kNir, 0}, {BandRole::kRed, 1}, {BandRole::kGreen, 2}};
  r.geotransform = GeoTransform{500000.0, 1.5, 0.0, 4649776.0, 0.0, -1.5};
  r.nodata = -9999.0;
  r.tags["sensor"] = "synthetic";
  write_raster(r, dir / "scene");
  const Raster back = read_raster(dir / "scene");
  EXPECT_EQ(back, r);
  EXPECT_EQ(std::memcmp(back.data.data(), r.data.data(), r.data.size() * 4), 0);
}

TEST(RasterIo, NodataPreservedInHeader) {
  TempDir dir;
  Raster r(1, 2, 3, 1.0f);
  r.nodata = -9999.0;
  write_raster(r, dir / "nd");
  const auto h = nlohmann::json::parse(read_file(dir / "nd.json"));
  EXPECT_EQ(h["nodata"].get<double>(), -9999.0);
  EXPECT_EQ(h["dtype"], "f32");
  EXPECT_EQ(read_raster(dir / "nd").nodata, -9999.0);
}

TEST(RasterIo, AllZerosAnyShape) {
  TempDir dir;
  for (auto [b, h, w] : {std::tuple{1, 1, 1}, std::tuple{2, 5, 3}, std::tuple{4, 7, 9}}) {
    write_raster(Raster(b, h, w), dir / "z");
    const Raster r = read_raster(dir / "z");
    EXPECT_EQ(r.bands, b);
    for (float v : r.data) EXPECT_EQ(v, 0.0f);
  }
}

TEST(RasterIo, HeaderDeclaringMoreBandsThanPayloadIsMalformed) {
  TempDir dir;
  write_raster(Raster(3, 4, 4, 0.5f), dir / "bad");
  auto h = nlohmann::json::parse(read_file(dir / "bad.json"));
  h["bands"] = 4;
  write_file_atomic(dir / "bad.json", h.dump());
  try {
    read_raster(dir / "bad");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("malformed raster header"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("4 bands"), std::string::npos);
  }
}

TEST(RasterIo, MissingFileAndGarbageHeader) {
  TempDir dir;
  EXPECT_THROW(read_raster(dir / "nothing"), Error);
  write_raster(Raster(1, 2, 2), dir / "g");
  write_file_atomic(dir / "g.json", "{not json");
  EXPECT_THROW(read_raster(dir / "g"), Error);
}

TEST(RasterIo, UnwritablePathFails) {
  TempDir dir;
  write_file_atomic(dir / "file", "x");
  // A regular file where a directory is expected.
  EXPECT_THROW(write_raster(Raster(1, 2, 2), dir / "file" / "sub" / "r"), Error);
}

TEST(RasterIo, ValidateRejectsBadRoles) {
  Raster r(2, 2, 2);
  r.band_roles = {{BandRole::kNir, 0}, {BandRole::kRed, 0}};
  EXPECT_THROW(validate(r), Error);
  r.band_roles = {{BandRole::kNir, 2}};
  EXPECT_THROW(validate(r), Error);
}

TEST(RasterIo, SelectBandsReordersByRole) {
  Raster r(3, 1, 2);
  r.data = {1, 1, 2, 2, 3, 3};
  r.band_roles = {{BandRole::kBlue, 0}, {BandRole::kRed, 1}, {BandRole::kNir, 2}};
  const BandRole want[] = {BandRole::kNir, BandRole::kBlue};
  const Raster s = select_bands(r, want);
  EXPECT_EQ(s.data, (std::vector<float>{3, 3, 1, 1}));
  EXPECT_EQ(s.band_roles.at(BandRole::kNir), 0);
  const BandRole missing[] = {BandRole::kGreen};
  EXPECT_THROW(select_bands(r, missing), Error);
}

TEST(Normalize, MinMaxThreeValues) {
  Raster r(1, 1, 3);
  r.data = {0, 5, 10};
  auto [n, s] = normalize(r, {NormMethod::kMinMax});
  EXPECT_EQ(n.data, (std::vector<float>{0.0f, 0.5f, 1.0f}));
  EXPECT_EQ(s.min[0], 0.0);
  EXPECT_EQ(s.max[0], 10.0);
}

TEST(Normalize, ConstantBandIsDegenerate) {
  Raster r(1, 3, 3, 2.0f);
  try {
    normalize(r, {NormMethod::kMinMax});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("degenerate"), std::string::npos);
  }
}

TEST(Normalize, PercentileMatchesScalarReference) {
  Raster r = random_raster(1, 1, 1000, 42);
  auto [n, s] = normalize(r, {NormMethod::kPercentile, 2, 98});

  // Reference: sort, interpolate at (p/100)(n-1), clamp then rescale.
  std::vector<double> sorted(r.data.begin(), r.data.end());
  std::sort(sorted.begin(), sorted.end());
  auto pct = [&](double p) {
    const double pos = p / 100.0 * (sorted.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    return sorted[i] + (pos - i) * (sorted[std::min(i + 1, sorted.size() - 1)] - sorted[i]);
  };
  const double lo = pct(2), hi = pct(98);
  EXPECT_EQ(s.p_low[0], lo);
  EXPECT_EQ(s.p_high[0], hi);
  int saturated = 0;
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    const double want = std::clamp((r.data[i] - lo) / (hi - lo), 0.0, 1.0);
    EXPECT_EQ(n.data[i], static_cast<float>(want));
    EXPECT_GE(n.data[i], 0.0f);
    EXPECT_LE(n.data[i], 1.0f);
    saturated += n.data[i] == 0.0f || n.data[i] == 1.0f;
  }
  EXPECT_LE(saturated, 40);
}

TEST(Normalize, MinMaxIsIdempotent) {
  Raster r = random_raster(2, 8, 8, 3);
  auto [once, s1] = normalize(r, {NormMethod::kMinMax});
  auto [twice, s2] = normalize(once, {NormMethod::kMinMax});
  for (std::size_t i = 0; i < once.data.size(); ++i) EXPECT_NEAR(once.data[i], twice.data[i], 1e-12);
}

TEST(Normalize, NodataUntouchedAndExcludedFromStats) {
  Raster r(1, 1, 4);
  r.data = {-9999, 2, 4, 6};
  r.nodata = -9999.0;
  auto [n, s] = normalize(r, {NormMethod::kMinMax});
  EXPECT_EQ(s.min[0], 2.0);
  EXPECT_EQ(n.data, (std::vector<float>{-9999.0f, 0.0f, 0.5f, 1.0f}));
}

TEST(Normalize, ReapplyWithoutClipExtrapolates) {
  Raster r(1, 1, 3);
  r.data = {0, 5, 10};
  auto [n, s] = normalize(r, {NormMethod::kMinMax});
  Raster other(1, 1, 2);
  other.data = {-5, 20};
  EXPECT_EQ(apply_band_stats(other, s).data, (std::vector<float>{0.0f, 1.0f}));
  EXPECT_EQ(apply_band_stats(other, s, false).data, (std::vector<float>{-0.5f, 2.0f}));
}

TEST(Normalize, StatsJsonRoundTrip) {
  auto [n, s] = normalize(random_raster(3, 4, 4, 9));
  EXPECT_EQ(band_stats_from_json(nlohmann::json::parse(to_json(s).dump())), s);
  for (std::size_t b = 0; b < 3; ++b) {
    EXPECT_LE(s.min[b], s.p_low[b]);
    EXPECT_LE(s.p_low[b], s.p_high[b]);
    EXPECT_LE(s.p_high[b], s.max[b]);
  }
}

TEST(Normalize, BadPercentileBoundsAreConfigErrors) {
  try {
    normalize(random_raster(1, 4, 4, 1), {NormMethod::kPercentile, 60, 40});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}
