#pragma once

// Scene-level post-processing: binarization of the anomaly map, spectral
// index filters that drop false positives, F1-driven threshold selection
// and small-component cleanup.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "vqburn/anomaly_scoring.hpp"
#include "vqburn/common.hpp"
#include "vqburn/evaluation.hpp"
#include "vqburn/raster_io.hpp"
#include "vqburn/volume.hpp"

namespace vqburn {

// ---------------------------------------------------------------------------
// Spectral indices

namespace detail {

/// (a - b) / (a + b), with 0/0 taken as 0.
inline double normalized_difference(double a, double b) {
  const double s = a + b;
  return s == 0.0 ? 0.0 : (a - b) / s;
}

}  // namespace detail

inline Grid<double> compute_ndvi(const Raster& r) {
  const auto nir = r.role(BandRole::kNir), red = r.role(BandRole::kRed);
  Grid<double> out(r.height, r.width);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = detail::normalized_difference(nir[i], red[i]);
  return out;
}

inline Grid<double> compute_ndwi(const Raster& r) {
  const auto green = r.role(BandRole::kGreen), nir = r.role(BandRole::kNir);
  Grid<double> out(r.height, r.width);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = detail::normalized_difference(green[i], nir[i]);
  return out;
}

inline Grid<double> compute_tmbi(const Raster& r) {
  const auto blue = r.role(BandRole::kBlue), green = r.role(BandRole::kGreen), red = r.role(BandRole::kRed);
  Grid<double> out(r.height, r.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double b = blue[i], g = green[i], rd = red[i];
    out.data[i] = std::sqrt((b * b + g * g + rd * rd) / 3.0);
  }
  return out;
}

/// Appends a single-band raster as a new band with the given role, e.g. a
/// Blue band kept outside the NIR/Red/Green model input.
inline Raster attach_band(const Raster& scene, const Raster& aux, BandRole role) {
  if (aux.bands != 1) throw data_error("auxiliary band raster must have exactly 1 band");
  if (aux.height != scene.height || aux.width != scene.width)
    throw data_error("auxiliary band is not aligned with the scene");
  if (scene.has_role(role)) throw data_error("scene already has a " + to_string(role) + " band");
  Raster out = scene;
  out.data.insert(out.data.end(), aux.data.begin(), aux.data.end());
  out.band_roles[role] = out.bands;
  out.bands += 1;
  return out;
}

// ---------------------------------------------------------------------------
// Binarization

struct BinarizeMethod {
  enum class Kind { kFixed, kQuantile, kOtsu };
  Kind kind = Kind::kOtsu;
  double value = 0.0;  // threshold for kFixed, q for kQuantile

  static BinarizeMethod fixed(double t) { return {Kind::kFixed, t}; }
  static BinarizeMethod quantile(double q) { return {Kind::kQuantile, q}; }
  static BinarizeMethod otsu() { return {}; }
};

struct BinarizeResult {
  BinaryMask mask;
  double threshold = 0.0;  // mask = score > threshold
};

/// Otsu on a 256-bin histogram spanning [min, max]. Returns the last bin of
/// the lower class; the first maximizing bin wins ties.
inline int otsu_split_bin(const std::vector<std::uint64_t>& hist) {
  const std::size_t nb = hist.size();
  double total = 0.0, total_mean = 0.0;
  for (std::size_t i = 0; i < nb; ++i) {
    total += static_cast<double>(hist[i]);
    total_mean += static_cast<double>(i) * static_cast<double>(hist[i]);
  }
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_k = 0;
  for (std::size_t k = 0; k + 1 < nb; ++k) {
    w0 += static_cast<double>(hist[k]);
    sum0 += static_cast<double>(k) * static_cast<double>(hist[k]);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0, mu1 = (total_mean - sum0) / w1;
    const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best) {
      best = between;
      best_k = static_cast<int>(k);
    }
  }
  return best_k;
}

inline BinarizeResult binarize(const Grid<float>& scores, const BinarizeMethod& method) {
  for (float v : scores.data)
    if (!std::isfinite(v)) throw data_error("binarize: non-finite score");
  if (scores.data.empty()) throw data_error("binarize: empty map");
  BinarizeResult res;
  res.mask = BinaryMask(scores.height, scores.width);
  const auto [lo_it, hi_it] = std::minmax_element(scores.data.begin(), scores.data.end());
  const double lo = *lo_it, hi = *hi_it;

  switch (method.kind) {
    case BinarizeMethod::Kind::kFixed:
      res.threshold = method.value;
      break;
    case BinarizeMethod::Kind::kQuantile: {
      if (!(method.value >= 0.0 && method.value <= 1.0)) throw config_error("quantile must lie in [0, 1]");
      if (hi == lo) throw data_error("binarize: constant map has no quantile split");
      std::vector<float> sorted = scores.data;
      std::sort(sorted.begin(), sorted.end());
      const auto n = static_cast<double>(sorted.size());
      const auto rank = static_cast<std::size_t>(std::max(0.0, std::ceil(method.value * n) - 1.0));
      res.threshold = sorted[std::min(rank, sorted.size() - 1)];
      break;
    }
    case BinarizeMethod::Kind::kOtsu: {
      if (hi == lo) throw data_error("binarize: constant map has no Otsu split");
      constexpr int kBins = 256;
      const double width = (hi - lo) / kBins;
      auto bin_of = [&](double v) { return std::min(kBins - 1, static_cast<int>((v - lo) / width)); };
      std::vector<std::uint64_t> hist(kBins, 0);
      for (float v : scores.data) ++hist[bin_of(v)];
      const int k = otsu_split_bin(hist);
      res.threshold = lo + (k + 1) * width;
      for (std::size_t i = 0; i < scores.size(); ++i) res.mask.data[i] = bin_of(scores.data[i]) > k ? 1 : 0;
      return res;
    }
  }
  for (std::size_t i = 0; i < scores.size(); ++i) res.mask.data[i] = scores.data[i] > res.threshold ? 1 : 0;
  return res;
}

// ---------------------------------------------------------------------------
// Index filters

enum class SpectralIndex { kNdvi, kNdwi, kTmbi };

inline std::string to_string(SpectralIndex i) {
  switch (i) {
    case SpectralIndex::kNdvi: return "ndvi";
    case SpectralIndex::kNdwi: return "ndwi";
    case SpectralIndex::kTmbi: return "tmbi";
  }
  return "?";
}

/// Keep-conditions for anomalous pixels: index <= *_max. A missing value
/// disables that rule.
struct IndexThresholds {
  std::optional<double> ndvi_max;
  std::optional<double> ndwi_max;
  std::optional<double> tmbi_max;

  std::optional<double>& get(SpectralIndex i) {
    return i == SpectralIndex::kNdvi ? ndvi_max : i == SpectralIndex::kNdwi ? ndwi_max : tmbi_max;
  }
  const std::optional<double>& get(SpectralIndex i) const {
    return i == SpectralIndex::kNdvi ? ndvi_max : i == SpectralIndex::kNdwi ? ndwi_max : tmbi_max;
  }

  void validate() const {
    if (ndvi_max && !(*ndvi_max >= -1.0 && *ndvi_max <= 1.0)) throw config_error("ndvi_max must lie in [-1, 1]");
    if (ndwi_max && !(*ndwi_max >= -1.0 && *ndwi_max <= 1.0)) throw config_error("ndwi_max must lie in [-1, 1]");
    if (tmbi_max && !(*tmbi_max >= 0.0)) throw config_error("tmbi_max must be >= 0");
  }

  friend bool operator==(const IndexThresholds&, const IndexThresholds&) = default;
};

inline constexpr SpectralIndex kAllIndices[] = {SpectralIndex::kNdvi, SpectralIndex::kNdwi, SpectralIndex::kTmbi};

inline Grid<double> compute_index(const Raster& r, SpectralIndex i) {
  switch (i) {
    case SpectralIndex::kNdvi: return compute_ndvi(r);
    case SpectralIndex::kNdwi: return compute_ndwi(r);
    case SpectralIndex::kTmbi: return compute_tmbi(r);
  }
  return {};
}

/// Clears mask pixels whose index exceeds `max_value`.
inline void filter_by_index(BinaryMask& mask, const Grid<double>& index, double max_value) {
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.data[i] && !(index.data[i] <= max_value)) mask.data[i] = 0;
}

inline BinaryMask apply_index_filters(const BinaryMask& mask, const Raster& raster, const IndexThresholds& thr) {
  thr.validate();
  if (mask.height != raster.height || mask.width != raster.width)
    throw data_error("apply_index_filters: mask and raster shapes differ");
  BinaryMask out = mask;
  for (SpectralIndex i : kAllIndices)
    if (const auto& t = thr.get(i)) filter_by_index(out, compute_index(raster, i), *t);
  return out;
}

struct ThresholdGrids {
  std::vector<double> ndvi;
  std::vector<double> ndwi;
  std::vector<double> tmbi;

  const std::vector<double>& get(SpectralIndex i) const {
    return i == SpectralIndex::kNdvi ? ndvi : i == SpectralIndex::kNdwi ? ndwi : tmbi;
  }
};

struct CandidateScore {
  SpectralIndex index;
  double threshold = 0.0;
  Metrics metrics;
};

struct ThresholdSelection {
  IndexThresholds thresholds;
  std::vector<CandidateScore> table;
};

/// For each index with a non-empty grid, filters `mask` by that index alone
/// at every grid value and keeps the value with the highest F1 against
/// `truth`. Ties go to the larger (less restrictive) threshold. An undefined
/// F1 ranks as 0.
inline ThresholdSelection select_thresholds(const BinaryMask& mask, const Raster& raster, const BinaryMask& truth,
                                            const ThresholdGrids& grids, const BinaryMask* valid = nullptr) {
  if (!mask.same_shape(truth) || mask.height != raster.height || mask.width != raster.width)
    throw data_error("select_thresholds: mask, raster and truth shapes differ");
  if (std::none_of(truth.data.begin(), truth.data.end(), [](std::uint8_t v) { return v != 0; }))
    throw data_error("select_thresholds: ground truth has no positive pixels (recall undefined)");
  if (grids.ndvi.empty() && grids.ndwi.empty() && grids.tmbi.empty())
    throw config_error("select_thresholds: all threshold grids are empty");

  ThresholdSelection sel;
  for (SpectralIndex idx : kAllIndices) {
    const auto& grid = grids.get(idx);
    if (grid.empty()) continue;
    const Grid<double> values = compute_index(raster, idx);
    std::optional<double> best_t;
    double best_f1 = -1.0;
    for (double t : grid) {
      BinaryMask filtered = mask;
      filter_by_index(filtered, values, t);
      CandidateScore c{idx, t, evaluate(filtered, truth, valid)};
      const double f1 = c.metrics.f1.value_or(0.0);
      if (f1 > best_f1 || (f1 == best_f1 && t > *best_t)) {
        best_f1 = f1;
        best_t = t;
      }
      sel.table.push_back(std::move(c));
    }
    sel.thresholds.get(idx) = best_t;
  }
  return sel;
}

inline std::string to_csv(const std::vector<CandidateScore>& table) {
  std::string out = "index,threshold,precision,recall,f1\n";
  char buf[64];
  for (const auto& c : table) {
    std::snprintf(buf, sizeof buf, "%.9g", c.threshold);
    out += to_string(c.index) + "," + buf + "," + format_metric(c.metrics.precision) + "," +
           format_metric(c.metrics.recall) + "," + format_metric(c.metrics.f1) + "\n";
  }
  return out;
}

/// Evenly spaced grid lo, lo+step, ..., hi (inclusive, n values).
inline std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 1) throw config_error("linspace needs n >= 1");
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  return out;
}

// ---------------------------------------------------------------------------
// Component cleanup

/// Clears 8-connected true components with fewer than `min_pixels` pixels.
inline BinaryMask remove_small_components(const BinaryMask& mask, int min_pixels) {
  if (min_pixels < 0) throw config_error("min_pixels must be >= 0");
  BinaryMask out = mask;
  if (min_pixels <= 1) return out;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> component, stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask.data[start] || seen[start]) continue;
    component.clear();
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      component.push_back(i);
      const int y = static_cast<int>(i / mask.width), x = static_cast<int>(i % mask.width);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= mask.height || nx >= mask.width) continue;
          const std::size_t j = static_cast<std::size_t>(ny) * mask.width + nx;
          if (mask.data[j] && !seen[j]) {
            seen[j] = 1;
            stack.push_back(j);
          }
        }
    }
    if (static_cast<int>(component.size()) < min_pixels)
      for (std::size_t i : component) out.data[i] = 0;
  }
  return out;
}

inline Raster to_raster(const BinaryMask& m) {
  Raster r(1, m.height, m.width);
  for (std::size_t i = 0; i < m.size(); ++i) r.data[i] = m.data[i] ? 1.0f : 0.0f;
  return r;
}

inline BinaryMask mask_from_raster(const Raster& r) {
  if (r.bands != 1) throw data_error("mask raster must have exactly 1 band");
  BinaryMask m(r.height, r.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = r.data[i] > 0.5f ? 1 : 0;
  return m;
}

}  // namespace vqburn
