#pragma once

// Pixelwise confusion counts and precision / recall / F1.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

#include <json.hpp>

#include "vqburn/common.hpp"
#include "vqburn/volume.hpp"

namespace vqburn {

/// true (1) = burnt / anomalous.
using BinaryMask = Grid<std::uint8_t>;

struct Confusion {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Precision, recall and F1. A metric whose denominator is zero is left
/// empty (undefined) rather than reported as 0.
struct Metrics {
  Confusion counts;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

inline Confusion confusion(const BinaryMask& pred, const BinaryMask& truth, const BinaryMask* valid = nullptr) {
  if (!pred.same_shape(truth)) throw data_error("confusion: prediction and truth shapes differ");
  if (valid && !valid->same_shape(pred)) throw data_error("confusion: valid mask shape differs");
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (valid && !valid->data[i]) continue;
    const bool p = pred.data[i] != 0, t = truth.data[i] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Harmonic mean of precision and recall; 0 when both are 0.
inline double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

inline Metrics precision_recall_f1(const Confusion& c) {
  Metrics m;
  m.counts = c;
  if (c.tp + c.fp > 0) m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (m.precision && m.recall) m.f1 = f1_score(*m.precision, *m.recall);
  return m;
}

inline Metrics evaluate(const BinaryMask& pred, const BinaryMask& truth, const BinaryMask* valid = nullptr) {
  return precision_recall_f1(confusion(pred, truth, valid));
}

inline nlohmann::json to_json(const Metrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json("undefined"); };
  return {{"tp", m.counts.tp}, {"fp", m.counts.fp}, {"fn", m.counts.fn}, {"tn", m.counts.tn},
          {"precision", opt(m.precision)}, {"recall", opt(m.recall)}, {"f1", opt(m.f1)}};
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

inline std::string to_csv(const Metrics& m) {
  return "tp,fp,fn,tn,precision,recall,f1\n" + std::to_string(m.counts.tp) + "," + std::to_string(m.counts.fp) + "," +
         std::to_string(m.counts.fn) + "," + std::to_string(m.counts.tn) + "," + format_metric(m.precision) + "," +
         format_metric(m.recall) + "," + format_metric(m.f1) + "\n";
}

}  // namespace vqburn
