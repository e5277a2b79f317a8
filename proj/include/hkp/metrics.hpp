// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hkp/error.hpp"
#include "hkp/heatmap_codec.hpp"
#include "json.hpp"

namespace hkp {

struct ErrorSample {
  int keypoint = 0;
  double error = 0.0;
  double normalizer = 1.0;
  bool valid = true;
};

struct PckCurve {
  std::vector<double> thresholds;
  std::vector<double> values;
};

struct EpeResult {
  std::array<std::optional<double>, kNumKeypoints> per_keypoint{};
  double mean = 0.0;
  double median = 0.0;
  int count = 0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double distance(const Keypoint& a, const Keypoint& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Euclidean error per keypoint. Keypoints invalid in either set are skipped.
inline EpeResult epe(const KeypointSet& pred, const KeypointSet& gt) {
  EpeResult r;
  std::vector<double> errs;
  for (int k = 0; k < kNumKeypoints; ++k) {
    if (!pred[k].valid || !gt[k].valid) continue;
    const double e = detail::distance(pred[k], gt[k]);
    r.per_keypoint[k] = e;
    errs.push_back(e);
  }
  r.count = static_cast<int>(errs.size());
  r.mean = detail::mean_of(errs);
  r.median = detail::median_of(errs);
  return r;
}

/// Pools error samples over a set of images. normalizers, if given, holds
/// one value per image (e.g. head size for PCKh).
inline std::vector<ErrorSample> collect_errors(
    const std::vector<KeypointSet>& preds, const std::vector<KeypointSet>& gts,
    const std::vector<double>& normalizers = {}) {
  if (preds.size() != gts.size())
    throw DataError("prediction and ground-truth counts differ");
  if (!normalizers.empty() && normalizers.size() != preds.size())
    throw DataError("one normalizer per image is required");
  std::vector<ErrorSample> out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double norm = normalizers.empty() ? 1.0 : normalizers[i];
    if (!(norm > 0.0)) throw DataError("normalizer must be positive");
    for (int k = 0; k < kNumKeypoints; ++k) {
      if (!gts[i][k].valid) continue;
      out.push_back(
          {k, detail::distance(preds[i][k], gts[i][k]), norm, preds[i][k].valid});
    }
  }
  return out;
}

struct EpeSummary {
  double mean = 0.0;
  double median = 0.0;
  std::size_t count = 0;
};

inline EpeSummary epe_summary(const std::vector<ErrorSample>& samples) {
  std::vector<double> errs;
  for (const auto& s : samples)
    if (s.valid) errs.push_back(s.error);
  return {detail::mean_of(errs), detail::median_of(errs), errs.size()};
}

/// Fraction of valid samples with error / normalizer <= t, per threshold.
/// An empty sample set yields zeros.
inline PckCurve pck_curve(const std::vector<ErrorSample>& samples,
                          const std::vector<double>& thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1]))
      throw UsageError("PCK thresholds must be strictly increasing");
  std::vector<double> normalized;
  normalized.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.valid) continue;
    if (!(s.normalizer > 0.0)) throw DataError("normalizer must be positive");
    normalized.push_back(s.error / s.normalizer);
  }
  std::sort(normalized.begin(), normalized.end());
  PckCurve c;
  c.thresholds = thresholds;
  c.values.reserve(thresholds.size());
  for (double t : thresholds) {
    if (normalized.empty()) {
      c.values.push_back(0.0);
      continue;
    }
    const auto hits = std::upper_bound(normalized.begin(), normalized.end(), t) -
                      normalized.begin();
    c.values.push_back(static_cast<double>(hits) /
                       static_cast<double>(normalized.size()));
  }
  return c;
}

/// Trapezoidal area under the curve divided by the threshold span.
inline double auc(const PckCurve& curve) {
  const auto n = curve.thresholds.size();
  if (n < 2 || curve.values.size() != n)
    throw UsageError("AUC needs at least two thresholds with matching values");
  double area = 0.0;
  for (std::size_t i = 1; i < n; ++i)
    area += 0.5 * (curve.values[i] + curve.values[i - 1]) *
            (curve.thresholds[i] - curve.thresholds[i - 1]);
  return area / (curve.thresholds.back() - curve.thresholds.front());
}

/// Evenly spaced grid lo, lo+step, ..., hi (inclusive up to rounding).
inline std::vector<double> threshold_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || !(hi > lo)) throw UsageError("invalid threshold grid");
  std::vector<double> t;
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  for (long i = 0; i <= n; ++i) t.push_back(lo + step * static_cast<double>(i));
  return t;
}

/// Translates pred so its root coincides with the ground-truth root.
inline KeypointSet align_root(const KeypointSet& pred, const KeypointSet& gt,
                              int root_index = 0) {
  if (root_index < 0 || root_index >= kNumKeypoints)
    throw UsageError("root index out of range");
  if (!pred[root_index].valid || !gt[root_index].valid)
    throw DataError("root keypoint missing from prediction or ground truth");
  const double dx = gt[root_index].x - pred[root_index].x;
  const double dy = gt[root_index].y - pred[root_index].y;
  KeypointSet out = pred;
  for (auto& kp : out) {
    kp.x += dx;
    kp.y += dy;
  }
  return out;
}

inline std::string curve_csv(const PckCurve& c) {
  std::ostringstream os;
  os << "threshold,value\n";
  char buf[64];
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6g,%.6f\n", c.thresholds[i], c.values[i]);
    os << buf;
  }
  return os.str();
}

struct MetricsSummary {
  double auc = 0.0;
  double mean_epe = 0.0;
  double median_epe = 0.0;
};

inline nlohmann::ordered_json summary_json(const MetricsSummary& s) {
  nlohmann::ordered_json j;
  j["auc"] = s.auc;
  j["mean_epe"] = s.mean_epe;
  j["median_epe"] = s.median_epe;
  return j;
}

/// Header and row in the "AUC / mean EPE / median EPE" table layout.
inline std::string table_header() {
  return "| Architecture/Training set | AUC ↑ | Mean ↓ EPE (px) | Median ↓ EPE (px) |";
}

inline std::string table_row(const std::string& label, const MetricsSummary& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "| %s | %.3f | %.2f | %.2f |", label.c_str(),
                s.auc, s.mean_epe, s.median_epe);
  return buf;
}

}  // namespace hkp
