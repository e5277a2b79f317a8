// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hkp/error.hpp"
#include "hkp/heatmaps.hpp"
#include "hkp/ops.hpp"

namespace hkp {

/// Keypoint order: 0 wrist; 1-4 thumb (base to tip); 5-8 index; 9-12 middle;
/// 13-16 ring; 17-20 little finger.
inline constexpr std::array<const char*, kNumKeypoints> kKeypointNames = {
    "wrist",      "thumb1",  "thumb2",  "thumb3",  "thumb4",  "index1",
    "index2",     "index3",  "index4",  "middle1", "middle2", "middle3",
    "middle4",    "ring1",   "ring2",   "ring3",   "ring4",   "little1",
    "little2",    "little3", "little4"};

/// Skeleton edges (parent, child) following the keypoint order.
inline constexpr std::array<std::array<int, 2>, 20> kSkeletonEdges = {{
    {0, 1},  {1, 2},   {2, 3},   {3, 4},   {0, 5},   {5, 6},   {6, 7},
    {7, 8},  {0, 9},   {9, 10},  {10, 11}, {11, 12}, {0, 13},  {13, 14},
    {14, 15}, {15, 16}, {0, 17}, {17, 18}, {18, 19}, {19, 20},
}};

enum class KeypointSource { argmax, fallback };
enum class Frame { grid, crop, source };

inline const char* to_string(KeypointSource s) {
  return s == KeypointSource::argmax ? "argmax" : "fallback";
}

struct Keypoint {
  int index = 0;
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
  KeypointSource source = KeypointSource::argmax;
  Frame frame = Frame::grid;
  bool valid = true;
};

using KeypointSet = std::array<Keypoint, kNumKeypoints>;

struct DecodeParams {
  std::optional<double> tau;  // unset: 10 / (h * w)
  int max_fallback_peaks = 5;
  double sigma = 1.75;

  double threshold_for(int h, int w) const {
    return tau ? *tau : 10.0 / (static_cast<double>(h) * w);
  }

  void validate() const {
    if (tau && !(*tau >= 0.0 && *tau < 1.0))
      throw ConfigError("tau must lie in [0, 1)");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (max_fallback_peaks < 1)
      throw ConfigError("max_fallback_peaks must be >= 1");
  }
};

using Plane64 = Grid<double>;

/// Gaussian target at integer pixel centers:
///   H(p) = exp(-((px - kx)^2 + (py - ky)^2) / (2 sigma^2))
/// The keypoint may lie outside the grid.
inline Plane64 make_keypoint_heatmap(double kx, double ky, int height, int width,
                                     double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  Plane64 plane(height, width);
  const double denom = 2.0 * sigma * sigma;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double dx = x - kx;
      const double dy = y - ky;
      plane.at(y, x) = std::exp(-(dx * dx + dy * dy) / denom);
    }
  return plane;
}

/// Background = 1 - per-pixel maximum over the keypoint planes. With no
/// planes, or all-zero planes, the background is 1 everywhere.
template <typename T>
Grid<T> make_background_heatmap(std::span<const Grid<T>> planes, int height,
                                int width) {
  Grid<T> bg(height, width);
  for (std::size_t i = 0; i < bg.size(); ++i) {
    T mx = T(0);
    for (const auto& p : planes) {
      if (p.height != height || p.width != width)
        throw ConfigError("keypoint planes must share one grid");
      mx = std::max(mx, p.values[i]);
    }
    bg.values[i] = T(1) - mx;
  }
  return bg;
}

template <typename T>
Grid<T> make_background_heatmap(std::span<const Grid<T>> planes) {
  if (planes.empty())
    throw ConfigError("background needs at least one plane to define the grid");
  return make_background_heatmap(planes, planes.front().height,
                                 planes.front().width);
}

struct Peak {
  int x = 0;
  int y = 0;
  double prob = 0.0;
};

/// Row-major index of the maximum; the lowest index wins ties.
template <typename T>
std::size_t argmax_index(const Grid<T>& g) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < g.size(); ++i)
    if (g.values[i] > g.values[best]) best = i;
  return best;
}

/// Local maxima under the 8-neighbourhood. Equal neighbours are ordered by
/// row-major index, so a plateau yields only its first cell. Sorted by
/// probability (descending) then row-major index, truncated to max_peaks.
inline std::vector<Peak> find_peaks(const ProbMap& prob, int max_peaks) {
  std::vector<Peak> peaks;
  if (max_peaks < 1) return peaks;
  const int h = prob.height;
  const int w = prob.width;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = prob.at(y, x);
      bool is_peak = true;
      for (int dy = -1; dy <= 1 && is_peak; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int ny = y + dy;
          const int nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const double nv = prob.at(ny, nx);
          // Neighbours earlier in row-major order win ties.
          const bool earlier = dy < 0 || (dy == 0 && dx < 0);
          if (nv > v || (nv == v && earlier)) {
            is_peak = false;
            break;
          }
        }
      if (is_peak) peaks.push_back({x, y, v});
    }
  std::stable_sort(peaks.begin(), peaks.end(),
                   [](const Peak& a, const Peak& b) { return a.prob > b.prob; });
  if (peaks.size() > static_cast<std::size_t>(max_peaks))
    peaks.resize(max_peaks);
  return peaks;
}

/// Two-pass decode of raw heatmaps into grid-space keypoints.
///
/// Pass 1 softmaxes each keypoint plane and keeps its argmax when the peak
/// probability reaches tau. Pass 2 handles the remaining planes: among the
/// top max_fallback_peaks local maxima it picks the one with the smallest
/// mean distance to the pass-1 keypoints, or the global argmax when pass 1
/// found nothing. The background plane is not used.
inline KeypointSet decode_keypoints(const Heatmaps& raw,
                                    const DecodeParams& params = {}) {
  params.validate();
  if (raw.channels != kNumHeatmaps)
    throw UsageError("decode expects 22 heatmap channels, got " +
                     std::to_string(raw.channels));
  const double tau = params.threshold_for(raw.height, raw.width);

  KeypointSet out{};
  std::vector<ProbMap> probs;
  probs.reserve(kNumKeypoints);
  std::vector<int> pending;
  std::vector<std::array<double, 2>> anchors;

  for (int k = 0; k < kNumKeypoints; ++k) {
    probs.push_back(spatial_softmax(raw.plane(k)));
    const auto& p = probs.back();
    const auto best = argmax_index(p);
    Keypoint& kp = out[k];
    kp.index = k;
    kp.frame = Frame::grid;
    if (p.values[best] >= tau) {
      kp.x = static_cast<double>(best % p.width);
      kp.y = static_cast<double>(best / p.width);
      kp.confidence = p.values[best];
      kp.source = KeypointSource::argmax;
      anchors.push_back({kp.x, kp.y});
    } else {
      pending.push_back(k);
    }
  }

  for (int k : pending) {
    const auto& p = probs[k];
    const auto peaks = find_peaks(p, params.max_fallback_peaks);
    Peak chosen = peaks.front();
    if (!anchors.empty()) {
      double best_cost = std::numeric_limits<double>::infinity();
      for (const auto& pk : peaks) {
        double cost = 0.0;
        for (const auto& a : anchors)
          cost += std::hypot(pk.x - a[0], pk.y - a[1]);
        cost /= static_cast<double>(anchors.size());
        if (cost < best_cost) {
          best_cost = cost;
          chosen = pk;
        }
      }
    }
    Keypoint& kp = out[k];
    kp.x = chosen.x;
    kp.y = chosen.y;
    kp.confidence = chosen.prob;
    kp.source = KeypointSource::fallback;
  }
  return out;
}

}  // namespace hkp
