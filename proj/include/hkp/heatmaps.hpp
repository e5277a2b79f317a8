// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <vector>

#include "hkp/error.hpp"
#include "hkp/tensor.hpp"

namespace hkp {

inline constexpr int kNumKeypoints = 21;
inline constexpr int kNumHeatmaps = kNumKeypoints + 1;
inline constexpr int kBackgroundChannel = kNumKeypoints;

enum class HeatmapSpace { raw, probability };

/// K+1 planes on one grid, stored HWC like Tensor. Channel 21 is background.
struct Heatmaps {
  int height = 0;
  int width = 0;
  int channels = kNumHeatmaps;
  HeatmapSpace space = HeatmapSpace::raw;
  std::vector<float> data;

  Heatmaps() = default;
  Heatmaps(int h, int w, int c = kNumHeatmaps,
           HeatmapSpace s = HeatmapSpace::raw)
      : height(h), width(w), channels(c), space(s) {
    if (h < 1 || w < 1 || c < 1) throw ConfigError("heatmaps must be non-empty");
    data.assign(static_cast<std::size_t>(h) * w * c, 0.0f);
  }

  static Heatmaps from_tensor(const Tensor& t, int n = 0) {
    Heatmaps hm(t.height(), t.width(), t.channels());
    const std::size_t plane = static_cast<std::size_t>(t.height()) * t.width() *
                              t.channels();
    std::copy_n(t.data().begin() + n * plane, plane, hm.data.begin());
    return hm;
  }

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  ScorePlane plane(int c) const {
    ScorePlane p(height, width);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) p.at(y, x) = at(y, x, c);
    return p;
  }

  void set_plane(int c, const ScorePlane& p) {
    if (p.height != height || p.width != width)
      throw ConfigError("plane grid does not match heatmaps grid");
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) at(y, x, c) = p.at(y, x);
  }
};

}  // namespace hkp
