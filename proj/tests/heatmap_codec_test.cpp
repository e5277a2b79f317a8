// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <utility>

#include "hkp/heatmap_codec.hpp"
#include "test_util.hpp"

namespace hkp {
namespace {

using Cell = std::pair<int, int>;  // (x, y)

TEST(KeypointHeatmap, UnitPeakAtIntegerKeypoint) {
  const auto p = make_keypoint_heatmap(5, 7, 16, 12, 1.75);
  EXPECT_DOUBLE_EQ(p.at(7, 5), 1.0);
  for (double v : p.values) EXPECT_LE(v, 1.0);
}

TEST(KeypointHeatmap, InverseEAtSigmaRootTwo) {
  const double sigma = 2.0;
  // A pixel at offset (sigma, sigma) sits at distance sigma * sqrt(2).
  const auto p = make_keypoint_heatmap(3, 3, 10, 10, sigma);
  EXPECT_NEAR(p.at(5, 5), std::exp(-1.0), 1e-12);
  EXPECT_NEAR(p.at(5, 5), 0.367879, 1e-6);
}

TEST(KeypointHeatmap, FarOutsideGridIsNegligible) {
  const auto p = make_keypoint_heatmap(-200, 300, 28, 28, 1.75);
  for (double v : p.values) EXPECT_LT(v, 1e-10);
}

TEST(KeypointHeatmap, MatchesClosedFormOnRandomKeypoints) {
  test::Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const double kx = rng.uniform(-5, 33);
    const double ky = rng.uniform(-5, 33);
    const double sigma = rng.uniform(0.5, 4.0);
    const auto p = make_keypoint_heatmap(kx, ky, 28, 28, sigma);
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x) {
        const double d2 = (x - kx) * (x - kx) + (y - ky) * (y - ky);
        ASSERT_NEAR(p.at(y, x), std::exp(-d2 / (2 * sigma * sigma)), 1e-9);
      }
  }
}

TEST(KeypointHeatmap, RejectsNonPositiveSigma) {
  EXPECT_THROW(make_keypoint_heatmap(1, 1, 4, 4, 0.0), ConfigError);
}

TEST(BackgroundHeatmap, SinglePlaneIsComplement) {
  const auto k = make_keypoint_heatmap(4, 4, 9, 9, 1.5);
  std::vector<Plane64> planes = {k};
  const auto bg = make_background_heatmap<double>(planes);
  for (std::size_t i = 0; i < bg.size(); ++i) EXPECT_DOUBLE_EQ(bg.values[i], 1.0 - k.values[i]);
}

TEST(BackgroundHeatmap, AllZeroPlanesGiveOnes) {
  std::vector<Plane64> planes(kNumKeypoints, Plane64(6, 5));
  const auto bg = make_background_heatmap<double>(planes);
  for (double v : bg.values) EXPECT_EQ(v, 1.0);
}

TEST(BackgroundHeatmap, IdentityWithPerPixelMax) {
  test::Rng rng(2);
  std::vector<Plane64> planes;
  std::vector<Cell> kps;
  for (int k = 0; k < kNumKeypoints; ++k) {
    kps.emplace_back(rng.integer(0, 27), rng.integer(0, 27));
    planes.push_back(make_keypoint_heatmap(kps.back().first, kps.back().second, 28,
                                           28, 1.75));
  }
  const auto bg = make_background_heatmap<double>(planes);
  for (std::size_t i = 0; i < bg.size(); ++i) {
    double mx = 0.0;
    for (const auto& p : planes) mx = std::max(mx, p.values[i]);
    EXPECT_NEAR(bg.values[i] + mx, 1.0, 1e-15);
  }
  for (const auto& [x, y] : kps) EXPECT_EQ(bg.at(y, x), 0.0);
}

TEST(BackgroundHeatmap, MismatchedGridsRejected) {
  std::vector<Plane64> planes = {Plane64(4, 4), Plane64(4, 5)};
  EXPECT_THROW(make_background_heatmap<double>(planes), ConfigError);
}

std::set<Cell> peak_cells(const std::vector<Peak>& peaks) {
  std::set<Cell> s;
  for (const auto& p : peaks) s.emplace(p.x, p.y);
  return s;
}

// Cells that are >= every 8-neighbour.
std::set<Cell> weak_maxima(const ProbMap& m) {
  std::set<Cell> s;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool ok = true;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if ((dx || dy) && ny >= 0 && nx >= 0 && ny < m.height && nx < m.width &&
              m.at(ny, nx) > m.at(y, x))
            ok = false;
        }
      if (ok) s.emplace(x, y);
    }
  return s;
}

TEST(FindPeaks, SingleBump) {
  const auto plane = make_keypoint_heatmap(6, 3, 10, 12, 1.5);
  const auto peaks = find_peaks(plane, 5);
  ASSERT_EQ(peaks.size(), 1u);
  EXPECT_EQ(peaks[0].x, 6);
  EXPECT_EQ(peaks[0].y, 3);
}

TEST(FindPeaks, TwoEqualBumpsInRowMajorOrder) {
  ProbMap m(12, 12, 0.0);
  m.at(8, 2) = 0.4;
  m.at(3, 9) = 0.4;
  m.at(0, 0) = 0.1;
  const auto peaks = find_peaks(m, 2);
  ASSERT_EQ(peaks.size(), 2u);
  EXPECT_EQ(peaks[0].x, 9);
  EXPECT_EQ(peaks[0].y, 3);
  EXPECT_EQ(peaks[1].x, 2);
  EXPECT_EQ(peaks[1].y, 8);
}

TEST(FindPeaks, UniformPlaneGivesFirstCell) {
  const auto peaks = find_peaks(ProbMap(7, 9, 1.0 / 63), 5);
  ASSERT_EQ(peaks.size(), 1u);
  EXPECT_EQ(peaks[0].x, 0);
  EXPECT_EQ(peaks[0].y, 0);
}

TEST(FindPeaks, MatchesStrictMaximaOnContinuousPlanes) {
  test::Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    ProbMap m(9, 9);
    for (double& v : m.values) v = rng.uniform();
    // Continuous draws have no ties, so peaks are exactly the strict maxima.
    const auto peaks = find_peaks(m, 81);
    EXPECT_EQ(peak_cells(peaks), weak_maxima(m));
    for (std::size_t i = 1; i < peaks.size(); ++i)
      EXPECT_GE(peaks[i - 1].prob, peaks[i].prob);
  }
}

TEST(FindPeaks, SubsetOfWeakMaximaWithTies) {
  test::Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    ProbMap m(rng.integer(1, 9), rng.integer(1, 9));
    for (double& v : m.values) v = rng.integer(0, 3);
    const auto peaks = find_peaks(m, 100);
    const auto weak = weak_maxima(m);
    ASSERT_FALSE(peaks.empty());
    for (const auto& c : peak_cells(peaks)) EXPECT_TRUE(weak.count(c));
    const auto truncated = find_peaks(m, 2);
    ASSERT_LE(truncated.size(), 2u);
    for (std::size_t i = 0; i < truncated.size(); ++i) {
      EXPECT_EQ(truncated[i].x, peaks[i].x);
      EXPECT_EQ(truncated[i].y, peaks[i].y);
    }
    // Global maximum with the lowest index is always reported first.
    const auto best = argmax_index(m);
    EXPECT_EQ(peaks[0].y * m.width + peaks[0].x, static_cast<int>(best));
  }
}

Heatmaps raw_heatmaps(int h, int w) {
  Heatmaps hm(h, w, kNumHeatmaps);
  hm.space = HeatmapSpace::raw;
  return hm;
}

TEST(Decode, TauZeroIsPerPlaneArgmax) {
  test::Rng rng(5);
  DecodeParams params;
  params.tau = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    auto hm = raw_heatmaps(rng.integer(2, 20), rng.integer(2, 20));
    for (float& v : hm.data) v = rng.uniformf(-3, 3);
    const auto kps = decode_keypoints(hm, params);
    for (int k = 0; k < kNumKeypoints; ++k) {
      int bx = 0, by = 0;
      for (int y = 0; y < hm.height; ++y)
        for (int x = 0; x < hm.width; ++x)
          if (hm.at(y, x, k) > hm.at(by, bx, k)) bx = x, by = y;
      EXPECT_EQ(kps[k].x, bx);
      EXPECT_EQ(kps[k].y, by);
      EXPECT_EQ(kps[k].source, KeypointSource::argmax);
      EXPECT_EQ(kps[k].index, k);
    }
  }
}

TEST(Decode, SharpPlanesUseArgmax) {
  test::Rng rng(6);
  auto hm = raw_heatmaps(28, 28);
  std::vector<Cell> truth;
  for (int k = 0; k < kNumKeypoints; ++k) {
    truth.emplace_back(rng.integer(0, 27), rng.integer(0, 27));
    hm.at(truth[k].second, truth[k].first, k) = 12.0f;
  }
  const auto kps = decode_keypoints(hm);
  for (int k = 0; k < kNumKeypoints; ++k) {
    EXPECT_EQ(kps[k].x, truth[k].first);
    EXPECT_EQ(kps[k].y, truth[k].second);
    EXPECT_EQ(kps[k].source, KeypointSource::argmax);
    EXPECT_GT(kps[k].confidence, 0.9);
    EXPECT_LE(kps[k].confidence, 1.0);
  }
}

TEST(Decode, FallbackPicksPeakNearestConfidentKeypoints) {
  auto hm = raw_heatmaps(28, 28);
  const int weak = 7;
  for (int k = 0; k < kNumKeypoints; ++k) {
    if (k == weak) continue;
    // Confident keypoints clustered around (20, 20).
    hm.at(19 + k % 3, 19 + k / 7, k) = 15.0f;
  }
  hm.at(4, 4, weak) = 0.5f;    // far peak, earlier in row-major order
  hm.at(22, 21, weak) = 0.5f;  // near peak
  const auto kps = decode_keypoints(hm);
  EXPECT_EQ(kps[weak].source, KeypointSource::fallback);
  EXPECT_EQ(kps[weak].x, 21);
  EXPECT_EQ(kps[weak].y, 22);

  // Hand evaluation of the mean-distance rule for both candidates.
  double near = 0.0, far = 0.0;
  for (int k = 0; k < kNumKeypoints; ++k) {
    if (k == weak) continue;
    near += std::hypot(kps[k].x - 21, kps[k].y - 22);
    far += std::hypot(kps[k].x - 4, kps[k].y - 4);
  }
  EXPECT_LT(near, far);
}

TEST(Decode, UniformPlanesFallBackToFirstCell) {
  const auto kps = decode_keypoints(raw_heatmaps(28, 28));
  for (const auto& kp : kps) {
    EXPECT_EQ(kp.x, 0);
    EXPECT_EQ(kp.y, 0);
    EXPECT_EQ(kp.source, KeypointSource::fallback);
    EXPECT_NEAR(kp.confidence, 1.0 / 784, 1e-12);
  }
}

TEST(Decode, SynthesisRoundTrip) {
  test::Rng rng(7);
  const double sigma = 1.75;
  const int margin = static_cast<int>(std::ceil(3 * sigma));
  for (int trial = 0; trial < 100; ++trial) {
    auto hm = raw_heatmaps(28, 28);
    std::vector<Cell> truth;
    for (int k = 0; k < kNumKeypoints; ++k) {
      truth.emplace_back(rng.integer(margin, 27 - margin),
                         rng.integer(margin, 27 - margin));
      const auto plane = make_keypoint_heatmap(truth[k].first, truth[k].second, 28, 28, sigma);
      for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x)
          hm.at(y, x, k) = static_cast<float>(10.0 * plane.at(y, x));
    }
    const auto kps = decode_keypoints(hm);
    for (int k = 0; k < kNumKeypoints; ++k) {
      ASSERT_EQ(kps[k].x, truth[k].first);
      ASSERT_EQ(kps[k].y, truth[k].second);
    }
  }
}

TEST(Decode, OutputsStayInsideGrid) {
  test::Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto hm = raw_heatmaps(rng.integer(1, 12), rng.integer(1, 12));
    for (float& v : hm.data) v = static_cast<float>(rng.integer(-1, 1)) * 0.01f;
    for (const auto& kp : decode_keypoints(hm)) {
      EXPECT_GE(kp.x, 0);
      EXPECT_GE(kp.y, 0);
      EXPECT_LT(kp.x, hm.width);
      EXPECT_LT(kp.y, hm.height);
      EXPECT_GE(kp.confidence, 0.0);
      EXPECT_LE(kp.confidence, 1.0);
    }
  }
}

TEST(Decode, RejectsWrongChannelCountAndBadParams) {
  EXPECT_THROW(decode_keypoints(Heatmaps(4, 4, 21)), UsageError);
  DecodeParams p;
  p.tau = 1.0;
  EXPECT_THROW(decode_keypoints(raw_heatmaps(4, 4), p), ConfigError);
  p = {};
  p.max_fallback_peaks = 0;
  EXPECT_THROW(decode_keypoints(raw_heatmaps(4, 4), p), ConfigError);
}

}  // namespace
}  // namespace hkp
