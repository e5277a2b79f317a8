// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hkp/error.hpp"
#include "hkp/heatmap_codec.hpp"
#include "hkp/heatmaps.hpp"
#include "hkp/image.hpp"
#include "hkp/tensor.hpp"
#include "json.hpp"

namespace hkp {

enum class Handedness { left, right };

struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
};

struct AnnotatedPoint {
  double x = 0.0;
  double y = 0.0;
  bool visible = true;
};

struct Annotation {
  std::string image;
  std::array<AnnotatedPoint, kNumKeypoints> keypoints{};
  Handedness hand = Handedness::right;
  std::optional<double> head_size;
  std::optional<Box> hand_box;
  std::optional<Box> external_box;

  bool needs_mirroring() const { return hand == Handedness::left; }

  KeypointSet as_keypoints() const {
    KeypointSet s{};
    for (int k = 0; k < kNumKeypoints; ++k) {
      s[k].index = k;
      s[k].x = keypoints[k].x;
      s[k].y = keypoints[k].y;
      s[k].valid = keypoints[k].visible;
      s[k].confidence = 1.0;
      s[k].frame = Frame::source;
    }
    return s;
  }
};

namespace detail {

inline double json_number(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number()) throw ParseError(what + " must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ParseError(what + " must be finite");
  return d;
}

inline Box json_box(const nlohmann::json& v, const std::string& what) {
  if (!v.is_array() || v.size() != 4)
    throw ParseError(what + " must be [x, y, w, h]");
  Box b{json_number(v[0], what), json_number(v[1], what),
        json_number(v[2], what), json_number(v[3], what)};
  if (!(b.w > 0.0 && b.h > 0.0))
    throw ParseError(what + " must have positive width and height");
  return b;
}

}  // namespace detail

/// Parses one annotation object. Unknown fields are ignored.
inline Annotation parse_annotation(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("record is not a JSON object");
  Annotation a;
  if (!j.contains("image") || !j["image"].is_string())
    throw ParseError("missing string field \"image\"");
  a.image = j["image"].get<std::string>();

  if (!j.contains("hand") || !j["hand"].is_string())
    throw ParseError("missing field \"hand\"");
  const auto hand = j["hand"].get<std::string>();
  if (hand == "left")
    a.hand = Handedness::left;
  else if (hand == "right")
    a.hand = Handedness::right;
  else
    throw ParseError("hand must be \"left\" or \"right\", got \"" + hand + "\"");

  if (!j.contains("kp") || !j["kp"].is_array())
    throw ParseError("missing keypoint array \"kp\"");
  const auto& kp = j["kp"];
  if (kp.size() != kNumKeypoints)
    throw ParseError("expected 21 keypoints, got " + std::to_string(kp.size()));
  for (int k = 0; k < kNumKeypoints; ++k) {
    const auto& p = kp[k];
    if (!p.is_array() || p.size() != 3)
      throw ParseError("keypoint " + std::to_string(k) + " must be [x, y, v]");
    const auto what = "keypoint " + std::to_string(k);
    a.keypoints[k] = {detail::json_number(p[0], what),
                      detail::json_number(p[1], what),
                      detail::json_number(p[2], what) > 0.0};
  }
  if (j.contains("head") && !j["head"].is_null()) {
    a.head_size = detail::json_number(j["head"], "head");
    if (!(*a.head_size > 0.0)) throw ParseError("head must be positive");
  }
  if (j.contains("box") && !j["box"].is_null())
    a.hand_box = detail::json_box(j["box"], "box");
  if (j.contains("ext_box") && !j["ext_box"].is_null())
    a.external_box = detail::json_box(j["ext_box"], "ext_box");
  return a;
}

inline nlohmann::ordered_json annotation_json(const Annotation& a) {
  nlohmann::ordered_json j;
  j["image"] = a.image;
  j["hand"] = a.hand == Handedness::left ? "left" : "right";
  auto kp = nlohmann::ordered_json::array();
  for (const auto& p : a.keypoints) kp.push_back({p.x, p.y, p.visible ? 1 : 0});
  j["kp"] = std::move(kp);
  if (a.head_size) j["head"] = *a.head_size;
  if (a.hand_box)
    j["box"] = {a.hand_box->x, a.hand_box->y, a.hand_box->w, a.hand_box->h};
  if (a.external_box)
    j["ext_box"] = {a.external_box->x, a.external_box->y, a.external_box->w,
                    a.external_box->h};
  return j;
}

/// Line-delimited JSON, one annotation per non-blank line.
inline std::vector<Annotation> parse_annotations(std::istream& in,
                                                 const std::string& source = "") {
  std::vector<Annotation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where =
        (source.empty() ? "" : source + ":") + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("record " + where + ": malformed JSON (" + e.what() + ")");
    }
    try {
      out.push_back(parse_annotation(j));
    } catch (const ParseError& e) {
      throw ParseError("record " + where + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Annotation> load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open annotation file " + path);
  return parse_annotations(in, path);
}

/// Row-vector affine map: x' = a*x + b*y + c, y' = d*x + e*y + f.
struct Affine2D {
  double a = 1, b = 0, c = 0;
  double d = 0, e = 1, f = 0;

  std::array<double, 2> apply(double x, double y) const {
    return {a * x + b * y + c, d * x + e * y + f};
  }

  double determinant() const { return a * e - b * d; }

  Affine2D inverse() const {
    const double det = determinant();
    if (std::abs(det) < 1e-12) throw ConfigError("affine map is not invertible");
    Affine2D r;
    r.a = e / det;
    r.b = -b / det;
    r.d = -d / det;
    r.e = a / det;
    r.c = -(r.a * c + r.b * f);
    r.f = -(r.d * c + r.e * f);
    return r;
  }

  /// Map that applies *this first, then next.
  Affine2D then(const Affine2D& next) const {
    Affine2D r;
    r.a = next.a * a + next.b * d;
    r.b = next.a * b + next.b * e;
    r.c = next.a * c + next.b * f + next.c;
    r.d = next.d * a + next.e * d;
    r.e = next.d * b + next.e * e;
    r.f = next.d * c + next.e * f + next.f;
    return r;
  }

  static Affine2D translation(double tx, double ty) { return {1, 0, tx, 0, 1, ty}; }
  static Affine2D scaling(double s) { return {s, 0, 0, 0, s, 0}; }
  static Affine2D rotation(double radians) {
    const double cs = std::cos(radians);
    const double sn = std::sin(radians);
    return {cs, -sn, 0, sn, cs, 0};
  }
};

enum class CropKind { head_scaled, hand_scaled, external_enlarged, fixed_window };

struct CropStrategy {
  CropKind kind = CropKind::hand_scaled;
  double factor = 2.0;
  int target_size = 224;

  static CropStrategy head_scaled(double f = 1.2, int size = 224) {
    return {CropKind::head_scaled, f, size};
  }
  static CropStrategy hand_scaled(double f = 2.0, int size = 224) {
    return {CropKind::hand_scaled, f, size};
  }
  static CropStrategy external_enlarged(double f = 1.25, int size = 224) {
    return {CropKind::external_enlarged, f, size};
  }
  static CropStrategy fixed_window(int size = 224) {
    return {CropKind::fixed_window, 1.0, size};
  }

  void validate() const {
    if (!(factor > 0.0)) throw ConfigError("crop factor must be positive");
    if (target_size < 1) throw ConfigError("crop target size must be >= 1");
  }
};

/// Square crop window in source pixels.
struct CropBox {
  double cx = 0.0;
  double cy = 0.0;
  double side = 0.0;

  double x0() const { return cx - 0.5 * side; }
  double y0() const { return cy - 0.5 * side; }
};

/// Hand box center when given, otherwise the centroid of visible keypoints.
inline std::array<double, 2> hand_center(const Annotation& ann) {
  if (ann.hand_box) return {ann.hand_box->cx(), ann.hand_box->cy()};
  double sx = 0.0, sy = 0.0;
  int n = 0;
  for (const auto& p : ann.keypoints)
    if (p.visible) {
      sx += p.x;
      sy += p.y;
      ++n;
    }
  if (n == 0)
    throw ConfigError("hand center needs a hand box or a visible keypoint");
  return {sx / n, sy / n};
}

inline CropBox crop_box(const Annotation& ann, const CropStrategy& s) {
  s.validate();
  switch (s.kind) {
    case CropKind::head_scaled: {
      if (!ann.head_size)
        throw ConfigError("head_scaled crop requires a head size");
      const auto c = hand_center(ann);
      return {c[0], c[1], s.factor * *ann.head_size};
    }
    case CropKind::hand_scaled: {
      double g = 0.0;
      std::array<double, 2> c{};
      if (ann.hand_box) {
        g = std::max(ann.hand_box->w, ann.hand_box->h);
        c = {ann.hand_box->cx(), ann.hand_box->cy()};
      } else {
        double lx = 1e300, ly = 1e300, hx = -1e300, hy = -1e300;
        int n = 0;
        for (const auto& p : ann.keypoints)
          if (p.visible) {
            lx = std::min(lx, p.x);
            hx = std::max(hx, p.x);
            ly = std::min(ly, p.y);
            hy = std::max(hy, p.y);
            ++n;
          }
        if (n == 0)
          throw ConfigError("hand_scaled crop requires a hand box or visible keypoints");
        g = std::max(hx - lx, hy - ly);
        c = {0.5 * (lx + hx), 0.5 * (ly + hy)};
      }
      if (!(g > 0.0)) throw ConfigError("hand extent is degenerate");
      return {c[0], c[1], s.factor * g};
    }
    case CropKind::external_enlarged: {
      if (!ann.external_box)
        throw ConfigError("external_enlarged crop requires an external box");
      const auto& b = *ann.external_box;
      return {b.cx(), b.cy(), s.factor * std::max(b.w, b.h)};
    }
    case CropKind::fixed_window: {
      const auto c = hand_center(ann);
      return {c[0], c[1], static_cast<double>(s.target_size)};
    }
  }
  throw ConfigError("unknown crop strategy");
}

/// Source -> crop pixel map: x' = (x - x0) * target / side.
inline Affine2D crop_transform(const CropBox& box, int target_size) {
  const double scale = target_size / box.side;
  return Affine2D::translation(-box.x0(), -box.y0()).then(Affine2D::scaling(scale));
}

struct SamplePoint {
  double x = 0.0;
  double y = 0.0;
  bool visible = true;
};

struct Sample {
  Tensor image;  // (1, S, S, 3), normalized to [-1, 1]
  std::array<SamplePoint, kNumKeypoints> keypoints{};
  Affine2D transform;  // source -> crop pixels
  Handedness hand = Handedness::right;
  bool mirrored = false;

  int size() const { return image.width(); }

  /// Maps a crop-space point back to source-image coordinates.
  std::array<double, 2> to_source(double x, double y) const {
    return transform.inverse().apply(x, y);
  }
};

/// v in [0, 255] -> v / 127.5 - 1. Out-of-image pixels read as 0 (-> -1).
inline float normalize_pixel(float v) { return v / 127.5f - 1.0f; }
inline constexpr float kFillValue = -1.0f;

namespace detail {

// Bilinear sample of channel-interleaved data, reading `fill` outside.
template <typename Get>
void bilinear(double x, double y, int w, int h, int channels, float fill,
              Get&& get, float* out) {
  const double fx0 = std::floor(x);
  const double fy0 = std::floor(y);
  const int x0 = static_cast<int>(fx0);
  const int y0 = static_cast<int>(fy0);
  const double ax = x - fx0;
  const double ay = y - fy0;
  for (int ch = 0; ch < channels; ++ch) {
    double acc = 0.0;
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i) {
        const int xi = x0 + i;
        const int yj = y0 + j;
        const double wgt = (i ? ax : 1.0 - ax) * (j ? ay : 1.0 - ay);
        if (wgt == 0.0) continue;
        const double v = (xi < 0 || yj < 0 || xi >= w || yj >= h)
                             ? fill
                             : get(xi, yj, ch);
        acc += wgt * v;
      }
    out[ch] = static_cast<float>(acc);
  }
}

}  // namespace detail

/// Warps a normalized NHWC image: out(q) = in(inverse(q)), bilinear, fill
/// outside the source.
inline Tensor warp_image(const Tensor& in, const Affine2D& map, int out_size,
                         float fill = kFillValue) {
  const Affine2D inv = map.inverse();
  Tensor out({1, out_size, out_size, in.channels()});
  for (int y = 0; y < out_size; ++y)
    for (int x = 0; x < out_size; ++x) {
      const auto src = inv.apply(x, y);
      detail::bilinear(
          src[0], src[1], in.width(), in.height(), in.channels(), fill,
          [&](int xi, int yi, int ch) { return in.at(0, yi, xi, ch); },
          out.pixel(0, y, x));
    }
  return out;
}

/// Square crop per strategy, resized (bilinear) to target_size. fixed_window
/// keeps the source scale. Keypoints go through the same transform.
inline Sample crop_hand(const Image& image, const Annotation& ann,
                        const CropStrategy& strategy) {
  const CropBox box = crop_box(ann, strategy);
  const int size = strategy.target_size;
  Sample s;
  s.transform = crop_transform(box, size);
  s.hand = ann.hand;
  s.image = Tensor({1, size, size, 3});
  const Affine2D inv = s.transform.inverse();
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const auto src = inv.apply(x, y);
      float* o = s.image.pixel(0, y, x);
      detail::bilinear(
          src[0], src[1], image.width, image.height, 3, 0.0f,
          [&](int xi, int yi, int ch) {
            return static_cast<float>(image.px(xi, yi)[ch]);
          },
          o);
      for (int ch = 0; ch < 3; ++ch) o[ch] = normalize_pixel(o[ch]);
    }
  for (int k = 0; k < kNumKeypoints; ++k) {
    const auto& p = ann.keypoints[k];
    const auto q = s.transform.apply(p.x, p.y);
    s.keypoints[k] = {q[0], q[1], p.visible};
  }
  return s;
}

/// Horizontal flip of image and keypoints: x' = (width - 1) - x. Indices are
/// kept, so a left hand becomes right-hand-like. Callers apply it to left
/// hands only; applying it twice restores the input.
inline Sample mirror_left(const Sample& in) {
  Sample s = in;
  const int w = in.image.width();
  const int c = in.image.channels();
  for (int y = 0; y < in.image.height(); ++y)
    for (int x = 0; x < w; ++x)
      std::copy_n(in.image.pixel(0, y, w - 1 - x), c, s.image.pixel(0, y, x));
  const Affine2D flip{-1, 0, static_cast<double>(w - 1), 0, 1, 0};
  for (auto& p : s.keypoints) p.x = (w - 1) - p.x;
  s.transform = in.transform.then(flip);
  s.mirrored = !in.mirrored;
  s.hand = in.hand == Handedness::left ? Handedness::right : Handedness::left;
  return s;
}

struct AugmentParams {
  double angle_deg = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  double scale = 1.0;
};

inline constexpr double kMaxRotationDeg = 30.0;
inline constexpr double kMaxTranslationPx = 30.0;
inline constexpr double kMinScale = 0.8;
inline constexpr double kMaxScale = 1.5;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Per-sample RNG seed, independent of processing order.
inline std::uint64_t sample_seed(std::uint64_t global, std::uint64_t index) {
  return splitmix64(splitmix64(global) ^ (index * 0xD1B54A32D192ED03ULL));
}

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
  return lo + (hi - lo) * u;
}

}  // namespace detail

inline AugmentParams draw_augment_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AugmentParams p;
  p.angle_deg = detail::uniform(rng, -kMaxRotationDeg, kMaxRotationDeg);
  p.tx = detail::uniform(rng, -kMaxTranslationPx, kMaxTranslationPx);
  p.ty = detail::uniform(rng, -kMaxTranslationPx, kMaxTranslationPx);
  p.scale = detail::uniform(rng, kMinScale, kMaxScale);
  return p;
}

/// Scale, then rotate, about the crop center, then translate.
inline Affine2D augment_transform(const AugmentParams& p, int size) {
  const double c = 0.5 * (size - 1);
  const double rad = p.angle_deg * std::numbers::pi / 180.0;
  return Affine2D::translation(-c, -c)
      .then(Affine2D::scaling(p.scale))
      .then(Affine2D::rotation(rad))
      .then(Affine2D::translation(c + p.tx, c + p.ty));
}

inline Sample apply_augment(const Sample& in, const AugmentParams& p) {
  const Affine2D map = augment_transform(p, in.size());
  Sample s = in;
  s.image = warp_image(in.image, map, in.size());
  for (auto& kp : s.keypoints) {
    const auto q = map.apply(kp.x, kp.y);
    kp.x = q[0];
    kp.y = q[1];
  }
  s.transform = in.transform.then(map);
  return s;
}

inline Sample augment(const Sample& in, std::uint64_t seed) {
  return apply_augment(in, draw_augment_params(seed));
}

struct TrainingPair {
  Tensor image;
  Heatmaps target;
};

/// Gaussian targets at the output grid (keypoints scaled by grid / input),
/// zero planes for invisible keypoints, background per the max-inverse rule.
inline Heatmaps synthesize_targets(
    const std::array<SamplePoint, kNumKeypoints>& keypoints, int input_size,
    double sigma, int output_grid) {
  if (output_grid < 1 || input_size < 1)
    throw ConfigError("grid and input size must be >= 1");
  const double ratio = static_cast<double>(output_grid) / input_size;
  std::vector<Plane64> planes;
  planes.reserve(kNumKeypoints);
  for (const auto& kp : keypoints) {
    if (kp.visible)
      planes.push_back(make_keypoint_heatmap(kp.x * ratio, kp.y * ratio,
                                             output_grid, output_grid, sigma));
    else
      planes.emplace_back(output_grid, output_grid, 0.0);
  }
  const Plane64 bg = make_background_heatmap(std::span<const Plane64>(planes));
  Heatmaps target(output_grid, output_grid);
  for (int y = 0; y < output_grid; ++y)
    for (int x = 0; x < output_grid; ++x) {
      for (int k = 0; k < kNumKeypoints; ++k)
        target.at(y, x, k) = static_cast<float>(planes[k].at(y, x));
      target.at(y, x, kBackgroundChannel) = static_cast<float>(bg.at(y, x));
    }
  return target;
}

inline TrainingPair make_training_pair(const Sample& sample, double sigma,
                                       int output_grid) {
  return {sample.image,
          synthesize_targets(sample.keypoints, sample.size(), sigma, output_grid)};
}

/// Keypoint-only counterpart of crop_hand (+ mirror_left for left hands),
/// for target generation without decoding pixels.
struct KeypointSample {
  std::array<SamplePoint, kNumKeypoints> keypoints{};
  Affine2D transform;
};

inline KeypointSample crop_keypoints(const Annotation& ann,
                                     const CropStrategy& strategy) {
  KeypointSample s;
  const int size = strategy.target_size;
  s.transform = crop_transform(crop_box(ann, strategy), size);
  if (ann.needs_mirroring())
    s.transform = s.transform.then(
        Affine2D{-1, 0, static_cast<double>(size - 1), 0, 1, 0});
  for (int k = 0; k < kNumKeypoints; ++k) {
    const auto q = s.transform.apply(ann.keypoints[k].x, ann.keypoints[k].y);
    s.keypoints[k] = {q[0], q[1], ann.keypoints[k].visible};
  }
  return s;
}

inline KeypointSample augment_keypoints(const KeypointSample& in,
                                        const AugmentParams& p, int size) {
  const Affine2D map = augment_transform(p, size);
  KeypointSample s = in;
  for (auto& kp : s.keypoints) {
    const auto q = map.apply(kp.x, kp.y);
    kp.x = q[0];
    kp.y = q[1];
  }
  s.transform = in.transform.then(map);
  return s;
}

}  // namespace hkp
