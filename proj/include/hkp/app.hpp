// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hkp/dataset.hpp"
#include "hkp/error.hpp"
#include "hkp/heatmap_codec.hpp"
#include "hkp/image.hpp"
#include "hkp/metrics.hpp"
#include "hkp/netgraph.hpp"
#include "hkp/weights.hpp"
#include "json.hpp"

namespace hkp::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

struct RunConfig {
  std::string model;
  std::string input;
  std::string out;
  std::string gt;
  std::string curve;
  std::string overlay_dir;
  int size = 224;
  CropStrategy crop = CropStrategy::hand_scaled();
  DecodeParams decode;
  int threads = 1;
  bool strict = false;
  std::uint64_t seed = 0;
  bool align_root = false;
  bool normalize_head = false;
  bool augment = false;
  bool json = false;
  int warmup = 3;
  int runs = 10;
  std::optional<double> max_threshold;
  std::optional<double> step;

  int worker_count() const { return strict ? 1 : std::max(threads, 1); }
};

/// "head:1.2", "hand:2.0", "ext:1.25" or "fixed"; the factor is optional.
inline CropStrategy parse_crop(const std::string& spec, int size) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  std::optional<double> factor;
  if (colon != std::string::npos) {
    try {
      std::size_t used = 0;
      factor = std::stod(spec.substr(colon + 1), &used);
      if (used != spec.size() - colon - 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw UsageError("invalid crop factor in \"" + spec + "\"");
    }
  }
  CropStrategy c;
  if (kind == "head")
    c = CropStrategy::head_scaled(factor.value_or(1.2), size);
  else if (kind == "hand")
    c = CropStrategy::hand_scaled(factor.value_or(2.0), size);
  else if (kind == "ext")
    c = CropStrategy::external_enlarged(factor.value_or(1.25), size);
  else if (kind == "fixed" && !factor)
    c = CropStrategy::fixed_window(size);
  else
    throw UsageError("unknown crop strategy \"" + spec + "\"");
  if (!(c.factor > 0.0)) throw UsageError("crop factor must be positive");
  return c;
}

namespace detail {

inline std::string resolve_path(const std::string& base_file,
                                const std::string& rel) {
  namespace fs = std::filesystem;
  const fs::path p(rel);
  if (p.is_absolute()) return rel;
  return (fs::path(base_file).parent_path() / p).string();
}

/// Runs fn(i) for i in [0, n) on a pool; fn must not throw.
template <typename Fn>
void for_each_index(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  const int w = static_cast<int>(std::min<std::size_t>(workers, n));
  for (int t = 0; t < w; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("failed writing " + path);
}

inline void draw_disc(Image& img, double cx, double cy, int r,
                      const std::uint8_t* color) {
  const int x0 = static_cast<int>(std::lround(cx));
  const int y0 = static_cast<int>(std::lround(cy));
  for (int y = y0 - r; y <= y0 + r; ++y)
    for (int x = x0 - r; x <= x0 + r; ++x)
      if (x >= 0 && y >= 0 && x < img.width && y < img.height &&
          (x - x0) * (x - x0) + (y - y0) * (y - y0) <= r * r)
        std::copy_n(color, 3, img.px(x, y));
}

inline void draw_line(Image& img, double x0, double y0, double x1, double y1,
                      const std::uint8_t* color) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(1, static_cast<int>(std::ceil(len)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    if (x >= 0 && y >= 0 && x < img.width && y < img.height)
      std::copy_n(color, 3, img.px(x, y));
  }
}

inline void draw_skeleton(Image& img, const KeypointSet& kps) {
  static constexpr std::uint8_t kFinger[5][3] = {
      {255, 64, 64}, {255, 200, 0}, {64, 220, 64}, {0, 160, 255}, {200, 64, 255}};
  static constexpr std::uint8_t kWrist[3] = {255, 255, 255};
  for (std::size_t e = 0; e < kSkeletonEdges.size(); ++e) {
    const auto& a = kps[kSkeletonEdges[e][0]];
    const auto& b = kps[kSkeletonEdges[e][1]];
    draw_line(img, a.x, a.y, b.x, b.y, kFinger[e / 4]);
  }
  draw_disc(img, kps[0].x, kps[0].y, 3, kWrist);
  for (int k = 1; k < kNumKeypoints; ++k)
    draw_disc(img, kps[k].x, kps[k].y, 2, kFinger[(k - 1) / 4]);
}

}  // namespace detail

/// Loads and binds the model archive for the configured input size.
inline Network load_model(const std::string& path, int size) {
  const Network net = build_network(NetworkConfig::reference(size));
  return bind_weights(net, load_archive(path));
}

struct InferResult {
  std::string image;
  Handedness hand = Handedness::right;
  KeypointSet keypoints{};  // source frame
};

/// Full per-image pipeline: crop, mirror left hands, forward, decode, map
/// grid positions back into the source image.
inline InferResult infer_one(const Network& net, const Image& image,
                             const Annotation& ann, const CropStrategy& crop,
                             const DecodeParams& decode,
                             const ExecContext& ctx = {}) {
  Sample s = crop_hand(image, ann, crop);
  if (ann.needs_mirroring()) s = mirror_left(s);
  const Heatmaps raw = forward(net, s.image, ctx);
  KeypointSet kps = decode_keypoints(raw, decode);
  const double to_crop = static_cast<double>(s.size()) / raw.width;
  const Affine2D inv = s.transform.inverse();
  for (auto& kp : kps) {
    const auto src = inv.apply(kp.x * to_crop, kp.y * to_crop);
    kp.x = src[0];
    kp.y = src[1];
    kp.frame = Frame::source;
  }
  return {ann.image, ann.hand, kps};
}

inline nlohmann::ordered_json prediction_json(const InferResult& r) {
  nlohmann::ordered_json j;
  j["image"] = r.image;
  j["hand"] = r.hand == Handedness::left ? "left" : "right";
  auto kp = nlohmann::ordered_json::array();
  for (const auto& k : r.keypoints)
    kp.push_back({k.x, k.y, k.confidence, to_string(k.source)});
  j["kp"] = std::move(kp);
  return j;
}

struct Prediction {
  std::string image;
  KeypointSet keypoints{};
};

inline std::vector<Prediction> parse_predictions(std::istream& in,
                                                 const std::string& source = "") {
  std::vector<Prediction> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where =
        "prediction " + (source.empty() ? "" : source + ":") + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("image") || !j["image"].is_string())
      throw ParseError(where + ": missing string field \"image\"");
    if (!j.contains("kp") || !j["kp"].is_array() || j["kp"].size() != kNumKeypoints)
      throw ParseError(where + ": expected 21 keypoints");
    Prediction p;
    p.image = j["image"].get<std::string>();
    for (int k = 0; k < kNumKeypoints; ++k) {
      const auto& e = j["kp"][k];
      if (!e.is_array() || e.size() < 2 || !e[0].is_number() || !e[1].is_number())
        throw ParseError(where + ": keypoint " + std::to_string(k) +
                         " must be [x, y, conf, source]");
      auto& kp = p.keypoints[k];
      kp.index = k;
      kp.x = e[0].get<double>();
      kp.y = e[1].get<double>();
      kp.confidence = e.size() > 2 && e[2].is_number() ? e[2].get<double>() : 1.0;
      kp.source = e.size() > 3 && e[3] == "fallback" ? KeypointSource::fallback
                                                     : KeypointSource::argmax;
      kp.frame = Frame::source;
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline int cmd_infer(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.model.empty() || cfg.input.empty())
    throw UsageError("infer requires --model and --input");
  const auto anns = load_annotations(cfg.input);
  const Network net = load_model(cfg.model, cfg.size);
  CropStrategy crop = cfg.crop;
  crop.target_size = cfg.size;
  if (!cfg.overlay_dir.empty()) std::filesystem::create_directories(cfg.overlay_dir);

  std::vector<std::optional<std::string>> lines(anns.size());
  std::vector<std::string> errors(anns.size());
  detail::for_each_index(anns.size(), cfg.worker_count(), [&](std::size_t i) {
    try {
      const auto path = detail::resolve_path(cfg.input, anns[i].image);
      Image img = read_png(path);
      const auto r = infer_one(net, img, anns[i], crop, cfg.decode);
      lines[i] = prediction_json(r).dump();
      if (!cfg.overlay_dir.empty()) {
        detail::draw_skeleton(img, r.keypoints);
        const auto stem = std::filesystem::path(anns[i].image).stem().string();
        write_png((std::filesystem::path(cfg.overlay_dir) /
                   (std::to_string(i) + "_" + stem + ".png"))
                      .string(),
                  img);
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::ostringstream body;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < anns.size(); ++i) {
    if (lines[i]) {
      body << *lines[i] << '\n';
    } else {
      ++skipped;
      err << "warning: skipping " << anns[i].image << ": " << errors[i] << '\n';
    }
  }
  if (cfg.out.empty())
    out << body.str();
  else
    detail::write_text(cfg.out, body.str());
  if (skipped > 0) {
    err << skipped << " of " << anns.size() << " images skipped\n";
    return kExitData;
  }
  return kExitOk;
}

struct EvaluationReport {
  MetricsSummary summary;
  PckCurve curve;
};

inline EvaluationReport evaluate(const std::vector<Prediction>& preds,
                                 const std::vector<Annotation>& gts,
                                 const RunConfig& cfg) {
  if (preds.size() != gts.size())
    throw DataError("prediction count " + std::to_string(preds.size()) +
                    " differs from annotation count " + std::to_string(gts.size()));
  std::vector<KeypointSet> p;
  std::vector<KeypointSet> g;
  std::vector<double> norms;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (preds[i].image != gts[i].image)
      throw DataError("prediction " + std::to_string(i + 1) + " is for image " +
                      preds[i].image + " but annotation is for image " +
                      gts[i].image);
    KeypointSet gt = gts[i].as_keypoints();
    KeypointSet pr = preds[i].keypoints;
    if (cfg.align_root) pr = align_root(pr, gt, 0);
    if (cfg.normalize_head) {
      if (!gts[i].head_size)
        throw DataError("image " + gts[i].image + " has no head size for PCKh");
      norms.push_back(*gts[i].head_size);
    }
    p.push_back(pr);
    g.push_back(gt);
  }
  const auto samples = collect_errors(p, g, norms);
  // EPE is reported in pixels regardless of PCK normalization.
  const auto epe_px = epe_summary(collect_errors(p, g));
  const double hi = cfg.max_threshold.value_or(cfg.normalize_head ? 1.0 : 30.0);
  const double step = cfg.step.value_or(cfg.normalize_head ? 0.05 : 0.5);
  EvaluationReport r;
  r.curve = pck_curve(samples, threshold_grid(0.0, hi, step));
  r.summary = {auc(r.curve), epe_px.mean, epe_px.median};
  return r;
}

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& out,
                        std::ostream& /*err*/) {
  if (cfg.input.empty() || cfg.gt.empty())
    throw UsageError("evaluate requires --input (predictions) and --gt");
  std::ifstream pin(cfg.input);
  if (!pin) throw DataError("cannot open predictions " + cfg.input);
  const auto preds = parse_predictions(pin, cfg.input);
  const auto gts = load_annotations(cfg.gt);
  const auto report = evaluate(preds, gts, cfg);

  const auto json = summary_json(report.summary).dump(2) + "\n";
  std::string curve_path = cfg.curve;
  if (curve_path.empty() && !cfg.out.empty())
    curve_path = std::filesystem::path(cfg.out).replace_extension(".csv").string();
  if (cfg.out.empty())
    out << json;
  else
    detail::write_text(cfg.out, json);
  if (!curve_path.empty()) detail::write_text(curve_path, curve_csv(report.curve));
  out << table_header() << '\n'
      << table_row(std::filesystem::path(cfg.input).stem().string(), report.summary)
      << '\n';
  return kExitOk;
}

struct BenchRow {
  int size = 0;
  int threads = 1;
  double mean_ms = 0.0;
  double stddev_ms = 0.0;
  double fps = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  bool results_identical = true;
  std::string audit;
};

/// Times forward passes for 112 and 224 inputs, single- and multi-threaded.
inline BenchReport run_bench(const RunConfig& cfg) {
  BenchReport rep;
  for (int size : {112, 224}) {
    const Network shape = build_network(NetworkConfig::reference(size));
    const Network net =
        cfg.model.empty()
            ? bind_weights(shape, make_random_archive(shape, cfg.seed))
            : bind_weights(shape, load_archive(cfg.model));
    Tensor input({1, size, size, 3});
    std::mt19937_64 rng(cfg.seed + size);
    for (float& v : input.data())
      v = static_cast<float>(static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0);

    std::vector<int> thread_counts{1};
    if (!cfg.strict && cfg.threads > 1) thread_counts.push_back(cfg.threads);
    std::optional<std::vector<float>> reference;
    for (int t : thread_counts) {
      const ExecContext ctx{t};
      Heatmaps last;
      for (int i = 0; i < cfg.warmup; ++i) last = forward(net, input, ctx);
      std::vector<double> ms;
      for (int i = 0; i < std::max(cfg.runs, 1); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        last = forward(net, input, ctx);
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
      if (!reference)
        reference = last.data;
      else if (*reference != last.data)
        rep.results_identical = false;
      BenchRow row{size, t};
      for (double m : ms) row.mean_ms += m;
      row.mean_ms /= static_cast<double>(ms.size());
      for (double m : ms) row.stddev_ms += (m - row.mean_ms) * (m - row.mean_ms);
      row.stddev_ms = std::sqrt(row.stddev_ms / static_cast<double>(ms.size()));
      row.fps = 1000.0 / row.mean_ms;
      rep.rows.push_back(row);
    }
  }
  const Network ref = build_network(NetworkConfig::reference(224));
  rep.audit = audit_text(audit_budget(ref));
  return rep;
}

inline int cmd_bench(const RunConfig& cfg, std::ostream& out, std::ostream& /*err*/) {
  const auto rep = run_bench(cfg);
  std::ostringstream os;
  char buf[256];
  os << "size  threads   ms/frame (mean ± std)        fps\n";
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, "%4d  %7d   %9.2f ± %-9.2f  %8.2f\n", r.size,
                  r.threads, r.mean_ms, r.stddev_ms, r.fps);
    os << buf;
  }
  os << "results identical across thread counts: "
     << (rep.results_identical ? "yes" : "NO") << '\n';
  os << rep.audit;
  if (cfg.out.empty())
    out << os.str();
  else
    detail::write_text(cfg.out, os.str());
  return kExitOk;
}

inline int cmd_inspect(const RunConfig& cfg, std::ostream& out,
                       std::ostream& /*err*/) {
  const Network net = build_network(NetworkConfig::reference(cfg.size));
  const auto audit = audit_budget(net);
  std::string text;
  if (cfg.json) {
    auto j = describe_json(net);
    j["published_params"] = kPublishedParams;
    j["param_delta"] = audit.param_delta;
    j["published_flops"] = kPublishedFlops;
    j["published_flops_reconstructible"] = audit.published_flops_reconstructible;
    text = j.dump(2) + "\n";
  } else {
    text = describe_text(net) + audit_text(audit);
  }
  if (cfg.out.empty())
    out << text;
  else
    detail::write_text(cfg.out, text);
  return kExitOk;
}

inline int cmd_make_targets(const RunConfig& cfg, std::ostream& out,
                            std::ostream& /*err*/) {
  if (cfg.input.empty() || cfg.out.empty())
    throw UsageError("make-targets requires --input and --out");
  const auto anns = load_annotations(cfg.input);
  const Network net = build_network(NetworkConfig::reference(cfg.size));
  const int grid = net.output_height;
  CropStrategy crop = cfg.crop;
  crop.target_size = cfg.size;

  WeightArchive archive;
  archive.add("meta", {3},
              {static_cast<float>(cfg.size), static_cast<float>(grid),
               static_cast<float>(cfg.decode.sigma)});
  for (std::size_t i = 0; i < anns.size(); ++i) {
    KeypointSample ks = crop_keypoints(anns[i], crop);
    if (cfg.augment)
      ks = augment_keypoints(ks, draw_augment_params(sample_seed(cfg.seed, i)),
                             cfg.size);
    const Heatmaps t = synthesize_targets(ks.keypoints, cfg.size, cfg.decode.sigma, grid);
    archive.add("targets." + std::to_string(i),
                {static_cast<std::uint32_t>(grid), static_cast<std::uint32_t>(grid),
                 static_cast<std::uint32_t>(kNumHeatmaps)},
                t.data);
    std::vector<float> kp;
    for (const auto& p : ks.keypoints) {
      kp.push_back(static_cast<float>(p.x * grid / cfg.size));
      kp.push_back(static_cast<float>(p.y * grid / cfg.size));
      kp.push_back(p.visible ? 1.0f : 0.0f);
    }
    archive.add("keypoints." + std::to_string(i), {kNumKeypoints, 3}, std::move(kp));
  }
  save_archive(cfg.out, archive);
  out << "wrote " << anns.size() << " target sets (" << grid << "x" << grid
      << "x" << kNumHeatmaps << ") to " << cfg.out << '\n';
  return kExitOk;
}

/// Dispatches a command, mapping error categories onto exit codes.
inline int run(const std::string& command, const RunConfig& cfg,
               std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    if (cfg.size != 112 && cfg.size != 224)
      throw UsageError("--size must be 112 or 224");
    try {
      cfg.decode.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    if (command == "infer") return cmd_infer(cfg, out, err);
    if (command == "evaluate") return cmd_evaluate(cfg, out, err);
    if (command == "bench") return cmd_bench(cfg, out, err);
    if (command == "inspect") return cmd_inspect(cfg, out, err);
    if (command == "make-targets") return cmd_make_targets(cfg, out, err);
    throw UsageError("unknown command " + command);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace hkp::app
