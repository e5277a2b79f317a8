// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "hkp/app.hpp"

namespace {

int default_threads() {
  if (const char* env = std::getenv("HKP_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid HKP_THREADS=" << env << '\n';
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hkp - hand keypoint inference, evaluation and auditing"};
  app.require_subcommand(1);

  hkp::app::RunConfig cfg;
  cfg.threads = default_threads();
  std::string crop = "hand:2.0";
  std::optional<double> tau;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--size", cfg.size, "network input size (112 or 224)")
        ->check(CLI::IsMember({112, 224}));
    sub->add_option("--threads", cfg.threads, "worker threads (default $HKP_THREADS or 1)")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--strict", cfg.strict, "single-threaded deterministic execution");
    sub->add_option("--seed", cfg.seed, "random seed");
    sub->add_option("--out", cfg.out, "output path (default stdout)");
  };
  auto decode_opts = [&](CLI::App* sub) {
    sub->add_option("--crop", crop, "crop strategy: head:1.2 | hand:2.0 | ext:1.25 | fixed");
    sub->add_option("--tau", tau, "confidence threshold (default 10/(h*w))");
    sub->add_option("--sigma", cfg.decode.sigma, "target Gaussian sigma in grid px");
    sub->add_option("--peaks", cfg.decode.max_fallback_peaks, "fallback peak count");
  };

  auto* infer = app.add_subcommand("infer", "localize keypoints for annotated images");
  common(infer);
  decode_opts(infer);
  infer->add_option("--model", cfg.model, "HKWF weight archive")->required();
  infer->add_option("--input", cfg.input, "annotation list (JSON lines)")->required();
  infer->add_option("--overlay", cfg.overlay_dir, "write skeleton overlay PNGs here");

  auto* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
  common(evaluate);
  evaluate->add_option("--input", cfg.input, "predictions (JSON lines from infer)")->required();
  evaluate->add_option("--gt", cfg.gt, "ground-truth annotations (JSON lines)")->required();
  evaluate->add_option("--curve", cfg.curve, "PCK curve CSV path (default <out>.csv)");
  evaluate->add_flag("--align-root", cfg.align_root, "align wrists before scoring");
  evaluate->add_flag("--normalize-head", cfg.normalize_head, "PCKh: divide errors by head size");
  evaluate->add_option("--max-threshold", cfg.max_threshold, "last PCK threshold");
  evaluate->add_option("--step", cfg.step, "PCK threshold step");

  auto* bench = app.add_subcommand("bench", "time forward passes at 112 and 224");
  common(bench);
  bench->add_option("--model", cfg.model, "HKWF weight archive (default: random weights)");
  bench->add_option("--warmup", cfg.warmup, "untimed runs per configuration");
  bench->add_option("--runs", cfg.runs, "timed runs per configuration")->check(CLI::PositiveNumber);

  auto* inspect = app.add_subcommand("inspect", "print the architecture table and budget audit");
  common(inspect);
  inspect->add_flag("--json", cfg.json, "emit JSON");

  auto* targets = app.add_subcommand("make-targets", "write target heatmaps as an HKWF archive");
  common(targets);
  decode_opts(targets);
  targets->add_option("--input", cfg.input, "annotation list (JSON lines)")->required();
  targets->add_flag("--augment", cfg.augment, "apply seeded augmentation");

  try {
    app.parse(argc, argv);
    if (tau) cfg.decode.tau = *tau;
    cfg.crop = hkp::app::parse_crop(crop, cfg.size);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? hkp::app::kExitOk : hkp::app::kExitUsage;
  } catch (const hkp::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return hkp::app::kExitUsage;
  }
  return hkp::app::run(app.get_subcommands().front()->get_name(), cfg);
}
