// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "hkp/error.hpp"
#include "hkp/heatmaps.hpp"
#include "hkp/ops.hpp"
#include "hkp/tensor.hpp"
#include "json.hpp"

namespace hkp {

enum class BlockKind {
  initial_conv,
  inverted_residual,
  pointwise,
  depthwise_separable,
  transposed_upsample,
  heatmap_head,
};

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::initial_conv: return "initial_conv";
    case BlockKind::inverted_residual: return "inverted_residual";
    case BlockKind::pointwise: return "pointwise";
    case BlockKind::depthwise_separable: return "depthwise_separable";
    case BlockKind::transposed_upsample: return "transposed_upsample";
    case BlockKind::heatmap_head: return "heatmap_head";
  }
  return "?";
}

struct BlockSpec {
  BlockKind kind = BlockKind::pointwise;
  int expansion = 1;
  int out_channels = 1;
  int stride = 1;
  int repeat = 1;
};

/// Declarative encoder/decoder table. Inverted-residual units are numbered
/// 1..N across the encoder in order; stride_removed_block names the unit
/// whose stride is forced to 1 when block14_stride_removed is set.
struct NetworkConfig {
  int input_size = 224;
  int num_keypoints = kNumKeypoints;
  std::vector<BlockSpec> encoder;
  std::vector<BlockSpec> decoder;
  bool block14_stride_removed = true;
  int stride_removed_block = 14;

  /// MobileNetV2 (width 1.0) through the 320-channel stage, followed by the
  /// depthwise decoder with one 2x upsample.
  static NetworkConfig reference(int input_size = 224) {
    NetworkConfig c;
    c.input_size = input_size;
    using K = BlockKind;
    c.encoder = {
        {K::initial_conv, 1, 32, 2, 1},
        {K::inverted_residual, 1, 16, 1, 1},
        {K::inverted_residual, 6, 24, 2, 2},
        {K::inverted_residual, 6, 32, 2, 3},
        {K::inverted_residual, 6, 64, 2, 4},
        {K::inverted_residual, 6, 96, 1, 3},
        {K::inverted_residual, 6, 160, 2, 3},
        {K::inverted_residual, 6, 320, 1, 1},
    };
    c.decoder = {
        {K::pointwise, 1, 256, 1, 1},
        {K::depthwise_separable, 1, 256, 1, 1},
        {K::transposed_upsample, 1, 128, 2, 1},
        {K::depthwise_separable, 1, 128, 1, 1},
        {K::heatmap_head, 1, kNumHeatmaps, 1, 1},
    };
    return c;
  }

  void validate() const {
    if (input_size < 1) throw ConfigError("input_size must be >= 1");
    if (num_keypoints != kNumKeypoints)
      throw ConfigError("num_keypoints must be 21");
    if (encoder.empty() || encoder.front().kind != BlockKind::initial_conv)
      throw ConfigError("encoder must start with an initial_conv block");
    auto check = [](const BlockSpec& b) {
      if (b.expansion < 1) throw ConfigError("block expansion must be >= 1");
      if (b.stride != 1 && b.stride != 2)
        throw ConfigError("block stride must be 1 or 2");
      if (b.repeat < 1) throw ConfigError("block repeat must be >= 1");
      if (b.out_channels < 1) throw ConfigError("block channels must be >= 1");
    };
    int units = 0;
    int removed_stride = 0;
    for (const auto& b : encoder) {
      check(b);
      if (b.kind == BlockKind::inverted_residual) {
        for (int r = 0; r < b.repeat; ++r) {
          ++units;
          if (units == stride_removed_block) removed_stride = r == 0 ? b.stride : 1;
        }
      } else if (b.kind != BlockKind::initial_conv) {
        throw ConfigError(std::string("unsupported encoder block kind ") +
                          to_string(b.kind));
      }
    }
    if (block14_stride_removed) {
      if (stride_removed_block < 1 || stride_removed_block > units)
        throw ConfigError("stride_removed_block does not name an encoder unit");
      if (removed_stride != 2)
        throw ConfigError("stride_removed_block must be a stride-2 unit");
    }
    if (decoder.empty() || decoder.back().kind != BlockKind::heatmap_head)
      throw ConfigError("decoder must end with a heatmap_head block");
    for (const auto& b : decoder) {
      check(b);
      if (b.kind == BlockKind::initial_conv ||
          b.kind == BlockKind::inverted_residual)
        throw ConfigError(std::string("unsupported decoder block kind ") +
                          to_string(b.kind));
    }
    if (decoder.back().out_channels != num_keypoints + 1)
      throw ConfigError("heatmap head must emit num_keypoints + 1 channels");
  }
};

enum class LayerOp { conv, depthwise, transposed };

/// One bound convolution. Parameters are stored post batch-norm folding;
/// has_bn / has_bias record the unfolded parameterization for audits and
/// for weight binding.
struct Layer {
  std::string name;
  LayerOp op = LayerOp::conv;
  ConvParams conv;
  DepthwiseParams dw;
  bool has_bn = true;
  bool has_bias = false;
  bool relu6 = true;
  std::string note;

  int kernel() const { return op == LayerOp::depthwise ? dw.kh : conv.kh; }
  int stride() const { return op == LayerOp::depthwise ? dw.stride : conv.stride; }
  int in_channels() const {
    return op == LayerOp::depthwise ? dw.channels : conv.c_in;
  }
  int out_channels() const {
    return op == LayerOp::depthwise ? dw.channels : conv.c_out;
  }
  std::int64_t weight_count() const {
    return static_cast<std::int64_t>(op == LayerOp::depthwise
                                         ? dw.weights.size()
                                         : conv.weights.size());
  }

  /// Pre-folding parameter count: kernel weights, bias when present, and
  /// batch-norm gamma/beta. Running statistics are not parameters.
  std::int64_t parameter_count() const {
    std::int64_t n = weight_count();
    if (has_bias) n += out_channels();
    if (has_bn) n += 2 * out_channels();
    return n;
  }

  std::string type_name() const {
    const auto k = std::to_string(kernel());
    switch (op) {
      case LayerOp::depthwise: return "dwconv" + k + "x" + k;
      case LayerOp::transposed: return "tconv" + k + "x" + k;
      case LayerOp::conv: break;
    }
    return "conv" + k + "x" + k;
  }
};

struct Stage {
  std::string name;
  std::vector<Layer> layers;
  bool residual = false;
};

struct Network {
  NetworkConfig config;
  std::vector<Stage> stages;
  Shape encoder_output;
  int output_height = 0;
  int output_width = 0;
  int encoder_stages = 0;  // stages[0, encoder_stages) belong to the encoder
};

namespace detail {

inline Layer make_conv_layer(std::string name, int k, int cin, int cout,
                             int stride, bool relu) {
  Layer l;
  l.name = std::move(name);
  l.op = LayerOp::conv;
  l.conv = ConvParams::zeros(k, k, cin, cout, stride);
  l.relu6 = relu;
  return l;
}

inline Layer make_dw_layer(std::string name, int k, int c, int stride) {
  Layer l;
  l.name = std::move(name);
  l.op = LayerOp::depthwise;
  l.dw = DepthwiseParams::zeros(k, k, c, stride);
  return l;
}

inline Layer make_transposed_layer(std::string name, int stride, int cin,
                                   int cout) {
  Layer l;
  l.name = std::move(name);
  l.op = LayerOp::transposed;
  l.conv = ConvParams::zeros(2 * stride, 2 * stride, cin, cout, stride);
  return l;
}

struct SpatialSize {
  int h;
  int w;
};

inline SpatialSize layer_output(const Layer& l, SpatialSize in) {
  if (l.op == LayerOp::transposed)
    return {transposed_axis(in.h, l.conv.kh, l.conv.stride, l.conv.padding).out,
            transposed_axis(in.w, l.conv.kw, l.conv.stride, l.conv.padding).out};
  const int k = l.kernel();
  const int s = l.stride();
  const Padding pad = l.op == LayerOp::depthwise ? l.dw.padding : l.conv.padding;
  return {conv_axis(in.h, k, s, pad).out, conv_axis(in.w, k, s, pad).out};
}

}  // namespace detail

/// Builds the layer list for a config. All weights are zero until bound.
inline Network build_network(const NetworkConfig& config) {
  config.validate();
  Network net;
  net.config = config;
  int channels = 3;
  int unit = 0;

  for (const auto& b : config.encoder) {
    if (b.kind == BlockKind::initial_conv) {
      Stage st;
      st.name = "conv0";
      st.layers.push_back(
          detail::make_conv_layer("conv0", 3, channels, b.out_channels, b.stride, true));
      net.stages.push_back(std::move(st));
      channels = b.out_channels;
      continue;
    }
    for (int r = 0; r < b.repeat; ++r) {
      ++unit;
      int stride = r == 0 ? b.stride : 1;
      std::string note;
      if (config.block14_stride_removed && unit == config.stride_removed_block) {
        stride = 1;
        note = "stride removed";
      }
      Stage st;
      st.name = "block" + std::to_string(unit);
      const int hidden = channels * b.expansion;
      if (b.expansion != 1)
        st.layers.push_back(detail::make_conv_layer(st.name + ".expand", 1,
                                                    channels, hidden, 1, true));
      st.layers.push_back(detail::make_dw_layer(st.name + ".dw", 3, hidden, stride));
      st.layers.back().note = note;
      st.layers.push_back(detail::make_conv_layer(
          st.name + ".project", 1, hidden, b.out_channels, 1, false));
      st.residual = stride == 1 && channels == b.out_channels;
      net.stages.push_back(std::move(st));
      channels = b.out_channels;
    }
  }
  net.encoder_stages = static_cast<int>(net.stages.size());

  int index = 0;
  for (const auto& b : config.decoder) {
    for (int r = 0; r < b.repeat; ++r) {
      ++index;
      Stage st;
      st.name = "dec" + std::to_string(index);
      switch (b.kind) {
        case BlockKind::pointwise:
          st.layers.push_back(detail::make_conv_layer(
              st.name + ".pw", 1, channels, b.out_channels, b.stride, true));
          break;
        case BlockKind::depthwise_separable:
          st.layers.push_back(
              detail::make_dw_layer(st.name + ".dw", 3, channels, b.stride));
          st.layers.push_back(detail::make_conv_layer(
              st.name + ".pw", 1, channels, b.out_channels, 1, true));
          break;
        case BlockKind::transposed_upsample:
          st.layers.push_back(detail::make_transposed_layer(
              st.name + ".up", b.stride, channels, b.out_channels));
          break;
        case BlockKind::heatmap_head: {
          Layer head = detail::make_conv_layer(st.name + ".head", 1, channels,
                                               b.out_channels, 1, false);
          head.has_bn = false;
          head.has_bias = true;
          st.layers.push_back(std::move(head));
          break;
        }
        default:
          throw ConfigError("unsupported decoder block");
      }
      channels = b.out_channels;
      net.stages.push_back(std::move(st));
    }
  }

  // Shape trace; also catches channel chaining errors.
  detail::SpatialSize sz{config.input_size, config.input_size};
  int c = 3;
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    for (const auto& l : net.stages[s].layers) {
      if (l.in_channels() != c)
        throw ConfigError("channel chaining broken at " + l.name);
      sz = detail::layer_output(l, sz);
      c = l.out_channels();
    }
    if (static_cast<int>(s) + 1 == net.encoder_stages)
      net.encoder_output = {1, sz.h, sz.w, c};
  }
  if (c != kNumHeatmaps) throw ConfigError("network must emit 22 channels");
  net.output_height = sz.h;
  net.output_width = sz.w;
  return net;
}

inline Tensor apply_layer(const Layer& l, const Tensor& x,
                          const ExecContext& ctx) {
  Tensor y;
  switch (l.op) {
    case LayerOp::conv: y = conv2d(x, l.conv, ctx); break;
    case LayerOp::depthwise: y = depthwise_conv2d(x, l.dw, ctx); break;
    case LayerOp::transposed: y = transposed_conv2d(x, l.conv, ctx); break;
  }
  if (l.relu6) relu6_inplace(y);
  return y;
}

/// Raw (pre-softmax) heatmaps for one normalized image of shape
/// (1, input_size, input_size, 3).
inline Heatmaps forward(const Network& net, const Tensor& image,
                        const ExecContext& ctx = {}) {
  const int s = net.config.input_size;
  if (image.shape() != Shape{1, s, s, 3})
    throw UsageError("forward expects input 1x" + std::to_string(s) + "x" +
                     std::to_string(s) + "x3, got " + image.shape().str());
  Tensor x = image;
  for (const auto& st : net.stages) {
    Tensor y = x;
    for (const auto& l : st.layers) y = apply_layer(l, y, ctx);
    if (st.residual) {
      auto yd = y.data();
      auto xd = x.data();
      for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += xd[i];
    }
    x = std::move(y);
  }
  return Heatmaps::from_tensor(x);
}

struct LayerCount {
  std::string name;
  std::int64_t count = 0;
};

struct CountReport {
  std::vector<LayerCount> layers;
  std::int64_t total = 0;
};

inline CountReport count_parameters(const Network& net) {
  CountReport r;
  for (const auto& st : net.stages)
    for (const auto& l : st.layers) {
      r.layers.push_back({l.name, l.parameter_count()});
      r.total += l.parameter_count();
    }
  return r;
}

/// FLOPs per layer, one multiply-accumulate = 2 FLOPs; batch norm,
/// activations and residual adds are not counted. Transposed convolutions
/// are counted per input pixel: 2*H_in*W_in*kh*kw*c_in*c_out.
inline std::int64_t layer_flops(const Layer& l, int in_h, int in_w) {
  const auto out = detail::layer_output(l, {in_h, in_w});
  const std::int64_t k = static_cast<std::int64_t>(l.kernel()) * l.kernel();
  switch (l.op) {
    case LayerOp::depthwise:
      return 2LL * out.h * out.w * k * l.dw.channels;
    case LayerOp::transposed:
      return 2LL * in_h * in_w * k * l.conv.c_in * l.conv.c_out;
    case LayerOp::conv: break;
  }
  return 2LL * out.h * out.w * k * l.conv.c_in * l.conv.c_out;
}

inline CountReport count_flops(const Network& net, int input_size) {
  if (input_size < 1) throw UsageError("input_size must be >= 1");
  CountReport r;
  detail::SpatialSize sz{input_size, input_size};
  for (const auto& st : net.stages)
    for (const auto& l : st.layers) {
      const auto f = layer_flops(l, sz.h, sz.w);
      r.layers.push_back({l.name, f});
      r.total += f;
      sz = detail::layer_output(l, sz);
    }
  return r;
}

struct DescribeRow {
  std::string name;
  std::string type;
  Shape in;
  Shape out;
  int stride = 1;
  bool residual = false;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::string note;
};

inline std::vector<DescribeRow> describe(const Network& net) {
  std::vector<DescribeRow> rows;
  detail::SpatialSize sz{net.config.input_size, net.config.input_size};
  for (const auto& st : net.stages)
    for (std::size_t i = 0; i < st.layers.size(); ++i) {
      const auto& l = st.layers[i];
      DescribeRow row;
      row.name = l.name;
      row.type = l.type_name();
      row.in = {1, sz.h, sz.w, l.in_channels()};
      row.flops = layer_flops(l, sz.h, sz.w);
      sz = detail::layer_output(l, sz);
      row.out = {1, sz.h, sz.w, l.out_channels()};
      row.stride = l.stride();
      row.residual = st.residual && i + 1 == st.layers.size();
      row.params = l.parameter_count();
      row.note = l.note;
      rows.push_back(std::move(row));
    }
  return rows;
}

inline std::string describe_text(const Network& net) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-10s %-14s %-14s %6s %10s %14s  %s\n",
                "layer", "type", "in", "out", "stride", "params", "flops",
                "note");
  os << line;
  auto hwc = [](const Shape& s) {
    return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" +
           std::to_string(s.channels);
  };
  for (const auto& r : describe(net)) {
    std::string note = r.note;
    if (r.residual) note = note.empty() ? "+residual" : note + ", +residual";
    std::snprintf(line, sizeof line,
                  "%-16s %-10s %-14s %-14s %6d %10lld %14lld  %s\n",
                  r.name.c_str(), r.type.c_str(), hwc(r.in).c_str(),
                  hwc(r.out).c_str(), r.stride,
                  static_cast<long long>(r.params),
                  static_cast<long long>(r.flops), note.c_str());
    os << line;
  }
  return os.str();
}

inline nlohmann::ordered_json describe_json(const Network& net) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["input_size"] = net.config.input_size;
  j["num_keypoints"] = net.config.num_keypoints;
  j["block14_stride_removed"] = net.config.block14_stride_removed;
  j["encoder_output"] = {net.encoder_output.height, net.encoder_output.width,
                         net.encoder_output.channels};
  j["output"] = {net.output_height, net.output_width, kNumHeatmaps};
  ordered_json layers = ordered_json::array();
  for (const auto& r : describe(net)) {
    ordered_json l;
    l["name"] = r.name;
    l["type"] = r.type;
    l["in"] = {r.in.height, r.in.width, r.in.channels};
    l["out"] = {r.out.height, r.out.width, r.out.channels};
    l["stride"] = r.stride;
    l["residual"] = r.residual;
    l["params"] = r.params;
    l["flops"] = r.flops;
    l["note"] = r.note;
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  j["total_params"] = count_parameters(net).total;
  j["total_flops"] = count_flops(net, net.config.input_size).total;
  return j;
}

/// Published reference figures for the full model at 224 input.
inline constexpr double kPublishedParams = 7.98e6;
inline constexpr double kPublishedFlops = 16.3e6;

struct BudgetAudit {
  std::int64_t params = 0;
  std::int64_t flops = 0;
  double param_delta = 0.0;       // params - published
  double param_ratio = 0.0;       // params / published
  std::int64_t weight_params = 0;  // kernel weights only
  std::int64_t min_grid_pixels = 0;
  double published_flops_lower_bound = 0.0;
  bool published_flops_reconstructible = false;
};

/// Compares the built network with the published budget. Every kernel
/// weight is applied at least once per output pixel of its layer, so any
/// network with P weights whose smallest layer output has m pixels needs at
/// least 2*P*m FLOPs under the MAC = 2 FLOPs convention. The published FLOP
/// figure is checked against that bound evaluated at the published parameter
/// count.
inline BudgetAudit audit_budget(const Network& net) {
  BudgetAudit a;
  a.params = count_parameters(net).total;
  a.flops = count_flops(net, net.config.input_size).total;
  a.param_delta = static_cast<double>(a.params) - kPublishedParams;
  a.param_ratio = static_cast<double>(a.params) / kPublishedParams;
  std::int64_t min_px = -1;
  for (const auto& r : describe(net)) {
    const std::int64_t px = static_cast<std::int64_t>(r.out.height) * r.out.width;
    if (min_px < 0 || px < min_px) min_px = px;
  }
  for (const auto& st : net.stages)
    for (const auto& l : st.layers) a.weight_params += l.weight_count();
  a.min_grid_pixels = min_px;
  const double weight_fraction =
      static_cast<double>(a.weight_params) / static_cast<double>(a.params);
  a.published_flops_lower_bound =
      2.0 * kPublishedParams * weight_fraction * static_cast<double>(min_px);
  a.published_flops_reconstructible =
      kPublishedFlops >= a.published_flops_lower_bound;
  return a;
}

inline std::string audit_text(const BudgetAudit& a) {
  char buf[1024];
  std::snprintf(
      buf, sizeof buf,
      "parameters: %lld (published reference 7.98M, delta %+.0f, ratio %.3f)\n"
      "flops: %lld (MAC = 2 FLOPs; published reference 16.3M)\n"
      "published flops check: lower bound %.4g FLOPs at %lld-pixel minimum grid"
      " -> %s\n",
      static_cast<long long>(a.params), a.param_delta, a.param_ratio,
      static_cast<long long>(a.flops), a.published_flops_lower_bound,
      static_cast<long long>(a.min_grid_pixels),
      a.published_flops_reconstructible
          ? "consistent"
          : "NOT reconstructible under this convention");
  return buf;
}

}  // namespace hkp
