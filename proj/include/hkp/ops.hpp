// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "hkp/error.hpp"
#include "hkp/tensor.hpp"

namespace hkp {

enum class Padding { same, valid };

/// Dense convolution parameters. Kernel layout is (kh, kw, c_in, c_out) with
/// c_out innermost. The same layout is used by transposed_conv2d, where c_in
/// and c_out refer to the transposed op's own input and output channels.
struct ConvParams {
  int kh = 1;
  int kw = 1;
  int c_in = 1;
  int c_out = 1;
  std::vector<float> weights;
  std::vector<float> bias;
  int stride = 1;
  Padding padding = Padding::same;

  static ConvParams zeros(int kh, int kw, int c_in, int c_out, int stride = 1,
                          Padding padding = Padding::same) {
    ConvParams p;
    p.kh = kh;
    p.kw = kw;
    p.c_in = c_in;
    p.c_out = c_out;
    p.stride = stride;
    p.padding = padding;
    p.weights.assign(static_cast<std::size_t>(kh) * kw * c_in * c_out, 0.0f);
    p.bias.assign(c_out, 0.0f);
    return p;
  }

  float& w(int ky, int kx, int ci, int co) {
    return weights[((static_cast<std::size_t>(ky) * kw + kx) * c_in + ci) *
                       c_out + co];
  }
  float w(int ky, int kx, int ci, int co) const {
    return weights[((static_cast<std::size_t>(ky) * kw + kx) * c_in + ci) *
                       c_out + co];
  }

  void validate() const {
    if (kh < 1 || kw < 1 || c_in < 1 || c_out < 1)
      throw ConfigError("conv kernel dims must be >= 1");
    if (stride < 1) throw ConfigError("conv stride must be >= 1");
    if (weights.size() != static_cast<std::size_t>(kh) * kw * c_in * c_out)
      throw ConfigError("conv weight count does not match kernel dims");
    if (bias.size() != static_cast<std::size_t>(c_out))
      throw ConfigError("conv bias length must equal c_out");
  }
};

/// Per-channel spatial kernel, layout (kh, kw, channels).
struct DepthwiseParams {
  int kh = 3;
  int kw = 3;
  int channels = 1;
  std::vector<float> weights;
  std::vector<float> bias;
  int stride = 1;
  Padding padding = Padding::same;

  static DepthwiseParams zeros(int kh, int kw, int channels, int stride = 1,
                               Padding padding = Padding::same) {
    DepthwiseParams p;
    p.kh = kh;
    p.kw = kw;
    p.channels = channels;
    p.stride = stride;
    p.padding = padding;
    p.weights.assign(static_cast<std::size_t>(kh) * kw * channels, 0.0f);
    p.bias.assign(channels, 0.0f);
    return p;
  }

  float& w(int ky, int kx, int c) {
    return weights[(static_cast<std::size_t>(ky) * kw + kx) * channels + c];
  }
  float w(int ky, int kx, int c) const {
    return weights[(static_cast<std::size_t>(ky) * kw + kx) * channels + c];
  }

  void validate() const {
    if (kh < 1 || kw < 1 || channels < 1)
      throw ConfigError("depthwise kernel dims must be >= 1");
    if (stride < 1) throw ConfigError("depthwise stride must be >= 1");
    if (weights.size() != static_cast<std::size_t>(kh) * kw * channels)
      throw ConfigError("depthwise weight count does not match kernel dims");
    if (bias.size() != static_cast<std::size_t>(channels))
      throw ConfigError("depthwise bias length must equal channels");
  }
};

struct BatchNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> mean;
  std::vector<float> variance;
  float epsilon = 1e-3f;

  std::size_t channels() const { return gamma.size(); }

  static BatchNormParams identity(int channels, float eps = 1e-3f) {
    BatchNormParams bn;
    bn.gamma.assign(channels, 1.0f);
    bn.beta.assign(channels, 0.0f);
    bn.mean.assign(channels, 0.0f);
    bn.variance.assign(channels, 1.0f);
    bn.epsilon = eps;
    return bn;
  }

  // epsilon == 0 is accepted as long as every variance + epsilon is positive.
  void validate() const {
    const auto n = gamma.size();
    if (beta.size() != n || mean.size() != n || variance.size() != n)
      throw ConfigError("batch-norm vectors must share one length");
    if (!(epsilon >= 0.0f))
      throw ConfigError("batch-norm epsilon must be non-negative");
    for (float v : variance)
      if (v < 0.0f || !(v + epsilon > 0.0f))
        throw ConfigError("batch-norm variance must be >= 0 with var+eps > 0");
  }
};

/// Output extent and leading pad along one spatial axis.
struct AxisGeometry {
  int out = 0;
  int pad_before = 0;
};

/// Forward-convolution geometry. "same" uses ceil(in/stride) outputs with the
/// odd padding unit on the right/bottom.
inline AxisGeometry conv_axis(int in, int k, int stride, Padding padding) {
  AxisGeometry g;
  if (padding == Padding::same) {
    g.out = (in + stride - 1) / stride;
    const int total = std::max((g.out - 1) * stride + k - in, 0);
    g.pad_before = total / 2;
  } else {
    if (in < k)
      throw ConfigError("valid convolution needs input >= kernel (" +
                        std::to_string(in) + " < " + std::to_string(k) + ")");
    g.out = (in - k) / stride + 1;
  }
  return g;
}

/// Transposed-convolution geometry: the adjoint of conv_axis on an input of
/// the returned output size.
inline AxisGeometry transposed_axis(int in, int k, int stride,
                                    Padding padding) {
  AxisGeometry g;
  if (padding == Padding::same) {
    g.out = in * stride;
    const int total = std::max((in - 1) * stride + k - g.out, 0);
    g.pad_before = total / 2;
  } else {
    g.out = (in - 1) * stride + k;
  }
  return g;
}

namespace detail {

inline void accumulate_row(double* out, const float* w, float a, int n) {
  const double av = a;
  for (int co = 0; co < n; ++co) out[co] += av * w[co];
}

inline void store_row(float* out, const double* acc, const std::vector<float>& bias,
                      int n) {
  for (int co = 0; co < n; ++co)
    out[co] = static_cast<float>(acc[co] + bias[co]);
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const ConvParams& p,
                     const ExecContext& ctx = {}) {
  p.validate();
  if (input.channels() != p.c_in)
    throw ConfigError("conv2d: input has " + std::to_string(input.channels()) +
                      " channels, kernel expects " + std::to_string(p.c_in));
  const auto gy = conv_axis(input.height(), p.kh, p.stride, p.padding);
  const auto gx = conv_axis(input.width(), p.kw, p.stride, p.padding);
  Tensor out({input.batch(), gy.out, gx.out, p.c_out});

  const int cin = p.c_in;
  const int cout = p.c_out;
  const bool pointwise = p.kh == 1 && p.kw == 1 && p.stride == 1;

  detail::parallel_rows(input.batch() * gy.out, ctx, [&](int row) {
    const int n = row / gy.out;
    const int oy = row % gy.out;
    std::vector<double> acc(static_cast<std::size_t>(pointwise ? 4 : 1) * cout);
    if (pointwise) {
      // Four pixels per pass share each weight row load.
      int ox = 0;
      for (; ox + 4 <= gx.out; ox += 4) {
        double* o[4];
        const float* in[4];
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int t = 0; t < 4; ++t) {
          o[t] = acc.data() + static_cast<std::size_t>(t) * cout;
          in[t] = input.pixel(n, oy, ox + t);
        }
        for (int ci = 0; ci < cin; ++ci) {
          const float* w = p.weights.data() + static_cast<std::size_t>(ci) * cout;
          const double a0 = in[0][ci], a1 = in[1][ci], a2 = in[2][ci],
                       a3 = in[3][ci];
          for (int co = 0; co < cout; ++co) {
            const double wv = w[co];
            o[0][co] += a0 * wv;
            o[1][co] += a1 * wv;
            o[2][co] += a2 * wv;
            o[3][co] += a3 * wv;
          }
        }
        for (int t = 0; t < 4; ++t)
          detail::store_row(out.pixel(n, oy, ox + t), o[t], p.bias, cout);
      }
      for (; ox < gx.out; ++ox) {
        const float* in = input.pixel(n, oy, ox);
        std::fill(acc.begin(), acc.begin() + cout, 0.0);
        for (int ci = 0; ci < cin; ++ci)
          detail::accumulate_row(
              acc.data(), p.weights.data() + static_cast<std::size_t>(ci) * cout,
              in[ci], cout);
        detail::store_row(out.pixel(n, oy, ox), acc.data(), p.bias, cout);
      }
      return;
    }
    for (int ox = 0; ox < gx.out; ++ox) {
      double* o = acc.data();
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int ky = 0; ky < p.kh; ++ky) {
        const int iy = oy * p.stride + ky - gy.pad_before;
        if (iy < 0 || iy >= input.height()) continue;
        for (int kx = 0; kx < p.kw; ++kx) {
          const int ix = ox * p.stride + kx - gx.pad_before;
          if (ix < 0 || ix >= input.width()) continue;
          const float* in = input.pixel(n, iy, ix);
          const float* w = p.weights.data() +
                           (static_cast<std::size_t>(ky) * p.kw + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci)
            detail::accumulate_row(o, w + static_cast<std::size_t>(ci) * cout,
                                   in[ci], cout);
        }
      }
      detail::store_row(out.pixel(n, oy, ox), o, p.bias, cout);
    }
  });
  return out;
}

inline Tensor depthwise_conv2d(const Tensor& input, const DepthwiseParams& p,
                               const ExecContext& ctx = {}) {
  p.validate();
  if (input.channels() != p.channels)
    throw ConfigError("depthwise_conv2d: input has " +
                      std::to_string(input.channels()) +
                      " channels, kernel expects " + std::to_string(p.channels));
  const auto gy = conv_axis(input.height(), p.kh, p.stride, p.padding);
  const auto gx = conv_axis(input.width(), p.kw, p.stride, p.padding);
  Tensor out({input.batch(), gy.out, gx.out, p.channels});
  const int c = p.channels;

  detail::parallel_rows(input.batch() * gy.out, ctx, [&](int row) {
    const int n = row / gy.out;
    const int oy = row % gy.out;
    std::vector<double> acc(c);
    for (int ox = 0; ox < gx.out; ++ox) {
      double* o = acc.data();
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int ky = 0; ky < p.kh; ++ky) {
        const int iy = oy * p.stride + ky - gy.pad_before;
        if (iy < 0 || iy >= input.height()) continue;
        for (int kx = 0; kx < p.kw; ++kx) {
          const int ix = ox * p.stride + kx - gx.pad_before;
          if (ix < 0 || ix >= input.width()) continue;
          const float* in = input.pixel(n, iy, ix);
          const float* w =
              p.weights.data() + (static_cast<std::size_t>(ky) * p.kw + kx) * c;
          for (int ch = 0; ch < c; ++ch)
            o[ch] += static_cast<double>(in[ch]) * w[ch];
        }
      }
      detail::store_row(out.pixel(n, oy, ox), o, p.bias, c);
    }
  });
  return out;
}

/// Upsampling convolution, computed in gather form so every output element
/// has a fixed accumulation order.
inline Tensor transposed_conv2d(const Tensor& input, const ConvParams& p,
                                const ExecContext& ctx = {}) {
  p.validate();
  if (input.channels() != p.c_in)
    throw ConfigError("transposed_conv2d: input has " +
                      std::to_string(input.channels()) +
                      " channels, kernel expects " + std::to_string(p.c_in));
  const auto gy = transposed_axis(input.height(), p.kh, p.stride, p.padding);
  const auto gx = transposed_axis(input.width(), p.kw, p.stride, p.padding);
  Tensor out({input.batch(), gy.out, gx.out, p.c_out});
  const int cin = p.c_in;
  const int cout = p.c_out;
  const int s = p.stride;

  detail::parallel_rows(input.batch() * gy.out, ctx, [&](int row) {
    const int n = row / gy.out;
    const int oy = row % gy.out;
    std::vector<double> acc(cout);
    for (int ox = 0; ox < gx.out; ++ox) {
      double* o = acc.data();
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int ky = 0; ky < p.kh; ++ky) {
        const int ty = oy + gy.pad_before - ky;
        if (ty < 0 || ty % s != 0) continue;
        const int iy = ty / s;
        if (iy >= input.height()) continue;
        for (int kx = 0; kx < p.kw; ++kx) {
          const int tx = ox + gx.pad_before - kx;
          if (tx < 0 || tx % s != 0) continue;
          const int ix = tx / s;
          if (ix >= input.width()) continue;
          const float* in = input.pixel(n, iy, ix);
          const float* w = p.weights.data() +
                           (static_cast<std::size_t>(ky) * p.kw + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci)
            detail::accumulate_row(o, w + static_cast<std::size_t>(ci) * cout,
                                   in[ci], cout);
        }
      }
      detail::store_row(out.pixel(n, oy, ox), o, p.bias, cout);
    }
  });
  return out;
}

inline void relu6_inplace(Tensor& t) {
  for (float& v : t.data()) v = std::min(std::max(v, 0.0f), 6.0f);
}

inline Tensor relu6(Tensor t) {
  relu6_inplace(t);
  return t;
}

/// Inference-mode batch norm, applied on the last axis. Used as the unfolded
/// reference for fold_batchnorm.
inline Tensor batch_norm(const Tensor& input, const BatchNormParams& bn) {
  bn.validate();
  if (bn.channels() != static_cast<std::size_t>(input.channels()))
    throw ConfigError("batch_norm: channel mismatch");
  Tensor out = input;
  const int c = input.channels();
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int ch = static_cast<int>(i % c);
    const double inv =
        1.0 / std::sqrt(static_cast<double>(bn.variance[ch]) + bn.epsilon);
    d[i] = static_cast<float>((static_cast<double>(d[i]) - bn.mean[ch]) * inv *
                                  bn.gamma[ch] +
                              bn.beta[ch]);
  }
  return out;
}

namespace detail {

inline std::vector<float> bn_scale(const BatchNormParams& bn) {
  std::vector<float> scale(bn.channels());
  for (std::size_t c = 0; c < scale.size(); ++c)
    scale[c] = static_cast<float>(
        static_cast<double>(bn.gamma[c]) /
        std::sqrt(static_cast<double>(bn.variance[c]) + bn.epsilon));
  return scale;
}

}  // namespace detail

/// Returns conv' with conv'(x) == bn(conv(x)):
///   w' = w * gamma / sqrt(var + eps),  b' = beta + (b - mean) * gamma / sqrt(var + eps)
inline ConvParams fold_batchnorm(const ConvParams& conv,
                                 const BatchNormParams& bn) {
  conv.validate();
  bn.validate();
  if (bn.channels() != static_cast<std::size_t>(conv.c_out))
    throw ConfigError("fold_batchnorm: batch norm has " +
                      std::to_string(bn.channels()) + " channels, conv has " +
                      std::to_string(conv.c_out));
  const auto scale = detail::bn_scale(bn);
  ConvParams out = conv;
  for (std::size_t i = 0; i < out.weights.size(); ++i)
    out.weights[i] *= scale[i % conv.c_out];
  for (int c = 0; c < conv.c_out; ++c)
    out.bias[c] = static_cast<float>(
        bn.beta[c] + (static_cast<double>(conv.bias[c]) - bn.mean[c]) * scale[c]);
  return out;
}

inline DepthwiseParams fold_batchnorm(const DepthwiseParams& conv,
                                      const BatchNormParams& bn) {
  conv.validate();
  bn.validate();
  if (bn.channels() != static_cast<std::size_t>(conv.channels))
    throw ConfigError("fold_batchnorm: batch norm has " +
                      std::to_string(bn.channels()) +
                      " channels, depthwise conv has " +
                      std::to_string(conv.channels));
  const auto scale = detail::bn_scale(bn);
  DepthwiseParams out = conv;
  for (std::size_t i = 0; i < out.weights.size(); ++i)
    out.weights[i] *= scale[i % conv.channels];
  for (int c = 0; c < conv.channels; ++c)
    out.bias[c] = static_cast<float>(
        bn.beta[c] + (static_cast<double>(conv.bias[c]) - bn.mean[c]) * scale[c]);
  return out;
}

using ProbMap = Grid<double>;

/// Softmax over all cells of one plane, with max subtraction. Computed in
/// double so that the ordering of distinct float scores survives.
inline ProbMap spatial_softmax(const ScorePlane& scores) {
  if (scores.size() == 0) throw UsageError("spatial_softmax: empty grid");
  ProbMap prob(scores.height, scores.width);
  const float mx = *std::max_element(scores.values.begin(), scores.values.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    prob.values[i] = std::exp(static_cast<double>(scores.values[i]) - mx);
    sum += prob.values[i];
  }
  for (double& v : prob.values) v /= sum;
  return prob;
}

/// Copies channel c of image n into a plane.
inline ScorePlane channel_plane(const Tensor& t, int n, int c) {
  ScorePlane plane(t.height(), t.width());
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x) plane.at(y, x) = t.at(n, y, x, c);
  return plane;
}

}  // namespace hkp
