// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "hkp/error.hpp"

namespace hkp {

struct Shape {
  int batch = 1;
  int height = 1;
  int width = 1;
  int channels = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(batch) * height * width * channels;
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(batch) + "x" + std::to_string(height) + "x" +
           std::to_string(width) + "x" + std::to_string(channels);
  }
};

// Dense NHWC float tensor, channels innermost.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(shape) {
    if (shape.batch < 1 || shape.height < 1 || shape.width < 1 ||
        shape.channels < 1)
      throw ConfigError("tensor dimensions must be >= 1, got " + shape.str());
    data_.assign(shape.size(), fill);
  }

  Tensor(Shape shape, std::vector<float> data) : Tensor(shape) {
    if (data.size() != shape.size())
      throw ConfigError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape.str());
    data_ = std::move(data);
  }

  const Shape& shape() const { return shape_; }
  int batch() const { return shape_.batch; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& vec() const { return data_; }

  std::size_t offset(int n, int y, int x, int c) const {
    return ((static_cast<std::size_t>(n) * shape_.height + y) * shape_.width +
            x) * shape_.channels + c;
  }
  float& at(int n, int y, int x, int c) { return data_[offset(n, y, x, c)]; }
  float at(int n, int y, int x, int c) const {
    return data_[offset(n, y, x, c)];
  }

  // Pointer to the channel vector of pixel (n, y, x).
  float* pixel(int n, int y, int x) { return data_.data() + offset(n, y, x, 0); }
  const float* pixel(int n, int y, int x) const {
    return data_.data() + offset(n, y, x, 0);
  }

 private:
  Shape shape_{};
  std::vector<float> data_;
};

/// Row-major 2D grid; used for single heatmap planes and probability maps.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(int h, int w, T fill = T{}) : height(h), width(w) {
    if (h < 1 || w < 1) throw ConfigError("grid must be non-empty");
    values.assign(static_cast<std::size_t>(h) * w, fill);
  }

  std::size_t size() const { return values.size(); }
  T& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  T at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
};

using ScorePlane = Grid<float>;

/// Execution settings shared by the kernels. threads == 1 is the strict
/// deterministic mode; row partitioning never changes per-element
/// accumulation order, so results are identical for any thread count.
struct ExecContext {
  int threads = 1;
};

namespace detail {

template <typename Fn>
void parallel_rows(int rows, const ExecContext& ctx, Fn&& fn) {
  const int workers = std::clamp(ctx.threads, 1, std::max(rows, 1));
  if (workers == 1) {
    for (int r = 0; r < rows; ++r) fn(r);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const int begin = rows * w / workers;
    const int end = rows * (w + 1) / workers;
    pool.emplace_back([begin, end, &fn] {
      for (int r = begin; r < end; ++r) fn(r);
    });
  }
}

}  // namespace detail
}  // namespace hkp
