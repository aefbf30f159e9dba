/* Copyright 2026 The pvseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pvseg/error.hpp"

namespace pvseg {

// Dense NCHW tensor. Batch, channel, row, column; row-major planes.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int batch, int channels, int height, int width, T fill = T{})
      : shape_{batch, channels, height, width} {
    if (batch < 0 || channels < 0 || height < 0 || width < 0) {
      throw InvalidArgument("negative tensor dimension");
    }
    data_.assign(static_cast<std::size_t>(batch) * channels * height * width,
                 fill);
  }

  int batch() const noexcept { return shape_[0]; }
  int channels() const noexcept { return shape_[1]; }
  int height() const noexcept { return shape_[2]; }
  int width() const noexcept { return shape_[3]; }
  const std::array<int, 4>& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(shape_[2]) * shape_[3];
  }
  std::size_t sample_size() const noexcept {
    return plane_size() * static_cast<std::size_t>(shape_[1]);
  }

  std::size_t index(int b, int c, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(b) * shape_[1] + c) * shape_[2] + y) *
               shape_[3] +
           x;
  }
  T& operator()(int b, int c, int y, int x) noexcept {
    return data_[index(b, c, y, x)];
  }
  const T& operator()(int b, int c, int y, int x) const noexcept {
    return data_[index(b, c, y, x)];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T* plane(int b, int c) noexcept { return data_.data() + index(b, c, 0, 0); }
  const T* plane(int b, int c) const noexcept {
    return data_.data() + index(b, c, 0, 0);
  }
  std::span<T> sample(int b) noexcept {
    return {data_.data() + index(b, 0, 0, 0), sample_size()};
  }
  std::span<const T> sample(int b) const noexcept {
    return {data_.data() + index(b, 0, 0, 0), sample_size()};
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Tensor& other) const noexcept {
    return shape_ == other.shape_;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(batch(), channels(), height(), width());
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << shape_[0] << "x" << shape_[1] << "x" << shape_[2] << "x"
       << shape_[3];
    return os.str();
  }

  bool operator==(const Tensor& other) const = default;

 private:
  std::array<int, 4> shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

// Sentinel for pixels excluded from supervised losses.
inline constexpr int kIgnoreLabel = 255;

// B x H x W per-pixel class indices.
class LabelBatch {
 public:
  LabelBatch() = default;
  LabelBatch(int batch, int height, int width, int fill = 0)
      : batch_(batch), height_(height), width_(width) {
    if (batch < 0 || height < 0 || width < 0) {
      throw InvalidArgument("negative label batch dimension");
    }
    values_.assign(static_cast<std::size_t>(batch) * height * width, fill);
  }

  int batch() const noexcept { return batch_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(height_) * width_;
  }
  std::size_t index(int b, int y, int x) const noexcept {
    return (static_cast<std::size_t>(b) * height_ + y) * width_ + x;
  }
  int& operator()(int b, int y, int x) noexcept {
    return values_[index(b, y, x)];
  }
  int operator()(int b, int y, int x) const noexcept {
    return values_[index(b, y, x)];
  }
  int& operator[](std::size_t i) noexcept { return values_[i]; }
  int operator[](std::size_t i) const noexcept { return values_[i]; }
  std::span<int> values() noexcept { return values_; }
  std::span<const int> values() const noexcept { return values_; }
  int* plane(int b) noexcept { return values_.data() + index(b, 0, 0); }
  const int* plane(int b) const noexcept {
    return values_.data() + index(b, 0, 0);
  }

  template <typename T>
  bool matches(const Tensor<T>& t) const noexcept {
    return t.batch() == batch_ && t.height() == height_ &&
           t.width() == width_;
  }

  bool operator==(const LabelBatch& other) const = default;

 private:
  int batch_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<int> values_;
};

// Stacks two tensors along the batch axis.
template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.channels() != b.channels() || a.height() != b.height() ||
      a.width() != b.width()) {
    throw ShapeMismatch("concat_batch: " + a.shape_string() + " vs " +
                        b.shape_string());
  }
  Tensor<T> out(a.batch() + b.batch(), a.channels(), a.height(), a.width());
  std::copy(a.values().begin(), a.values().end(), out.data());
  std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
  return out;
}

inline LabelBatch concat_batch(const LabelBatch& a, const LabelBatch& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeMismatch("concat_batch: label maps differ in spatial size");
  }
  LabelBatch out(a.batch() + b.batch(), a.height(), a.width());
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(),
            out.values().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

// Copies `count` samples starting at `begin`.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > t.batch()) {
    throw InvalidArgument("slice_batch out of range");
  }
  Tensor<T> out(count, t.channels(), t.height(), t.width());
  if (count > 0) {
    auto first = t.values().begin() +
                 static_cast<std::ptrdiff_t>(t.sample_size() * begin);
    std::copy(first,
              first + static_cast<std::ptrdiff_t>(t.sample_size() * count),
              out.data());
  }
  return out;
}

inline LabelBatch slice_batch(const LabelBatch& t, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > t.batch()) {
    throw InvalidArgument("slice_batch out of range");
  }
  LabelBatch out(count, t.height(), t.width());
  const std::size_t hw = static_cast<std::size_t>(t.height()) * t.width();
  std::copy(t.values().begin() + static_cast<std::ptrdiff_t>(hw * begin),
            t.values().begin() + static_cast<std::ptrdiff_t>(hw * (begin + count)),
            out.values().begin());
  return out;
}

}  // namespace pvseg
