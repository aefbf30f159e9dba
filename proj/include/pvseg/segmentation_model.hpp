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

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pvseg/error.hpp"
#include "pvseg/nn/layers.hpp"
#include "pvseg/rng.hpp"
#include "pvseg/tensor.hpp"

namespace pvseg {

using nn::Mode;

enum class BackboneKind { kTiny, kFullScale };

inline std::string to_string(BackboneKind k) {
  return k == BackboneKind::kTiny ? "tiny" : "full_scale";
}

inline BackboneKind parse_backbone_kind(const std::string& s) {
  if (s == "tiny") return BackboneKind::kTiny;
  if (s == "full_scale") return BackboneKind::kFullScale;
  throw InvalidArgument("unknown backbone kind '" + s + "'");
}

struct BackboneSpec {
  BackboneKind kind = BackboneKind::kTiny;
  bool pretrained = false;   // full_scale only
  int num_classes = 4;       // including background
  std::string pretrained_weights;  // named-parameter file for the encoder
};

// Segmentation network contract: images B x 3 x h x w -> logits
// B x C x h x w. Softmax is never applied here.
class SegmentationModel {
 public:
  virtual ~SegmentationModel() = default;
  SegmentationModel(const SegmentationModel&) = delete;
  SegmentationModel& operator=(const SegmentationModel&) = delete;

  const BackboneSpec& spec() const noexcept { return spec_; }
  int num_classes() const noexcept { return spec_.num_classes; }

  // Identifies the layer layout; equal strings mean interchangeable weights.
  virtual std::string architecture() const = 0;
  virtual int downsampling_factor() const = 0;

  virtual Tensor<float> forward(const Tensor<float>& images, Mode mode) = 0;
  // Accumulates parameter gradients of the last forward; returns d images.
  virtual Tensor<float> backward(const Tensor<float>& grad_logits) = 0;
  virtual void collect(nn::ParamCollector& pc) = 0;

  std::vector<nn::Parameter*> parameters() {
    nn::ParamCollector pc;
    collect(pc);
    return pc.params;
  }
  std::vector<nn::Buffer*> buffers() {
    nn::ParamCollector pc;
    collect(pc);
    return pc.buffers;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  std::vector<float> parameter_vector() {
    std::vector<float> out;
    out.reserve(parameter_count());
    for (auto* p : parameters()) out.insert(out.end(), p->value.begin(), p->value.end());
    return out;
  }

  void set_parameter_vector(std::span<const float> values) {
    if (values.size() != parameter_count()) {
      throw ShapeMismatch("parameter vector has " + std::to_string(values.size()) +
                          " entries, model expects " +
                          std::to_string(parameter_count()));
    }
    std::size_t off = 0;
    for (auto* p : parameters()) {
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(),
                  p->value.begin());
      off += p->value.size();
    }
  }

  std::vector<float> gradient_vector() {
    std::vector<float> out;
    for (auto* p : parameters()) out.insert(out.end(), p->grad.begin(), p->grad.end());
    return out;
  }

  std::vector<float> buffer_vector() {
    std::vector<float> out;
    for (auto* b : buffers()) out.insert(out.end(), b->value.begin(), b->value.end());
    return out;
  }

  void set_buffer_vector(std::span<const float> values) {
    std::size_t total = 0;
    for (auto* b : buffers()) total += b->value.size();
    if (values.size() != total) throw ShapeMismatch("buffer vector size mismatch");
    std::size_t off = 0;
    for (auto* b : buffers()) {
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), b->value.size(),
                  b->value.begin());
      off += b->value.size();
    }
  }

  void zero_grad() {
    for (auto* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
  }

 protected:
  explicit SegmentationModel(BackboneSpec spec) : spec_(std::move(spec)) {}

  BackboneSpec spec_;
};

// Copies parameters and buffers; architectures must match.
inline void clone_into(SegmentationModel& source, SegmentationModel& target) {
  if (source.architecture() != target.architecture()) {
    throw ShapeMismatch("cannot clone " + source.architecture() + " into " +
                        target.architecture());
  }
  target.set_parameter_vector(source.parameter_vector());
  target.set_buffer_vector(source.buffer_vector());
}

}  // namespace pvseg
