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

#include "pvseg/deeplab.hpp"
#include "pvseg/segmentation_model.hpp"
#include "pvseg/tiny_segnet.hpp"
#include "pvseg/weights.hpp"

namespace pvseg {

inline std::unique_ptr<SegmentationModel> create_model(const BackboneSpec& spec,
                                                       std::uint64_t seed) {
  if (spec.num_classes < 2) {
    throw InvalidArgument("a segmentation model needs at least 2 classes");
  }
  if (spec.kind == BackboneKind::kTiny) {
    if (spec.pretrained) {
      throw InvalidArgument("pretrained weights only apply to the full_scale backbone");
    }
    return std::make_unique<TinySegNet>(spec, seed);
  }
  if (spec.pretrained && spec.pretrained_weights.empty()) {
    throw IoError(
        "pretrained weights unavailable: set model.pretrained_weights to an "
        "encoder weight file");
  }
  auto model = std::make_unique<DeepLabV3Plus>(spec, seed);
  if (spec.pretrained) {
    const std::size_t loaded =
        load_named_parameters(*model, spec.pretrained_weights, "backbone.");
    if (loaded == 0) {
      throw IoError("pretrained weight file '" + spec.pretrained_weights +
                    "' holds no backbone tensors");
    }
  }
  return model;
}

}  // namespace pvseg
