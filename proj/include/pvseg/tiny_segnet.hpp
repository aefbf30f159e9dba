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
#include <string>

#include "pvseg/segmentation_model.hpp"

namespace pvseg {

// Desk-scale encoder-decoder: three stride-2 conv blocks (16/32/64), one
// dilated context block, bilinear decoder fused with the 1/4 skip.
class TinySegNet final : public SegmentationModel {
 public:
  TinySegNet(const BackboneSpec& spec, std::uint64_t seed)
      : SegmentationModel(spec),
        enc1_("enc1", {.in_channels = 3, .out_channels = 16, .kernel = 3, .stride = 2}),
        enc2_("enc2", {.in_channels = 16, .out_channels = 32, .kernel = 3, .stride = 2}),
        enc3_("enc3", {.in_channels = 32, .out_channels = 64, .kernel = 3, .stride = 2}),
        context_("context",
                 {.in_channels = 64, .out_channels = 64, .kernel = 3, .dilation = 2}),
        fuse_("fuse", {.in_channels = 96, .out_channels = 32, .kernel = 3}),
        classifier_("classifier", {.in_channels = 32,
                                   .out_channels = spec.num_classes,
                                   .kernel = 1,
                                   .padding = 0,
                                   .bias = true}) {
    Rng rng(derive_seed(seed, {0x7141u}));
    enc1_.init(rng);
    enc2_.init(rng);
    enc3_.init(rng);
    context_.init(rng);
    fuse_.init(rng);
    classifier_.init(rng);
  }

  std::string architecture() const override {
    return "tiny/c" + std::to_string(num_classes());
  }
  int downsampling_factor() const override { return 8; }

  Tensor<float> forward(const Tensor<float>& x, Mode mode) override {
    if (x.channels() != 3) throw ShapeMismatch("model expects 3-channel input");
    in_h_ = x.height();
    in_w_ = x.width();
    Tensor<float> e1 = enc1_.forward(x, mode);
    Tensor<float> e2 = enc2_.forward(e1, mode);
    Tensor<float> e3 = enc3_.forward(e2, mode);
    Tensor<float> ctx = context_.forward(e3, mode);
    Tensor<float> up = up_context_.forward(ctx, e2.height(), e2.width());
    skip_channels_ = up.channels();
    Tensor<float> f = fuse_.forward(nn::concat_channels(up, e2), mode);
    return up_logits_.forward(classifier_.forward(f), in_h_, in_w_);
  }

  Tensor<float> backward(const Tensor<float>& grad_logits) override {
    Tensor<float> g = classifier_.backward(up_logits_.backward(grad_logits));
    auto [g_up, g_e2] = nn::split_channels(fuse_.backward(std::move(g)), skip_channels_);
    Tensor<float> g_e3 = context_.backward(up_context_.backward(g_up));
    nn::add_inplace(g_e2, enc3_.backward(std::move(g_e3)));
    return enc1_.backward(enc2_.backward(std::move(g_e2)));
  }

  void collect(nn::ParamCollector& pc) override {
    enc1_.collect(pc);
    enc2_.collect(pc);
    enc3_.collect(pc);
    context_.collect(pc);
    fuse_.collect(pc);
    classifier_.collect(pc);
  }

 private:
  nn::ConvBnRelu enc1_;
  nn::ConvBnRelu enc2_;
  nn::ConvBnRelu enc3_;
  nn::ConvBnRelu context_;
  nn::BilinearResize up_context_;
  nn::ConvBnRelu fuse_;
  nn::Conv2d classifier_;
  nn::BilinearResize up_logits_;
  int skip_channels_ = 0;
  int in_h_ = 0;
  int in_w_ = 0;
};

}  // namespace pvseg
