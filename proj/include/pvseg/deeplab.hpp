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
#include <utility>
#include <vector>

#include "pvseg/segmentation_model.hpp"

namespace pvseg {

namespace deeplab_detail {

// ResNet bottleneck (stride on the 3x3 conv).
class Bottleneck {
 public:
  Bottleneck(const std::string& name, int in, int width, int stride, int dilation)
      : c1_(name + ".conv1", {.in_channels = in, .out_channels = width, .kernel = 1,
                              .padding = 0}),
        c2_(name + ".conv2", {.in_channels = width, .out_channels = width, .kernel = 3,
                              .stride = stride, .dilation = dilation}),
        c3_(name + ".conv3",
            {.in_channels = width, .out_channels = width * 4, .kernel = 1, .padding = 0},
            false),
        has_down_(stride != 1 || in != width * 4) {
    if (has_down_) {
      down_ = nn::ConvBnRelu(name + ".downsample",
                             {.in_channels = in, .out_channels = width * 4, .kernel = 1,
                              .stride = stride, .padding = 0},
                             false);
    }
  }

  void init(Rng& rng) {
    c1_.init(rng);
    c2_.init(rng);
    c3_.init(rng);
    if (has_down_) down_.init(rng);
  }

  Tensor<float> forward(const Tensor<float>& x, Mode mode) {
    Tensor<float> y = c3_.forward(c2_.forward(c1_.forward(x, mode), mode), mode);
    nn::add_inplace(y, has_down_ ? down_.forward(x, mode) : x);
    return relu_.forward(std::move(y));
  }

  Tensor<float> backward(const Tensor<float>& dy) {
    Tensor<float> g = relu_.backward(dy);
    Tensor<float> gx = c1_.backward(c2_.backward(c3_.backward(g)));
    nn::add_inplace(gx, has_down_ ? down_.backward(g) : g);
    return gx;
  }

  void collect(nn::ParamCollector& pc) {
    c1_.collect(pc);
    c2_.collect(pc);
    c3_.collect(pc);
    if (has_down_) down_.collect(pc);
  }

 private:
  nn::ConvBnRelu c1_;
  nn::ConvBnRelu c2_;
  nn::ConvBnRelu c3_;
  bool has_down_;
  nn::ConvBnRelu down_;
  nn::ReLU relu_;
};

class ResLayer {
 public:
  ResLayer(const std::string& name, int in, int width, int blocks, int stride,
           int dilation) {
    blocks_.reserve(static_cast<std::size_t>(blocks));
    for (int i = 0; i < blocks; ++i) {
      const int block_in = i == 0 ? in : width * 4;
      const int block_dil = (i == 0 && dilation > 1) ? dilation / 2 : dilation;
      blocks_.emplace_back(name + "." + std::to_string(i), block_in, width,
                           i == 0 ? stride : 1, block_dil);
    }
  }
  void init(Rng& rng) {
    for (auto& b : blocks_) b.init(rng);
  }
  Tensor<float> forward(Tensor<float> x, Mode mode) {
    for (auto& b : blocks_) x = b.forward(x, mode);
    return x;
  }
  Tensor<float> backward(Tensor<float> g) {
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
    return g;
  }
  void collect(nn::ParamCollector& pc) {
    for (auto& b : blocks_) b.collect(pc);
  }

 private:
  std::vector<Bottleneck> blocks_;
};

class Aspp {
 public:
  static constexpr int kChannels = 256;

  explicit Aspp(int in)
      : b0_("aspp.0", {.in_channels = in, .out_channels = kChannels, .kernel = 1,
                       .padding = 0}),
        b1_("aspp.1", {.in_channels = in, .out_channels = kChannels, .dilation = 6}),
        b2_("aspp.2", {.in_channels = in, .out_channels = kChannels, .dilation = 12}),
        b3_("aspp.3", {.in_channels = in, .out_channels = kChannels, .dilation = 18}),
        pool_("aspp.pool", {.in_channels = in, .out_channels = kChannels, .kernel = 1,
                            .padding = 0}),
        project_("aspp.project", {.in_channels = 5 * kChannels,
                                  .out_channels = kChannels, .kernel = 1, .padding = 0}) {}

  void init(Rng& rng) {
    for (auto* l : {&b0_, &b1_, &b2_, &b3_, &pool_, &project_}) l->init(rng);
  }

  Tensor<float> forward(const Tensor<float>& x, Mode mode) {
    h_ = x.height();
    w_ = x.width();
    // Batch statistics over a 1x1 map are degenerate for a single sample.
    const Mode pool_mode = x.batch() > 1 ? mode : Mode::kEval;
    Tensor<float> pooled =
        nn::broadcast_spatial(pool_.forward(nn::global_avg_pool(x), pool_mode), h_, w_);
    Tensor<float> cat = nn::concat_channels(b0_.forward(x, mode), b1_.forward(x, mode));
    cat = nn::concat_channels(cat, b2_.forward(x, mode));
    cat = nn::concat_channels(cat, b3_.forward(x, mode));
    cat = nn::concat_channels(cat, pooled);
    return project_.forward(cat, mode);
  }

  Tensor<float> backward(const Tensor<float>& dy) {
    Tensor<float> g = project_.backward(dy);
    Tensor<float> gx = b0_.backward(nn::slice_channels(g, 0, kChannels));
    nn::add_inplace(gx, b1_.backward(nn::slice_channels(g, kChannels, kChannels)));
    nn::add_inplace(gx, b2_.backward(nn::slice_channels(g, 2 * kChannels, kChannels)));
    nn::add_inplace(gx, b3_.backward(nn::slice_channels(g, 3 * kChannels, kChannels)));
    Tensor<float> gp = pool_.backward(
        nn::broadcast_spatial_backward(nn::slice_channels(g, 4 * kChannels, kChannels)));
    nn::add_inplace(gx, nn::global_avg_pool_backward(gp, h_, w_));
    return gx;
  }

  void collect(nn::ParamCollector& pc) {
    for (auto* l : {&b0_, &b1_, &b2_, &b3_, &pool_, &project_}) l->collect(pc);
  }

 private:
  nn::ConvBnRelu b0_;
  nn::ConvBnRelu b1_;
  nn::ConvBnRelu b2_;
  nn::ConvBnRelu b3_;
  nn::ConvBnRelu pool_;
  nn::ConvBnRelu project_;
  int h_ = 0;
  int w_ = 0;
};

}  // namespace deeplab_detail

// DeepLabv3+ on a ResNet-50 encoder at output stride 16. Encoder parameters
// carry the "backbone." prefix so ImageNet weights can be loaded by name.
class DeepLabV3Plus final : public SegmentationModel {
 public:
  static constexpr int kLowLevelChannels = 48;

  DeepLabV3Plus(const BackboneSpec& spec, std::uint64_t seed)
      : SegmentationModel(spec),
        stem_("backbone.stem", {.in_channels = 3, .out_channels = 64, .kernel = 7,
                                .stride = 2}),
        layer1_("backbone.layer1", 64, 64, 3, 1, 1),
        layer2_("backbone.layer2", 256, 128, 4, 2, 1),
        layer3_("backbone.layer3", 512, 256, 6, 2, 1),
        layer4_("backbone.layer4", 1024, 512, 3, 1, 2),
        aspp_(2048),
        low_proj_("decoder.low_level", {.in_channels = 256,
                                        .out_channels = kLowLevelChannels, .kernel = 1,
                                        .padding = 0}),
        dec1_("decoder.conv1",
              {.in_channels = deeplab_detail::Aspp::kChannels + kLowLevelChannels,
               .out_channels = 256}),
        dec2_("decoder.conv2", {.in_channels = 256, .out_channels = 256}),
        classifier_("decoder.classifier", {.in_channels = 256,
                                           .out_channels = spec.num_classes,
                                           .kernel = 1,
                                           .padding = 0,
                                           .bias = true}) {
    Rng rng(derive_seed(seed, {0xd1ab}));
    stem_.init(rng);
    layer1_.init(rng);
    layer2_.init(rng);
    layer3_.init(rng);
    layer4_.init(rng);
    aspp_.init(rng);
    low_proj_.init(rng);
    dec1_.init(rng);
    dec2_.init(rng);
    classifier_.init(rng);
  }

  std::string architecture() const override {
    return "deeplabv3plus_resnet50_os16/c" + std::to_string(num_classes());
  }
  int downsampling_factor() const override { return 16; }

  Tensor<float> forward(const Tensor<float>& x, Mode mode) override {
    if (x.channels() != 3) throw ShapeMismatch("model expects 3-channel input");
    in_h_ = x.height();
    in_w_ = x.width();
    Tensor<float> l1 = layer1_.forward(pool_.forward(stem_.forward(x, mode)), mode);
    Tensor<float> deep = aspp_.forward(
        layer4_.forward(layer3_.forward(layer2_.forward(l1, mode), mode), mode), mode);
    Tensor<float> low = low_proj_.forward(l1, mode);
    Tensor<float> up = up_aspp_.forward(deep, low.height(), low.width());
    Tensor<float> f = dec2_.forward(dec1_.forward(nn::concat_channels(up, low), mode), mode);
    return up_logits_.forward(classifier_.forward(f), in_h_, in_w_);
  }

  Tensor<float> backward(const Tensor<float>& grad_logits) override {
    Tensor<float> g =
        dec1_.backward(dec2_.backward(classifier_.backward(up_logits_.backward(grad_logits))));
    auto [g_up, g_low] = nn::split_channels(g, deeplab_detail::Aspp::kChannels);
    Tensor<float> g_deep = aspp_.backward(up_aspp_.backward(g_up));
    Tensor<float> g_l1 =
        layer2_.backward(layer3_.backward(layer4_.backward(std::move(g_deep))));
    nn::add_inplace(g_l1, low_proj_.backward(std::move(g_low)));
    return stem_.backward(pool_.backward(layer1_.backward(std::move(g_l1))));
  }

  void collect(nn::ParamCollector& pc) override {
    stem_.collect(pc);
    layer1_.collect(pc);
    layer2_.collect(pc);
    layer3_.collect(pc);
    layer4_.collect(pc);
    aspp_.collect(pc);
    low_proj_.collect(pc);
    dec1_.collect(pc);
    dec2_.collect(pc);
    classifier_.collect(pc);
  }

 private:
  nn::ConvBnRelu stem_;
  nn::MaxPool3x3s2 pool_;
  deeplab_detail::ResLayer layer1_;
  deeplab_detail::ResLayer layer2_;
  deeplab_detail::ResLayer layer3_;
  deeplab_detail::ResLayer layer4_;
  deeplab_detail::Aspp aspp_;
  nn::ConvBnRelu low_proj_;
  nn::BilinearResize up_aspp_;
  nn::ConvBnRelu dec1_;
  nn::ConvBnRelu dec2_;
  nn::Conv2d classifier_;
  nn::BilinearResize up_logits_;
  int in_h_ = 0;
  int in_w_ = 0;
};

}  // namespace pvseg
