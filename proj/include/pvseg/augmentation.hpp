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

// Weak (normalize only) and strong (photometric + CutMix) views. Batches are
// B x 3 x H x W tensors holding RGB in [0, 1] before normalization.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "pvseg/error.hpp"
#include "pvseg/rng.hpp"
#include "pvseg/tensor.hpp"

namespace pvseg {

struct NormalizationConstants {
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};

  void validate() const {
    for (float s : std) {
      if (!(s > 0.0f)) throw InvalidArgument("normalization std must be > 0");
    }
  }
};

struct StrongAugConfig {
  double jitter_max_delta = 0.5;
  double grayscale_prob = 0.2;
  std::pair<int, int> blur_kernel_range{1, 5};
  std::pair<double, double> blur_sigma_range{0.1, 2.0};
  double cutmix_alpha = 4.0;
  double cutmix_beta = 4.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (jitter_max_delta < 0.0 || jitter_max_delta > 1.0) {
      throw InvalidArgument("jitter delta must lie in [0, 1]");
    }
    if (grayscale_prob < 0.0 || grayscale_prob > 1.0) {
      throw InvalidArgument("grayscale probability must lie in [0, 1]");
    }
    if (blur_kernel_range.first < 1 ||
        blur_kernel_range.first > blur_kernel_range.second) {
      throw InvalidArgument("blur kernel range must be ordered and >= 1");
    }
    if (blur_sigma_range.first <= 0.0 ||
        blur_sigma_range.first > blur_sigma_range.second) {
      throw InvalidArgument("blur sigma range must be ordered and > 0");
    }
    if (!(cutmix_alpha > 0.0) || !(cutmix_beta > 0.0)) {
      throw InvalidArgument("cutmix beta parameters must be positive");
    }
  }
};

// ---------------------------------------------------------------------------
// Normalization

inline Tensor<float> normalize(const Tensor<float>& images,
                               const NormalizationConstants& k = {}) {
  if (images.channels() != 3) throw ShapeMismatch("normalize expects 3 channels");
  k.validate();
  Tensor<float> out = images;
  for (int b = 0; b < out.batch(); ++b) {
    for (int c = 0; c < 3; ++c) {
      float* p = out.plane(b, c);
      for (std::size_t i = 0; i < out.plane_size(); ++i) {
        p[i] = (p[i] - k.mean[c]) / k.std[c];
      }
    }
  }
  return out;
}

inline Tensor<float> denormalize(const Tensor<float>& images,
                                 const NormalizationConstants& k = {}) {
  if (images.channels() != 3) {
    throw ShapeMismatch("denormalize expects 3 channels");
  }
  Tensor<float> out = images;
  for (int b = 0; b < out.batch(); ++b) {
    for (int c = 0; c < 3; ++c) {
      float* p = out.plane(b, c);
      for (std::size_t i = 0; i < out.plane_size(); ++i) {
        p[i] = p[i] * k.std[c] + k.mean[c];
      }
    }
  }
  return out;
}

// Teacher view: normalization only, geometry untouched.
inline Tensor<float> weak_augment(const Tensor<float>& images,
                                  const NormalizationConstants& k = {}) {
  return normalize(images, k);
}

// ---------------------------------------------------------------------------
// Photometric ops on a single sample (3 planes of size n).

namespace aug_detail {

inline float luma(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s,
                       float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0f);
  } else if (mx == g) {
    h = (b - r) / d + 2.0f;
  } else {
    h = (r - g) / d + 4.0f;
  }
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g,
                       float& b) {
  const float hh = h * 6.0f;
  const int i = static_cast<int>(std::floor(hh)) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1 - s);
  const float q = v * (1 - s * f);
  const float t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

struct Planes {
  float* r;
  float* g;
  float* b;
  std::size_t n;
};

inline void adjust_brightness(Planes p, float factor) {
  for (float* ch : {p.r, p.g, p.b}) {
    for (std::size_t i = 0; i < p.n; ++i) {
      ch[i] = std::clamp(ch[i] * factor, 0.0f, 1.0f);
    }
  }
}

inline void adjust_contrast(Planes p, float factor) {
  double mean = 0.0;
  for (std::size_t i = 0; i < p.n; ++i) mean += luma(p.r[i], p.g[i], p.b[i]);
  const float m = static_cast<float>(mean / static_cast<double>(p.n));
  for (float* ch : {p.r, p.g, p.b}) {
    for (std::size_t i = 0; i < p.n; ++i) {
      ch[i] = std::clamp((ch[i] - m) * factor + m, 0.0f, 1.0f);
    }
  }
}

inline void adjust_saturation(Planes p, float factor) {
  for (std::size_t i = 0; i < p.n; ++i) {
    const float y = luma(p.r[i], p.g[i], p.b[i]);
    p.r[i] = std::clamp((p.r[i] - y) * factor + y, 0.0f, 1.0f);
    p.g[i] = std::clamp((p.g[i] - y) * factor + y, 0.0f, 1.0f);
    p.b[i] = std::clamp((p.b[i] - y) * factor + y, 0.0f, 1.0f);
  }
}

// `shift` in turns of the hue circle.
inline void adjust_hue(Planes p, float shift) {
  for (std::size_t i = 0; i < p.n; ++i) {
    float h, s, v;
    rgb_to_hsv(p.r[i], p.g[i], p.b[i], h, s, v);
    h = std::fmod(h + shift + 1.0f, 1.0f);
    hsv_to_rgb(h, s, v, p.r[i], p.g[i], p.b[i]);
  }
}

inline void to_grayscale(Planes p) {
  for (std::size_t i = 0; i < p.n; ++i) {
    const float y = luma(p.r[i], p.g[i], p.b[i]);
    p.r[i] = p.g[i] = p.b[i] = y;
  }
}

inline std::vector<float> gaussian_kernel(int size, double sigma) {
  std::vector<float> k(static_cast<std::size_t>(size));
  const int half = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - half;
    const double v = std::exp(-d * d / (2 * sigma * sigma));
    k[static_cast<std::size_t>(i)] = static_cast<float>(v);
    sum += v;
  }
  for (float& v : k) v = static_cast<float>(v / sum);
  return k;
}

// Reflect-101 border, as used by common image libraries.
inline int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

inline void blur_plane(float* plane, int h, int w,
                       const std::vector<float>& kernel) {
  const int half = static_cast<int>(kernel.size()) / 2;
  std::vector<float> tmp(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int k = -half; k <= half; ++k) {
        acc += kernel[k + half] * plane[y * w + reflect(x + k, w)];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int k = -half; k <= half; ++k) {
        acc += kernel[k + half] * tmp[reflect(y + k, h) * w + x];
      }
      plane[y * w + x] = acc;
    }
  }
}

}  // namespace aug_detail

// Blur support drawn uniformly from the range; even draws round up to odd.
inline int odd_kernel_size(int drawn) { return drawn % 2 == 0 ? drawn + 1 : drawn; }

// Parameters actually drawn for one sample; exposed for tests and logging.
struct PhotometricDraw {
  float brightness = 1.0f;
  float contrast = 1.0f;
  float saturation = 1.0f;
  float hue_shift = 0.0f;
  bool grayscale = false;
  int blur_kernel = 1;
  double blur_sigma = 0.0;
};

inline PhotometricDraw draw_photometric(const StrongAugConfig& cfg, Rng& rng) {
  PhotometricDraw d;
  const double j = cfg.jitter_max_delta;
  if (j > 0.0) {
    d.brightness = static_cast<float>(rng.uniform(1.0 - j, 1.0 + j));
    d.contrast = static_cast<float>(rng.uniform(1.0 - j, 1.0 + j));
    d.saturation = static_cast<float>(rng.uniform(1.0 - j, 1.0 + j));
    // Hue is a shift of up to +/- j of the half-turn range.
    d.hue_shift = static_cast<float>(rng.uniform(-0.5 * j, 0.5 * j));
  }
  d.grayscale = cfg.grayscale_prob > 0.0 && rng.bernoulli(cfg.grayscale_prob);
  d.blur_kernel = odd_kernel_size(
      rng.uniform_int(cfg.blur_kernel_range.first, cfg.blur_kernel_range.second));
  d.blur_sigma =
      rng.uniform(cfg.blur_sigma_range.first, cfg.blur_sigma_range.second);
  return d;
}

// Applies jitter -> grayscale -> blur in place on sample `b` (unnormalized).
inline void apply_photometric(Tensor<float>& images, int b,
                              const PhotometricDraw& d) {
  using namespace aug_detail;
  Planes p{images.plane(b, 0), images.plane(b, 1), images.plane(b, 2),
           images.plane_size()};
  if (d.brightness != 1.0f) adjust_brightness(p, d.brightness);
  if (d.contrast != 1.0f) adjust_contrast(p, d.contrast);
  if (d.saturation != 1.0f) adjust_saturation(p, d.saturation);
  if (d.hue_shift != 0.0f) adjust_hue(p, d.hue_shift);
  if (d.grayscale) to_grayscale(p);
  if (d.blur_kernel > 1) {
    const auto kernel = gaussian_kernel(d.blur_kernel, d.blur_sigma);
    for (int c = 0; c < 3; ++c) {
      blur_plane(images.plane(b, c), images.height(), images.width(), kernel);
    }
  }
}

// Student view without CutMix: photometric ops per sample, then normalize.
// Every sample draws from its own stream split off `rng`.
inline Tensor<float> strong_augment(const Tensor<float>& images,
                                    const StrongAugConfig& cfg, Rng& rng,
                                    const NormalizationConstants& k = {},
                                    std::vector<PhotometricDraw>* draws = nullptr) {
  cfg.validate();
  if (images.channels() != 3) {
    throw ShapeMismatch("strong_augment expects 3 channels");
  }
  Tensor<float> out = images;
  if (draws) draws->clear();
  for (int b = 0; b < out.batch(); ++b) {
    Rng sample_rng = rng.split();
    const PhotometricDraw d = draw_photometric(cfg, sample_rng);
    apply_photometric(out, b, d);
    if (draws) draws->push_back(d);
  }
  return normalize(out, k);
}

// ---------------------------------------------------------------------------
// CutMix

struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  bool contains(int px, int py) const noexcept {
    return px >= x && px < x + w && py >= y && py < y + h;
  }
  long area() const noexcept { return static_cast<long>(w) * h; }
};

struct CutMixRecord {
  int source_index = 0;  // partner sample the patch comes from
  Rect rect;
  double lambda_mix = 1.0;
};

// Box of side round(W sqrt(1-lambda)) x round(H sqrt(1-lambda)) placed
// uniformly fully inside the image.
inline Rect cutmix_rect(int height, int width, double lambda, Rng& rng) {
  const double cut = std::sqrt(std::clamp(1.0 - lambda, 0.0, 1.0));
  Rect r;
  r.w = static_cast<int>(std::lround(width * cut));
  r.h = static_cast<int>(std::lround(height * cut));
  r.x = rng.uniform_int(0, width - r.w);
  r.y = rng.uniform_int(0, height - r.h);
  return r;
}

inline std::vector<CutMixRecord> draw_cutmix(int batch, int height, int width,
                                             double alpha, double beta,
                                             Rng& rng) {
  if (batch < 2) throw InvalidArgument("cutmix needs a batch of at least 2");
  std::vector<int> partner(static_cast<std::size_t>(batch));
  std::iota(partner.begin(), partner.end(), 0);
  std::shuffle(partner.begin(), partner.end(), rng.engine());
  std::vector<CutMixRecord> records;
  records.reserve(partner.size());
  for (int i = 0; i < batch; ++i) {
    CutMixRecord rec;
    rec.source_index = partner[static_cast<std::size_t>(i)];
    rec.lambda_mix = rng.beta(alpha, beta);
    rec.rect = cutmix_rect(height, width, rec.lambda_mix, rng);
    records.push_back(rec);
  }
  return records;
}

// Pastes each record's rectangle from the partner sample, reading from the
// un-mixed input. Works for any per-pixel field (images, probabilities).
template <typename T>
Tensor<T> apply_cutmix(const Tensor<T>& src,
                       const std::vector<CutMixRecord>& records) {
  if (static_cast<int>(records.size()) != src.batch()) {
    throw ShapeMismatch("one cutmix record per sample required");
  }
  Tensor<T> out = src;
  for (int b = 0; b < src.batch(); ++b) {
    const CutMixRecord& r = records[static_cast<std::size_t>(b)];
    for (int c = 0; c < src.channels(); ++c) {
      for (int y = r.rect.y; y < r.rect.y + r.rect.h; ++y) {
        for (int x = r.rect.x; x < r.rect.x + r.rect.w; ++x) {
          out(b, c, y, x) = src(r.source_index, c, y, x);
        }
      }
    }
  }
  return out;
}

inline LabelBatch apply_cutmix(const LabelBatch& src,
                               const std::vector<CutMixRecord>& records) {
  if (static_cast<int>(records.size()) != src.batch()) {
    throw ShapeMismatch("one cutmix record per sample required");
  }
  LabelBatch out = src;
  for (int b = 0; b < src.batch(); ++b) {
    const CutMixRecord& r = records[static_cast<std::size_t>(b)];
    for (int y = r.rect.y; y < r.rect.y + r.rect.h; ++y) {
      for (int x = r.rect.x; x < r.rect.x + r.rect.w; ++x) {
        out(b, y, x) = src(r.source_index, y, x);
      }
    }
  }
  return out;
}

struct CutMixResult {
  Tensor<float> images;
  LabelBatch targets;
  std::vector<CutMixRecord> records;
};

// Segmentation CutMix: image pixels and target pixels inside the rectangle
// are transplanted from the partner; no soft-label mixing.
inline CutMixResult cutmix(const Tensor<float>& images,
                           const LabelBatch& targets, double alpha,
                           double beta, Rng& rng) {
  if (!targets.matches(images)) {
    throw ShapeMismatch("cutmix: targets do not match images");
  }
  CutMixResult r;
  r.records = draw_cutmix(images.batch(), images.height(), images.width(),
                          alpha, beta, rng);
  r.images = apply_cutmix(images, r.records);
  r.targets = apply_cutmix(targets, r.records);
  return r;
}

}  // namespace pvseg
