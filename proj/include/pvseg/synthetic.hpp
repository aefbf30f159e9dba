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

// Desk-scale stand-in for EL cell imagery: textured grayscale cells with
// busbars and randomly placed defect shapes whose masks are exact.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "pvseg/dataset.hpp"
#include "pvseg/error.hpp"
#include "pvseg/rng.hpp"

namespace pvseg {

struct SynthConfig {
  int count = 200;
  int height = 64;
  int width = 64;
  int num_classes = 3;  // defect classes, background excluded
  std::uint64_t seed = 1;
  int test_count = 0;
};

struct SynthCorpus {
  DatasetManifest train;
  DatasetManifest test;
  ClassCatalog catalog;
};

namespace synth_detail {

// Per-pixel darkening layer plus the class map.
struct Canvas {
  int h;
  int w;
  std::vector<float> shade;
  MaskSample mask;

  Canvas(int height, int width, const std::string& id)
      : h(height), w(width), shade(static_cast<std::size_t>(height) * width, 0.f),
        mask(id, height, width) {}

  void paint(int y, int x, int cls, float darkness) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    const std::size_t i = static_cast<std::size_t>(y) * w + x;
    shade[i] = std::max(shade[i], darkness);
    mask.labels[i] = static_cast<std::uint8_t>(cls);
  }

  void stamp(double cy, double cx, double radius, int cls, float darkness) {
    const int r = static_cast<int>(std::ceil(radius));
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        if (dy * dy + dx * dx <= radius * radius + 1e-9) {
          paint(static_cast<int>(std::lround(cy)) + dy,
                static_cast<int>(std::lround(cx)) + dx, cls, darkness);
        }
      }
    }
  }

  void segment(double y0, double x0, double y1, double x1, double radius,
               int cls, float darkness) {
    const double len = std::hypot(y1 - y0, x1 - x0);
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      const double y = y0 + (y1 - y0) * t;
      const double x = x0 + (x1 - x0) * t;
      if (radius < 0.75) {
        paint(static_cast<int>(std::lround(y)), static_cast<int>(std::lround(x)),
              cls, darkness);
      } else {
        stamp(y, x, radius, cls, darkness);
      }
    }
  }
};

// Thin dark polyline wandering across the cell.
inline void draw_crack(Canvas& cv, Rng& rng, int cls) {
  double y = rng.uniform(0, cv.h - 1);
  double x = rng.uniform(0, cv.w - 1);
  double angle = rng.uniform(0, 2 * std::numbers::pi);
  const int segments = rng.uniform_int(2, 4);
  const double radius = rng.bernoulli(0.5) ? 1.5 : 1.0;
  const float darkness = static_cast<float>(rng.uniform(0.40, 0.50));
  const double scale = std::min(cv.h, cv.w) / 64.0;
  for (int s = 0; s < segments; ++s) {
    const double len = rng.uniform(8, 20) * scale;
    angle += rng.uniform(-0.8, 0.8);
    const double ny = y + len * std::sin(angle);
    const double nx = x + len * std::cos(angle);
    cv.segment(y, x, ny, nx, radius, cls, darkness);
    y = ny;
    x = nx;
  }
}

// Irregular mottled blob.
inline void draw_corrosion(Canvas& cv, Rng& rng, int cls) {
  const double scale = std::min(cv.h, cv.w) / 64.0;
  const double cy = rng.uniform(0, cv.h - 1);
  const double cx = rng.uniform(0, cv.w - 1);
  const double radius = rng.uniform(4.0, 9.0) * scale;
  const double a1 = rng.uniform(0.1, 0.25);
  const double a2 = rng.uniform(0.05, 0.15);
  const double p1 = rng.uniform(0, 2 * std::numbers::pi);
  const double p2 = rng.uniform(0, 2 * std::numbers::pi);
  const double stretch = rng.uniform(0.7, 1.3);
  const float darkness = static_cast<float>(rng.uniform(0.26, 0.34));
  const int r = static_cast<int>(std::ceil(radius * 1.6));
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const double ex = dx / stretch;
      const double ey = dy * stretch;
      const double theta = std::atan2(ey, ex);
      const double bound =
          radius * (1 + a1 * std::sin(3 * theta + p1) +
                    a2 * std::sin(5 * theta + p2));
      if (std::hypot(ex, ey) <= bound) {
        const float mottle =
            static_cast<float>(0.04 * std::sin(dx * 1.3 + p1) *
                               std::cos(dy * 1.1 + p2));
        cv.paint(static_cast<int>(cy) + dy, static_cast<int>(cx) + dx, cls,
                 darkness + mottle);
      }
    }
  }
}

// Short dark vertical bar (broken interconnect ribbon).
inline void draw_interconnect(Canvas& cv, Rng& rng, int cls) {
  const double scale = std::min(cv.h, cv.w) / 64.0;
  const int bar_w = std::max(2, static_cast<int>(std::lround(
                                    rng.uniform_int(3, 4) * scale)));
  const int bar_h = static_cast<int>(
      std::lround(rng.uniform(cv.h / 5.0, cv.h / 3.0)));
  const int x0 = rng.uniform_int(0, cv.w - bar_w);
  const int y0 = rng.uniform_int(0, cv.h - bar_h);
  const float darkness = static_cast<float>(rng.uniform(0.45, 0.55));
  for (int y = y0; y < y0 + bar_h; ++y) {
    for (int x = x0; x < x0 + bar_w; ++x) cv.paint(y, x, cls, darkness);
  }
}

// Uniformly dim rectangle touching an image edge (finger contact failure).
inline void draw_contact(Canvas& cv, Rng& rng, int cls) {
  const double scale = std::min(cv.h, cv.w) / 64.0;
  const int rw = static_cast<int>(std::lround(rng.uniform(8, 16) * scale));
  const int rh = static_cast<int>(std::lround(rng.uniform(5, 10) * scale));
  const bool top = rng.bernoulli(0.5);
  const int x0 = rng.uniform_int(0, cv.w - rw);
  const int y0 = top ? 0 : cv.h - rh;
  const float darkness = static_cast<float>(rng.uniform(0.14, 0.2));
  for (int y = y0; y < y0 + rh; ++y) {
    for (int x = x0; x < x0 + rw; ++x) cv.paint(y, x, cls, darkness);
  }
}

// Long faint polyline left in the background class.
inline void draw_grain_boundary(Canvas& cv, Rng& rng) {
  double y = rng.uniform(0, cv.h - 1);
  double x = rng.uniform(0, cv.w - 1);
  double angle = rng.uniform(0, 2 * std::numbers::pi);
  const float darkness = static_cast<float>(rng.uniform(0.08, 0.2));
  const double scale = std::min(cv.h, cv.w) / 64.0;
  const int segments = rng.uniform_int(3, 6);
  for (int s = 0; s < segments; ++s) {
    const double len = rng.uniform(6, 14) * scale;
    angle += rng.uniform(-0.5, 0.5);
    const double ny = y + len * std::sin(angle);
    const double nx = x + len * std::cos(angle);
    cv.segment(y, x, ny, nx, 0.5, 0, darkness);
    y = ny;
    x = nx;
  }
}

struct DefectFamily {
  double probability;  // chance an image contains this family at all
  int max_instances;
  void (*draw)(Canvas&, Rng&, int);
};

// Indexed by class - 1; frequencies are deliberately skewed.
inline const std::array<DefectFamily, 4>& families() {
  static const std::array<DefectFamily, 4> kFamilies{{
      {0.6, 2, &draw_crack},
      {0.7, 3, &draw_corrosion},
      {0.2, 1, &draw_interconnect},
      {0.3, 1, &draw_contact},
  }};
  return kFamilies;
}

inline std::pair<ImageSample, MaskSample> render(const SynthConfig& cfg,
                                                 const std::string& id,
                                                 Rng& rng) {
  const int h = cfg.height;
  const int w = cfg.width;
  Canvas canvas(h, w, id);
  // Grain boundaries: faint crack-like background texture.
  const int grains = rng.uniform_int(0, 4);
  for (int g = 0; g < grains; ++g) draw_grain_boundary(canvas, rng);
  // Draw order puts the thin cracks last so they stay visible.
  const int order[] = {2, 4, 3, 1};
  for (int cls : order) {
    if (cls > cfg.num_classes) continue;
    const DefectFamily& fam = families()[cls - 1];
    if (!rng.bernoulli(fam.probability)) continue;
    const int n = rng.uniform_int(1, fam.max_instances);
    for (int k = 0; k < n; ++k) fam.draw(canvas, rng, cls);
  }

  const double base = rng.uniform(0.4, 0.75);
  const double gain = rng.uniform(0.6, 1.4);
  const double fy = rng.uniform(0.5, 1.5);
  const double fx = rng.uniform(0.5, 1.5);
  const double phase = rng.uniform(0, 2 * std::numbers::pi);
  const int busbars = rng.uniform_int(2, 3);
  const double spacing = static_cast<double>(w) / busbars;
  const double offset = rng.uniform(0.3, 0.7) * spacing;

  ImageSample img(id, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = base +
                 0.05 * std::sin(2 * std::numbers::pi * fy * y / h + phase) *
                     std::cos(2 * std::numbers::pi * fx * x / w) -
                 0.08 * (std::pow((x - w / 2.0) / w, 2) +
                         std::pow((y - h / 2.0) / h, 2));
      const double bus = std::fmod(x - offset + spacing, spacing);
      if (bus < 1.0 || bus > spacing - 1.0) v -= 0.1;
      v -= canvas.shade[static_cast<std::size_t>(y) * w + x];
      v = base + (v - base) * gain + rng.normal(0.0, 0.025);
      const float f = static_cast<float>(std::clamp(v, 0.0, 1.0));
      // Quantize now so that in-memory and on-disk images agree.
      const float q = static_cast<float>(std::lround(f * 255.0f)) / 255.0f;
      img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = q;
    }
  }
  return {std::move(img), std::move(canvas.mask)};
}

inline std::string image_id(const std::string& prefix, int index) {
  std::ostringstream os;
  os << prefix << "_" << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

}  // namespace synth_detail

// Renders one image/mask pair without touching the filesystem.
inline std::pair<ImageSample, MaskSample> render_synthetic_sample(
    const SynthConfig& cfg, int index, bool test_split = false) {
  Rng rng(derive_seed(cfg.seed, {test_split ? 2u : 1u,
                                 static_cast<std::uint64_t>(index)}));
  return synth_detail::render(
      cfg, synth_detail::image_id(test_split ? "test" : "train", index), rng);
}

// Writes images/, masks/, train.tsv and (when test_count > 0) test.tsv under
// `out_dir`. Every training pair is listed as labeled; the trainer applies
// the labeled fraction.
inline SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg,
                                             const fs::path& out_dir) {
  if (cfg.num_classes < 1 || cfg.num_classes > 4) {
    throw InvalidArgument("synthetic corpora support 1..4 defect classes");
  }
  if (cfg.height < 32 || cfg.width < 32) {
    throw InvalidArgument("synthetic images must be at least 32x32");
  }
  if (cfg.count < 0 || cfg.test_count < 0) {
    throw InvalidArgument("image counts must be non-negative");
  }
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (!ec) fs::create_directories(out_dir / "masks", ec);
  if (ec) {
    throw IoError("cannot create output directory '" + out_dir.string() +
                  "': " + ec.message());
  }

  SynthCorpus corpus;
  corpus.catalog = ClassCatalog::synthetic(cfg.num_classes);
  auto emit = [&](bool test, int n, DatasetManifest& manifest) {
    manifest.class_names = corpus.catalog.names();
    manifest.split_seed = cfg.seed;
    for (int i = 0; i < n; ++i) {
      auto [img, mask] = render_synthetic_sample(cfg, i, test);
      const fs::path ip = out_dir / "images" / (img.id + ".png");
      const fs::path mp = out_dir / "masks" / (img.id + ".png");
      save_image(img, ip);
      save_mask(mask, mp);
      manifest.labeled.push_back({ip.lexically_normal().string(),
                                  mp.lexically_normal().string()});
    }
  };
  emit(false, cfg.count, corpus.train);
  save_manifest(corpus.train, out_dir / "train.tsv");
  if (cfg.test_count > 0) {
    emit(true, cfg.test_count, corpus.test);
    save_manifest(corpus.test, out_dir / "test.tsv");
  }
  return corpus;
}

}  // namespace pvseg
