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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "pvseg/error.hpp"
#include "pvseg/rng.hpp"
#include "pvseg/tensor.hpp"

namespace pvseg {

namespace fs = std::filesystem;

// Ordered class names. Index 0 is always background.
class ClassCatalog {
 public:
  static constexpr int kBackgroundIndex = 0;

  ClassCatalog() : ClassCatalog(std::vector<std::string>{"background"}) {}
  explicit ClassCatalog(std::vector<std::string> names)
      : names_(std::move(names)) {
    if (names_.empty()) throw InvalidArgument("class catalog is empty");
    std::set<std::string> seen;
    for (const auto& n : names_) {
      if (n.empty()) throw InvalidArgument("class catalog has an empty name");
      if (!seen.insert(n).second) {
        throw InvalidArgument("duplicate class name '" + n + "'");
      }
    }
  }

  // Background plus the four aggregated EL defect categories.
  static ClassCatalog el_defects() {
    return ClassCatalog(
        {"background", "crack", "contact", "interconnect", "corrosion"});
  }

  // Background plus `num_defect_classes` synthetic shape families.
  static ClassCatalog synthetic(int num_defect_classes) {
    static const char* kNames[] = {"crack", "corrosion", "interconnect",
                                   "contact"};
    if (num_defect_classes < 1 || num_defect_classes > 4) {
      throw InvalidArgument("synthetic corpora support 1..4 defect classes");
    }
    std::vector<std::string> names{"background"};
    for (int i = 0; i < num_defect_classes; ++i) names.emplace_back(kNames[i]);
    return ClassCatalog(std::move(names));
  }

  // First `total_classes` names of the EL catalog, padded generically.
  static ClassCatalog with_size(int total_classes) {
    if (total_classes < 2) {
      throw InvalidArgument("need at least background and one defect class");
    }
    auto base = el_defects().names();
    std::vector<std::string> names;
    for (int i = 0; i < total_classes; ++i) {
      names.push_back(i < static_cast<int>(base.size())
                          ? base[i]
                          : "class" + std::to_string(i));
    }
    return ClassCatalog(std::move(names));
  }

  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& name(int index) const { return names_.at(index); }
  int num_defect_classes() const noexcept {
    return static_cast<int>(names_.size()) - 1;
  }
  int total_classes() const noexcept { return static_cast<int>(names_.size()); }
  int background_index() const noexcept { return kBackgroundIndex; }

  std::string joined() const {
    std::string out;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (i) out += ",";
      out += names_[i];
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
};

// H x W x 3 image with interleaved RGB values in [0, 1].
struct ImageSample {
  std::string id;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;
  std::string source_path;

  ImageSample() = default;
  ImageSample(std::string id_, int h, int w, float fill = 0.0f)
      : id(std::move(id_)), height(h), width(w) {
    if (h <= 0 || w <= 0) throw InvalidArgument("image size must be positive");
    pixels.assign(static_cast<std::size_t>(h) * w * 3, fill);
  }

  float& at(int y, int x, int c) noexcept {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  float at(int y, int x, int c) const noexcept {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// H x W class-index map.
struct MaskSample {
  std::string id;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  MaskSample() = default;
  MaskSample(std::string id_, int h, int w, std::uint8_t fill = 0)
      : id(std::move(id_)), height(h), width(w) {
    if (h <= 0 || w <= 0) throw InvalidArgument("mask size must be positive");
    labels.assign(static_cast<std::size_t>(h) * w, fill);
  }

  std::uint8_t& at(int y, int x) noexcept {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t at(int y, int x) const noexcept {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
};

inline void validate_pair(const ImageSample& image, const MaskSample& mask,
                          int num_defect_classes) {
  if (image.height != mask.height || image.width != mask.width) {
    throw DatasetError("mask '" + mask.id + "' is " +
                       std::to_string(mask.height) + "x" +
                       std::to_string(mask.width) + " but image is " +
                       std::to_string(image.height) + "x" +
                       std::to_string(image.width));
  }
  for (std::uint8_t v : mask.labels) {
    if (v > num_defect_classes) {
      throw DatasetError("mask '" + mask.id + "' contains class " +
                         std::to_string(v) + " outside 0.." +
                         std::to_string(num_defect_classes));
    }
  }
}

// ---------------------------------------------------------------------------
// Image files

// Loads an 8-bit RGB or grayscale file; grayscale is replicated to 3 channels.
inline ImageSample load_image(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) {
    throw DatasetError("cannot read image '" + path.string() + "'");
  }
  if (m.depth() != CV_8U) {
    throw DatasetError("image '" + path.string() + "' is not 8-bit");
  }
  ImageSample img(path.stem().string(), m.rows, m.cols);
  img.source_path = path.string();
  const int ch = m.channels();
  if (ch != 1 && ch != 3 && ch != 4) {
    throw DatasetError("image '" + path.string() + "' has " +
                       std::to_string(ch) + " channels");
  }
  for (int y = 0; y < m.rows; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      if (ch == 1) {
        const float v = row[x] / 255.0f;
        img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = v;
      } else {
        // OpenCV stores BGR(A).
        img.at(y, x, 0) = row[x * ch + 2] / 255.0f;
        img.at(y, x, 1) = row[x * ch + 1] / 255.0f;
        img.at(y, x, 2) = row[x * ch + 0] / 255.0f;
      }
    }
  }
  return img;
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(
      std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Writes RGB; collapses to one channel when all channels agree.
inline void save_image(const ImageSample& img, const fs::path& path) {
  bool gray = true;
  for (std::size_t i = 0; i < img.pixels.size() && gray; i += 3) {
    gray = img.pixels[i] == img.pixels[i + 1] &&
           img.pixels[i] == img.pixels[i + 2];
  }
  cv::Mat m(img.height, img.width, gray ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width; ++x) {
      if (gray) {
        row[x] = to_byte(img.at(y, x, 0));
      } else {
        row[x * 3 + 0] = to_byte(img.at(y, x, 2));
        row[x * 3 + 1] = to_byte(img.at(y, x, 1));
        row[x * 3 + 2] = to_byte(img.at(y, x, 0));
      }
    }
  }
  if (!cv::imwrite(path.string(), m)) {
    throw IoError("cannot write image '" + path.string() + "'");
  }
}

// Masks are single-channel 8-bit files whose value is the class index.
inline MaskSample load_mask(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) {
    throw DatasetError("cannot read mask '" + path.string() + "'");
  }
  if (m.depth() != CV_8U || m.channels() != 1) {
    throw DatasetError("mask '" + path.string() +
                       "' must be a single-channel 8-bit image");
  }
  MaskSample mask(path.stem().string(), m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    std::copy_n(m.ptr<std::uint8_t>(y), m.cols,
                mask.labels.begin() + static_cast<std::ptrdiff_t>(y) * m.cols);
  }
  return mask;
}

inline void save_mask(const MaskSample& mask, const fs::path& path) {
  cv::Mat m(mask.height, mask.width, CV_8UC1,
            const_cast<std::uint8_t*>(mask.labels.data()));
  if (!cv::imwrite(path.string(), m)) {
    throw IoError("cannot write mask '" + path.string() + "'");
  }
}

// ---------------------------------------------------------------------------
// Resize / crop

// Bilinear, half-pixel centres (align_corners = false).
inline ImageSample resize_image(const ImageSample& src, int height, int width) {
  if (src.height == height && src.width == width) return src;
  ImageSample out(src.id, height, width);
  out.source_path = src.source_path;
  const double sy = static_cast<double>(src.height) / height;
  const double sx = static_cast<double>(src.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double ly = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double lx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top =
            src.at(y0, x0, c) * (1 - lx) + src.at(y0, x1, c) * lx;
        const double bottom =
            src.at(y1, x0, c) * (1 - lx) + src.at(y1, x1, c) * lx;
        out.at(y, x, c) = static_cast<float>(top * (1 - ly) + bottom * ly);
      }
    }
  }
  return out;
}

// Nearest neighbour so that class indices never blend.
inline MaskSample resize_mask(const MaskSample& src, int height, int width) {
  if (src.height == height && src.width == width) return src;
  MaskSample out(src.id, height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(
        static_cast<int>(std::floor((y + 0.5) * src.height / height)),
        src.height - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(
          static_cast<int>(std::floor((x + 0.5) * src.width / width)),
          src.width - 1);
      out.at(y, x) = src.at(sy, sx);
    }
  }
  return out;
}

struct CropWindow {
  int y = 0;
  int x = 0;
  int height = 0;
  int width = 0;
};

inline CropWindow center_crop_window(int height, int width, int crop) {
  if (crop > height || crop > width) {
    throw InvalidArgument("crop larger than image");
  }
  return {(height - crop) / 2, (width - crop) / 2, crop, crop};
}

inline CropWindow random_crop_window(int height, int width, int crop,
                                     Rng& rng) {
  if (crop > height || crop > width) {
    throw InvalidArgument("crop larger than image");
  }
  return {rng.uniform_int(0, height - crop), rng.uniform_int(0, width - crop),
          crop, crop};
}

inline ImageSample crop_image(const ImageSample& src, const CropWindow& w) {
  ImageSample out(src.id, w.height, w.width);
  out.source_path = src.source_path;
  for (int y = 0; y < w.height; ++y) {
    for (int x = 0; x < w.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(w.y + y, w.x + x, c);
    }
  }
  return out;
}

inline MaskSample crop_mask(const MaskSample& src, const CropWindow& w) {
  MaskSample out(src.id, w.height, w.width);
  for (int y = 0; y < w.height; ++y) {
    for (int x = 0; x < w.width; ++x) out.at(y, x) = src.at(w.y + y, w.x + x);
  }
  return out;
}

// Packs HWC samples into an NCHW batch.
inline Tensor<float> to_batch(const std::vector<const ImageSample*>& images) {
  if (images.empty()) return {};
  const int h = images.front()->height;
  const int w = images.front()->width;
  Tensor<float> out(static_cast<int>(images.size()), 3, h, w);
  for (int b = 0; b < out.batch(); ++b) {
    const ImageSample& img = *images[b];
    if (img.height != h || img.width != w) {
      throw ShapeMismatch("batch images differ in size");
    }
    for (int c = 0; c < 3; ++c) {
      float* plane = out.plane(b, c);
      for (int i = 0; i < h * w; ++i) plane[i] = img.pixels[i * 3 + c];
    }
  }
  return out;
}

inline LabelBatch to_label_batch(const std::vector<const MaskSample*>& masks) {
  if (masks.empty()) return {};
  const int h = masks.front()->height;
  const int w = masks.front()->width;
  LabelBatch out(static_cast<int>(masks.size()), h, w);
  for (int b = 0; b < out.batch(); ++b) {
    if (masks[b]->height != h || masks[b]->width != w) {
      throw ShapeMismatch("batch masks differ in size");
    }
    std::copy(masks[b]->labels.begin(), masks[b]->labels.end(), out.plane(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct LabeledPair {
  std::string image_path;
  std::string mask_path;
  bool operator==(const LabeledPair&) const = default;
};

struct DatasetManifest {
  std::vector<LabeledPair> labeled;
  std::vector<std::string> unlabeled;
  std::uint64_t split_seed = 0;
  double labeled_fraction = 1.0;
  // From a `# classes:` metadata line; empty when absent.
  std::vector<std::string> class_names;

  std::size_t num_labeled() const noexcept { return labeled.size(); }
  std::size_t num_unlabeled() const noexcept { return unlabeled.size(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal().string();
}

}  // namespace detail

// Tab-separated records `<labeled|unlabeled>\t<image>\t<mask|->`. Lines
// starting with '#' are comments; `# key: value` comments carry metadata
// (classes, split_seed, labeled_fraction). Relative paths resolve against
// the manifest's directory.
inline DatasetManifest load_manifest(const fs::path& path,
                                     bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open manifest '" + path.string() + "'");
  const fs::path base = path.parent_path();
  DatasetManifest m;
  std::set<std::string> seen_images;
  std::string line;
  int line_no = 0;
  auto where = [&] { return path.string() + ":" + std::to_string(line_no); };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    if (line.front() == '#') {
      const std::string body = detail::trim(line.substr(1));
      const auto colon = body.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = detail::trim(body.substr(0, colon));
      const std::string value = detail::trim(body.substr(colon + 1));
      try {
        if (key == "classes") {
          m.class_names.clear();
          for (auto& n : detail::split(value, ',')) {
            m.class_names.push_back(detail::trim(n));
          }
          ClassCatalog check(m.class_names);
        } else if (key == "split_seed") {
          m.split_seed = std::stoull(value);
        } else if (key == "labeled_fraction") {
          m.labeled_fraction = std::stod(value);
        }
      } catch (const std::logic_error& e) {
        throw DatasetError(where() + ": bad metadata '" + key + "': " +
                           e.what());
      }
      continue;
    }
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 3) {
      throw DatasetError(where() + ": expected 3 tab-separated fields, got " +
                         std::to_string(fields.size()));
    }
    const std::string& split = fields[0];
    const std::string image = detail::resolve(base, fields[1]);
    if (fields[1].empty()) throw DatasetError(where() + ": empty image path");
    if (!seen_images.insert(image).second) {
      throw DatasetError(where() + ": image '" + image + "' listed twice");
    }
    if (check_files && !fs::exists(image)) {
      throw DatasetError(where() + ": image file '" + image +
                         "' does not exist");
    }
    if (split == "labeled") {
      if (fields[2].empty() || fields[2] == "-") {
        throw DatasetError(where() + ": labeled row has no mask");
      }
      const std::string mask = detail::resolve(base, fields[2]);
      if (check_files && !fs::exists(mask)) {
        throw DatasetError(where() + ": mask file '" + mask +
                           "' does not exist");
      }
      m.labeled.push_back({image, mask});
    } else if (split == "unlabeled") {
      if (fields[2] != "-") {
        throw DatasetError(where() + ": unlabeled row must use '-' as mask");
      }
      m.unlabeled.push_back(image);
    } else {
      throw DatasetError(where() + ": unknown split '" + split + "'");
    }
  }
  return m;
}

// Paths are written relative to the manifest directory when possible.
inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const std::string& p) {
    std::error_code ec;
    const fs::path r = fs::relative(fs::absolute(p), base, ec);
    return (ec || r.empty()) ? p : r.generic_string();
  };
  out << "# split<TAB>image<TAB>mask\n";
  if (!m.class_names.empty()) {
    out << "# classes: " << ClassCatalog(m.class_names).joined() << "\n";
  }
  out << "# split_seed: " << m.split_seed << "\n";
  out << "# labeled_fraction: " << m.labeled_fraction << "\n";
  for (const auto& p : m.labeled) {
    out << "labeled\t" << rel(p.image_path) << "\t" << rel(p.mask_path)
        << "\n";
  }
  for (const auto& u : m.unlabeled) out << "unlabeled\t" << rel(u) << "\t-\n";
  if (!out) throw IoError("failed writing manifest '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Splitting and sampling

struct LabeledSplit {
  std::vector<LabeledPair> labeled;
  std::vector<std::string> unlabeled;  // masks discarded
};

// Image-level split: round(fraction * N) pairs keep their masks, the rest
// become unlabeled. Deterministic in `seed`; both subsets keep input order.
inline LabeledSplit split_labeled_unlabeled(const std::vector<LabeledPair>& pairs,
                                            double fraction,
                                            std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw InvalidArgument("labeled fraction must lie in (0, 1], got " +
                          std::to_string(fraction));
  }
  const auto n = pairs.size();
  const auto n_labeled =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_labeled == 0) {
    throw InvalidArgument("labeled fraction " + std::to_string(fraction) +
                          " of " + std::to_string(n) +
                          " pairs leaves no labeled image");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0x5b11u}));
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<bool> is_labeled(n, false);
  for (std::size_t i = 0; i < n_labeled; ++i) is_labeled[order[i]] = true;
  LabeledSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_labeled[i]) {
      out.labeled.push_back(pairs[i]);
    } else {
      out.unlabeled.push_back(pairs[i].image_path);
    }
  }
  return out;
}

// Re-splits the labeled section of a manifest; existing unlabeled rows stay.
inline DatasetManifest apply_split(const DatasetManifest& m, double fraction,
                                   std::uint64_t seed) {
  if (fraction == 1.0) return m;
  auto split = split_labeled_unlabeled(m.labeled, fraction, seed);
  DatasetManifest out = m;
  out.labeled = std::move(split.labeled);
  out.unlabeled = std::move(split.unlabeled);
  out.unlabeled.insert(out.unlabeled.end(), m.unlabeled.begin(),
                       m.unlabeled.end());
  out.split_seed = seed;
  out.labeled_fraction = fraction;
  return out;
}

// Endless stream over one pool: consecutive passes, each an independent
// shuffle. Its only mutable state is the number of items consumed.
class PoolStream {
 public:
  PoolStream() = default;
  PoolStream(std::size_t pool_size, std::uint64_t seed, std::uint64_t stream)
      : pool_size_(pool_size), seed_(seed), stream_(stream) {}

  std::size_t pool_size() const noexcept { return pool_size_; }
  std::uint64_t consumed() const noexcept { return consumed_; }
  void seek(std::uint64_t consumed) { consumed_ = consumed; }

  std::vector<std::size_t> next(int count) {
    std::vector<std::size_t> out;
    if (pool_size_ == 0) return out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(item(consumed_++));
    return out;
  }

 private:
  std::size_t item(std::uint64_t k) {
    const std::uint64_t pass = k / pool_size_;
    if (pass != cached_pass_ || order_.empty()) {
      order_.resize(pool_size_);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      Rng rng(derive_seed(seed_, {stream_, pass}));
      std::shuffle(order_.begin(), order_.end(), rng.engine());
      cached_pass_ = pass;
    }
    return order_[k % pool_size_];
  }

  std::size_t pool_size_ = 0;
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t consumed_ = 0;
  std::uint64_t cached_pass_ = 0;
  std::vector<std::size_t> order_;
};

struct MinibatchIndices {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

struct SamplerState {
  std::uint64_t labeled_consumed = 0;
  std::uint64_t unlabeled_consumed = 0;
};

// Draws paired (M_L, M_U) index batches. Each pool reshuffles on every pass
// and wraps around when it is smaller than the number of draws.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t labeled_pool, std::size_t unlabeled_pool,
                   std::uint64_t seed)
      : labeled_(labeled_pool, seed, 1), unlabeled_(unlabeled_pool, seed, 2) {
    if (labeled_pool == 0) {
      throw DatasetError("labeled pool is empty; supervised loss undefined");
    }
  }

  MinibatchIndices next(int batch_size) {
    if (batch_size <= 0) throw InvalidArgument("batch size must be positive");
    return {labeled_.next(batch_size), unlabeled_.next(batch_size)};
  }

  SamplerState state() const {
    return {labeled_.consumed(), unlabeled_.consumed()};
  }
  void restore(const SamplerState& s) {
    labeled_.seek(s.labeled_consumed);
    unlabeled_.seek(s.unlabeled_consumed);
  }

 private:
  PoolStream labeled_;
  PoolStream unlabeled_;
};

inline MinibatchIndices sample_minibatch_pair(const DatasetManifest& manifest,
                                              int batch_size,
                                              MinibatchSampler& sampler) {
  if (manifest.labeled.empty()) {
    throw DatasetError("labeled pool is empty; supervised loss undefined");
  }
  return sampler.next(batch_size);
}

// ---------------------------------------------------------------------------
// In-memory corpus

// Decoded and resized to a square `base_size` (0 keeps native size).
struct InMemoryDataset {
  ClassCatalog catalog;
  std::vector<ImageSample> labeled_images;
  std::vector<MaskSample> labeled_masks;
  std::vector<ImageSample> unlabeled_images;
};

inline InMemoryDataset load_dataset(const DatasetManifest& manifest,
                                    const ClassCatalog& catalog,
                                    int base_size) {
  InMemoryDataset ds;
  ds.catalog = catalog;
  auto sized = [&](ImageSample img) {
    return base_size > 0 ? resize_image(img, base_size, base_size) : img;
  };
  for (const auto& pair : manifest.labeled) {
    ImageSample img = load_image(pair.image_path);
    MaskSample mask = load_mask(pair.mask_path);
    mask.id = img.id;
    validate_pair(img, mask, catalog.num_defect_classes());
    ds.labeled_images.push_back(sized(std::move(img)));
    ds.labeled_masks.push_back(
        base_size > 0 ? resize_mask(mask, base_size, base_size) : mask);
  }
  for (const auto& path : manifest.unlabeled) {
    ds.unlabeled_images.push_back(sized(load_image(path)));
  }
  return ds;
}

}  // namespace pvseg
