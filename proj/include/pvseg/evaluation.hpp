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
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "pvseg/augmentation.hpp"
#include "pvseg/dataset.hpp"
#include "pvseg/error.hpp"
#include "pvseg/losses.hpp"
#include "pvseg/segmentation_model.hpp"
#include "pvseg/tensor.hpp"

namespace pvseg {

// Pixel counts indexed [truth][prediction].
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes) : n_(num_classes) {
    if (num_classes < 1) throw InvalidArgument("confusion matrix needs >= 1 class");
    counts_.assign(static_cast<std::size_t>(n_) * n_, 0);
  }

  int num_classes() const noexcept { return n_; }
  std::uint64_t count(int truth, int pred) const {
    return counts_[static_cast<std::size_t>(truth) * n_ + pred];
  }
  std::uint64_t& count(int truth, int pred) {
    return counts_[static_cast<std::size_t>(truth) * n_ + pred];
  }

  void add(int truth, int pred) {
    if (truth < 0 || truth >= n_ || pred < 0 || pred >= n_) {
      throw InvalidArgument("class out of range: truth " + std::to_string(truth) +
                            ", prediction " + std::to_string(pred) + ", classes " +
                            std::to_string(n_));
    }
    ++count(truth, pred);
  }

  void accumulate(const MaskSample& pred, const MaskSample& truth) {
    if (pred.height != truth.height || pred.width != truth.width) {
      throw ShapeMismatch("prediction " + std::to_string(pred.height) + "x" +
                          std::to_string(pred.width) + " vs truth " +
                          std::to_string(truth.height) + "x" + std::to_string(truth.width));
    }
    for (std::size_t i = 0; i < truth.labels.size(); ++i) add(truth.labels[i], pred.labels[i]);
  }

  // Batch form; truth pixels carrying the ignore label are skipped.
  void accumulate(const LabelBatch& pred, const LabelBatch& truth) {
    if (pred.batch() != truth.batch() || pred.height() != truth.height() ||
        pred.width() != truth.width()) {
      throw ShapeMismatch("prediction and truth batches differ in shape");
    }
    const auto p = pred.values();
    const auto t = truth.values();
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == kIgnoreLabel) continue;
      add(t[i], p[i]);
    }
  }

  void merge(const ConfusionMatrix& other) {
    if (other.n_ != n_) throw ShapeMismatch("cannot merge confusion matrices of different size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }
  std::uint64_t row_sum(int truth) const {
    std::uint64_t s = 0;
    for (int p = 0; p < n_; ++p) s += count(truth, p);
    return s;
  }
  std::uint64_t col_sum(int pred) const {
    std::uint64_t s = 0;
    for (int t = 0; t < n_; ++t) s += count(t, pred);
    return s;
  }
  std::uint64_t tp(int c) const { return count(c, c); }
  std::uint64_t fp(int c) const { return col_sum(c) - tp(c); }
  std::uint64_t fn(int c) const { return row_sum(c) - tp(c); }

  // Present in truth or prediction.
  bool present(int c) const { return row_sum(c) + col_sum(c) > 0; }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int n_ = 0;
  std::vector<std::uint64_t> counts_;
};

namespace metric_detail {
inline double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
inline void check_class(const ConfusionMatrix& cm, int c) {
  if (c < 0 || c >= cm.num_classes()) throw InvalidArgument("class index out of range");
}
}  // namespace metric_detail

// 0 when the class is never predicted.
inline double precision(const ConfusionMatrix& cm, int c) {
  metric_detail::check_class(cm, c);
  return metric_detail::ratio(cm.tp(c), cm.tp(c) + cm.fp(c));
}

// 0 when the class never occurs in the truth.
inline double recall(const ConfusionMatrix& cm, int c) {
  metric_detail::check_class(cm, c);
  return metric_detail::ratio(cm.tp(c), cm.tp(c) + cm.fn(c));
}

inline double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

inline double iou(const ConfusionMatrix& cm, int c) {
  metric_detail::check_class(cm, c);
  return metric_detail::ratio(cm.tp(c), cm.tp(c) + cm.fp(c) + cm.fn(c));
}

inline double pixel_accuracy(const ConfusionMatrix& cm) {
  std::uint64_t diag = 0;
  for (int c = 0; c < cm.num_classes(); ++c) diag += cm.tp(c);
  return metric_detail::ratio(diag, cm.total());
}

struct MiouResult {
  double miou = 0.0;
  std::vector<double> per_class;  // IoU of every class
  std::vector<int> included;      // classes entering the mean
};

// Classes absent from both truth and prediction are left out of the mean.
inline MiouResult miou(const ConfusionMatrix& cm, bool include_background) {
  MiouResult r;
  double sum = 0.0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    r.per_class.push_back(iou(cm, c));
    if ((c == 0 && !include_background) || !cm.present(c)) continue;
    r.included.push_back(c);
    sum += r.per_class.back();
  }
  if (r.included.empty()) throw InvalidArgument("no class present in the confusion matrix");
  r.miou = sum / static_cast<double>(r.included.size());
  return r;
}

// ln(count), with 0 for empty cells.
inline double log_count(std::uint64_t count) {
  return count == 0 ? 0.0 : std::log(static_cast<double>(count));
}

inline std::vector<std::vector<double>> log_view(const ConfusionMatrix& cm) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(cm.num_classes()));
  for (int t = 0; t < cm.num_classes(); ++t) {
    for (int p = 0; p < cm.num_classes(); ++p) out[t].push_back(log_count(cm.count(t, p)));
  }
  return out;
}

struct ConfidenceMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Per-pixel max softmax probability of sample `b`.
template <typename T>
ConfidenceMap confidence_map(const Tensor<T>& logits, int b = 0) {
  const Tensor<T> one = slice_batch(logits, b, 1);
  const Tensor<T> probs = softmax_per_pixel(one);
  ConfidenceMap m{one.height(), one.width(), {}};
  m.values.assign(one.plane_size(), 0.0);
  for (int c = 0; c < one.channels(); ++c) {
    const T* p = probs.plane(0, c);
    for (std::size_t i = 0; i < one.plane_size(); ++i) {
      m.values[i] = std::max(m.values[i], static_cast<double>(p[i]));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Report

struct ClassMetrics {
  std::string name;
  int index = 0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool present = false;
};

struct MetricsReport {
  std::vector<ClassMetrics> classes;  // rows, background only on request
  ClassMetrics average;               // unweighted over present rows
  double pixel_accuracy = 0.0;
  std::vector<std::string> excluded;  // rows absent from truth and prediction
};

inline MetricsReport report(const ConfusionMatrix& cm, const ClassCatalog& catalog,
                            bool include_background = false) {
  if (catalog.total_classes() != cm.num_classes()) {
    throw ShapeMismatch("catalog has " + std::to_string(catalog.total_classes()) +
                        " classes, confusion matrix " + std::to_string(cm.num_classes()));
  }
  MetricsReport r;
  r.pixel_accuracy = pixel_accuracy(cm);
  r.average.name = "Average";
  r.average.index = -1;
  int n = 0;
  for (int c = include_background ? 0 : 1; c < cm.num_classes(); ++c) {
    ClassMetrics m;
    m.name = catalog.name(c);
    m.index = c;
    m.iou = iou(cm, c);
    m.precision = precision(cm, c);
    m.recall = recall(cm, c);
    m.f1 = f1(m.precision, m.recall);
    m.present = cm.present(c);
    r.classes.push_back(m);
    if (!m.present) {
      r.excluded.push_back(m.name);
      continue;
    }
    r.average.iou += m.iou;
    r.average.precision += m.precision;
    r.average.recall += m.recall;
    r.average.f1 += m.f1;
    ++n;
  }
  if (n > 0) {
    r.average.iou /= n;
    r.average.precision /= n;
    r.average.recall /= n;
    r.average.f1 /= n;
    r.average.present = true;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Model evaluation

// Evaluation view: normalized center crop.
inline Tensor<float> predict_logits(SegmentationModel& model,
                                    const std::vector<const ImageSample*>& images) {
  return model.forward(weak_augment(to_batch(images)), Mode::kEval);
}

struct EvalOutput {
  ConfusionMatrix cm;
  std::vector<MaskSample> predictions;         // kept only when requested
  std::vector<ConfidenceMap> confidence;       // idem
  std::vector<ImageSample> inputs;             // cropped inputs, idem
};

inline EvalOutput evaluate_model(SegmentationModel& model,
                                 const std::vector<ImageSample>& images,
                                 const std::vector<MaskSample>& masks, int crop_size,
                                 int batch_size = 8, bool keep_outputs = false) {
  if (images.size() != masks.size()) throw ShapeMismatch("image and mask counts differ");
  if (batch_size <= 0) throw InvalidArgument("batch size must be positive");
  EvalOutput out{ConfusionMatrix(model.num_classes()), {}, {}, {}};
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + batch_size);
    std::vector<ImageSample> crops;
    std::vector<MaskSample> mask_crops;
    for (std::size_t i = start; i < end; ++i) {
      const CropWindow w = crop_size > 0
                               ? center_crop_window(images[i].height, images[i].width, crop_size)
                               : CropWindow{0, 0, images[i].height, images[i].width};
      crops.push_back(crop_image(images[i], w));
      mask_crops.push_back(crop_mask(masks[i], w));
    }
    std::vector<const ImageSample*> ip;
    std::vector<const MaskSample*> mp;
    for (std::size_t i = 0; i < crops.size(); ++i) {
      ip.push_back(&crops[i]);
      mp.push_back(&mask_crops[i]);
    }
    const Tensor<float> logits = predict_logits(model, ip);
    const LabelBatch pred = argmax_labels(logits);
    out.cm.accumulate(pred, to_label_batch(mp));
    if (!keep_outputs) continue;
    for (int b = 0; b < logits.batch(); ++b) {
      MaskSample m = mask_crops[static_cast<std::size_t>(b)];
      for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) m.at(y, x) = static_cast<std::uint8_t>(pred(b, y, x));
      }
      out.predictions.push_back(std::move(m));
      out.confidence.push_back(confidence_map(logits, b));
      out.inputs.push_back(crops[static_cast<std::size_t>(b)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV output

inline std::string format_metric(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

namespace metric_detail {
inline std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}
}  // namespace metric_detail

inline void write_metrics_csv(const MetricsReport& r, const std::filesystem::path& path) {
  auto out = metric_detail::open_csv(path);
  out << "class,iou,precision,recall,f1\n";
  auto row = [&](const ClassMetrics& m) {
    out << m.name << ',' << format_metric(m.iou) << ',' << format_metric(m.precision) << ','
        << format_metric(m.recall) << ',' << format_metric(m.f1) << '\n';
  };
  for (const auto& m : r.classes) row(m);
  row(r.average);
}

inline void write_confusion_csv(const ConfusionMatrix& cm, const ClassCatalog& catalog,
                                const std::filesystem::path& path, bool log_scale = false) {
  auto out = metric_detail::open_csv(path);
  out << "truth\\pred";
  for (int c = 0; c < cm.num_classes(); ++c) out << ',' << catalog.name(c);
  out << '\n';
  for (int t = 0; t < cm.num_classes(); ++t) {
    out << catalog.name(t);
    for (int p = 0; p < cm.num_classes(); ++p) {
      out << ',';
      if (log_scale) {
        out << format_metric(log_count(cm.count(t, p)));
      } else {
        out << cm.count(t, p);
      }
    }
    out << '\n';
  }
}

}  // namespace pvseg
