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

// Pixel-wise segmentation losses. Every loss returns its value together with
// the analytic gradient w.r.t. the student logits it was given; probabilities
// are always normalized over the class axis of each pixel.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "pvseg/error.hpp"
#include "pvseg/tensor.hpp"

namespace pvseg {

// Denominator used by the two confidence-gated terms.
enum class MeanOver {
  kSelected,  // number of selected pixels (positive) or pairs (negative)
  kAll,       // every pixel of the batch
};

enum class ConsistencyKind { kSemiCE, kMSE };

struct SemiCEConfig {
  double t_pos = 0.2;
  double t_neg = 0.4;
  double lambda_consistency = 1.5;
  MeanOver mean_over = MeanOver::kSelected;

  void validate() const {
    if (t_pos < 0.0 || t_pos > 1.0 || t_neg < 0.0 || t_neg > 1.0) {
      throw InvalidArgument("SemiCE thresholds must lie in [0, 1]");
    }
    if (!(lambda_consistency >= 0.0)) {
      throw InvalidArgument("consistency weight must be >= 0");
    }
  }
};

template <typename T>
struct LossValue {
  T value = T(0);
  Tensor<T> grad;  // d value / d logits, same shape as the logits
  std::size_t selected = 0;
};

// Teacher targets: argmax class, its probability, and the full distribution.
template <typename T>
struct PseudoLabelBatch {
  LabelBatch labels;
  Tensor<T> confidence;   // B x 1 x H x W
  Tensor<T> class_probs;  // B x C x H x W
};

namespace loss_detail {

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  for (T v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw InvalidArgument(std::string(what) + " contains non-finite values");
    }
  }
}

// Gathers the C class scores of one pixel (stride = plane size).
template <typename T>
void gather(const Tensor<T>& t, int b, std::size_t pixel, std::vector<T>& out) {
  const int c_count = t.channels();
  out.resize(static_cast<std::size_t>(c_count));
  const T* base = t.plane(b, 0) + pixel;
  for (int c = 0; c < c_count; ++c) out[c] = base[c * t.plane_size()];
}

// log-sum-exp of `sign * s`, max-shifted.
template <typename T>
T log_sum_exp(const std::vector<T>& s, T sign) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : s) mx = std::max(mx, sign * v);
  T acc = T(0);
  for (T v : s) acc += std::exp(sign * v - mx);
  return mx + std::log(acc);
}

template <typename T>
void check_pseudo(const Tensor<T>& logits, const PseudoLabelBatch<T>& pseudo) {
  if (!pseudo.labels.matches(logits) || !pseudo.class_probs.same_shape(logits) ||
      pseudo.confidence.batch() != logits.batch() ||
      pseudo.confidence.height() != logits.height() ||
      pseudo.confidence.width() != logits.width()) {
    throw ShapeMismatch("pseudo labels do not match logits " +
                        logits.shape_string());
  }
}

}  // namespace loss_detail

template <typename T>
Tensor<T> softmax_per_pixel(const Tensor<T>& logits) {
  Tensor<T> probs(logits.batch(), logits.channels(), logits.height(),
                  logits.width());
  const std::size_t hw = logits.plane_size();
  const int c_count = logits.channels();
  for (int b = 0; b < logits.batch(); ++b) {
    const T* in = logits.plane(b, 0);
    T* out = probs.plane(b, 0);
    for (std::size_t p = 0; p < hw; ++p) {
      T mx = in[p];
      for (int c = 1; c < c_count; ++c) mx = std::max(mx, in[c * hw + p]);
      T sum = T(0);
      for (int c = 0; c < c_count; ++c) {
        const T e = std::exp(in[c * hw + p] - mx);
        out[c * hw + p] = e;
        sum += e;
      }
      for (int c = 0; c < c_count; ++c) out[c * hw + p] /= sum;
    }
  }
  return probs;
}

// Per-pixel argmax; ties go to the lowest class index.
template <typename T>
LabelBatch argmax_labels(const Tensor<T>& scores) {
  LabelBatch labels(scores.batch(), scores.height(), scores.width());
  const std::size_t hw = scores.plane_size();
  for (int b = 0; b < scores.batch(); ++b) {
    const T* in = scores.plane(b, 0);
    int* out = labels.plane(b);
    for (std::size_t p = 0; p < hw; ++p) {
      int best = 0;
      T best_v = in[p];
      for (int c = 1; c < scores.channels(); ++c) {
        if (in[c * hw + p] > best_v) {
          best_v = in[c * hw + p];
          best = c;
        }
      }
      out[p] = best;
    }
  }
  return labels;
}

// Mean over non-ignored pixels of -log softmax(logits)[target].
template <typename T>
LossValue<T> supervised_ce(const Tensor<T>& logits, const LabelBatch& targets,
                           int ignore_index = kIgnoreLabel) {
  if (!targets.matches(logits)) {
    throw ShapeMismatch("supervised_ce: targets do not match logits " +
                        logits.shape_string());
  }
  const int c_count = logits.channels();
  const std::size_t hw = logits.plane_size();
  LossValue<T> out;
  out.grad = Tensor<T>(logits.batch(), c_count, logits.height(), logits.width());
  std::vector<T> s;
  T total = T(0);
  for (int b = 0; b < logits.batch(); ++b) {
    const int* y = targets.plane(b);
    for (std::size_t p = 0; p < hw; ++p) {
      if (y[p] == ignore_index) continue;
      if (y[p] < 0 || y[p] >= c_count) {
        throw InvalidArgument("target class " + std::to_string(y[p]) +
                              " out of range");
      }
      loss_detail::gather(logits, b, p, s);
      const T lse = loss_detail::log_sum_exp(s, T(1));
      total += lse - s[y[p]];
      T* g = out.grad.plane(b, 0) + p;
      for (int c = 0; c < c_count; ++c) g[c * hw] = std::exp(s[c] - lse);
      g[y[p] * hw] -= T(1);
      ++out.selected;
    }
  }
  if (out.selected == 0) {
    throw InvalidArgument("supervised_ce: every pixel is ignored");
  }
  const T inv = T(1) / static_cast<T>(out.selected);
  out.value = total * inv;
  for (T& g : out.grad.values()) g *= inv;
  return out;
}

// Teacher forward -> targets. Nothing here feeds gradients back.
template <typename T>
PseudoLabelBatch<T> make_pseudo_labels(const Tensor<T>& teacher_logits) {
  PseudoLabelBatch<T> out;
  out.class_probs = softmax_per_pixel(teacher_logits);
  out.labels = argmax_labels(teacher_logits);
  out.confidence = Tensor<T>(teacher_logits.batch(), 1, teacher_logits.height(),
                             teacher_logits.width());
  const std::size_t hw = teacher_logits.plane_size();
  for (int b = 0; b < teacher_logits.batch(); ++b) {
    const int* y = out.labels.plane(b);
    T* conf = out.confidence.plane(b, 0);
    const T* probs = out.class_probs.plane(b, 0);
    for (std::size_t p = 0; p < hw; ++p) conf[p] = probs[y[p] * hw + p];
  }
  return out;
}

// Positive term: pixels whose teacher confidence is >= t_pos contribute
// -log softmax(student)[pseudo label]. Zero when nothing is selected.
template <typename T>
LossValue<T> semice_positive(const Tensor<T>& student_logits,
                             const PseudoLabelBatch<T>& pseudo, double t_pos,
                             MeanOver mean_over = MeanOver::kSelected) {
  loss_detail::check_pseudo(student_logits, pseudo);
  const int c_count = student_logits.channels();
  const std::size_t hw = student_logits.plane_size();
  LossValue<T> out;
  out.grad = Tensor<T>(student_logits.batch(), c_count, student_logits.height(),
                       student_logits.width());
  std::vector<T> s;
  T total = T(0);
  for (int b = 0; b < student_logits.batch(); ++b) {
    const int* y = pseudo.labels.plane(b);
    const T* conf = pseudo.confidence.plane(b, 0);
    for (std::size_t p = 0; p < hw; ++p) {
      if (!(static_cast<double>(conf[p]) >= t_pos)) continue;
      loss_detail::gather(student_logits, b, p, s);
      const T lse = loss_detail::log_sum_exp(s, T(1));
      total += lse - s[y[p]];
      T* g = out.grad.plane(b, 0) + p;
      for (int c = 0; c < c_count; ++c) g[c * hw] = std::exp(s[c] - lse);
      g[y[p] * hw] -= T(1);
      ++out.selected;
    }
  }
  const std::size_t denom = mean_over == MeanOver::kSelected
                                ? out.selected
                                : student_logits.batch() * hw;
  if (out.selected == 0 || denom == 0) {
    out.grad.fill(T(0));
    return out;
  }
  const T inv = T(1) / static_cast<T>(denom);
  out.value = total * inv;
  for (T& g : out.grad.values()) g *= inv;
  return out;
}

// Negative term: for every (pixel, class) pair with teacher probability
// <= t_neg and class != pseudo label, accumulate -log q[class] where q is the
// softmax of the negated student logits. Zero when t_neg == 0 or nothing
// qualifies.
template <typename T>
LossValue<T> semice_negative(const Tensor<T>& student_logits,
                             const PseudoLabelBatch<T>& pseudo, double t_neg,
                             MeanOver mean_over = MeanOver::kSelected) {
  loss_detail::check_pseudo(student_logits, pseudo);
  const int c_count = student_logits.channels();
  const std::size_t hw = student_logits.plane_size();
  LossValue<T> out;
  out.grad = Tensor<T>(student_logits.batch(), c_count, student_logits.height(),
                       student_logits.width());
  if (t_neg <= 0.0) return out;
  std::vector<T> s;
  std::vector<T> q(static_cast<std::size_t>(c_count));
  T total = T(0);
  for (int b = 0; b < student_logits.batch(); ++b) {
    const int* y = pseudo.labels.plane(b);
    const T* probs = pseudo.class_probs.plane(b, 0);
    for (std::size_t p = 0; p < hw; ++p) {
      int n_sel = 0;
      for (int c = 0; c < c_count; ++c) {
        if (c != y[p] && static_cast<double>(probs[c * hw + p]) <= t_neg) ++n_sel;
      }
      if (n_sel == 0) continue;
      loss_detail::gather(student_logits, b, p, s);
      const T lse_neg = loss_detail::log_sum_exp(s, T(-1));
      for (int c = 0; c < c_count; ++c) q[c] = std::exp(-s[c] - lse_neg);
      T* g = out.grad.plane(b, 0) + p;
      for (int c = 0; c < c_count; ++c) {
        g[c * hw] = -static_cast<T>(n_sel) * q[c];
      }
      for (int c = 0; c < c_count; ++c) {
        if (c == y[p] || !(static_cast<double>(probs[c * hw + p]) <= t_neg)) {
          continue;
        }
        total += s[c] + lse_neg;  // -log q[c]
        g[c * hw] += T(1);
        ++out.selected;
      }
    }
  }
  const std::size_t denom = mean_over == MeanOver::kSelected
                                ? out.selected
                                : student_logits.batch() * hw;
  if (out.selected == 0 || denom == 0) {
    out.grad.fill(T(0));
    return out;
  }
  const T inv = T(1) / static_cast<T>(denom);
  out.value = total * inv;
  for (T& g : out.grad.values()) g *= inv;
  return out;
}

template <typename T>
struct ConsistencyLoss {
  T value = T(0);
  T positive = T(0);
  T negative = T(0);
  Tensor<T> grad_labeled;
  Tensor<T> grad_unlabeled;
};

namespace loss_detail {

template <typename T>
PseudoLabelBatch<T> concat(const PseudoLabelBatch<T>& a,
                           const PseudoLabelBatch<T>& b) {
  return {concat_batch(a.labels, b.labels),
          concat_batch(a.confidence, b.confidence),
          concat_batch(a.class_probs, b.class_probs)};
}

template <typename T>
void split_grad(const Tensor<T>& grad, int n_labeled, ConsistencyLoss<T>& out) {
  out.grad_labeled = slice_batch(grad, 0, n_labeled);
  out.grad_unlabeled = slice_batch(grad, n_labeled, grad.batch() - n_labeled);
}

}  // namespace loss_detail

// SemiCE over both student streams against the teacher's targets on the
// matching weak views. Either stream may be empty.
template <typename T>
ConsistencyLoss<T> consistency_loss(const Tensor<T>& student_labeled,
                                    const Tensor<T>& student_unlabeled,
                                    const PseudoLabelBatch<T>& teacher_labeled,
                                    const PseudoLabelBatch<T>& teacher_unlabeled,
                                    const SemiCEConfig& cfg) {
  cfg.validate();
  const Tensor<T> logits = concat_batch(student_labeled, student_unlabeled);
  const PseudoLabelBatch<T> pseudo =
      loss_detail::concat(teacher_labeled, teacher_unlabeled);
  const auto pos = semice_positive(logits, pseudo, cfg.t_pos, cfg.mean_over);
  const auto neg = semice_negative(logits, pseudo, cfg.t_neg, cfg.mean_over);
  ConsistencyLoss<T> out;
  out.positive = pos.value;
  out.negative = neg.value;
  out.value = pos.value + neg.value;
  Tensor<T> grad = pos.grad;
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += neg.grad[i];
  loss_detail::split_grad(grad, student_labeled.batch(), out);
  return out;
}

// Mean squared difference over every (pixel, class) entry.
template <typename T>
T mse_consistency(const Tensor<T>& student_probs, const Tensor<T>& teacher_probs) {
  if (!student_probs.same_shape(teacher_probs)) {
    throw ShapeMismatch("mse_consistency: " + student_probs.shape_string() +
                        " vs " + teacher_probs.shape_string());
  }
  if (student_probs.size() == 0) return T(0);
  T acc = T(0);
  for (std::size_t i = 0; i < student_probs.size(); ++i) {
    const T d = student_probs[i] - teacher_probs[i];
    acc += d * d;
  }
  return acc / static_cast<T>(student_probs.size());
}

// MSE between softmax(student_logits) and teacher probabilities, with the
// gradient taken through the softmax.
template <typename T>
LossValue<T> mse_consistency_from_logits(const Tensor<T>& student_logits,
                                         const Tensor<T>& teacher_probs) {
  const Tensor<T> probs = softmax_per_pixel(student_logits);
  LossValue<T> out;
  out.value = mse_consistency(probs, teacher_probs);
  out.selected = probs.size();
  out.grad = Tensor<T>(probs.batch(), probs.channels(), probs.height(),
                       probs.width());
  if (probs.size() == 0) return out;
  const T scale = T(2) / static_cast<T>(probs.size());
  const std::size_t hw = probs.plane_size();
  const int c_count = probs.channels();
  for (int b = 0; b < probs.batch(); ++b) {
    const T* p = probs.plane(b, 0);
    const T* t = teacher_probs.plane(b, 0);
    T* g = out.grad.plane(b, 0);
    for (std::size_t i = 0; i < hw; ++i) {
      T dot = T(0);
      for (int c = 0; c < c_count; ++c) {
        dot += scale * (p[c * hw + i] - t[c * hw + i]) * p[c * hw + i];
      }
      for (int c = 0; c < c_count; ++c) {
        const T gp = scale * (p[c * hw + i] - t[c * hw + i]);
        g[c * hw + i] = p[c * hw + i] * (gp - dot);
      }
    }
  }
  return out;
}

template <typename T>
ConsistencyLoss<T> mse_consistency_loss(
    const Tensor<T>& student_labeled, const Tensor<T>& student_unlabeled,
    const PseudoLabelBatch<T>& teacher_labeled,
    const PseudoLabelBatch<T>& teacher_unlabeled) {
  const Tensor<T> logits = concat_batch(student_labeled, student_unlabeled);
  const Tensor<T> target =
      concat_batch(teacher_labeled.class_probs, teacher_unlabeled.class_probs);
  const auto mse = mse_consistency_from_logits(logits, target);
  ConsistencyLoss<T> out;
  out.value = out.positive = mse.value;
  loss_detail::split_grad(mse.grad, student_labeled.batch(), out);
  return out;
}

template <typename T>
constexpr T total_loss(T supervised, T consistency, T lambda) {
  return supervised + lambda * consistency;
}

}  // namespace pvseg
