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

// Static PNG figures: line plots, heatmaps, segmentation overlays and
// confidence maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "pvseg/dataset.hpp"
#include "pvseg/error.hpp"
#include "pvseg/evaluation.hpp"

namespace pvseg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

namespace plot_detail {

inline const std::array<cv::Scalar, 8>& palette() {
  // BGR
  static const std::array<cv::Scalar, 8> p = {
      cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255), cv::Scalar(44, 160, 44),
      cv::Scalar(40, 39, 214),  cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140),
      cv::Scalar(194, 119, 227), cv::Scalar(127, 127, 127)};
  return p;
}

inline void write_png(const cv::Mat& m, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write '" + path.string() + "'");
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

inline void text(cv::Mat& m, const std::string& s, cv::Point at, double scale = 0.4,
                 cv::Scalar color = cv::Scalar(30, 30, 30)) {
  cv::putText(m, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, color, 1, cv::LINE_AA);
}

}  // namespace plot_detail

inline void save_line_plot(const std::vector<Series>& series, const std::string& title,
                           const std::string& xlabel, const std::string& ylabel,
                           const std::filesystem::path& path, int width = 640,
                           int height = 420) {
  using namespace plot_detail;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int left = 70, right = 20, top = 40, bottom = 50;
  const cv::Rect area(left, top, width - left - right, height - top - bottom);
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x, double y) {
    return cv::Point(area.x + static_cast<int>(std::lround((x - x0) / (x1 - x0) * area.width)),
                     area.y + area.height -
                         static_cast<int>(std::lround((y - y0) / (y1 - y0) * area.height)));
  };
  cv::rectangle(img, area, cv::Scalar(90, 90, 90), 1);
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0;
    const cv::Point p = px(x0, yv);
    cv::line(img, {area.x, p.y}, {area.x + area.width, p.y}, cv::Scalar(225, 225, 225), 1);
    text(img, tick(yv), {4, p.y + 4});
    const double xv = x0 + (x1 - x0) * k / 4.0;
    const cv::Point q = px(xv, y0);
    text(img, tick(xv), {q.x - 10, area.y + area.height + 16});
  }
  text(img, title, {left, 24}, 0.55);
  text(img, xlabel, {left + area.width / 2 - 20, height - 10});
  text(img, ylabel, {4, top - 8});
  for (std::size_t s = 0; s < series.size(); ++s) {
    const cv::Scalar color = palette()[s % palette().size()];
    const auto& sr = series[s];
    for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
      if (!std::isfinite(sr.y[i])) continue;
      const cv::Point p = px(sr.x[i], sr.y[i]);
      cv::circle(img, p, 3, color, cv::FILLED, cv::LINE_AA);
      if (i > 0 && std::isfinite(sr.y[i - 1])) {
        cv::line(img, px(sr.x[i - 1], sr.y[i - 1]), p, color, 2, cv::LINE_AA);
      }
    }
    const int ly = top + 16 + 16 * static_cast<int>(s);
    cv::line(img, {area.x + area.width - 120, ly - 4}, {area.x + area.width - 100, ly - 4},
             color, 2);
    text(img, sr.label, {area.x + area.width - 95, ly});
  }
  if (!any) text(img, "no data", {area.x + area.width / 2 - 30, area.y + area.height / 2}, 0.6);
  write_png(img, path);
}

inline void save_heatmap(const std::vector<std::vector<double>>& values,
                         const std::vector<std::string>& labels, const std::string& title,
                         const std::filesystem::path& path, int cell = 80) {
  using namespace plot_detail;
  const int n = static_cast<int>(values.size());
  if (n == 0) throw InvalidArgument("heatmap needs at least one row");
  const int left = 110, top = 60;
  cv::Mat img(top + n * cell + 20, left + n * cell + 20, CV_8UC3, cv::Scalar(255, 255, 255));
  double hi = 0.0;
  for (const auto& row : values) {
    for (double v : row) hi = std::max(hi, v);
  }
  cv::Mat levels(n, n, CV_8UC1);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      levels.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(
          hi > 0 ? std::lround(255.0 * values[r][c] / hi) : 0);
    }
  }
  cv::Mat colored;
  cv::applyColorMap(levels, colored, cv::COLORMAP_VIRIDIS);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const cv::Rect box(left + c * cell, top + r * cell, cell, cell);
      const cv::Vec3b col = colored.at<cv::Vec3b>(r, c);
      cv::rectangle(img, box, cv::Scalar(col[0], col[1], col[2]), cv::FILLED);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f", values[r][c]);
      const bool dark = levels.at<std::uint8_t>(r, c) < 128;
      text(img, buf, {box.x + 12, box.y + cell / 2 + 5}, 0.45,
           dark ? cv::Scalar(255, 255, 255) : cv::Scalar(0, 0, 0));
    }
    const std::string name = r < static_cast<int>(labels.size()) ? labels[r] : std::to_string(r);
    text(img, name, {6, top + r * cell + cell / 2 + 4});
    text(img, name.substr(0, 10), {left + r * cell + 4, top - 8});
  }
  text(img, title, {6, 22}, 0.55);
  write_png(img, path);
}

// Class colours blended over the image; background left untouched.
inline void save_overlay(const ImageSample& image, const MaskSample& pred,
                         const std::filesystem::path& path, double alpha = 0.5) {
  if (image.height != pred.height || image.width != pred.width) {
    throw ShapeMismatch("overlay: image and mask sizes differ");
  }
  cv::Mat img(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      cv::Vec3d bgr(image.at(y, x, 2), image.at(y, x, 1), image.at(y, x, 0));
      bgr *= 255.0;
      const int c = pred.at(y, x);
      if (c > 0) {
        const cv::Scalar col = plot_detail::palette()[(c - 1) % plot_detail::palette().size()];
        for (int k = 0; k < 3; ++k) bgr[k] = (1 - alpha) * bgr[k] + alpha * col[k];
      }
      img.at<cv::Vec3b>(y, x) = cv::Vec3b(cv::saturate_cast<std::uint8_t>(bgr[0]),
                                          cv::saturate_cast<std::uint8_t>(bgr[1]),
                                          cv::saturate_cast<std::uint8_t>(bgr[2]));
    }
  }
  plot_detail::write_png(img, path);
}

inline void save_confidence_map(const ConfidenceMap& m, const std::filesystem::path& path) {
  cv::Mat levels(m.height, m.width, CV_8UC1);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      levels.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(255.0 * m.at(y, x));
    }
  }
  cv::Mat colored;
  cv::applyColorMap(levels, colored, cv::COLORMAP_INFERNO);
  plot_detail::write_png(colored, path);
}

}  // namespace pvseg
