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

// Minimal float32 layers with explicit forward/backward. Each layer caches
// what its backward needs from the most recent forward call; gradients are
// accumulated into Parameter::grad until zeroed by the owner.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pvseg/error.hpp"
#include "pvseg/rng.hpp"
#include "pvseg/tensor.hpp"

namespace pvseg::nn {

enum class Mode { kTrain, kEval };

struct Parameter {
  std::string name;
  std::vector<float> value;
  std::vector<float> grad;

  Parameter() = default;
  Parameter(std::string n, std::size_t size, float fill = 0.0f)
      : name(std::move(n)), value(size, fill), grad(size, 0.0f) {}
};

// Non-trainable state (batch-norm running statistics).
struct Buffer {
  std::string name;
  std::vector<float> value;
};

struct ParamCollector {
  std::vector<Parameter*> params;
  std::vector<Buffer*> buffers;
  void add(Parameter& p) { params.push_back(&p); }
  void add(Buffer& b) { buffers.push_back(&b); }
};

using MatrixRM =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

// ---------------------------------------------------------------------------

class Conv2d {
 public:
  struct Options {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
    int padding = -1;  // -1: dilation * (kernel - 1) / 2 ("same" at stride 1)
    bool bias = false;
  };

  Conv2d() = default;
  Conv2d(const std::string& name, Options o) : o_(o) {
    if (o_.padding < 0) o_.padding = o_.dilation * (o_.kernel - 1) / 2;
    weight_ = Parameter(name + ".weight",
                        static_cast<std::size_t>(o_.out_channels) *
                            o_.in_channels * o_.kernel * o_.kernel);
    if (o_.bias) {
      bias_ = Parameter(name + ".bias", static_cast<std::size_t>(o_.out_channels));
    }
  }

  // He-normal weights (fan-in), zero bias.
  void init(Rng& rng) {
    const double fan_in = static_cast<double>(o_.in_channels) * o_.kernel * o_.kernel;
    const double stddev = std::sqrt(2.0 / fan_in);
    for (float& w : weight_.value) w = static_cast<float>(rng.normal(0.0, stddev));
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
  }

  const Options& options() const noexcept { return o_; }
  Parameter& weight() noexcept { return weight_; }

  int output_size(int in) const noexcept {
    return (in + 2 * o_.padding - o_.dilation * (o_.kernel - 1) - 1) / o_.stride +
           1;
  }

  Tensor<float> forward(const Tensor<float>& x) {
    if (x.channels() != o_.in_channels) {
      throw ShapeMismatch(weight_.name + ": expected " +
                          std::to_string(o_.in_channels) + " channels, got " +
                          x.shape_string());
    }
    input_ = x;
    const int ho = output_size(x.height());
    const int wo = output_size(x.width());
    Tensor<float> y(x.batch(), o_.out_channels, ho, wo);
    const int k = patch_size();
    const int p = ho * wo;
    ConstMapRM w(weight_.value.data(), o_.out_channels, k);
    for (int b = 0; b < x.batch(); ++b) {
      MapRM out(y.plane(b, 0), o_.out_channels, p);
      if (pointwise()) {
        out.noalias() = w * ConstMapRM(x.plane(b, 0), k, p);
      } else {
        im2col(x, b, ho, wo);
        out.noalias() = w * ConstMapRM(cols_.data(), k, p);
      }
      if (o_.bias) {
        for (int c = 0; c < o_.out_channels; ++c) out.row(c).array() += bias_.value[c];
      }
    }
    return y;
  }

  Tensor<float> backward(const Tensor<float>& grad_out) {
    const Tensor<float>& x = input_;
    const int ho = grad_out.height();
    const int wo = grad_out.width();
    const int k = patch_size();
    const int p = ho * wo;
    Tensor<float> dx(x.batch(), x.channels(), x.height(), x.width());
    ConstMapRM w(weight_.value.data(), o_.out_channels, k);
    MapRM dw(weight_.grad.data(), o_.out_channels, k);
    for (int b = 0; b < x.batch(); ++b) {
      ConstMapRM dy(grad_out.plane(b, 0), o_.out_channels, p);
      if (pointwise()) {
        ConstMapRM xin(x.plane(b, 0), k, p);
        dw.noalias() += dy * xin.transpose();
        MapRM(dx.plane(b, 0), k, p).noalias() = w.transpose() * dy;
      } else {
        im2col(x, b, ho, wo);
        ConstMapRM cols(cols_.data(), k, p);
        dw.noalias() += dy * cols.transpose();
        dcols_.resize(static_cast<std::size_t>(k) * p);
        MapRM(dcols_.data(), k, p).noalias() = w.transpose() * dy;
        col2im(dx, b, ho, wo);
      }
      if (o_.bias) {
        for (int c = 0; c < o_.out_channels; ++c) {
          const float* row = grad_out.plane(b, c);
          float acc = 0.0f;
          for (int i = 0; i < p; ++i) acc += row[i];
          bias_.grad[c] += acc;
        }
      }
    }
    return dx;
  }

  void collect(ParamCollector& pc) {
    pc.add(weight_);
    if (o_.bias) pc.add(bias_);
  }

 private:
  int patch_size() const noexcept { return o_.in_channels * o_.kernel * o_.kernel; }
  bool pointwise() const noexcept {
    return o_.kernel == 1 && o_.stride == 1 && o_.padding == 0;
  }

  void im2col(const Tensor<float>& x, int b, int ho, int wo) {
    const int h = x.height();
    const int w = x.width();
    cols_.resize(static_cast<std::size_t>(patch_size()) * ho * wo);
    float* dst = cols_.data();
    for (int c = 0; c < o_.in_channels; ++c) {
      const float* src = x.plane(b, c);
      for (int ky = 0; ky < o_.kernel; ++ky) {
        for (int kx = 0; kx < o_.kernel; ++kx) {
          const int oy_off = ky * o_.dilation - o_.padding;
          const int ox_off = kx * o_.dilation - o_.padding;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * o_.stride + oy_off;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + wo, 0.0f);
              dst += wo;
              continue;
            }
            const float* row = src + static_cast<std::size_t>(iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * o_.stride + ox_off;
              *dst++ = (ix >= 0 && ix < w) ? row[ix] : 0.0f;
            }
          }
        }
      }
    }
  }

  void col2im(Tensor<float>& dx, int b, int ho, int wo) const {
    const int h = dx.height();
    const int w = dx.width();
    const float* src = dcols_.data();
    for (int c = 0; c < o_.in_channels; ++c) {
      float* dst = dx.plane(b, c);
      for (int ky = 0; ky < o_.kernel; ++ky) {
        for (int kx = 0; kx < o_.kernel; ++kx) {
          const int oy_off = ky * o_.dilation - o_.padding;
          const int ox_off = kx * o_.dilation - o_.padding;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * o_.stride + oy_off;
            if (iy < 0 || iy >= h) {
              src += wo;
              continue;
            }
            float* row = dst + static_cast<std::size_t>(iy) * w;
            for (int ox = 0; ox < wo; ++ox, ++src) {
              const int ix = ox * o_.stride + ox_off;
              if (ix >= 0 && ix < w) row[ix] += *src;
            }
          }
        }
      }
    }
  }

  Options o_;
  Parameter weight_;
  Parameter bias_;
  Tensor<float> input_;
  std::vector<float> cols_;
  std::vector<float> dcols_;
};

// ---------------------------------------------------------------------------

class BatchNorm2d {
 public:
  static constexpr float kEps = 1e-5f;
  static constexpr float kMomentum = 0.1f;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels)
      : gamma_(name + ".weight", static_cast<std::size_t>(channels), 1.0f),
        beta_(name + ".bias", static_cast<std::size_t>(channels), 0.0f),
        running_mean_{name + ".running_mean",
                      std::vector<float>(static_cast<std::size_t>(channels), 0.0f)},
        running_var_{name + ".running_var",
                     std::vector<float>(static_cast<std::size_t>(channels), 1.0f)} {}

  int channels() const noexcept { return static_cast<int>(gamma_.value.size()); }

  Tensor<float> forward(const Tensor<float>& x, Mode mode) {
    const int c_count = channels();
    if (x.channels() != c_count) throw ShapeMismatch(gamma_.name + ": channel mismatch");
    mode_ = mode;
    xhat_ = Tensor<float>(x.batch(), c_count, x.height(), x.width());
    inv_std_.assign(static_cast<std::size_t>(c_count), 0.0f);
    Tensor<float> y(x.batch(), c_count, x.height(), x.width());
    const std::size_t hw = x.plane_size();
    const double n = static_cast<double>(hw) * x.batch();
    for (int c = 0; c < c_count; ++c) {
      double mean;
      double var;
      if (mode == Mode::kTrain) {
        double s = 0.0;
        for (int b = 0; b < x.batch(); ++b) {
          const float* p = x.plane(b, c);
          for (std::size_t i = 0; i < hw; ++i) s += p[i];
        }
        mean = s / n;
        double ss = 0.0;
        for (int b = 0; b < x.batch(); ++b) {
          const float* p = x.plane(b, c);
          for (std::size_t i = 0; i < hw; ++i) {
            const double d = p[i] - mean;
            ss += d * d;
          }
        }
        var = ss / n;
        const double unbiased = n > 1 ? ss / (n - 1) : var;
        running_mean_.value[c] = static_cast<float>(
            (1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
        running_var_.value[c] = static_cast<float>(
            (1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased);
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const float inv = static_cast<float>(1.0 / std::sqrt(var + kEps));
      inv_std_[c] = inv;
      const float m = static_cast<float>(mean);
      const float g = gamma_.value[c];
      const float be = beta_.value[c];
      for (int b = 0; b < x.batch(); ++b) {
        const float* p = x.plane(b, c);
        float* xh = xhat_.plane(b, c);
        float* out = y.plane(b, c);
        for (std::size_t i = 0; i < hw; ++i) {
          xh[i] = (p[i] - m) * inv;
          out[i] = g * xh[i] + be;
        }
      }
    }
    return y;
  }

  Tensor<float> backward(const Tensor<float>& dy) {
    const int c_count = channels();
    Tensor<float> dx(dy.batch(), c_count, dy.height(), dy.width());
    const std::size_t hw = dy.plane_size();
    const double n = static_cast<double>(hw) * dy.batch();
    for (int c = 0; c < c_count; ++c) {
      double sum_dy = 0.0;
      double sum_dy_xhat = 0.0;
      for (int b = 0; b < dy.batch(); ++b) {
        const float* g = dy.plane(b, c);
        const float* xh = xhat_.plane(b, c);
        for (std::size_t i = 0; i < hw; ++i) {
          sum_dy += g[i];
          sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
        }
      }
      gamma_.grad[c] += static_cast<float>(sum_dy_xhat);
      beta_.grad[c] += static_cast<float>(sum_dy);
      const float scale = gamma_.value[c] * inv_std_[c];
      for (int b = 0; b < dy.batch(); ++b) {
        const float* g = dy.plane(b, c);
        const float* xh = xhat_.plane(b, c);
        float* out = dx.plane(b, c);
        if (mode_ == Mode::kTrain) {
          const float mean_dy = static_cast<float>(sum_dy / n);
          const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / n);
          for (std::size_t i = 0; i < hw; ++i) {
            out[i] = scale * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
          }
        } else {
          for (std::size_t i = 0; i < hw; ++i) out[i] = scale * g[i];
        }
      }
    }
    return dx;
  }

  void collect(ParamCollector& pc) {
    pc.add(gamma_);
    pc.add(beta_);
    pc.add(running_mean_);
    pc.add(running_var_);
  }

 private:
  Parameter gamma_;
  Parameter beta_;
  Buffer running_mean_;
  Buffer running_var_;
  Mode mode_ = Mode::kTrain;
  Tensor<float> xhat_;
  std::vector<float> inv_std_;
};

// ---------------------------------------------------------------------------

class ReLU {
 public:
  Tensor<float> forward(Tensor<float> x) {
    for (float& v : x.values()) v = v > 0.0f ? v : 0.0f;
    output_ = x;
    return x;
  }
  Tensor<float> backward(Tensor<float> dy) const {
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (!(output_[i] > 0.0f)) dy[i] = 0.0f;
    }
    return dy;
  }

 private:
  Tensor<float> output_;
};

// Conv -> BatchNorm -> optional ReLU.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(const std::string& name, Conv2d::Options o, bool relu = true)
      : conv_(name + ".conv", o), bn_(name + ".bn", o.out_channels), relu_enabled_(relu) {}

  void init(Rng& rng) { conv_.init(rng); }

  Tensor<float> forward(const Tensor<float>& x, Mode mode) {
    Tensor<float> y = bn_.forward(conv_.forward(x), mode);
    return relu_enabled_ ? relu_.forward(std::move(y)) : y;
  }
  Tensor<float> backward(Tensor<float> dy) {
    if (relu_enabled_) dy = relu_.backward(std::move(dy));
    return conv_.backward(bn_.backward(dy));
  }
  void collect(ParamCollector& pc) {
    conv_.collect(pc);
    bn_.collect(pc);
  }

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
  ReLU relu_;
  bool relu_enabled_ = true;
};

// ---------------------------------------------------------------------------

// Bilinear resize with half-pixel centres (align_corners = false).
class BilinearResize {
 public:
  Tensor<float> forward(const Tensor<float>& x, int height, int width) {
    in_h_ = x.height();
    in_w_ = x.width();
    build(ys_, in_h_, height);
    build(xs_, in_w_, width);
    Tensor<float> y(x.batch(), x.channels(), height, width);
    for (int b = 0; b < x.batch(); ++b) {
      for (int c = 0; c < x.channels(); ++c) {
        const float* src = x.plane(b, c);
        float* dst = y.plane(b, c);
        for (int oy = 0; oy < height; ++oy) {
          const Tap& ty = ys_[oy];
          const float* r0 = src + static_cast<std::size_t>(ty.i0) * in_w_;
          const float* r1 = src + static_cast<std::size_t>(ty.i1) * in_w_;
          for (int ox = 0; ox < width; ++ox) {
            const Tap& tx = xs_[ox];
            const float top = r0[tx.i0] * (1 - tx.l) + r0[tx.i1] * tx.l;
            const float bot = r1[tx.i0] * (1 - tx.l) + r1[tx.i1] * tx.l;
            dst[static_cast<std::size_t>(oy) * width + ox] = top * (1 - ty.l) + bot * ty.l;
          }
        }
      }
    }
    return y;
  }

  Tensor<float> backward(const Tensor<float>& dy) const {
    Tensor<float> dx(dy.batch(), dy.channels(), in_h_, in_w_);
    const int height = dy.height();
    const int width = dy.width();
    for (int b = 0; b < dy.batch(); ++b) {
      for (int c = 0; c < dy.channels(); ++c) {
        const float* g = dy.plane(b, c);
        float* dst = dx.plane(b, c);
        for (int oy = 0; oy < height; ++oy) {
          const Tap& ty = ys_[oy];
          float* r0 = dst + static_cast<std::size_t>(ty.i0) * in_w_;
          float* r1 = dst + static_cast<std::size_t>(ty.i1) * in_w_;
          for (int ox = 0; ox < width; ++ox) {
            const Tap& tx = xs_[ox];
            const float v = g[static_cast<std::size_t>(oy) * width + ox];
            r0[tx.i0] += v * (1 - ty.l) * (1 - tx.l);
            r0[tx.i1] += v * (1 - ty.l) * tx.l;
            r1[tx.i0] += v * ty.l * (1 - tx.l);
            r1[tx.i1] += v * ty.l * tx.l;
          }
        }
      }
    }
    return dx;
  }

 private:
  struct Tap {
    int i0;
    int i1;
    float l;
  };
  static void build(std::vector<Tap>& taps, int in, int out) {
    taps.resize(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      const double src = std::max(0.0, (o + 0.5) * scale - 0.5);
      const int i0 = std::min(static_cast<int>(src), in - 1);
      const int i1 = std::min(i0 + 1, in - 1);
      taps[o] = {i0, i1, static_cast<float>(src - i0)};
    }
  }

  int in_h_ = 0;
  int in_w_ = 0;
  std::vector<Tap> ys_;
  std::vector<Tap> xs_;
};

// 3x3, stride 2, padding 1 max pooling.
class MaxPool3x3s2 {
 public:
  Tensor<float> forward(const Tensor<float>& x) {
    in_shape_ = x.shape();
    const int ho = (x.height() + 2 - 3) / 2 + 1;
    const int wo = (x.width() + 2 - 3) / 2 + 1;
    Tensor<float> y(x.batch(), x.channels(), ho, wo);
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (int b = 0; b < x.batch(); ++b) {
      for (int c = 0; c < x.channels(); ++c) {
        const float* src = x.plane(b, c);
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox, ++o) {
            float best = -std::numeric_limits<float>::infinity();
            int best_i = 0;
            for (int ky = 0; ky < 3; ++ky) {
              const int iy = oy * 2 - 1 + ky;
              if (iy < 0 || iy >= x.height()) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const int ix = ox * 2 - 1 + kx;
                if (ix < 0 || ix >= x.width()) continue;
                const int i = iy * x.width() + ix;
                if (src[i] > best) {
                  best = src[i];
                  best_i = i;
                }
              }
            }
            y[o] = best;
            argmax_[o] = best_i;
          }
        }
      }
    }
    return y;
  }

  Tensor<float> backward(const Tensor<float>& dy) const {
    Tensor<float> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    std::size_t o = 0;
    for (int b = 0; b < dy.batch(); ++b) {
      for (int c = 0; c < dy.channels(); ++c) {
        float* dst = dx.plane(b, c);
        for (std::size_t i = 0; i < dy.plane_size(); ++i, ++o) {
          dst[argmax_[o]] += dy[o];
        }
      }
    }
    return dx;
  }

 private:
  std::array<int, 4> in_shape_{};
  std::vector<int> argmax_;
};

// ---------------------------------------------------------------------------
// Stateless helpers

inline Tensor<float> concat_channels(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width()) {
    throw ShapeMismatch("concat_channels: " + a.shape_string() + " vs " +
                        b.shape_string());
  }
  Tensor<float> out(a.batch(), a.channels() + b.channels(), a.height(), a.width());
  for (int n = 0; n < a.batch(); ++n) {
    std::copy(a.sample(n).begin(), a.sample(n).end(), out.plane(n, 0));
    std::copy(b.sample(n).begin(), b.sample(n).end(), out.plane(n, a.channels()));
  }
  return out;
}

inline std::pair<Tensor<float>, Tensor<float>> split_channels(const Tensor<float>& t,
                                                              int first) {
  Tensor<float> a(t.batch(), first, t.height(), t.width());
  Tensor<float> b(t.batch(), t.channels() - first, t.height(), t.width());
  for (int n = 0; n < t.batch(); ++n) {
    const float* src = t.plane(n, 0);
    std::copy(src, src + a.sample_size(), a.plane(n, 0));
    std::copy(src + a.sample_size(), src + t.sample_size(), b.plane(n, 0));
  }
  return {std::move(a), std::move(b)};
}

// Copies channels [begin, begin + count).
inline Tensor<float> slice_channels(const Tensor<float>& t, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > t.channels()) {
    throw InvalidArgument("slice_channels out of range");
  }
  Tensor<float> out(t.batch(), count, t.height(), t.width());
  for (int n = 0; n < t.batch(); ++n) {
    const float* src = t.plane(n, begin);
    std::copy(src, src + out.sample_size(), out.plane(n, 0));
  }
  return out;
}

inline void add_inplace(Tensor<float>& a, const Tensor<float>& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("add: " + a.shape_string() + " vs " + b.shape_string());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

inline Tensor<float> global_avg_pool(const Tensor<float>& x) {
  Tensor<float> y(x.batch(), x.channels(), 1, 1);
  for (int b = 0; b < x.batch(); ++b) {
    for (int c = 0; c < x.channels(); ++c) {
      const float* p = x.plane(b, c);
      double s = 0.0;
      for (std::size_t i = 0; i < x.plane_size(); ++i) s += p[i];
      y(b, c, 0, 0) = static_cast<float>(s / static_cast<double>(x.plane_size()));
    }
  }
  return y;
}

inline Tensor<float> global_avg_pool_backward(const Tensor<float>& dy, int height,
                                              int width) {
  Tensor<float> dx(dy.batch(), dy.channels(), height, width);
  const float inv = 1.0f / static_cast<float>(height * width);
  for (int b = 0; b < dy.batch(); ++b) {
    for (int c = 0; c < dy.channels(); ++c) {
      float* p = dx.plane(b, c);
      std::fill(p, p + dx.plane_size(), dy(b, c, 0, 0) * inv);
    }
  }
  return dx;
}

// Spatial broadcast of a B x C x 1 x 1 tensor and its adjoint.
inline Tensor<float> broadcast_spatial(const Tensor<float>& x, int height, int width) {
  Tensor<float> y(x.batch(), x.channels(), height, width);
  for (int b = 0; b < x.batch(); ++b) {
    for (int c = 0; c < x.channels(); ++c) {
      float* p = y.plane(b, c);
      std::fill(p, p + y.plane_size(), x(b, c, 0, 0));
    }
  }
  return y;
}

inline Tensor<float> broadcast_spatial_backward(const Tensor<float>& dy) {
  Tensor<float> dx(dy.batch(), dy.channels(), 1, 1);
  for (int b = 0; b < dy.batch(); ++b) {
    for (int c = 0; c < dy.channels(); ++c) {
      const float* p = dy.plane(b, c);
      double s = 0.0;
      for (std::size_t i = 0; i < dy.plane_size(); ++i) s += p[i];
      dx(b, c, 0, 0) = static_cast<float>(s);
    }
  }
  return dx;
}

}  // namespace pvseg::nn
