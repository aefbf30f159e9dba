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
// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any criterion fails. Usage: acceptance <work_dir>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "pvseg/pvseg.hpp"

namespace {

using namespace pvseg;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

Tensor<double> random_tensor(Rng& rng, double scale = 2.0) {
  Tensor<double> t(2, 4, 8, 8);
  for (double& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

double relative_error(const Tensor<double>& a, const Tensor<double>& n) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - n[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(n[i])});
  }
  return scale == 0.0 ? diff : diff / scale;
}

Tensor<double> central_difference(const std::function<double(const Tensor<double>&)>& f,
                                  Tensor<double> x) {
  const double h = 1e-4;
  Tensor<double> g(x.batch(), x.channels(), x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

Outcome gradients() {
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor<double> s = random_tensor(rng);
    const auto pl = make_pseudo_labels(random_tensor(rng));
    LabelBatch y(2, 8, 8);
    for (int& v : y.values()) v = rng.uniform_int(0, 3);
    const double t_pos = 0.1 * (trial % 7);
    const double t_neg = 0.15 + 0.05 * (trial % 4);
    const MeanOver over = trial % 2 ? MeanOver::kAll : MeanOver::kSelected;
    worst = std::max(worst, relative_error(supervised_ce(s, y).grad,
                                           central_difference(
                                               [&](const Tensor<double>& x) {
                                                 return supervised_ce(x, y).value;
                                               },
                                               s)));
    worst = std::max(worst, relative_error(semice_positive(s, pl, t_pos, over).grad,
                                           central_difference(
                                               [&](const Tensor<double>& x) {
                                                 return semice_positive(x, pl, t_pos, over).value;
                                               },
                                               s)));
    worst = std::max(worst, relative_error(semice_negative(s, pl, t_neg, over).grad,
                                           central_difference(
                                               [&](const Tensor<double>& x) {
                                                 return semice_negative(x, pl, t_neg, over).value;
                                               },
                                               s)));
  }
  return {worst < 1e-3, fmt("20 instances 2x4x8x8, CE/positive/negative, worst rel err %.2e", worst)};
}

Outcome ema() {
  double worst = 0.0;
  for (double alpha : {0.9, 0.99}) {
    auto student = create_model(BackboneSpec{}, 1);
    auto teacher = create_model(BackboneSpec{}, 2);
    const auto s = student->parameter_vector();
    const auto t0 = teacher->parameter_vector();
    for (int k = 1; k <= 100; ++k) {
      ema_update(*teacher, *student, alpha);
      const auto t = teacher->parameter_vector();
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double want = std::pow(alpha, k) * std::abs(static_cast<double>(t0[i]) - s[i]);
        worst = std::max(worst, std::abs(std::abs(static_cast<double>(t[i]) - s[i]) - want));
      }
    }
  }
  return {worst < 1e-6, fmt("alpha 0.9/0.99, k<=100, worst error %.2e", worst)};
}

Outcome metrics() {
  Rng rng(103);
  const int classes = 5;
  ConfusionMatrix cm(classes);
  std::vector<MaskSample> preds, truths;
  for (int k = 0; k < 50; ++k) {
    MaskSample p, t;
    p.height = t.height = p.width = t.width = 16;
    p.labels.resize(256);
    t.labels.resize(256);
    for (int i = 0; i < 256; ++i) {
      p.labels[i] = rng.uniform_int(0, classes - 1);
      t.labels[i] = rng.uniform_int(0, classes - 1);
    }
    cm.accumulate(p, t);
    preds.push_back(std::move(p));
    truths.push_back(std::move(t));
  }
  bool exact = true;
  double f1_gap = 0.0;
  for (int c = 0; c < classes; ++c) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < preds.size(); ++k) {
      for (std::size_t i = 0; i < preds[k].labels.size(); ++i) {
        const bool p = preds[k].labels[i] == c;
        const bool t = truths[k].labels[i] == c;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
      }
    }
    exact = exact && cm.tp(c) == tp && cm.fp(c) == fp && cm.fn(c) == fn;
    exact = exact && iou(cm, c) == static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    exact = exact && precision(cm, c) == static_cast<double>(tp) / static_cast<double>(tp + fp);
    exact = exact && recall(cm, c) == static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double j = iou(cm, c);
    f1_gap = std::max(f1_gap, std::abs(f1(precision(cm, c), recall(cm, c)) - 2 * j / (1 + j)));
  }
  return {exact && f1_gap <= 1e-9,
          std::string("50 random 16x16 pairs, 5 classes, counts ") +
              (exact ? "exact" : "MISMATCH") + fmt(", max |F1 - 2IoU/(1+IoU)| %.1e", f1_gap)};
}

Outcome log_cells() {
  ConfusionMatrix cm(2);
  cm.count(0, 0) = 387157;
  cm.count(1, 1) = 1070;
  const auto v = log_view(cm);
  const double a = std::round(v[0][0] * 100) / 100;
  const double b = std::round(v[1][1] * 100) / 100;
  return {a == 12.87 && b == 6.97, fmt("ln(387157) -> %.2f, ln(1070) -> %.2f", a, b)};
}

Outcome thresholds() {
  Rng rng(105);
  const Tensor<double> s = random_tensor(rng);
  const auto pl = make_pseudo_labels(random_tensor(rng, 1.5));
  const double ce_gap = std::abs(semice_positive(s, pl, 0.0).value - supervised_ce(s, pl.labels).value);
  const auto neg = semice_negative(s, pl, 0.0);
  bool zero = neg.value == 0.0;
  for (double g : neg.grad.values()) zero = zero && g == 0.0;
  bool monotone = true;
  std::size_t prev_pos = std::numeric_limits<std::size_t>::max();
  std::size_t prev_neg = 0;
  for (double t : {0.0, 0.2, 0.3, 0.4, 0.5, 0.6}) {
    const std::size_t np = semice_positive(s, pl, t).selected;
    const std::size_t nn = semice_negative(s, pl, t).selected;
    monotone = monotone && np <= prev_pos && nn >= prev_neg;
    prev_pos = np;
    prev_neg = nn;
  }
  return {ce_gap <= 1e-6 && zero && monotone,
          fmt("t_pos=0 vs CE gap %.1e", ce_gap) + (zero ? ", t_neg=0 exactly 0" : ", t_neg=0 NONZERO") +
              (monotone ? ", selection monotone" : ", selection NOT monotone")};
}

Outcome cutmix_law() {
  Rng rng(106);
  const int h = 32, w = 32;
  Tensor<float> x(2, 3, h, w);
  for (float& v : x.values()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  double worst = 0.0;
  bool untouched = true;
  for (int draw = 0; draw < 500; ++draw) {
    const auto recs = draw_cutmix(2, h, w, 4.0, 4.0, rng);
    const Tensor<float> mixed = apply_cutmix(x, recs);
    for (int b = 0; b < 2; ++b) {
      const auto& r = recs[b];
      worst = std::max(worst, std::abs(r.rect.area() - (1.0 - r.lambda_mix) * h * w));
      for (int c = 0; c < 3; ++c) {
        for (int yy = 0; yy < h; ++yy) {
          for (int xx = 0; xx < w; ++xx) {
            if (!r.rect.contains(xx, yy)) untouched = untouched && mixed(b, c, yy, xx) == x(b, c, yy, xx);
          }
        }
      }
    }
  }
  return {worst <= w + h && untouched,
          fmt("1000 Beta(4,4) draws on 32x32, max |area - (1-l)HW| %.1f (bound 64)", worst) +
              (untouched ? ", outside pixels unchanged" : ", outside pixels CHANGED")};
}

ExperimentConfig desk_config(const fs::path& data, const std::vector<std::string>& extra) {
  std::vector<std::string> o = {"data.manifest=" + (data / "train.tsv").string(),
                                "data.test_manifest=" + (data / "test.tsv").string()};
  o.insert(o.end(), extra.begin(), extra.end());
  return load_experiment_config(fs::path(PVSEG_CONFIG_DIR) / "synthetic_desk.cfg", o);
}

RunResult run(const fs::path& data, const fs::path& out, const std::vector<std::string>& extra) {
  fs::remove_all(out);
  RunOptions ro;
  ro.max_images = 0;
  return run_experiment(desk_config(data, extra), out, ro);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome ssl_gain(const fs::path& data, const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  double ssl = 0.0, sup = 0.0;
  std::string per_seed;
  for (int seed = 1; seed <= 3; ++seed) {
    const std::string s = "train.seed=" + std::to_string(seed);
    const double a = run(data, work / ("ssl_" + std::to_string(seed)), {s}).evaluation.report.average.iou;
    const double b =
        run(data, work / ("sup_" + std::to_string(seed)), {s, "loss.lambda=0"}).evaluation.report.average.iou;
    ssl += a / 3;
    sup += b / 3;
    per_seed += fmt(" [seed %.0f: %.4f vs %.4f]", seed, a, b);
  }
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  return {ssl >= sup + 0.02 && minutes < 15.0,
          fmt("mean defect mIoU SSL %.4f vs supervised %.4f (need +0.02), %.1f min;", ssl, sup,
              minutes) +
              per_seed};
}

Outcome determinism(const fs::path& data, const fs::path& work) {
  const RunResult a = run(data, work / "repeat_a", {"train.seed=1"});
  const RunResult b = run(data, work / "repeat_b", {"train.seed=1"});
  double gap = a.history.size() == b.history.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.history.size(), b.history.size()); ++i) {
    gap = std::max({gap, std::abs(a.history[i].loss_total - b.history[i].loss_total),
                    std::abs(a.history[i].loss_sup - b.history[i].loss_sup),
                    std::abs(a.history[i].loss_cons - b.history[i].loss_cons)});
  }
  const bool same_csv = slurp(work / "repeat_a" / "metrics.csv") == slurp(work / "repeat_b" / "metrics.csv") &&
                        !slurp(work / "repeat_a" / "metrics.csv").empty();
  return {gap <= 1e-5 && same_csv, fmt("max loss trajectory gap %.1e over %.0f epochs", gap,
                                       static_cast<double>(a.history.size())) +
                                       (same_csv ? ", metrics.csv identical" : ", metrics.csv DIFFERS")};
}

Outcome sweep(const fs::path& data, const fs::path& work) {
  const fs::path base = work / "sweep_base.cfg";
  write_resolved_config(desk_config(data, {}), base);
  SweepSpec spec;
  spec.axis = SweepAxis::kThresholds;
  spec.base_config = base;
  spec.max_images = 0;
  fs::remove_all(work / "sweep");
  const auto cells = run_ablation(spec, work / "sweep");
  bool ok = cells.size() == 6;
  for (const auto& c : cells) ok = ok && c.ok == 3 && c.failed == 0;
  const auto rows = read_csv(work / "sweep" / "summary.csv");
  ok = ok && rows.size() == 7;
  for (const auto& r : rows) ok = ok && r.size() == 4 + 2 * 4;
  std::string best;
  double best_iou = -1.0;
  for (const auto& c : cells) {
    if (c.mean[0] > best_iou) {
      best_iou = c.mean[0];
      best = c.value;
    }
  }
  return {ok, fmt("%.0f rows x 4 metrics (mean, std over 3 seeds), best IoU %.4f at ",
                  static_cast<double>(cells.size()), best_iou) +
                  best};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <work_dir>\n");
    return 2;
  }
  const fs::path work = argv[1];
  fs::create_directories(work);
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "loss gradients", gradients);
  report(2, "ema closed form", ema);
  report(3, "metric equivalence", metrics);
  report(4, "log confusion cells", log_cells);
  report(5, "threshold semantics", thresholds);
  report(6, "cutmix area law", cutmix_law);

  const fs::path data = work / "synthetic";
  SynthConfig sc;
  sc.count = 200;
  sc.test_count = 100;
  fs::remove_all(data);
  generate_synthetic_corpus(sc, data);
  report(7, "ssl beats supervised", [&] { return ssl_gain(data, work); });
  report(8, "determinism", [&] { return determinism(data, work); });
  report(9, "threshold ablation", [&] { return sweep(data, work); });
  return failures == 0 ? 0 : 1;
}
