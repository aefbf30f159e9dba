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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pvseg/config.hpp"
#include "pvseg/dataset.hpp"
#include "pvseg/evaluation.hpp"
#include "pvseg/plot.hpp"
#include "pvseg/trainer.hpp"

namespace pvseg {

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  DatasetManifest manifest;  // after the labeled/unlabeled split
  InMemoryDataset train;
  std::vector<ImageSample> test_images;
  std::vector<MaskSample> test_masks;
};

// Class names: data.classes, else the manifest header, else model.num_classes.
inline ClassCatalog resolve_catalog(const ExperimentConfig& cfg, const DatasetManifest& m) {
  if (!cfg.data.classes.empty()) return ClassCatalog(cfg.data.classes);
  if (!m.class_names.empty()) return ClassCatalog(m.class_names);
  if (cfg.train.backbone.num_classes >= 2) {
    return ClassCatalog::with_size(cfg.train.backbone.num_classes);
  }
  throw ConfigError("class set unknown: set data.classes or model.num_classes");
}

// Fills in model.num_classes when it was left at 0.
inline PreparedData prepare_data(ExperimentConfig& cfg) {
  if (cfg.data.manifest.empty()) throw ConfigError("data.manifest is not set");
  PreparedData d;
  d.manifest = load_manifest(cfg.data.manifest);
  if (cfg.data.labeled_fraction > 0.0) {
    d.manifest = apply_split(d.manifest, cfg.data.labeled_fraction, cfg.data.split_seed);
  }
  const ClassCatalog catalog = resolve_catalog(cfg, d.manifest);
  if (cfg.train.backbone.num_classes == 0) {
    cfg.train.backbone.num_classes = catalog.total_classes();
  } else if (cfg.train.backbone.num_classes != catalog.total_classes()) {
    throw ConfigError("model.num_classes = " + std::to_string(cfg.train.backbone.num_classes) +
                      " but the class list has " + std::to_string(catalog.total_classes()));
  }
  d.train = load_dataset(d.manifest, catalog, cfg.train.base_size);
  if (!cfg.data.test_manifest.empty()) {
    DatasetManifest test = load_manifest(cfg.data.test_manifest);
    test.unlabeled.clear();
    InMemoryDataset t = load_dataset(test, catalog, cfg.train.base_size);
    d.test_images = std::move(t.labeled_images);
    d.test_masks = std::move(t.labeled_masks);
  } else {
    d.test_images = d.train.labeled_images;
    d.test_masks = d.train.labeled_masks;
  }
  if (d.test_images.empty()) throw DatasetError("evaluation set has no labeled images");
  return d;
}

// ---------------------------------------------------------------------------
// Evaluation outputs

struct EvaluationSummary {
  ConfusionMatrix cm;
  MetricsReport report;
};

// metrics.csv, confusion.csv, confusion_log.csv, and per-image overlays and
// confidence maps (at most `max_images`, negative means all).
inline EvaluationSummary write_evaluation(SegmentationModel& model, const PreparedData& data,
                                          const ExperimentConfig& cfg, const fs::path& out_dir,
                                          int max_images = -1) {
  fs::create_directories(out_dir);
  const bool visuals = max_images != 0;
  EvalOutput ev = evaluate_model(model, data.test_images, data.test_masks, cfg.train.crop_size,
                                 cfg.train.eval_batch_size, visuals);
  EvaluationSummary s{ev.cm, report(ev.cm, data.train.catalog, cfg.include_background)};
  write_metrics_csv(s.report, out_dir / "metrics.csv");
  write_confusion_csv(ev.cm, data.train.catalog, out_dir / "confusion.csv");
  write_confusion_csv(ev.cm, data.train.catalog, out_dir / "confusion_log.csv", true);
  if (visuals) {
    const fs::path img_dir = out_dir / "images";
    fs::create_directories(img_dir);
    const std::size_t n = max_images < 0 ? ev.predictions.size()
                                         : std::min<std::size_t>(ev.predictions.size(),
                                                                 static_cast<std::size_t>(max_images));
    for (std::size_t i = 0; i < n; ++i) {
      const std::string id = data.test_images[i].id.empty() ? "image_" + std::to_string(i)
                                                            : data.test_images[i].id;
      save_overlay(ev.inputs[i], ev.predictions[i], img_dir / (id + "_overlay.png"));
      save_confidence_map(ev.confidence[i], img_dir / (id + "_confidence.png"));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Single run

struct RunOptions {
  fs::path resume;
  int max_images = 8;
  bool quiet = true;
};

struct RunResult {
  ExperimentConfig config;  // resolved
  std::vector<EpochRecord> history;
  EvaluationSummary evaluation;
};

// Train, then evaluate the final student (or teacher) on the test split.
inline RunResult run_experiment(ExperimentConfig cfg, const fs::path& out_dir,
                                const RunOptions& opts = {}) {
  if (out_dir.empty()) throw ConfigError("output directory is not set");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw IoError("cannot create output directory '" + out_dir.string() + "'");
  }
  PreparedData data = prepare_data(cfg);
  cfg.train.validate();
  cfg.out_dir = out_dir;
  write_resolved_config(cfg, out_dir / "config.resolved");
  save_manifest(data.manifest, out_dir / "split.tsv");

  TrainOptions topts;
  topts.out_dir = out_dir;
  topts.resume = opts.resume;
  topts.eval_images = &data.test_images;
  topts.eval_masks = &data.test_masks;
  topts.quiet = opts.quiet;
  TrainState state = train(data.train, cfg.train, topts);
  SegmentationModel& net = cfg.train.eval_teacher ? *state.teacher : *state.student;
  RunResult r{cfg, state.history, write_evaluation(net, data, cfg, out_dir, opts.max_images)};
  return r;
}

inline EvaluationSummary evaluate_checkpoint(ExperimentConfig cfg, const fs::path& ckpt,
                                             const fs::path& out_dir, int max_images = -1) {
  PreparedData data = prepare_data(cfg);
  auto model = load_network(ckpt, cfg.train.eval_teacher);
  if (model->num_classes() != data.train.catalog.total_classes()) {
    throw ConfigError("checkpoint predicts " + std::to_string(model->num_classes()) +
                      " classes, dataset has " +
                      std::to_string(data.train.catalog.total_classes()));
  }
  fs::create_directories(out_dir);
  cfg.out_dir = out_dir;
  write_resolved_config(cfg, out_dir / "config.resolved");
  return write_evaluation(*model, data, cfg, out_dir, max_images);
}

// ---------------------------------------------------------------------------
// CSV reading

// Comma-separated rows; double quotes group cells and "" escapes a quote.
inline std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char ch = line[i];
      if (ch == '"') {
        if (quoted && i + 1 < line.size() && line[i + 1] == '"') {
          cells.back() += '"';
          ++i;
        } else {
          quoted = !quoted;
        }
      } else if (ch == ',' && !quoted) {
        cells.emplace_back();
      } else {
        cells.back() += ch;
      }
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

// The "Average" row of a metrics.csv as {iou, precision, recall, f1}.
inline std::array<double, 4> read_average_metrics(const fs::path& metrics_csv) {
  for (const auto& row : read_csv(metrics_csv)) {
    if (row.size() == 5 && row[0] == "Average") {
      return {std::stod(row[1]), std::stod(row[2]), std::stod(row[3]), std::stod(row[4])};
    }
  }
  throw IoError("'" + metrics_csv.string() + "' has no Average row");
}

// ---------------------------------------------------------------------------
// Ablation sweeps

enum class SweepAxis { kThresholds, kLabelFraction, kConsistencyKind };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "thresholds") return SweepAxis::kThresholds;
  if (s == "label_fraction") return SweepAxis::kLabelFraction;
  if (s == "consistency_kind") return SweepAxis::kConsistencyKind;
  throw InvalidArgument("unknown ablation axis '" + s + "'");
}

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kThresholds: return "thresholds";
    case SweepAxis::kLabelFraction: return "label_fraction";
    case SweepAxis::kConsistencyKind: return "consistency_kind";
  }
  return "";
}

// Threshold rows are "t_pos,t_neg".
inline std::vector<std::string> default_sweep_values(SweepAxis a) {
  switch (a) {
    case SweepAxis::kThresholds:
      return {"0.0,0.0", "0.2,0.4", "0.3,0.2", "0.4,0.2", "0.5,0.5", "0.6,0.0"};
    case SweepAxis::kLabelFraction: return {"0.05", "0.10", "0.15", "0.20"};
    case SweepAxis::kConsistencyKind: return {"semice", "mse"};
  }
  return {};
}

struct SweepSpec {
  SweepAxis axis = SweepAxis::kThresholds;
  std::vector<std::string> values;  // empty: default grid of the axis
  fs::path base_config;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<std::string> overrides;  // applied before the sweep values
  int max_images = 0;
  bool quiet = true;
};

inline std::vector<std::string> sweep_overrides(SweepAxis axis, const std::string& value) {
  switch (axis) {
    case SweepAxis::kThresholds: {
      const auto comma = value.find(',');
      if (comma == std::string::npos) {
        throw InvalidArgument("threshold values are 't_pos,t_neg', got '" + value + "'");
      }
      return {"loss.t_pos=" + value.substr(0, comma), "loss.t_neg=" + value.substr(comma + 1)};
    }
    case SweepAxis::kLabelFraction: return {"data.labeled_fraction=" + value};
    case SweepAxis::kConsistencyKind: return {"loss.consistency=" + value};
  }
  return {};
}

struct SweepCell {
  std::string value;
  int ok = 0;
  int failed = 0;
  std::array<double, 4> mean{};
  std::array<double, 4> stddev{};
};

inline constexpr std::array<const char*, 4> kSummaryMetrics = {"iou", "precision", "recall",
                                                               "f1"};

namespace sweep_detail {

inline std::string cell_dir_name(std::size_t index, const std::string& value) {
  char prefix[8];
  std::snprintf(prefix, sizeof(prefix), "%02zu_", index);
  std::string slug = value;
  std::replace(slug.begin(), slug.end(), ',', '_');
  return prefix + slug;
}

inline std::string cell_value(const std::string& dir_name) {
  std::string v = dir_name.substr(dir_name.find('_') + 1);
  // Threshold cells hold two numbers joined by '_'.
  const auto us = v.find('_');
  if (us != std::string::npos && v.find_first_not_of("0123456789._") == std::string::npos) {
    v[us] = ',';
  }
  return v;
}

}  // namespace sweep_detail

// Aggregates <sweep_dir>/<NN_value>/seed_<s>/metrics.csv into summary.csv.
// A seed directory without metrics.csv counts as a failed run. Standard
// deviations use the n - 1 denominator (0 for a single run).
inline std::vector<SweepCell> summarize_sweep(const fs::path& sweep_dir) {
  std::vector<fs::path> cells;
  for (const auto& e : fs::directory_iterator(sweep_dir)) {
    if (e.is_directory()) cells.push_back(e.path());
  }
  std::sort(cells.begin(), cells.end());
  std::vector<SweepCell> out;
  for (const auto& cell_path : cells) {
    SweepCell cell;
    cell.value = sweep_detail::cell_value(cell_path.filename().string());
    std::vector<fs::path> seeds;
    for (const auto& e : fs::directory_iterator(cell_path)) {
      if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0) {
        seeds.push_back(e.path());
      }
    }
    std::sort(seeds.begin(), seeds.end());
    std::vector<std::array<double, 4>> runs;
    for (const auto& s : seeds) {
      const fs::path m = s / "metrics.csv";
      if (fs::exists(m)) {
        runs.push_back(read_average_metrics(m));
      } else {
        ++cell.failed;
      }
    }
    cell.ok = static_cast<int>(runs.size());
    for (std::size_t k = 0; k < 4; ++k) {
      double sum = 0.0;
      for (const auto& r : runs) sum += r[k];
      cell.mean[k] = runs.empty() ? 0.0 : sum / runs.size();
      double ss = 0.0;
      for (const auto& r : runs) ss += (r[k] - cell.mean[k]) * (r[k] - cell.mean[k]);
      cell.stddev[k] = runs.size() > 1 ? std::sqrt(ss / (runs.size() - 1)) : 0.0;
    }
    out.push_back(cell);
  }
  std::ofstream csv(sweep_dir / "summary.csv");
  if (!csv) throw IoError("cannot write summary in '" + sweep_dir.string() + "'");
  csv << "value,runs,failed,status";
  for (const char* m : kSummaryMetrics) csv << ',' << m << "_mean," << m << "_std";
  csv << '\n';
  for (const auto& c : out) {
    csv << '"' << c.value << '"' << ',' << c.ok << ',' << c.failed << ','
        << (c.ok == 0 ? "failed" : c.failed > 0 ? "partial" : "ok");
    for (std::size_t k = 0; k < 4; ++k) {
      csv << ',' << format_metric(c.mean[k]) << ',' << format_metric(c.stddev[k]);
    }
    csv << '\n';
  }
  return out;
}

// One plot per metric: mean with a +-std band drawn as two extra series.
inline void plot_sweep(const std::vector<SweepCell>& cells, SweepAxis axis,
                       const fs::path& sweep_dir) {
  for (std::size_t k = 0; k < 4; ++k) {
    Series mean{"mean", {}, {}};
    Series lo{"mean - std", {}, {}};
    Series hi{"mean + std", {}, {}};
    for (std::size_t i = 0; i < cells.size(); ++i) {
      double x = static_cast<double>(i);
      if (axis == SweepAxis::kLabelFraction) x = std::stod(cells[i].value);
      const double y = cells[i].ok > 0 ? cells[i].mean[k] : std::nan("");
      mean.x.push_back(x);
      mean.y.push_back(y);
      lo.x.push_back(x);
      lo.y.push_back(y - cells[i].stddev[k]);
      hi.x.push_back(x);
      hi.y.push_back(y + cells[i].stddev[k]);
    }
    const std::string xlabel =
        axis == SweepAxis::kLabelFraction ? "labeled fraction" : "grid row";
    save_line_plot({mean, lo, hi}, to_string(axis) + ": defect-class " + kSummaryMetrics[k],
                   xlabel, kSummaryMetrics[k],
                   sweep_dir / (std::string("summary_") + kSummaryMetrics[k] + ".png"));
  }
}

// Runs every (value, seed) pair; failures are logged and the sweep goes on.
inline std::vector<SweepCell> run_ablation(const SweepSpec& spec, const fs::path& out_dir) {
  const std::vector<std::string> values =
      spec.values.empty() ? default_sweep_values(spec.axis) : spec.values;
  if (values.empty()) throw InvalidArgument("sweep has no values");
  if (spec.seeds.empty()) throw InvalidArgument("sweep has no seeds");
  KeyValues base = read_key_values(spec.base_config);
  for (const auto& o : spec.overrides) apply_override(base, o);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const fs::path cell_dir = out_dir / sweep_detail::cell_dir_name(i, values[i]);
    for (std::uint64_t seed : spec.seeds) {
      const fs::path run_dir = cell_dir / ("seed_" + std::to_string(seed));
      fs::create_directories(run_dir);
      std::ofstream status(run_dir / "status.txt");
      try {
        KeyValues kv = base;
        for (const auto& o : sweep_overrides(spec.axis, values[i])) apply_override(kv, o);
        apply_override(kv, "train.seed=" + std::to_string(seed));
        RunOptions ro;
        ro.max_images = spec.max_images;
        ro.quiet = spec.quiet;
        run_experiment(experiment_from_key_values(kv), run_dir, ro);
        status << "ok\n";
      } catch (const std::exception& e) {
        fs::remove(run_dir / "metrics.csv");
        status << "failed: " << e.what() << '\n';
        std::fprintf(stderr, "run %s failed: %s\n", run_dir.string().c_str(), e.what());
      }
    }
  }
  std::vector<SweepCell> cells = summarize_sweep(out_dir);
  plot_sweep(cells, spec.axis, out_dir);
  return cells;
}

// ---------------------------------------------------------------------------
// Reports

// Writes <run_dir>/report: report.md, class_table.csv, loss.png,
// accuracy.png, miou.png and confusion_log.png. Returns the file list.
inline std::vector<fs::path> emit_report(const fs::path& run_dir) {
  const fs::path metrics = run_dir / "metrics.csv";
  const fs::path log = run_dir / "train_log.csv";
  const fs::path conf_log = run_dir / "confusion_log.csv";
  for (const auto& p : {metrics, log, conf_log}) {
    if (!fs::exists(p)) throw IoError("report input missing: '" + p.string() + "'");
  }
  const fs::path dir = run_dir / "report";
  fs::create_directories(dir);
  std::vector<fs::path> files;

  const auto mrows = read_csv(metrics);
  const auto lrows = read_csv(log);
  std::ofstream table(dir / "class_table.csv");
  std::ofstream md(dir / "report.md");
  if (!table || !md) throw IoError("cannot write report in '" + dir.string() + "'");
  md << "# Run report\n\nRun directory: `" << run_dir.filename().string() << "`\n\n";
  md << "| Class | IoU | Precision | Recall | F1 |\n|---|---|---|---|---|\n";
  table << "class,iou_pct,precision_pct,recall_pct,f1_pct\n";
  for (std::size_t i = 1; i < mrows.size(); ++i) {
    const auto& r = mrows[i];
    if (r.size() != 5) continue;
    md << "| " << r[0];
    table << r[0];
    for (std::size_t k = 1; k < 5; ++k) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * std::stod(r[k]));
      md << " | " << buf;
      table << ',' << buf;
    }
    md << " |\n";
    table << '\n';
  }
  Series loss_total{"total", {}, {}}, loss_sup{"supervised", {}, {}},
      loss_cons{"consistency", {}, {}}, acc{"pixel accuracy", {}, {}}, miou_s{"mIoU", {}, {}};
  for (std::size_t i = 1; i < lrows.size(); ++i) {
    const auto& r = lrows[i];
    if (r.size() != 7) continue;
    const double e = std::stod(r[0]);
    loss_total.x.push_back(e);
    loss_total.y.push_back(std::stod(r[2]));
    loss_sup.x.push_back(e);
    loss_sup.y.push_back(std::stod(r[3]));
    loss_cons.x.push_back(e);
    loss_cons.y.push_back(std::stod(r[4]));
    acc.x.push_back(e);
    acc.y.push_back(std::stod(r[5]));
    miou_s.x.push_back(e);
    miou_s.y.push_back(std::stod(r[6]));
  }
  md << "\n## Training\n\n";
  if (loss_total.x.empty()) {
    md << "No epochs were recorded; the curves are empty.\n";
  } else {
    md << "Epochs: " << loss_total.x.size() << ". Final total loss "
       << format_metric(loss_total.y.back()) << ", final mIoU "
       << format_metric(miou_s.y.back()) << ".\n";
  }
  md << "\n![loss](loss.png) ![accuracy](accuracy.png) ![miou](miou.png)\n";
  md << "\n## Confusion matrix (natural log of pixel counts)\n\n![confusion](confusion_log.png)\n";

  save_line_plot({loss_total, loss_sup, loss_cons}, "Training loss", "epoch", "loss",
                 dir / "loss.png");
  save_line_plot({acc}, "Pixel accuracy", "epoch", "accuracy", dir / "accuracy.png");
  save_line_plot({miou_s}, "Defect-class mIoU", "epoch", "mIoU", dir / "miou.png");

  const auto crows = read_csv(conf_log);
  std::vector<std::string> labels;
  std::vector<std::vector<double>> values;
  for (std::size_t i = 1; i < crows.size(); ++i) {
    labels.push_back(crows[i][0]);
    std::vector<double> row;
    for (std::size_t k = 1; k < crows[i].size(); ++k) row.push_back(std::stod(crows[i][k]));
    values.push_back(row);
  }
  save_heatmap(values, labels, "ln(pixel count), rows = truth", dir / "confusion_log.png");
  for (const char* f : {"report.md", "class_table.csv", "loss.png", "accuracy.png", "miou.png",
                        "confusion_log.png"}) {
    files.push_back(dir / f);
  }
  return files;
}

}  // namespace pvseg
