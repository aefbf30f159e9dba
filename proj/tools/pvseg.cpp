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

// pvseg command-line front end.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pvseg/pvseg.hpp"

namespace {

int fail(const std::string& kind, const std::string& message) {
  nlohmann::json line = {{"status", "error"}, {"kind", kind}, {"message", message}};
  std::cerr << line.dump() << std::endl;
  return 2;
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised segmentation of PV electroluminescence defects"};
  app.require_subcommand(1);

  // synth-data
  pvseg::SynthConfig synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth-data", "Render a synthetic EL defect corpus");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--count", synth.count, "Training images")->capture_default_str();
  synth_cmd->add_option("--test-count", synth.test_count, "Held-out test images")
      ->capture_default_str();
  int synth_size = 64;
  synth_cmd->add_option("--size", synth_size, "Image height and width")->capture_default_str();
  synth_cmd->add_option("--classes", synth.num_classes, "Defect classes (1-4)")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();

  // train
  std::string config_path;
  std::string resume;
  std::string out_dir;
  std::vector<std::string> overrides;
  bool verbose = false;
  int max_images = 8;
  auto* train_cmd = app.add_subcommand("train", "Run mean-teacher training and evaluation");
  train_cmd->add_option("--config", config_path, "Experiment config")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from");
  train_cmd->add_option("--out", out_dir, "Run directory (default: output.dir)");
  train_cmd->add_option("--set", overrides, "key=value override")->take_all();
  train_cmd->add_option("--max-images", max_images, "Overlay/confidence images to write")
      ->capture_default_str();
  train_cmd->add_flag("-v,--verbose", verbose, "Per-epoch progress on stderr");

  // evaluate
  std::string ckpt;
  std::string eval_network;
  bool include_background = false;
  int eval_max_images = -1;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  eval_cmd->add_option("--config", config_path, "Experiment config")->required();
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--out", out_dir, "Output directory")->required();
  eval_cmd->add_option("--set", overrides, "key=value override")->take_all();
  eval_cmd->add_option("--eval-network", eval_network, "student or teacher")
      ->check(CLI::IsMember({"student", "teacher"}));
  eval_cmd->add_flag("--include-background", include_background,
                     "Include background in the averages");
  eval_cmd->add_option("--max-images", eval_max_images,
                       "Overlay/confidence images to write (-1: all)")
      ->capture_default_str();

  // ablate
  std::string axis;
  std::string values;
  std::string seeds = "1,2,3";
  int ablate_max_images = 0;
  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep one axis over several seeds");
  ablate_cmd->add_option("--axis", axis, "Sweep axis")
      ->required()
      ->check(CLI::IsMember({"thresholds", "label_fraction", "consistency_kind"}));
  ablate_cmd->add_option("--config", config_path, "Base experiment config")->required();
  ablate_cmd->add_option("--out", out_dir, "Sweep directory")->required();
  ablate_cmd->add_option("--values", values,
                         "Semicolon-separated values (thresholds as t_pos,t_neg)");
  ablate_cmd->add_option("--seeds", seeds, "Comma-separated seeds")->capture_default_str();
  ablate_cmd->add_option("--set", overrides, "key=value override")->take_all();
  ablate_cmd->add_option("--max-images", ablate_max_images)->capture_default_str();
  ablate_cmd->add_flag("-v,--verbose", verbose);

  // report
  std::string run_dir;
  auto* report_cmd = app.add_subcommand("report", "Render tables and plots for a run");
  report_cmd->add_option("--run", run_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*synth_cmd) {
      synth.height = synth.width = synth_size;
      const pvseg::SynthCorpus corpus = pvseg::generate_synthetic_corpus(synth, synth_out);
      nlohmann::json done = {{"status", "ok"},
                             {"train", corpus.train.labeled.size()},
                             {"test", corpus.test.labeled.size()},
                             {"classes", corpus.catalog.joined()}};
      std::cout << done.dump() << std::endl;
    } else if (*train_cmd) {
      pvseg::ExperimentConfig cfg = pvseg::load_experiment_config(config_path, overrides);
      const std::filesystem::path dir = out_dir.empty() ? cfg.out_dir : std::filesystem::path(out_dir);
      pvseg::RunOptions ro;
      ro.resume = resume;
      ro.quiet = !verbose;
      ro.max_images = max_images;
      const pvseg::RunResult r = pvseg::run_experiment(cfg, dir, ro);
      const auto& avg = r.evaluation.report.average;
      nlohmann::json done = {{"status", "ok"},       {"run_dir", dir.string()},
                             {"epochs", r.history.size()}, {"miou", avg.iou},
                             {"precision", avg.precision}, {"recall", avg.recall},
                             {"f1", avg.f1}};
      std::cout << done.dump() << std::endl;
    } else if (*eval_cmd) {
      pvseg::ExperimentConfig cfg = pvseg::load_experiment_config(config_path, overrides);
      if (!eval_network.empty()) cfg.train.eval_teacher = eval_network == "teacher";
      if (include_background) cfg.include_background = true;
      const auto s = pvseg::evaluate_checkpoint(cfg, ckpt, out_dir, eval_max_images);
      nlohmann::json done = {{"status", "ok"},
                             {"miou", s.report.average.iou},
                             {"precision", s.report.average.precision},
                             {"recall", s.report.average.recall},
                             {"f1", s.report.average.f1},
                             {"pixel_accuracy", s.report.pixel_accuracy}};
      if (!s.report.excluded.empty()) done["excluded_classes"] = s.report.excluded;
      std::cout << done.dump() << std::endl;
    } else if (*ablate_cmd) {
      pvseg::SweepSpec spec;
      spec.axis = pvseg::parse_sweep_axis(axis);
      spec.values = split_list(values, ';');
      spec.base_config = config_path;
      spec.seeds.clear();
      for (const auto& s : split_list(seeds, ',')) spec.seeds.push_back(std::stoull(s));
      spec.overrides = overrides;
      spec.max_images = ablate_max_images;
      spec.quiet = !verbose;
      const auto cells = pvseg::run_ablation(spec, out_dir);
      nlohmann::json done = {{"status", "ok"},
                             {"summary", (std::filesystem::path(out_dir) / "summary.csv").string()},
                             {"rows", cells.size()}};
      int failed = 0;
      for (const auto& c : cells) failed += c.failed;
      done["failed_runs"] = failed;
      std::cout << done.dump() << std::endl;
    } else if (*report_cmd) {
      const auto files = pvseg::emit_report(run_dir);
      nlohmann::json list = nlohmann::json::array();
      for (const auto& f : files) list.push_back(f.string());
      std::cout << nlohmann::json{{"status", "ok"}, {"files", list}}.dump() << std::endl;
    }
  } catch (const pvseg::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
