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
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "pvseg/experiment.hpp"
#include "pvseg/synthetic.hpp"
#include "test_util.hpp"

namespace pvseg {
namespace {

using testing::TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Config, ParsesIncludesAndResolvesPaths) {
  TempDir dir;
  fs::create_directories(dir / "sub");
  std::ofstream(dir / "sub" / "base.cfg") << "# base\n"
                                              "train.epochs = 7\n"
                                              "train.lr = 0.25   # trailing comment\n"
                                              "data.manifest = data/train.tsv\n";
  std::ofstream(dir / "top.cfg") << "include sub/base.cfg\n"
                                    "train.epochs = 3\n"
                                    "loss.consistency = mse\n"
                                    "loss.mean_over = all\n"
                                    "aug.blur_kernel = 3,5\n"
                                    "eval.network = teacher\n";
  const ExperimentConfig c = load_experiment_config(dir / "top.cfg", {"train.batch_size=5"});
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.lr, 0.25);
  EXPECT_EQ(c.train.batch_size, 5);
  EXPECT_EQ(c.train.consistency, ConsistencyKind::kMSE);
  EXPECT_EQ(c.train.semice.mean_over, MeanOver::kAll);
  EXPECT_EQ(c.train.aug.blur_kernel_range, (std::pair<int, int>{3, 5}));
  EXPECT_TRUE(c.train.eval_teacher);
  EXPECT_EQ(c.data.manifest, (dir / "sub" / "data" / "train.tsv").lexically_normal());
}

TEST(Config, RejectsBadInput) {
  TempDir dir;
  std::ofstream(dir / "a.cfg") << "train.epoch = 3\n";
  EXPECT_THROW(load_experiment_config(dir / "a.cfg"), ConfigError);
  std::ofstream(dir / "b.cfg") << "train.epochs 3\n";
  EXPECT_THROW(load_experiment_config(dir / "b.cfg"), ConfigError);
  std::ofstream(dir / "c.cfg") << "train.epochs = three\n";
  EXPECT_THROW(load_experiment_config(dir / "c.cfg"), ConfigError);
  std::ofstream(dir / "d.cfg") << "include d.cfg\n";
  EXPECT_THROW(load_experiment_config(dir / "d.cfg"), ConfigError);
  std::ofstream(dir / "e.cfg") << "loss.consistency = l2\n";
  EXPECT_THROW(load_experiment_config(dir / "e.cfg"), ConfigError);
  std::ofstream(dir / "f.cfg") << "model.backbone = resnet\n";
  EXPECT_THROW(load_experiment_config(dir / "f.cfg"), ConfigError);
  EXPECT_THROW(load_experiment_config(dir / "missing.cfg"), ConfigError);
  std::ofstream(dir / "ok.cfg") << "train.epochs = 1\n";
  EXPECT_THROW(load_experiment_config(dir / "ok.cfg", {"nope=1"}), ConfigError);
  EXPECT_THROW(load_experiment_config(dir / "ok.cfg", {"train.epochs"}), ConfigError);
}

TEST(Config, ResolvedConfigRoundTrips) {
  TempDir dir;
  ExperimentConfig c;
  c.data.manifest = dir / "train.tsv";
  c.data.labeled_fraction = 0.15;
  c.data.classes = {"background", "crack"};
  c.train.semice.t_pos = 0.35;
  c.train.semice.t_neg = 0.15;
  c.train.lr = 0.0123;
  c.train.aug.blur_sigma_range = {0.2, 1.7};
  c.train.lambda_rampup_epochs = 4.5;
  c.include_background = true;
  write_resolved_config(c, dir / "r.cfg");
  const ExperimentConfig back = load_experiment_config(dir / "r.cfg");
  EXPECT_EQ(experiment_to_key_values(back), experiment_to_key_values(c));
  EXPECT_EQ(back.train.lr, 0.0123);
  EXPECT_EQ(back.data.classes, c.data.classes);
}

TEST(Sweep, OverridesPerAxis) {
  EXPECT_EQ(sweep_overrides(SweepAxis::kThresholds, "0.3,0.2"),
            (std::vector<std::string>{"loss.t_pos=0.3", "loss.t_neg=0.2"}));
  EXPECT_EQ(sweep_overrides(SweepAxis::kLabelFraction, "0.05"),
            (std::vector<std::string>{"data.labeled_fraction=0.05"}));
  EXPECT_EQ(sweep_overrides(SweepAxis::kConsistencyKind, "mse"),
            (std::vector<std::string>{"loss.consistency=mse"}));
  EXPECT_THROW(sweep_overrides(SweepAxis::kThresholds, "0.3"), InvalidArgument);
  EXPECT_EQ(default_sweep_values(SweepAxis::kThresholds).size(), 6u);
  EXPECT_EQ(parse_sweep_axis("label_fraction"), SweepAxis::kLabelFraction);
  EXPECT_THROW(parse_sweep_axis("depth"), InvalidArgument);
}

TEST(Sweep, CellNamesRoundTrip) {
  using sweep_detail::cell_dir_name;
  using sweep_detail::cell_value;
  EXPECT_EQ(cell_dir_name(3, "0.3,0.2"), "03_0.3_0.2");
  EXPECT_EQ(cell_value("03_0.3_0.2"), "0.3,0.2");
  EXPECT_EQ(cell_value("01_mse"), "mse");
  EXPECT_EQ(cell_value("00_0.05"), "0.05");
}

void write_metrics(const fs::path& dir, double iou, double p, double r, double f1) {
  fs::create_directories(dir);
  std::ofstream(dir / "metrics.csv") << "class,iou,precision,recall,f1\n"
                                     << "crack,0.1,0.1,0.1,0.1\n"
                                     << "Average," << iou << ',' << p << ',' << r << ',' << f1
                                     << '\n';
}

TEST(Sweep, SummaryMeanAndSampleStd) {
  TempDir dir;
  write_metrics(dir / "00_0.2_0.4" / "seed_1", 0.2, 0.5, 0.5, 0.5);
  write_metrics(dir / "00_0.2_0.4" / "seed_2", 0.4, 0.5, 0.5, 0.5);
  write_metrics(dir / "00_0.2_0.4" / "seed_3", 0.6, 0.5, 0.5, 0.5);
  write_metrics(dir / "01_0.6_0.0" / "seed_1", 0.3, 0.3, 0.3, 0.3);
  fs::create_directories(dir / "01_0.6_0.0" / "seed_2");
  fs::create_directories(dir / "02_0.5_0.5" / "seed_1");
  const auto cells = summarize_sweep(dir.path());
  ASSERT_EQ(cells.size(), 3u);
  EXPECT_EQ(cells[0].value, "0.2,0.4");
  EXPECT_EQ(cells[0].ok, 3);
  EXPECT_NEAR(cells[0].mean[0], 0.4, 1e-12);
  EXPECT_NEAR(cells[0].stddev[0], 0.2, 1e-12);
  EXPECT_EQ(cells[0].stddev[1], 0.0);
  EXPECT_EQ(cells[1].ok, 1);
  EXPECT_EQ(cells[1].failed, 1);
  EXPECT_EQ(cells[1].stddev[0], 0.0);
  EXPECT_EQ(cells[2].ok, 0);
  const std::string csv = slurp(dir / "summary.csv");
  EXPECT_NE(csv.find("value,runs,failed,status,iou_mean,iou_std,precision_mean"),
            std::string::npos);
  EXPECT_NE(csv.find("\"0.2,0.4\",3,0,ok,0.400000,0.200000"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\"0.6,0.0\",1,1,partial"), std::string::npos);
  EXPECT_NE(csv.find("\"0.5,0.5\",0,1,failed"), std::string::npos);
  const auto rows = read_csv(dir / "summary.csv");
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) EXPECT_EQ(r.size(), 12u);
  EXPECT_EQ(rows[1][0], "0.2,0.4");
}

TEST(Csv, QuotedCellsKeepCommas) {
  TempDir dir;
  std::ofstream(dir / "q.csv") << "value,runs\n\"0.2,0.4\",3\n\"say \"\"hi\"\"\",\n";
  const auto rows = read_csv(dir / "q.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1], (std::vector<std::string>{"0.2,0.4", "3"}));
  EXPECT_EQ(rows[2], (std::vector<std::string>{"say \"hi\"", ""}));
}

TEST(Sweep, MissingAverageRowIsAnError) {
  TempDir dir;
  std::ofstream(dir / "m.csv") << "class,iou,precision,recall,f1\n";
  EXPECT_THROW(read_average_metrics(dir / "m.csv"), IoError);
}

class RunTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SynthConfig sc;
    sc.count = 12;
    sc.test_count = 4;
    sc.height = sc.width = 32;
    generate_synthetic_corpus(sc, dir_ / "data");
    cfg_.data.manifest = dir_ / "data" / "train.tsv";
    cfg_.data.test_manifest = dir_ / "data" / "test.tsv";
    cfg_.data.labeled_fraction = 0.5;
    cfg_.data.split_seed = 3;
    cfg_.train.epochs = 1;
    cfg_.train.batch_size = 4;
    cfg_.train.lr = 0.02;
    cfg_.train.base_size = 32;
    cfg_.train.crop_size = 32;
    cfg_.train.eval_batch_size = 4;
  }

  TempDir dir_;
  ExperimentConfig cfg_;
};

TEST_F(RunTest, WritesArtifactsAndReport) {
  const RunResult r = run_experiment(cfg_, dir_ / "run");
  EXPECT_EQ(r.config.train.backbone.num_classes, 4);
  ASSERT_EQ(r.history.size(), 1u);
  for (const char* f : {"config.resolved", "split.tsv", "train_log.csv", "metrics.csv",
                        "confusion_log.csv", "checkpoints/last.ckpt"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }
  const auto avg = read_average_metrics(dir_ / "run" / "metrics.csv");
  EXPECT_NEAR(avg[0], r.evaluation.report.average.iou, 1e-6);
  const auto files = emit_report(dir_ / "run");
  EXPECT_EQ(files.size(), 6u);
  for (const auto& f : files) EXPECT_TRUE(fs::exists(f)) << f;
  EXPECT_NE(slurp(dir_ / "run" / "report" / "report.md").find("Epochs: 1."), std::string::npos);

  const ExperimentConfig again = load_experiment_config(dir_ / "run" / "config.resolved");
  const auto ev = evaluate_checkpoint(again, dir_ / "run" / "checkpoints" / "last.ckpt",
                                      dir_ / "eval", 0);
  EXPECT_EQ(slurp(dir_ / "eval" / "metrics.csv"), slurp(dir_ / "run" / "metrics.csv"));
  EXPECT_NEAR(ev.report.average.iou, avg[0], 1e-6);
}

TEST_F(RunTest, ZeroEpochRunStillReports) {
  cfg_.train.epochs = 0;
  run_experiment(cfg_, dir_ / "run0");
  emit_report(dir_ / "run0");
  EXPECT_NE(slurp(dir_ / "run0" / "report" / "report.md").find("No epochs were recorded"),
            std::string::npos);
}

TEST_F(RunTest, MissingReportInputs) {
  fs::create_directories(dir_ / "empty");
  EXPECT_THROW(emit_report(dir_ / "empty"), IoError);
}

TEST_F(RunTest, AblationWritesSummary) {
  write_resolved_config(cfg_, dir_ / "base.cfg");
  SweepSpec spec;
  spec.axis = SweepAxis::kConsistencyKind;
  spec.base_config = dir_ / "base.cfg";
  spec.seeds = {1, 2};
  spec.overrides = {"train.epochs=1"};
  spec.max_images = 0;
  const auto cells = run_ablation(spec, dir_ / "sweep");
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].value, "semice");
  EXPECT_EQ(cells[1].value, "mse");
  EXPECT_EQ(cells[0].ok, 2);
  EXPECT_TRUE(fs::exists(dir_ / "sweep" / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "sweep" / "summary_iou.png"));
  EXPECT_EQ(slurp(dir_ / "sweep" / "01_mse" / "seed_2" / "status.txt"), "ok\n");
}

}  // namespace
}  // namespace pvseg
