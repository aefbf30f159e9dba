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

#include <cmath>
#include <fstream>
#include <limits>

#include "pvseg/synthetic.hpp"
#include "pvseg/trainer.hpp"
#include "test_util.hpp"

namespace pvseg {
namespace {

using testing::TempDir;

InMemoryDataset small_dataset(int labeled, int unlabeled, int size = 32) {
  SynthConfig sc;
  sc.height = sc.width = size;
  InMemoryDataset ds;
  ds.catalog = ClassCatalog::synthetic(sc.num_classes);
  for (int i = 0; i < labeled + unlabeled; ++i) {
    auto [img, mask] = render_synthetic_sample(sc, i);
    if (i < labeled) {
      ds.labeled_images.push_back(std::move(img));
      ds.labeled_masks.push_back(std::move(mask));
    } else {
      ds.unlabeled_images.push_back(std::move(img));
    }
  }
  return ds;
}

TrainerConfig small_config() {
  TrainerConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  c.lr = 0.02;
  c.base_size = 32;
  c.crop_size = 24;
  c.eval_batch_size = 4;
  c.backbone.num_classes = 4;
  return c;
}

TEST(Ema, ClosedFormWithConstantStudent) {
  for (double alpha : {0.9, 0.99}) {
    Rng rng(1);
    std::vector<double> student(50), teacher(50), start(50);
    for (std::size_t i = 0; i < 50; ++i) {
      student[i] = rng.normal(0, 1);
      start[i] = teacher[i] = rng.normal(0, 1);
    }
    for (int k = 1; k <= 100; ++k) {
      ema_update<double>(teacher, student, alpha);
      double err = 0.0;
      for (std::size_t i = 0; i < 50; ++i) {
        const double want = std::pow(alpha, k) * std::abs(start[i] - student[i]);
        err = std::max(err, std::abs(std::abs(teacher[i] - student[i]) - want));
      }
      ASSERT_LT(err, 1e-6) << "alpha " << alpha << " step " << k;
    }
  }
}

TEST(Ema, ModelLevelClosedFormIncludesBuffers) {
  BackboneSpec spec;
  auto student = create_model(spec, 1);
  auto teacher = create_model(spec, 2);
  student->forward(Tensor<float>(2, 3, 16, 16, 0.5f), Mode::kTrain);  // moves BN buffers
  const auto s = student->parameter_vector();
  const auto t0 = teacher->parameter_vector();
  const auto sb = student->buffer_vector();
  const auto tb0 = teacher->buffer_vector();
  const double alpha = 0.9;
  for (int k = 1; k <= 100; ++k) {
    ema_update(*teacher, *student, alpha);
    const auto t = teacher->parameter_vector();
    const auto tb = teacher->buffer_vector();
    double err = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      err = std::max(err, std::abs(std::abs(static_cast<double>(t[i]) - s[i]) -
                                   std::pow(alpha, k) * std::abs(static_cast<double>(t0[i]) - s[i])));
    }
    for (std::size_t i = 0; i < sb.size(); ++i) {
      err = std::max(err, std::abs(std::abs(static_cast<double>(tb[i]) - sb[i]) -
                                   std::pow(alpha, k) * std::abs(static_cast<double>(tb0[i]) - sb[i])));
    }
    ASSERT_LT(err, 1e-6) << "step " << k;
  }
}

TEST(Ema, RejectsMismatch) {
  std::vector<float> a(3), b(4);
  EXPECT_THROW(ema_update<float>(a, b, 0.9), ShapeMismatch);
  std::vector<float> c(3);
  EXPECT_THROW(ema_update<float>(a, c, 1.5), InvalidArgument);
  BackboneSpec s3;
  s3.num_classes = 3;
  auto m3 = create_model(s3, 1);
  auto m4 = create_model(BackboneSpec{}, 1);
  EXPECT_THROW(ema_update(*m3, *m4, 0.9), ShapeMismatch);
}

TEST(Sgd, MomentumAndWeightDecay) {
  BackboneSpec spec;
  auto m = create_model(spec, 1);
  std::vector<float> v(m->parameter_count(), 0.0f);
  auto* p = m->parameters().front();
  const float p0 = p->value[0];
  p->grad[0] = 0.5f;
  sgd_step(*m, v, 0.1, 0.9, 0.01);
  const float v1 = 0.5f + 0.01f * p0;
  EXPECT_FLOAT_EQ(v[0], v1);
  EXPECT_FLOAT_EQ(p->value[0], p0 - 0.1f * v1);
  const float p1 = p->value[0];
  sgd_step(*m, v, 0.1, 0.9, 0.01);
  const float v2 = 0.9f * v1 + 0.5f + 0.01f * p1;
  EXPECT_FLOAT_EQ(v[0], v2);
  EXPECT_FLOAT_EQ(p->value[0], p1 - 0.1f * v2);
  std::vector<float> wrong(3);
  EXPECT_THROW(sgd_step(*m, wrong, 0.1, 0.9, 0.0), ShapeMismatch);
}

StepBatch fixed_batch(const InMemoryDataset& ds, int n, std::uint64_t seed, bool unlabeled) {
  MinibatchSampler sampler(ds.labeled_images.size(), ds.unlabeled_images.size(), seed);
  Rng rng(seed);
  return make_step_batch(ds, sampler.next(n), 24, rng, unlabeled);
}

TEST(TrainStep, TeacherChangesOnlyThroughEma) {
  const InMemoryDataset ds = small_dataset(4, 4);
  TrainerConfig cfg = small_config();
  TrainState st = init_train_state(cfg);
  const StepBatch batch = fixed_batch(ds, 2, 1, true);
  for (int step = 0; step < 3; ++step) {
    const auto teacher_before = st.teacher->parameter_vector();
    const auto buffers_before = st.teacher->buffer_vector();
    train_step(st, batch, cfg);
    const auto student = st.student->parameter_vector();
    const auto student_buf = st.student->buffer_vector();
    const auto teacher = st.teacher->parameter_vector();
    const auto teacher_buf = st.teacher->buffer_vector();
    for (std::size_t i = 0; i < teacher.size(); ++i) {
      const float want = static_cast<float>(0.99 * teacher_before[i] + (1.0 - 0.99) * student[i]);
      ASSERT_EQ(teacher[i], want);
    }
    for (std::size_t i = 0; i < teacher_buf.size(); ++i) {
      ASSERT_EQ(teacher_buf[i], static_cast<float>(0.99 * buffers_before[i] + (1.0 - 0.99) * student_buf[i]));
    }
  }
  EXPECT_EQ(st.global_step, 3);
}

TEST(TrainStep, SupervisedOnlyCollapsesToPlainSgd) {
  const InMemoryDataset ds = small_dataset(4, 4);
  TrainerConfig cfg = small_config();
  cfg.semice.lambda_consistency = 0.0;
  cfg.cutmix_labeled = false;
  cfg.aug.jitter_max_delta = 0.0;
  cfg.aug.grayscale_prob = 0.0;
  cfg.aug.blur_kernel_range = {1, 1};
  TrainState st = init_train_state(cfg);
  auto replica = create_model(cfg.backbone, cfg.seed);
  std::vector<float> velocity(replica->parameter_count(), 0.0f);
  for (int step = 0; step < 3; ++step) {
    const StepBatch batch = fixed_batch(ds, 2, 10 + step, false);
    EXPECT_EQ(batch.unlabeled_images.batch(), 0);
    const StepLosses l = train_step(st, batch, cfg);
    const Tensor<float> logits = replica->forward(normalize(batch.labeled_images), Mode::kTrain);
    const auto ce = supervised_ce(logits, batch.labeled_targets);
    replica->zero_grad();
    replica->backward(ce.grad);
    sgd_step(*replica, velocity, cfg.lr, cfg.momentum, cfg.weight_decay);
    EXPECT_EQ(l.supervised, ce.value);
    EXPECT_EQ(l.total, ce.value);
    EXPECT_EQ(l.consistency, 0.0);
    ASSERT_EQ(st.student->parameter_vector(), replica->parameter_vector());
    ASSERT_EQ(st.student->buffer_vector(), replica->buffer_vector());
  }
}

TEST(TrainStep, ConsistencyTermIsReported) {
  const InMemoryDataset ds = small_dataset(4, 4);
  TrainerConfig cfg = small_config();
  TrainState st = init_train_state(cfg);
  const StepLosses l = train_step(st, fixed_batch(ds, 2, 3, true), cfg);
  EXPECT_GT(l.consistency, 0.0);
  EXPECT_NEAR(l.consistency, l.positive + l.negative, 1e-6);
  EXPECT_NEAR(l.total, l.supervised + 1.5 * l.consistency, 1e-5);
  cfg.consistency = ConsistencyKind::kMSE;
  const StepLosses m = train_step(st, fixed_batch(ds, 2, 3, true), cfg);
  EXPECT_GT(m.consistency, 0.0);
  EXPECT_EQ(m.negative, 0.0);
}

TEST(TrainStep, NonFiniteLossesAreDiagnosed) {
  const InMemoryDataset ds = small_dataset(4, 4);
  TrainerConfig cfg = small_config();
  const StepBatch batch = fixed_batch(ds, 2, 4, true);
  {
    TrainState st = init_train_state(cfg);
    st.teacher->parameters().back()->value[0] = std::numeric_limits<float>::quiet_NaN();
    try {
      train_step(st, batch, cfg);
      FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
      EXPECT_NE(std::string(e.what()).find("teacher logits"), std::string::npos) << e.what();
    }
  }
  {
    TrainState st = init_train_state(cfg);
    st.student->parameters().back()->value[0] = std::numeric_limits<float>::infinity();
    try {
      train_step(st, batch, cfg);
      FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
      EXPECT_NE(std::string(e.what()).find("supervised"), std::string::npos) << e.what();
    }
  }
}

TEST(TrainStep, EmptyLabeledBatchThrows) {
  TrainerConfig cfg = small_config();
  TrainState st = init_train_state(cfg);
  EXPECT_THROW(train_step(st, StepBatch{}, cfg), DatasetError);
}

TEST(Rampup, SigmoidShape) {
  EXPECT_EQ(lambda_rampup(5, 0.0), 1.0);
  EXPECT_NEAR(lambda_rampup(0, 100.0), std::exp(-5.0), 1e-12);
  EXPECT_NEAR(lambda_rampup(50, 100.0), std::exp(-1.25), 1e-12);
  EXPECT_EQ(lambda_rampup(100, 100.0), 1.0);
  EXPECT_EQ(lambda_rampup(500, 100.0), 1.0);
}

TEST(Trainer, StepsPerEpochCoverLargerPool) {
  EXPECT_EQ(steps_per_epoch(40, 160, 16), 10);
  EXPECT_EQ(steps_per_epoch(40, 0, 16), 3);
  EXPECT_EQ(steps_per_epoch(200, 100, 4), 50);
}

TEST(Trainer, ConfigValidation) {
  TrainerConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.crop_size = 64;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.semice.t_neg = 2.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Trainer, ClassCountMustMatchDataset) {
  const InMemoryDataset ds = small_dataset(2, 0);
  TrainerConfig cfg = small_config();
  cfg.backbone.num_classes = 3;
  EXPECT_THROW(train(ds, cfg), ConfigError);
}

TEST(Trainer, RepeatedRunsAreIdentical) {
  const InMemoryDataset ds = small_dataset(4, 6);
  const TrainerConfig cfg = small_config();
  TrainState a = train(ds, cfg);
  TrainState b = train(ds, cfg);
  EXPECT_EQ(a.student->parameter_vector(), b.student->parameter_vector());
  EXPECT_EQ(a.teacher->buffer_vector(), b.teacher->buffer_vector());
  ASSERT_EQ(a.history.size(), 2u);
  EXPECT_EQ(a.history[1].loss_total, b.history[1].loss_total);
  EXPECT_EQ(a.history[1].step, 6);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  TempDir dir;
  const InMemoryDataset ds = small_dataset(4, 6);
  TrainerConfig cfg = small_config();
  cfg.epochs = 4;
  TrainOptions full;
  full.out_dir = dir / "full";
  TrainState straight = train(ds, cfg, full);

  TrainerConfig first = cfg;
  first.epochs = 2;
  TrainOptions part;
  part.out_dir = dir / "part";
  train(ds, first, part);
  TrainOptions rest;
  rest.out_dir = dir / "part";
  rest.resume = dir / "part" / "checkpoints" / "last.ckpt";
  TrainState resumed = train(ds, cfg, rest);

  EXPECT_EQ(resumed.global_step, straight.global_step);
  EXPECT_EQ(resumed.student->parameter_vector(), straight.student->parameter_vector());
  EXPECT_EQ(resumed.teacher->parameter_vector(), straight.teacher->parameter_vector());
  EXPECT_EQ(resumed.velocity, straight.velocity);
  ASSERT_EQ(resumed.history.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(resumed.history[i].loss_total, straight.history[i].loss_total);
    EXPECT_EQ(resumed.history[i].miou, straight.history[i].miou);
  }
  std::ifstream a(dir / "full" / "train_log.csv"), b(dir / "part" / "train_log.csv");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_TRUE(fs::exists(dir / "full" / "checkpoints" / "epoch_004.ckpt"));
}

TEST(Trainer, ZeroEpochsReturnsInitialState) {
  TempDir dir;
  const InMemoryDataset ds = small_dataset(2, 2);
  TrainerConfig cfg = small_config();
  cfg.epochs = 0;
  TrainOptions o;
  o.out_dir = dir.path();
  TrainState st = train(ds, cfg, o);
  EXPECT_TRUE(st.history.empty());
  EXPECT_EQ(st.student->parameter_vector(), init_train_state(cfg).student->parameter_vector());
  std::ifstream log(dir / "train_log.csv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, kTrainLogHeader);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  const InMemoryDataset ds = small_dataset(2, 2);
  TrainerConfig cfg = small_config();
  cfg.epochs = 1;
  TrainState st = train(ds, cfg);
  save_train_state(st, cfg, dir / "a.ckpt");
  TrainState back = load_train_state(dir / "a.ckpt", cfg);
  EXPECT_EQ(back.student->parameter_vector(), st.student->parameter_vector());
  EXPECT_EQ(back.student->buffer_vector(), st.student->buffer_vector());
  EXPECT_EQ(back.teacher->parameter_vector(), st.teacher->parameter_vector());
  EXPECT_EQ(back.teacher->buffer_vector(), st.teacher->buffer_vector());
  EXPECT_EQ(back.velocity, st.velocity);
  EXPECT_EQ(back.epoch, 1);
  EXPECT_EQ(back.global_step, st.global_step);
  EXPECT_EQ(back.sampler.labeled_consumed, st.sampler.labeled_consumed);
  ASSERT_EQ(back.history.size(), 1u);
  EXPECT_EQ(back.history[0].loss_total, st.history[0].loss_total);
  save_train_state(back, cfg, dir / "b.ckpt");
  std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
  std::stringstream a, b;
  a << fa.rdbuf();
  b << fb.rdbuf();
  EXPECT_EQ(a.str(), b.str());
  auto teacher = load_network(dir / "a.ckpt", true);
  EXPECT_EQ(teacher->parameter_vector(), st.teacher->parameter_vector());
}

TEST(Checkpoint, CorruptionAndMismatchAreErrors) {
  TempDir dir;
  TrainerConfig cfg = small_config();
  TrainState st = init_train_state(cfg);
  save_train_state(st, cfg, dir / "a.ckpt");
  {
    std::fstream f(dir / "a.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    f.put('\x7f');
  }
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt"), IoError);
  std::ofstream(dir / "junk.ckpt") << "hello";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
  save_train_state(st, cfg, dir / "b.ckpt");
  TrainerConfig other = cfg;
  other.backbone.num_classes = 5;
  EXPECT_THROW(load_train_state(dir / "b.ckpt", other), ShapeMismatch);
  const Checkpoint ck = load_checkpoint(dir / "b.ckpt");
  EXPECT_EQ(ck.header.at("model").at("architecture"), "tiny/c4");
  EXPECT_THROW(ck.section("nope"), IoError);
}

}  // namespace
}  // namespace pvseg
