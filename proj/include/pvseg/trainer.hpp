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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pvseg/augmentation.hpp"
#include "pvseg/checkpoint.hpp"
#include "pvseg/dataset.hpp"
#include "pvseg/error.hpp"
#include "pvseg/evaluation.hpp"
#include "pvseg/losses.hpp"
#include "pvseg/model.hpp"
#include "pvseg/rng.hpp"

namespace pvseg {

namespace fs = std::filesystem;

struct TrainerConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  double ema_alpha = 0.99;
  int base_size = 299;
  int crop_size = 224;
  std::uint64_t seed = 1;
  SemiCEConfig semice;  // thresholds and the consistency weight
  ConsistencyKind consistency = ConsistencyKind::kSemiCE;
  StrongAugConfig aug;
  bool cutmix_labeled = true;
  BackboneSpec backbone;
  int checkpoint_every = 1;
  int eval_batch_size = 16;
  bool eval_teacher = false;
  double lambda_rampup_epochs = 0.0;  // 0: full weight from the first step

  double lambda() const noexcept { return semice.lambda_consistency; }

  void validate() const {
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
    if (ema_alpha < 0.0 || ema_alpha > 1.0) throw ConfigError("train.ema_alpha must lie in [0, 1]");
    if (crop_size <= 0) throw ConfigError("train.crop_size must be positive");
    if (base_size > 0 && crop_size > base_size) {
      throw ConfigError("train.crop_size must not exceed train.base_size");
    }
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (eval_batch_size <= 0) throw ConfigError("train.eval_batch_size must be positive");
    if (lambda_rampup_epochs < 0.0) throw ConfigError("loss.lambda_rampup_epochs must be >= 0");
    try {
      semice.validate();
      aug.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
};

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double loss_total = 0.0;
  double loss_sup = 0.0;
  double loss_cons = 0.0;
  double pixel_acc = 0.0;
  double miou = 0.0;
};

struct StepLosses {
  double total = 0.0;
  double supervised = 0.0;
  double consistency = 0.0;
  double positive = 0.0;
  double negative = 0.0;
};

struct TrainState {
  int epoch = 0;
  std::int64_t global_step = 0;
  std::unique_ptr<SegmentationModel> student;
  std::unique_ptr<SegmentationModel> teacher;
  std::vector<float> velocity;  // SGD momentum, one entry per student parameter
  SamplerState sampler;
  std::vector<EpochRecord> history;
};

// Student and teacher start from identical weights.
inline TrainState init_train_state(const TrainerConfig& cfg) {
  TrainState s;
  s.student = create_model(cfg.backbone, cfg.seed);
  s.teacher = create_model(cfg.backbone, cfg.seed);
  clone_into(*s.student, *s.teacher);
  s.velocity.assign(s.student->parameter_count(), 0.0f);
  return s;
}

// ---------------------------------------------------------------------------
// Updates

// teacher <- alpha * teacher + (1 - alpha) * student
template <typename T>
void ema_update(std::span<T> teacher, std::span<const T> student, double alpha) {
  if (teacher.size() != student.size()) {
    throw ShapeMismatch("ema_update: " + std::to_string(teacher.size()) + " vs " +
                        std::to_string(student.size()) + " values");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("ema alpha must lie in [0, 1]");
  const double beta = 1.0 - alpha;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    teacher[i] = static_cast<T>(alpha * static_cast<double>(teacher[i]) +
                                beta * static_cast<double>(student[i]));
  }
}

// Parameters and batch-norm running statistics.
inline void ema_update(SegmentationModel& teacher, SegmentationModel& student, double alpha) {
  if (teacher.architecture() != student.architecture()) {
    throw ShapeMismatch("ema_update: architectures differ");
  }
  auto tp = teacher.parameters();
  auto sp = student.parameters();
  for (std::size_t i = 0; i < tp.size(); ++i) {
    ema_update<float>(tp[i]->value, sp[i]->value, alpha);
  }
  auto tb = teacher.buffers();
  auto sb = student.buffers();
  for (std::size_t i = 0; i < tb.size(); ++i) {
    ema_update<float>(tb[i]->value, sb[i]->value, alpha);
  }
}

// v <- momentum * v + (g + wd * p); p <- p - lr * v
inline void sgd_step(SegmentationModel& model, std::vector<float>& velocity, double lr,
                     double momentum, double weight_decay) {
  if (velocity.size() != model.parameter_count()) {
    throw ShapeMismatch("optimizer state does not match the model");
  }
  const float flr = static_cast<float>(lr);
  const float mu = static_cast<float>(momentum);
  const float wd = static_cast<float>(weight_decay);
  std::size_t k = 0;
  for (auto* p : model.parameters()) {
    for (std::size_t i = 0; i < p->value.size(); ++i, ++k) {
      const float g = p->grad[i] + wd * p->value[i];
      velocity[k] = mu * velocity[k] + g;
      p->value[i] -= flr * velocity[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Batches

struct StepBatch {
  Tensor<float> labeled_images;  // raw [0, 1] crops
  LabelBatch labeled_targets;
  Tensor<float> unlabeled_images;
};

inline StepBatch make_step_batch(const InMemoryDataset& data, const MinibatchIndices& idx,
                                 int crop_size, Rng& rng, bool with_unlabeled = true) {
  StepBatch batch;
  std::vector<ImageSample> images;
  std::vector<MaskSample> masks;
  for (std::size_t i : idx.labeled) {
    const ImageSample& img = data.labeled_images[i];
    const CropWindow w = random_crop_window(img.height, img.width, crop_size, rng);
    images.push_back(crop_image(img, w));
    masks.push_back(crop_mask(data.labeled_masks[i], w));
  }
  std::vector<const ImageSample*> ip;
  std::vector<const MaskSample*> mp;
  for (std::size_t i = 0; i < images.size(); ++i) {
    ip.push_back(&images[i]);
    mp.push_back(&masks[i]);
  }
  batch.labeled_images = to_batch(ip);
  batch.labeled_targets = to_label_batch(mp);
  if (!with_unlabeled || idx.unlabeled.empty()) return batch;
  std::vector<ImageSample> uimages;
  for (std::size_t i : idx.unlabeled) {
    const ImageSample& img = data.unlabeled_images[i];
    uimages.push_back(
        crop_image(img, random_crop_window(img.height, img.width, crop_size, rng)));
  }
  std::vector<const ImageSample*> up;
  for (const auto& u : uimages) up.push_back(&u);
  batch.unlabeled_images = to_batch(up);
  return batch;
}

// ---------------------------------------------------------------------------
// One optimisation step

namespace trainer_detail {

inline void require_finite(double v, const char* term, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw TrainingError(std::string("non-finite ") + term + " loss at step " +
                        std::to_string(step));
  }
}

inline PseudoLabelBatch<float> slice_pseudo(const PseudoLabelBatch<float>& p, int begin,
                                            int count) {
  return {slice_batch(p.labels, begin, count), slice_batch(p.confidence, begin, count),
          slice_batch(p.class_probs, begin, count)};
}

inline PseudoLabelBatch<float> cutmix_pseudo(const PseudoLabelBatch<float>& p,
                                             const std::vector<CutMixRecord>& records) {
  return {apply_cutmix(p.labels, records), apply_cutmix(p.confidence, records),
          apply_cutmix(p.class_probs, records)};
}

}  // namespace trainer_detail

// Sigmoid-shaped ramp exp(-5 (1 - t)^2), t = step / ramp_steps clipped to 1.
inline double lambda_rampup(std::int64_t step, double ramp_steps) {
  if (!(ramp_steps > 0.0)) return 1.0;
  const double t = std::clamp(static_cast<double>(step) / ramp_steps, 0.0, 1.0);
  return std::exp(-5.0 * (1.0 - t) * (1.0 - t));
}

// `lambda_scale` multiplies the configured consistency weight.
inline StepLosses train_step(TrainState& state, const StepBatch& batch,
                             const TrainerConfig& cfg, double lambda_scale = 1.0) {
  const int n_l = batch.labeled_images.batch();
  if (n_l == 0) throw DatasetError("train_step needs a non-empty labeled batch");
  const double lambda = cfg.lambda() * lambda_scale;
  const bool consistency = lambda > 0.0;
  const int n_u = consistency ? batch.unlabeled_images.batch() : 0;
  const std::int64_t step = state.global_step;
  Rng rng(derive_seed(cfg.seed, {0x57e9u, static_cast<std::uint64_t>(step)}));
  Rng aug_rng = rng.split();
  Rng mix_rng = rng.split();

  // Teacher on weak views.
  PseudoLabelBatch<float> pseudo_l;
  PseudoLabelBatch<float> pseudo_u;
  if (consistency) {
    Tensor<float> weak = weak_augment(batch.labeled_images);
    if (n_u > 0) weak = concat_batch(weak, weak_augment(batch.unlabeled_images));
    const Tensor<float> teacher_logits = state.teacher->forward(weak, Mode::kEval);
    for (float v : teacher_logits.values()) {
      if (!std::isfinite(v)) {
        throw TrainingError("non-finite teacher logits at step " + std::to_string(step));
      }
    }
    const PseudoLabelBatch<float> pseudo = make_pseudo_labels(teacher_logits);
    pseudo_l = trainer_detail::slice_pseudo(pseudo, 0, n_l);
    pseudo_u = trainer_detail::slice_pseudo(pseudo, n_l, n_u);
  }

  // Student on strong views, CutMix after the photometric ops.
  Tensor<float> strong_l = strong_augment(batch.labeled_images, cfg.aug, aug_rng);
  LabelBatch targets = batch.labeled_targets;
  if (cfg.cutmix_labeled && n_l >= 2) {
    const auto rec = draw_cutmix(n_l, strong_l.height(), strong_l.width(),
                                 cfg.aug.cutmix_alpha, cfg.aug.cutmix_beta, mix_rng);
    strong_l = apply_cutmix(strong_l, rec);
    targets = apply_cutmix(targets, rec);
    if (consistency) pseudo_l = trainer_detail::cutmix_pseudo(pseudo_l, rec);
  }
  Tensor<float> strong_u;
  if (n_u > 0) {
    strong_u = strong_augment(batch.unlabeled_images, cfg.aug, aug_rng);
    if (n_u >= 2) {
      const auto rec = draw_cutmix(n_u, strong_u.height(), strong_u.width(),
                                   cfg.aug.cutmix_alpha, cfg.aug.cutmix_beta, mix_rng);
      strong_u = apply_cutmix(strong_u, rec);
      pseudo_u = trainer_detail::cutmix_pseudo(pseudo_u, rec);
    }
  }

  // Each stream gets its own batch-norm statistics. The unlabeled stream goes
  // first so that the layer caches hold the labeled pass for backward.
  Tensor<float> logits_u;
  if (n_u > 0) logits_u = state.student->forward(strong_u, Mode::kTrain);
  const Tensor<float> logits_l = state.student->forward(strong_l, Mode::kTrain);

  StepLosses losses;
  const auto sup = supervised_ce(logits_l, targets);
  losses.supervised = sup.value;
  trainer_detail::require_finite(losses.supervised, "supervised", step);
  Tensor<float> grad_l = sup.grad;
  Tensor<float> grad_u(n_u, logits_l.channels(), logits_l.height(), logits_l.width());
  if (consistency) {
    const ConsistencyLoss<float> cons =
        cfg.consistency == ConsistencyKind::kSemiCE
            ? consistency_loss(logits_l, logits_u, pseudo_l, pseudo_u, cfg.semice)
            : mse_consistency_loss(logits_l, logits_u, pseudo_l, pseudo_u);
    losses.positive = cons.positive;
    losses.negative = cons.negative;
    losses.consistency = cons.value;
    trainer_detail::require_finite(losses.positive, "consistency (positive)", step);
    trainer_detail::require_finite(losses.negative, "consistency (negative)", step);
    const float w = static_cast<float>(lambda);
    for (std::size_t i = 0; i < grad_l.size(); ++i) grad_l[i] += w * cons.grad_labeled[i];
    for (std::size_t i = 0; i < grad_u.size(); ++i) grad_u[i] = w * cons.grad_unlabeled[i];
  }
  losses.total = total_loss(losses.supervised, losses.consistency, lambda);

  state.student->zero_grad();
  state.student->backward(grad_l);
  if (n_u > 0) {
    // Recompute the unlabeled pass for its backward without moving the
    // running statistics a second time.
    const std::vector<float> buffers = state.student->buffer_vector();
    state.student->forward(strong_u, Mode::kTrain);
    state.student->set_buffer_vector(buffers);
    state.student->backward(grad_u);
  }
  sgd_step(*state.student, state.velocity, cfg.lr, cfg.momentum, cfg.weight_decay);
  ema_update(*state.teacher, *state.student, cfg.ema_alpha);
  ++state.global_step;
  return losses;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json to_json(const TrainerConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"ema_alpha", c.ema_alpha},
          {"base_size", c.base_size},
          {"crop_size", c.crop_size},
          {"seed", c.seed},
          {"t_pos", c.semice.t_pos},
          {"t_neg", c.semice.t_neg},
          {"lambda", c.semice.lambda_consistency},
          {"mean_over", c.semice.mean_over == MeanOver::kAll ? "all" : "selected"},
          {"consistency", c.consistency == ConsistencyKind::kMSE ? "mse" : "semice"},
          {"cutmix_labeled", c.cutmix_labeled},
          {"lambda_rampup_epochs", c.lambda_rampup_epochs}};
}

inline nlohmann::json model_json(SegmentationModel& m) {
  nlohmann::json j = {{"architecture", m.architecture()},
                      {"backbone", to_string(m.spec().kind)},
                      {"pretrained", m.spec().pretrained},
                      {"num_classes", m.num_classes()},
                      {"downsampling_factor", m.downsampling_factor()}};
  if (m.spec().kind == BackboneKind::kFullScale) {
    j["encoder"] = "resnet50";
    j["output_stride"] = 16;
    j["aspp_rates"] = {6, 12, 18};
    j["decoder"] = "low-level 48 channels from stride-4 features";
  }
  return j;
}

inline void save_train_state(TrainState& s, const TrainerConfig& cfg, const fs::path& path) {
  Checkpoint ck;
  ck.header["model"] = model_json(*s.student);
  ck.header["trainer"] = to_json(cfg);
  ck.header["epoch"] = s.epoch;
  ck.header["global_step"] = s.global_step;
  ck.header["sampler"] = {s.sampler.labeled_consumed, s.sampler.unlabeled_consumed};
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : s.history) {
    hist.push_back({r.epoch, r.step, r.loss_total, r.loss_sup, r.loss_cons, r.pixel_acc,
                    r.miou});
  }
  ck.header["history"] = hist;
  ck.sections["student.params"] = s.student->parameter_vector();
  ck.sections["student.buffers"] = s.student->buffer_vector();
  ck.sections["teacher.params"] = s.teacher->parameter_vector();
  ck.sections["teacher.buffers"] = s.teacher->buffer_vector();
  ck.sections["optimizer.velocity"] = s.velocity;
  save_checkpoint(ck, path);
}

inline BackboneSpec backbone_from_checkpoint(const Checkpoint& ck) {
  BackboneSpec spec;
  const auto& m = ck.header.at("model");
  spec.kind = parse_backbone_kind(m.at("backbone").get<std::string>());
  spec.num_classes = m.at("num_classes").get<int>();
  return spec;
}

// Rebuilds a training state; the model architecture must match `cfg`.
inline TrainState load_train_state(const fs::path& path, const TrainerConfig& cfg) {
  const Checkpoint ck = load_checkpoint(path);
  TrainerConfig arch = cfg;
  arch.backbone.pretrained = false;
  TrainState s = init_train_state(arch);
  const std::string want = s.student->architecture();
  const std::string got = ck.header.at("model").at("architecture").get<std::string>();
  if (want != got) {
    throw ShapeMismatch("checkpoint holds " + got + ", config describes " + want);
  }
  s.student->set_parameter_vector(ck.section("student.params"));
  s.student->set_buffer_vector(ck.section("student.buffers"));
  s.teacher->set_parameter_vector(ck.section("teacher.params"));
  s.teacher->set_buffer_vector(ck.section("teacher.buffers"));
  s.velocity = ck.section("optimizer.velocity");
  s.epoch = ck.header.at("epoch").get<int>();
  s.global_step = ck.header.at("global_step").get<std::int64_t>();
  s.sampler.labeled_consumed = ck.header.at("sampler")[0].get<std::uint64_t>();
  s.sampler.unlabeled_consumed = ck.header.at("sampler")[1].get<std::uint64_t>();
  for (const auto& r : ck.header.at("history")) {
    s.history.push_back({r[0].get<int>(), r[1].get<std::int64_t>(), r[2].get<double>(),
                         r[3].get<double>(), r[4].get<double>(), r[5].get<double>(),
                         r[6].get<double>()});
  }
  return s;
}

// Loads one network's weights from a checkpoint into a fresh model.
inline std::unique_ptr<SegmentationModel> load_network(const fs::path& path,
                                                       bool teacher = false) {
  const Checkpoint ck = load_checkpoint(path);
  auto model = create_model(backbone_from_checkpoint(ck), 0);
  const std::string prefix = teacher ? "teacher" : "student";
  model->set_parameter_vector(ck.section(prefix + ".params"));
  model->set_buffer_vector(ck.section(prefix + ".buffers"));
  return model;
}

// ---------------------------------------------------------------------------
// Training loop

inline constexpr const char* kTrainLogHeader =
    "epoch,step,loss_total,loss_sup,loss_cons,pixel_acc,miou";

inline void write_train_log(const std::vector<EpochRecord>& history, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << kTrainLogHeader << '\n';
  for (const auto& r : history) {
    out << r.epoch << ',' << r.step << ',' << format_metric(r.loss_total) << ','
        << format_metric(r.loss_sup) << ',' << format_metric(r.loss_cons) << ','
        << format_metric(r.pixel_acc) << ',' << format_metric(r.miou) << '\n';
  }
}

struct TrainOptions {
  fs::path out_dir;        // empty: no files written
  fs::path resume;         // checkpoint to continue from
  const std::vector<ImageSample>* eval_images = nullptr;  // defaults to the labeled pool
  const std::vector<MaskSample>* eval_masks = nullptr;
  bool quiet = true;
};

inline std::int64_t steps_per_epoch(std::size_t labeled, std::size_t unlabeled,
                                    int batch_size) {
  const std::size_t n = std::max(labeled, unlabeled);
  return static_cast<std::int64_t>((n + batch_size - 1) / batch_size);
}

inline TrainState train(const InMemoryDataset& data, const TrainerConfig& cfg,
                        const TrainOptions& opts = {}) {
  cfg.validate();
  if (data.labeled_images.empty()) {
    throw DatasetError("training needs at least one labeled image");
  }
  if (cfg.backbone.num_classes != data.catalog.total_classes()) {
    throw ConfigError("model.num_classes is " + std::to_string(cfg.backbone.num_classes) +
                      " but the dataset has " +
                      std::to_string(data.catalog.total_classes()) + " classes");
  }
  fs::path ckpt_dir;
  if (!opts.out_dir.empty()) {
    ckpt_dir = opts.out_dir / "checkpoints";
    std::error_code ec;
    fs::create_directories(ckpt_dir, ec);
    if (ec || !fs::is_directory(ckpt_dir)) {
      throw IoError("cannot create checkpoint directory '" + ckpt_dir.string() + "'");
    }
  }
  TrainState state = opts.resume.empty() ? init_train_state(cfg)
                                         : load_train_state(opts.resume, cfg);
  MinibatchSampler sampler(data.labeled_images.size(), data.unlabeled_images.size(), cfg.seed);
  sampler.restore(state.sampler);
  const std::int64_t steps =
      steps_per_epoch(data.labeled_images.size(), data.unlabeled_images.size(), cfg.batch_size);
  const auto& eval_images = opts.eval_images ? *opts.eval_images : data.labeled_images;
  const auto& eval_masks = opts.eval_masks ? *opts.eval_masks : data.labeled_masks;

  while (state.epoch < cfg.epochs) {
    StepLosses sum;
    for (std::int64_t k = 0; k < steps; ++k) {
      const MinibatchIndices idx = sampler.next(cfg.batch_size);
      Rng crop_rng(derive_seed(cfg.seed, {0xc409u, static_cast<std::uint64_t>(state.global_step)}));
      const StepBatch batch =
          make_step_batch(data, idx, cfg.crop_size, crop_rng, cfg.lambda() > 0.0);
      const double scale =
          lambda_rampup(state.global_step, cfg.lambda_rampup_epochs * static_cast<double>(steps));
      const StepLosses l = train_step(state, batch, cfg, scale);
      sum.total += l.total;
      sum.supervised += l.supervised;
      sum.consistency += l.consistency;
    }
    state.sampler = sampler.state();
    ++state.epoch;
    SegmentationModel& net = cfg.eval_teacher ? *state.teacher : *state.student;
    const ConfusionMatrix cm =
        evaluate_model(net, eval_images, eval_masks, cfg.crop_size, cfg.eval_batch_size).cm;
    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.step = state.global_step;
    const double n = static_cast<double>(std::max<std::int64_t>(steps, 1));
    rec.loss_total = sum.total / n;
    rec.loss_sup = sum.supervised / n;
    rec.loss_cons = sum.consistency / n;
    rec.pixel_acc = pixel_accuracy(cm);
    rec.miou = report(cm, data.catalog).average.iou;
    state.history.push_back(rec);
    if (!opts.quiet) {
      std::fprintf(stderr, "epoch %d step %lld loss %.4f sup %.4f cons %.4f acc %.4f miou %.4f\n",
                   rec.epoch, static_cast<long long>(rec.step), rec.loss_total, rec.loss_sup,
                   rec.loss_cons, rec.pixel_acc, rec.miou);
    }
    if (!opts.out_dir.empty()) {
      write_train_log(state.history, opts.out_dir / "train_log.csv");
      const bool last = state.epoch == cfg.epochs;
      if (last || (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0)) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", state.epoch);
        save_train_state(state, cfg, ckpt_dir / name);
        save_train_state(state, cfg, ckpt_dir / "last.ckpt");
      }
    }
  }
  if (!opts.out_dir.empty() && state.history.empty()) {
    write_train_log(state.history, opts.out_dir / "train_log.csv");
  }
  return state;
}

}  // namespace pvseg
