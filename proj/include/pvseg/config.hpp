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

// Flat "key = value" experiment files. `include <path>` pulls in another
// file at that point; later assignments override earlier ones. Path-valued
// keys are resolved against the directory of the file that sets them.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "pvseg/dataset.hpp"
#include "pvseg/error.hpp"
#include "pvseg/trainer.hpp"

namespace pvseg {

using KeyValues = std::map<std::string, std::string>;

struct DataConfig {
  fs::path manifest;
  fs::path test_manifest;
  double labeled_fraction = 0.0;  // 0: use the manifest's labeled rows as they are
  std::uint64_t split_seed = 0;
  std::vector<std::string> classes;  // empty: from the manifest or model.num_classes
};

struct ExperimentConfig {
  DataConfig data;
  TrainerConfig train;
  bool include_background = false;
  fs::path out_dir;
};

namespace config_detail {

inline const std::set<std::string>& path_keys() {
  static const std::set<std::string> k = {"data.manifest", "data.test_manifest",
                                          "model.pretrained_weights", "output.dir"};
  return k;
}

inline const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> k = {
      "data.manifest",       "data.test_manifest",    "data.labeled_fraction",
      "data.split_seed",     "data.classes",          "model.backbone",
      "model.pretrained",    "model.pretrained_weights", "model.num_classes",
      "train.epochs",        "train.batch_size",      "train.lr",
      "train.momentum",      "train.weight_decay",    "train.ema_alpha",
      "train.base_size",     "train.crop_size",       "train.seed",
      "train.checkpoint_every", "train.eval_batch_size", "loss.t_pos",
      "loss.t_neg",          "loss.lambda",           "loss.consistency",
      "loss.mean_over",      "loss.lambda_rampup_epochs", "aug.jitter",            "aug.grayscale_prob",
      "aug.blur_kernel",     "aug.blur_sigma",        "aug.cutmix_alpha",
      "aug.cutmix_beta",     "aug.cutmix_labeled",    "eval.network",
      "eval.include_background", "output.dir"};
  return k;
}

inline bool is_known(const std::string& key) {
  for (const auto& k : known_keys()) {
    if (k == key) return true;
  }
  return false;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& line) {
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '#' && (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t')) {
      return line.substr(0, i);
    }
  }
  return line;
}

inline void parse_file(const fs::path& path, KeyValues& out, int depth) {
  if (depth > 16) throw ConfigError("include nesting too deep at '" + path.string() + "'");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  const fs::path dir = path.parent_path();
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (line.rfind("include", 0) == 0 &&
        (line.size() == 7 || line[7] == ' ' || line[7] == '\t' || line[7] == '=')) {
      std::string target = trim(line.substr(7));
      if (!target.empty() && target[0] == '=') target = trim(target.substr(1));
      if (target.empty()) throw ConfigError(where + ": include without a path");
      fs::path p(target);
      if (p.is_relative()) p = dir / p;
      parse_file(p, out, depth + 1);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!is_known(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    if (path_keys().count(key) && !value.empty() && fs::path(value).is_relative()) {
      value = (dir / value).lexically_normal().string();
    }
    out[key] = value;
  }
}

inline double to_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  double v = 0.0;
  const auto& s = it->second;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": '" + s + "' is not a number");
  }
  return v;
}

inline long long to_int(const KeyValues& kv, const std::string& key, long long fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  long long v = 0;
  const auto& s = it->second;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": '" + s + "' is not an integer");
  }
  return v;
}

inline bool to_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError(key + ": '" + it->second + "' is not a boolean");
}

inline std::string to_str(const KeyValues& kv, const std::string& key,
                          const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

template <typename T>
std::pair<T, T> to_pair(const KeyValues& kv, const std::string& key, std::pair<T, T> fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto comma = it->second.find(',');
  if (comma == std::string::npos) throw ConfigError(key + ": expected 'low,high'");
  KeyValues parts = {{"lo", trim(it->second.substr(0, comma))},
                     {"hi", trim(it->second.substr(comma + 1))}};
  if constexpr (std::is_integral_v<T>) {
    return {static_cast<T>(to_int(parts, "lo", 0)), static_cast<T>(to_int(parts, "hi", 0))};
  } else {
    return {static_cast<T>(to_double(parts, "lo", 0)), static_cast<T>(to_double(parts, "hi", 0))};
  }
}

inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace config_detail

inline KeyValues read_key_values(const fs::path& path) {
  KeyValues kv;
  config_detail::parse_file(path, kv, 0);
  return kv;
}

// "key=value" overrides, e.g. from the command line.
inline void apply_override(KeyValues& kv, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' lacks '='");
  const std::string key = config_detail::trim(assignment.substr(0, eq));
  if (!config_detail::is_known(key)) throw ConfigError("unknown key '" + key + "'");
  kv[key] = config_detail::trim(assignment.substr(eq + 1));
}

inline ExperimentConfig experiment_from_key_values(const KeyValues& kv) {
  using namespace config_detail;
  ExperimentConfig c;
  TrainerConfig& t = c.train;
  c.data.manifest = to_str(kv, "data.manifest", "");
  c.data.test_manifest = to_str(kv, "data.test_manifest", "");
  c.data.labeled_fraction = to_double(kv, "data.labeled_fraction", 0.0);
  c.data.split_seed = static_cast<std::uint64_t>(to_int(kv, "data.split_seed", 0));
  const std::string classes = to_str(kv, "data.classes", "");
  if (!classes.empty()) {
    std::stringstream ss(classes);
    std::string name;
    while (std::getline(ss, name, ',')) c.data.classes.push_back(trim(name));
  }
  try {
    t.backbone.kind = parse_backbone_kind(to_str(kv, "model.backbone", "tiny"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("model.backbone: ") + e.what());
  }
  t.backbone.pretrained = to_bool(kv, "model.pretrained", false);
  t.backbone.pretrained_weights = to_str(kv, "model.pretrained_weights", "");
  t.backbone.num_classes = static_cast<int>(to_int(kv, "model.num_classes", 0));
  t.epochs = static_cast<int>(to_int(kv, "train.epochs", t.epochs));
  t.batch_size = static_cast<int>(to_int(kv, "train.batch_size", t.batch_size));
  t.lr = to_double(kv, "train.lr", t.lr);
  t.momentum = to_double(kv, "train.momentum", t.momentum);
  t.weight_decay = to_double(kv, "train.weight_decay", t.weight_decay);
  t.ema_alpha = to_double(kv, "train.ema_alpha", t.ema_alpha);
  t.base_size = static_cast<int>(to_int(kv, "train.base_size", t.base_size));
  t.crop_size = static_cast<int>(to_int(kv, "train.crop_size", t.crop_size));
  t.seed = static_cast<std::uint64_t>(to_int(kv, "train.seed", static_cast<long long>(t.seed)));
  t.checkpoint_every = static_cast<int>(to_int(kv, "train.checkpoint_every", t.checkpoint_every));
  t.eval_batch_size = static_cast<int>(to_int(kv, "train.eval_batch_size", t.eval_batch_size));
  t.semice.t_pos = to_double(kv, "loss.t_pos", t.semice.t_pos);
  t.semice.t_neg = to_double(kv, "loss.t_neg", t.semice.t_neg);
  t.semice.lambda_consistency = to_double(kv, "loss.lambda", t.semice.lambda_consistency);
  t.lambda_rampup_epochs = to_double(kv, "loss.lambda_rampup_epochs", t.lambda_rampup_epochs);
  const std::string kind = to_str(kv, "loss.consistency", "semice");
  if (kind == "semice") {
    t.consistency = ConsistencyKind::kSemiCE;
  } else if (kind == "mse") {
    t.consistency = ConsistencyKind::kMSE;
  } else {
    throw ConfigError("loss.consistency must be 'semice' or 'mse', got '" + kind + "'");
  }
  const std::string over = to_str(kv, "loss.mean_over", "selected");
  if (over == "selected") {
    t.semice.mean_over = MeanOver::kSelected;
  } else if (over == "all") {
    t.semice.mean_over = MeanOver::kAll;
  } else {
    throw ConfigError("loss.mean_over must be 'selected' or 'all', got '" + over + "'");
  }
  t.aug.jitter_max_delta = to_double(kv, "aug.jitter", t.aug.jitter_max_delta);
  t.aug.grayscale_prob = to_double(kv, "aug.grayscale_prob", t.aug.grayscale_prob);
  t.aug.blur_kernel_range = to_pair(kv, "aug.blur_kernel", t.aug.blur_kernel_range);
  t.aug.blur_sigma_range = to_pair(kv, "aug.blur_sigma", t.aug.blur_sigma_range);
  t.aug.cutmix_alpha = to_double(kv, "aug.cutmix_alpha", t.aug.cutmix_alpha);
  t.aug.cutmix_beta = to_double(kv, "aug.cutmix_beta", t.aug.cutmix_beta);
  t.cutmix_labeled = to_bool(kv, "aug.cutmix_labeled", t.cutmix_labeled);
  const std::string network = to_str(kv, "eval.network", "student");
  if (network != "student" && network != "teacher") {
    throw ConfigError("eval.network must be 'student' or 'teacher', got '" + network + "'");
  }
  t.eval_teacher = network == "teacher";
  c.include_background = to_bool(kv, "eval.include_background", false);
  c.out_dir = to_str(kv, "output.dir", "");
  return c;
}

inline ExperimentConfig load_experiment_config(const fs::path& path,
                                               const std::vector<std::string>& overrides = {}) {
  KeyValues kv = read_key_values(path);
  for (const auto& o : overrides) apply_override(kv, o);
  return experiment_from_key_values(kv);
}

// Every key with its effective value; reading this back reproduces `c`.
inline KeyValues experiment_to_key_values(const ExperimentConfig& c) {
  using config_detail::fmt;
  const TrainerConfig& t = c.train;
  std::string classes;
  for (std::size_t i = 0; i < c.data.classes.size(); ++i) {
    classes += (i ? "," : "") + c.data.classes[i];
  }
  return {
      {"data.manifest", c.data.manifest.string()},
      {"data.test_manifest", c.data.test_manifest.string()},
      {"data.labeled_fraction", fmt(c.data.labeled_fraction)},
      {"data.split_seed", std::to_string(c.data.split_seed)},
      {"data.classes", classes},
      {"model.backbone", to_string(t.backbone.kind)},
      {"model.pretrained", t.backbone.pretrained ? "true" : "false"},
      {"model.pretrained_weights", t.backbone.pretrained_weights},
      {"model.num_classes", std::to_string(t.backbone.num_classes)},
      {"train.epochs", std::to_string(t.epochs)},
      {"train.batch_size", std::to_string(t.batch_size)},
      {"train.lr", fmt(t.lr)},
      {"train.momentum", fmt(t.momentum)},
      {"train.weight_decay", fmt(t.weight_decay)},
      {"train.ema_alpha", fmt(t.ema_alpha)},
      {"train.base_size", std::to_string(t.base_size)},
      {"train.crop_size", std::to_string(t.crop_size)},
      {"train.seed", std::to_string(t.seed)},
      {"train.checkpoint_every", std::to_string(t.checkpoint_every)},
      {"train.eval_batch_size", std::to_string(t.eval_batch_size)},
      {"loss.t_pos", fmt(t.semice.t_pos)},
      {"loss.t_neg", fmt(t.semice.t_neg)},
      {"loss.lambda", fmt(t.semice.lambda_consistency)},
      {"loss.consistency", t.consistency == ConsistencyKind::kMSE ? "mse" : "semice"},
      {"loss.mean_over", t.semice.mean_over == MeanOver::kAll ? "all" : "selected"},
      {"loss.lambda_rampup_epochs", fmt(t.lambda_rampup_epochs)},
      {"aug.jitter", fmt(t.aug.jitter_max_delta)},
      {"aug.grayscale_prob", fmt(t.aug.grayscale_prob)},
      {"aug.blur_kernel", std::to_string(t.aug.blur_kernel_range.first) + "," +
                              std::to_string(t.aug.blur_kernel_range.second)},
      {"aug.blur_sigma",
       fmt(t.aug.blur_sigma_range.first) + "," + fmt(t.aug.blur_sigma_range.second)},
      {"aug.cutmix_alpha", fmt(t.aug.cutmix_alpha)},
      {"aug.cutmix_beta", fmt(t.aug.cutmix_beta)},
      {"aug.cutmix_labeled", t.cutmix_labeled ? "true" : "false"},
      {"eval.network", t.eval_teacher ? "teacher" : "student"},
      {"eval.include_background", c.include_background ? "true" : "false"},
      {"output.dir", c.out_dir.string()},
  };
}

inline void write_key_values(const KeyValues& kv, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "# resolved configuration\n";
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

inline void write_resolved_config(const ExperimentConfig& c, const fs::path& path) {
  write_key_values(experiment_to_key_values(c), path);
}

}  // namespace pvseg
