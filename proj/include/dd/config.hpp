// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a JSON document with a fixed schema. Unknown keys
// are rejected. Every field has a default, so a preset plus a few overrides
// is a complete config.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "dd/distiller.hpp"
#include "dd/model.hpp"
#include "dd/optim.hpp"
#include "dd/videotask.hpp"

namespace dd {

enum class SearchSetting {
  kGumbel,         // learn the per-block choice
  kCompressed,     // every block uses its compressed student
  kNonCompressed,  // every block uses its non-compressed student
};

struct ExperimentConfig {
  std::string name = "custom";
  NetworkSpec network;
  std::string granularity = "linear";  // linear | nonlinear
  LossWeights weights;
  std::size_t period = 3;  // key-frame period T, also the training clip length
  SgdOptions teacher_optimizer{0.1, 0.9, 0.0};
  SgdOptions student_optimizer{0.02, 0.9, 0.0};
  double arch_lr_scale = 20.0;
  double teacher_lr_scale = 0.1;  // teacher fine-tuning during distillation
  double clip_norm = 10.0;
  SearchSetting search = SearchSetting::kGumbel;
  bool teacher_forced = false;
  TaskFrames task_frames = TaskFrames::kAll;
  bool normalize_costs = true;
  bool train_teacher_jointly = false;
  double tau_start = 1.0;
  double tau_end = 0.1;
  SceneSpec scene;
  std::size_t train_clips = 24;
  std::size_t eval_clips = 8;
  std::size_t eval_length = 12;
  std::size_t teacher_epochs = 40;
  std::size_t distill_epochs = 60;
  std::vector<std::size_t> eval_periods{1, 3, 5};
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);  // unknown keys rejected

  // FNV-1a over the canonical JSON text, as 16 hex digits.
  std::string hash() const;

  // Independent seeds for the data, teacher init, student init and training.
  std::uint64_t data_seed() const;
  std::uint64_t eval_data_seed() const;
  std::uint64_t teacher_seed() const;
  std::uint64_t student_seed() const;
  std::uint64_t train_seed() const;

  DistillOptions distill_options() const;  // without temperature
  Selection fixed_selection() const;       // for the non-gumbel settings
};

// Named presets: "seg-small" and "det-style".
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

// Reads a JSON config file; when it has a "preset" key, fields are applied on
// top of that preset.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_with_preset(const nlohmann::json& j);

std::uint64_t fnv1a64(const std::string& text);

}  // namespace dd
