// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "dd/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "dd/errors.hpp"
#include "dd/videotask.hpp"

namespace dd {

using nlohmann::json;

namespace {

void require_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const std::string& where, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

const char* to_string(SearchSetting s) {
  switch (s) {
    case SearchSetting::kGumbel: return "gumbel";
    case SearchSetting::kCompressed: return "compressed";
    case SearchSetting::kNonCompressed: return "non-compressed";
  }
  return "?";
}

SearchSetting parse_search(const std::string& s) {
  if (s == "gumbel") return SearchSetting::kGumbel;
  if (s == "compressed") return SearchSetting::kCompressed;
  if (s == "non-compressed") return SearchSetting::kNonCompressed;
  throw ConfigError("search must be gumbel, compressed or non-compressed, got '" + s + "'");
}

json block_to_json(const TeacherBlockSpec& b) {
  return {{"name", b.name},
          {"stage", b.stage},
          {"kind", b.kind == BlockKind::kConv ? "conv" : "residual"},
          {"in_channels", b.in_channels},
          {"out_channels", b.out_channels},
          {"kernel", b.kernel},
          {"stride", b.stride},
          {"activation", b.activation == Activation::kRelu ? "relu" : "none"}};
}

TeacherBlockSpec block_from_json(const json& j, const std::string& where) {
  require_keys(j, where, {"name", "stage", "kind", "in_channels", "out_channels", "kernel",
                          "stride", "activation"});
  TeacherBlockSpec b;
  std::string kind = "conv", act = "relu";
  read(j, where, "name", b.name);
  read(j, where, "stage", b.stage);
  read(j, where, "kind", kind);
  read(j, where, "in_channels", b.in_channels);
  read(j, where, "out_channels", b.out_channels);
  read(j, where, "kernel", b.kernel);
  read(j, where, "stride", b.stride);
  read(j, where, "activation", act);
  if (kind == "conv") b.kind = BlockKind::kConv;
  else if (kind == "residual") b.kind = BlockKind::kResidual;
  else throw ConfigError(where + ".kind must be conv or residual");
  if (act == "relu") b.activation = Activation::kRelu;
  else if (act == "none") b.activation = Activation::kNone;
  else throw ConfigError(where + ".activation must be relu or none");
  if (b.name.empty()) throw ConfigError(where + ".name must be set");
  return b;
}

json sgd_to_json(const SgdOptions& o) {
  return {{"lr", o.lr}, {"momentum", o.momentum}, {"weight_decay", o.weight_decay}};
}

SgdOptions sgd_from_json(const json& j, const std::string& where, SgdOptions o) {
  require_keys(j, where, {"lr", "momentum", "weight_decay"});
  read(j, where, "lr", o.lr);
  read(j, where, "momentum", o.momentum);
  read(j, where, "weight_decay", o.weight_decay);
  return o;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void ExperimentConfig::validate() const {
  weights.validate();
  scene.validate();
  if (period == 0) throw ConfigError("T must be at least 1");
  if (period < 2) throw ConfigError("training clips need T >= 2 frames");
  if (network.in_channels != scene.channels) {
    throw ConfigError("network expects " + std::to_string(network.in_channels) +
                      " input channels but the scene renders " + std::to_string(scene.channels));
  }
  if (network.num_classes != scene.num_classes) {
    throw ConfigError("network predicts " + std::to_string(network.num_classes) +
                      " classes but the scene has " + std::to_string(scene.num_classes));
  }
  if (network.compressed.gamma == 0) throw ConfigError("gamma must be positive");
  if (network.compressed.spatial_factor == 0) throw ConfigError("spatial factor must be positive");
  if (granularity != "linear" && granularity != "nonlinear") {
    throw ConfigError("granularity must be linear or nonlinear");
  }
  bool any_residual = false;
  for (const auto& b : network.blocks) any_residual |= b.kind == BlockKind::kResidual;
  if (granularity == "linear" && any_residual) {
    throw ConfigError("linear granularity needs single-conv blocks only");
  }
  if (granularity == "nonlinear" && !any_residual) {
    throw ConfigError("nonlinear granularity needs at least one residual block");
  }
  for (const auto* o : {&teacher_optimizer, &student_optimizer}) {
    if (!(o->lr > 0.0) || o->momentum < 0.0 || o->momentum >= 1.0 || o->weight_decay < 0.0) {
      throw ConfigError("optimizer needs lr > 0, momentum in [0, 1) and weight_decay >= 0");
    }
  }
  if (!(arch_lr_scale > 0.0)) throw ConfigError("arch_lr_scale must be positive");
  if (!(teacher_lr_scale >= 0.0)) throw ConfigError("teacher_lr_scale must be non-negative");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
  if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw ConfigError("temperatures must be positive");
  if (train_clips == 0 || eval_clips == 0) throw ConfigError("clip counts must be positive");
  if (eval_periods.empty()) throw ConfigError("eval_periods must not be empty");
  for (std::size_t t : eval_periods) {
    if (t == 0) throw ConfigError("eval periods must be at least 1");
    if (t > eval_length) throw ConfigError("eval periods must not exceed eval_length");
  }
  // Builds the network once to surface channel mismatches and bad geometry.
  DistilledNetwork net(network);
  block_input_shapes(net, {1, scene.channels, scene.height, scene.width});
}

json ExperimentConfig::to_json() const {
  json blocks = json::array();
  for (const auto& b : network.blocks) blocks.push_back(block_to_json(b));
  return {
      {"name", name},
      {"network",
       {{"in_channels", network.in_channels},
        {"num_classes", network.num_classes},
        {"blocks", blocks}}},
      {"student",
       {{"granularity", granularity},
        {"variant", network.nonlinear_variant},
        {"gamma", network.compressed.gamma},
        {"spatial_factor", network.compressed.spatial_factor}}},
      {"loss", {{"alpha", weights.alpha}, {"beta", weights.beta}}},
      {"T", period},
      {"mode", network.mode == DistillMode::kDelta ? "delta" : "feature"},
      {"search", to_string(search)},
      {"teacher_forced", teacher_forced},
      {"task_frames", task_frames == TaskFrames::kAll ? "all" : "key-only"},
      {"normalize_costs", normalize_costs},
      {"train_teacher_jointly", train_teacher_jointly},
      {"tau", {{"start", tau_start}, {"end", tau_end}}},
      {"optimizer",
       {{"teacher", sgd_to_json(teacher_optimizer)},
        {"student", sgd_to_json(student_optimizer)},
        {"arch_lr_scale", arch_lr_scale},
        {"teacher_lr_scale", teacher_lr_scale},
        {"clip_norm", clip_norm}}},
      {"scene", scene.to_json()},
      {"data",
       {{"train_clips", train_clips},
        {"eval_clips", eval_clips},
        {"eval_length", eval_length},
        {"eval_periods", eval_periods}}},
      {"epochs", {{"teacher", teacher_epochs}, {"distill", distill_epochs}}},
      {"seed", seed},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  require_keys(j, "config", {"name", "network", "student", "loss", "T", "mode", "search",
                             "teacher_forced", "task_frames", "normalize_costs",
                             "train_teacher_jointly", "tau", "optimizer", "scene", "data",
                             "epochs", "seed"});
  ExperimentConfig c;
  read(j, "config", "name", c.name);
  if (j.contains("network")) {
    const auto& n = j.at("network");
    require_keys(n, "network", {"in_channels", "num_classes", "blocks"});
    read(n, "network", "in_channels", c.network.in_channels);
    read(n, "network", "num_classes", c.network.num_classes);
    if (n.contains("blocks")) {
      if (!n.at("blocks").is_array()) throw ConfigError("network.blocks must be an array");
      c.network.blocks.clear();
      for (std::size_t i = 0; i < n.at("blocks").size(); ++i)
        c.network.blocks.push_back(
            block_from_json(n.at("blocks")[i], "network.blocks[" + std::to_string(i) + "]"));
    }
  }
  if (j.contains("student")) {
    const auto& s = j.at("student");
    require_keys(s, "student", {"granularity", "variant", "gamma", "spatial_factor"});
    read(s, "student", "granularity", c.granularity);
    read(s, "student", "variant", c.network.nonlinear_variant);
    read(s, "student", "gamma", c.network.compressed.gamma);
    read(s, "student", "spatial_factor", c.network.compressed.spatial_factor);
    if (c.network.nonlinear_variant != "channel" && c.network.nonlinear_variant != "spatial") {
      throw ConfigError("student.variant must be channel or spatial");
    }
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    require_keys(l, "loss", {"alpha", "beta"});
    read(l, "loss", "alpha", c.weights.alpha);
    read(l, "loss", "beta", c.weights.beta);
  }
  read(j, "config", "T", c.period);
  std::string mode = "delta", search = "gumbel", task = "all";
  read(j, "config", "mode", mode);
  if (mode == "delta") c.network.mode = DistillMode::kDelta;
  else if (mode == "feature") c.network.mode = DistillMode::kFeature;
  else throw ConfigError("mode must be delta or feature");
  read(j, "config", "search", search);
  c.search = parse_search(search);
  read(j, "config", "teacher_forced", c.teacher_forced);
  read(j, "config", "task_frames", task);
  if (task == "all") c.task_frames = TaskFrames::kAll;
  else if (task == "key-only") c.task_frames = TaskFrames::kKeyOnly;
  else throw ConfigError("task_frames must be all or key-only");
  read(j, "config", "normalize_costs", c.normalize_costs);
  read(j, "config", "train_teacher_jointly", c.train_teacher_jointly);
  if (j.contains("tau")) {
    const auto& t = j.at("tau");
    require_keys(t, "tau", {"start", "end"});
    read(t, "tau", "start", c.tau_start);
    read(t, "tau", "end", c.tau_end);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    require_keys(o, "optimizer", {"teacher", "student", "arch_lr_scale", "teacher_lr_scale",
                                     "clip_norm"});
    if (o.contains("teacher"))
      c.teacher_optimizer = sgd_from_json(o.at("teacher"), "optimizer.teacher", c.teacher_optimizer);
    if (o.contains("student"))
      c.student_optimizer = sgd_from_json(o.at("student"), "optimizer.student", c.student_optimizer);
    read(o, "optimizer", "arch_lr_scale", c.arch_lr_scale);
    read(o, "optimizer", "teacher_lr_scale", c.teacher_lr_scale);
    read(o, "optimizer", "clip_norm", c.clip_norm);
  }
  if (j.contains("scene")) c.scene = SceneSpec::from_json(j.at("scene"));
  if (j.contains("data")) {
    const auto& d = j.at("data");
    require_keys(d, "data", {"train_clips", "eval_clips", "eval_length", "eval_periods"});
    read(d, "data", "train_clips", c.train_clips);
    read(d, "data", "eval_clips", c.eval_clips);
    read(d, "data", "eval_length", c.eval_length);
    read(d, "data", "eval_periods", c.eval_periods);
  }
  if (j.contains("epochs")) {
    const auto& e = j.at("epochs");
    require_keys(e, "epochs", {"teacher", "distill"});
    read(e, "epochs", "teacher", c.teacher_epochs);
    read(e, "epochs", "distill", c.distill_epochs);
  }
  read(j, "config", "seed", c.seed);
  c.validate();
  return c;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

std::uint64_t ExperimentConfig::data_seed() const { return clip_seed(seed, 101); }
std::uint64_t ExperimentConfig::eval_data_seed() const { return clip_seed(seed, 102); }
std::uint64_t ExperimentConfig::teacher_seed() const { return clip_seed(seed, 103); }
std::uint64_t ExperimentConfig::student_seed() const { return clip_seed(seed, 104); }
std::uint64_t ExperimentConfig::train_seed() const { return clip_seed(seed, 105); }

DistillOptions ExperimentConfig::distill_options() const {
  DistillOptions o;
  o.weights = weights;
  o.search = search == SearchSetting::kGumbel ? SearchMode::kGumbel : SearchMode::kFixed;
  o.selection = fixed_selection();
  o.teacher_forced = teacher_forced;
  o.task_frames = task_frames;
  o.normalize_costs = normalize_costs;
  o.clip_norm = clip_norm;
  return o;
}

Selection ExperimentConfig::fixed_selection() const {
  return Selection(network.blocks.size(),
                   search == SearchSetting::kNonCompressed ? kNonCompressed : kCompressed);
}

namespace {

NetworkSpec conv_stack(std::size_t in, std::size_t classes,
                       const std::vector<std::size_t>& widths) {
  NetworkSpec n;
  n.in_channels = in;
  n.num_classes = classes;
  std::size_t c = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    TeacherBlockSpec b;
    b.name = i == 0 ? "stem" : "body" + std::to_string(i);
    b.stage = i == 0 ? "stem" : "body";
    b.in_channels = c;
    b.out_channels = widths[i];
    n.blocks.push_back(b);
    c = widths[i];
  }
  return n;
}

}  // namespace

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  if (name == "seg-small") {
    c.network = conv_stack(3, 4, {16, 16, 16});
    c.network.compressed.gamma = 4;
    c.weights = {1.0, 0.5};
    c.period = 3;
  } else if (name == "det-style") {
    c.network = conv_stack(3, 4, {16, 32, 32});
    c.network.compressed.gamma = 16;
    c.weights = {100.0, 10.0};
    c.period = 10;
    c.eval_periods = {1, 5, 10};
  } else {
    throw ConfigError("unknown preset '" + name + "' (known: seg-small, det-style)");
  }
  c.validate();
  return c;
}

std::vector<std::string> preset_names() { return {"seg-small", "det-style"}; }

ExperimentConfig config_from_json_with_preset(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("preset")) return ExperimentConfig::from_json(j);
  json base = preset(j.at("preset").get<std::string>()).to_json();
  json patch = j;
  patch.erase("preset");
  base.merge_patch(patch);
  return ExperimentConfig::from_json(base);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json_with_preset(j);
}

}  // namespace dd
