// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// ddistill: experiment runner. Exit codes: 0 success, 1 other failure,
// 2 configuration error, 3 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "dd/checkpoint.hpp"
#include "dd/config.hpp"
#include "dd/errors.hpp"
#include "dd/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dd;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Common {
  std::string config_path;
  std::string preset_name;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  bool error_json = false;
};

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config_path.empty()) {
    cfg = load_config(c.config_path);
    if (!c.preset_name.empty()) throw ConfigError("--config and --preset are exclusive");
  } else if (!c.preset_name.empty()) {
    cfg = preset(c.preset_name);
  } else {
    throw ConfigError("one of --config or --preset is required");
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

// Config stored in a checkpoint, with the --seed override applied.
ExperimentConfig config_of(const Checkpoint& ck, const Common& c) {
  ExperimentConfig cfg;
  try {
    cfg = ExperimentConfig::from_json(json::parse(ck.config_json));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint config is not JSON: ") + e.what());
  }
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

fs::path prepare_out(const Common& c) {
  fs::path dir(c.out_dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

class JsonLines {
 public:
  JsonLines(const fs::path& path, bool append)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw FormatError("cannot write " + path.string());
  }
  LogSink sink() {
    return [this](const json& j) { out_ << j.dump() << '\n'; };
  }

 private:
  std::ofstream out_;
};

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated list of positive integers, got '" + text +
                        "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated list of numbers, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

std::size_t thread_count() {
  const char* env = std::getenv("DD_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("DD_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

// Teacher from a checkpoint file, or trained in-process when none is given.
Checkpoint teacher_checkpoint(const ExperimentConfig& cfg, const std::string& path,
                              const std::vector<VideoClip>& train) {
  if (!path.empty()) return read_checkpoint(path);
  DistilledNetwork net = build_network(cfg);
  Sgd opt = make_teacher_optimizer(cfg, net);
  train_teacher(cfg, net, opt, train, 0, cfg.teacher_epochs);
  return capture_checkpoint(net, nullptr, cfg.to_json().dump(), "teacher", cfg.teacher_epochs);
}

int cmd_train_teacher(const Common& c, const std::string& resume,
                      std::optional<std::size_t> epochs, double target) {
  ExperimentConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c);
  const auto train = training_set(cfg);
  DistilledNetwork net = build_network(cfg);
  Sgd opt = make_teacher_optimizer(cfg, net);
  std::size_t start = 0;
  if (!resume.empty()) {
    const Checkpoint ck = read_checkpoint(resume);
    if (ck.phase != "teacher") throw ConfigError("--resume needs a teacher checkpoint");
    if (ck.config_json != cfg.to_json().dump()) {
      throw ConfigError("checkpoint was written with a different config");
    }
    restore_checkpoint(ck, net, &opt);
    start = ck.epoch;
  }
  const std::size_t end = epochs.value_or(cfg.teacher_epochs);
  JsonLines log(dir / "teacher_log.jsonl", !resume.empty());
  const auto result = train_teacher(cfg, net, opt, train, start, end, target, log.sink());
  Checkpoint ck =
      capture_checkpoint(net, &opt, cfg.to_json().dump(), "teacher", result.epochs_completed);
  ck.meta = {{"train_accuracy", result.accuracy}, {"loss", result.last_loss}};
  write_checkpoint(dir / "teacher.ckpt", ck);
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
  json summary = {{"config_hash", cfg.hash()},
                  {"seed", cfg.seed},
                  {"epochs", result.epochs_completed},
                  {"loss", result.last_loss},
                  {"train_accuracy", result.accuracy},
                  {"target_reached", result.target_reached}};
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_distill(const Common& c, const std::string& teacher_path, const std::string& resume,
                std::optional<std::size_t> epochs) {
  ExperimentConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c);
  const auto train = training_set(cfg);
  DistilledNetwork net(cfg.network);
  std::size_t start = 0;
  std::optional<Checkpoint> resumed;
  if (!resume.empty()) {
    resumed = read_checkpoint(resume);
    if (resumed->phase != "distill") throw ConfigError("--resume needs a distill checkpoint");
    if (resumed->config_json != cfg.to_json().dump()) {
      throw ConfigError("checkpoint was written with a different config");
    }
  } else {
    if (teacher_path.empty()) throw ConfigError("distill needs --teacher or --resume");
    load_teacher(read_checkpoint(teacher_path), net);
    net.init_students(cfg.student_seed());
  }
  Sgd opt = make_distill_optimizer(cfg, net);
  if (resumed) {
    restore_checkpoint(*resumed, net, &opt);
    start = resumed->epoch;
  }
  JsonLines log(dir / "distill_log.jsonl", resumed.has_value());
  const auto result = distill(cfg, net, opt, train, start, epochs.value_or(cfg.distill_epochs), log.sink());
  Checkpoint ck =
      capture_checkpoint(net, &opt, cfg.to_json().dump(), "distill", result.epochs_completed);
  ck.meta = {{"selection", result.selection}, {"total", result.last_total}};
  write_checkpoint(dir / "distill.ckpt", ck);
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
  write_text(dir / "cost.json", cost_document(cfg, net, result.selection).dump(2) + "\n");
  std::cout << json({{"config_hash", cfg.hash()},
                     {"seed", cfg.seed},
                     {"epochs", result.epochs_completed},
                     {"total", result.last_total},
                     {"selection", result.selection}})
                   .dump()
            << '\n';
  return 0;
}

Selection checkpoint_selection(const Checkpoint& ck, const ExperimentConfig& cfg,
                               const DistilledNetwork& net) {
  if (ck.meta.contains("selection")) return ck.meta.at("selection").get<Selection>();
  return deployed_selection(cfg, net);
}

int cmd_eval(const Common& c, const std::string& ck_path, const std::string& periods,
             const std::string& clips_dir, const std::string& reference_path) {
  if (ck_path.empty()) throw ConfigError("eval needs --checkpoint");
  const Checkpoint ck = read_checkpoint(ck_path);
  ExperimentConfig cfg = config_of(ck, c);
  DistilledNetwork net(cfg.network);
  restore_checkpoint(ck, net, nullptr);
  const Selection selection = checkpoint_selection(ck, cfg, net);
  const auto clips = clips_dir.empty() ? evaluation_set(cfg) : read_dataset(clips_dir);
  const auto ts = periods.empty() ? cfg.eval_periods : parse_sizes(periods);
  std::optional<DistilledNetwork> reference;
  if (!reference_path.empty()) {
    reference.emplace(cfg.network);
    load_teacher(read_checkpoint(reference_path), *reference);
  }
  const auto report = evaluate(net, selection, clips, ts, reference ? &*reference : nullptr);
  const fs::path dir = prepare_out(c);
  write_text(dir / "eval.csv", eval_csv(report, cfg));
  write_text(dir / "eval_summary.csv", eval_summary_csv(report, cfg));
  std::cout << eval_summary_csv(report, cfg);
  return 0;
}

int cmd_sweep(const Common& c, const std::string& teacher_path, const std::string& betas_text) {
  ExperimentConfig cfg = resolve_config(c);
  const auto betas = parse_doubles(betas_text);
  for (double b : betas) {
    if (!(b >= 0.0)) throw ConfigError("beta values must be non-negative");
  }
  const fs::path dir = prepare_out(c);
  const auto train = training_set(cfg);
  const auto heldout = evaluation_set(cfg);
  const Checkpoint teacher = teacher_checkpoint(cfg, teacher_path, train);

  // Points are independent; with DD_THREADS > 1 they run concurrently and are
  // reported in input order.
  std::vector<SweepPoint> points(betas.size());
  std::vector<std::exception_ptr> errors(betas.size());
  const std::size_t workers = std::min(thread_count(), betas.size());
  const auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < betas.size(); i += workers) {
      try {
        points[i] = sweep_point(cfg, betas[i], teacher, train, heldout);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  write_text(dir / "sweep.csv", sweep_csv(points, cfg));
  std::cout << sweep_csv(points, cfg);
  return 0;
}

int cmd_compare(const Common& c, const std::string& teacher_path) {
  ExperimentConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c);
  const auto train = training_set(cfg);
  const auto heldout = evaluation_set(cfg);
  const Checkpoint teacher = teacher_checkpoint(cfg, teacher_path, train);
  const auto ab = delta_vs_feature(cfg, teacher, train, heldout);
  write_text(dir / "modes.csv", ab_csv(ab, cfg));
  std::cout << ab_csv(ab, cfg);
  return 0;
}

int cmd_cost(const Common& c, const std::string& ck_path) {
  ExperimentConfig cfg;
  std::optional<Checkpoint> ck;
  if (!ck_path.empty()) {
    ck = read_checkpoint(ck_path);
    cfg = config_of(*ck, c);
  } else {
    cfg = resolve_config(c);
  }
  DistilledNetwork net(cfg.network);
  Selection selection = cfg.fixed_selection();
  if (ck) {
    restore_checkpoint(*ck, net, nullptr);
    selection = checkpoint_selection(*ck, cfg, net);
  } else {
    net = build_network(cfg);
    selection = deployed_selection(cfg, net);
  }
  const json doc = cost_document(cfg, net, selection);
  const fs::path dir = prepare_out(c);
  write_text(dir / "cost.json", doc.dump(2) + "\n");
  std::cout << doc.dump(2) << '\n';
  for (const auto& row : doc.at("table_checks")) {
    if (!row.at("within_0.5pct").get<bool>()) return kExitNumeric;
  }
  return 0;
}

int cmd_datagen(const Common& c, std::size_t count, std::optional<std::size_t> length) {
  ExperimentConfig cfg = resolve_config(c);
  if (count == 0) throw ConfigError("--count must be positive");
  const fs::path dir = prepare_out(c);
  const std::size_t len = length.value_or(cfg.eval_length);
  if (len == 0) throw ConfigError("--length must be positive");
  write_dataset(dir, cfg.scene, count, len, cfg.seed);
  std::cout << json({{"clips", count}, {"length", len}, {"dir", dir.string()}}).dump() << '\n';
  return 0;
}

int report_error(const Common& c, const char* kind, const std::string& message, int code) {
  if (c.error_json) {
    std::cerr << json({{"error", kind}, {"message", message}, {"exit_code", code}}).dump()
              << '\n';
  } else {
    std::cerr << "ddistill: " << kind << ": " << message << '\n';
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delta distillation experiment runner"};
  app.require_subcommand(1);
  Common common;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON experiment config");
    sub->add_option("--preset", common.preset_name, "named preset: seg-small, det-style");
    sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_option("--out-dir", common.out_dir, "output directory")->capture_default_str();
    sub->add_flag("--error-json", common.error_json, "print errors as JSON on stderr");
  };

  std::string resume, teacher, checkpoint, periods, clips, reference, betas = "0,0.1,0.5,2";
  std::optional<std::size_t> epochs, length;
  double target = 0.0;
  std::size_t count = 8;

  auto* train_cmd = app.add_subcommand("train-teacher", "supervised per-frame teacher training");
  add_common(train_cmd);
  train_cmd->add_option("--resume", resume, "continue from a teacher checkpoint");
  train_cmd->add_option("--epochs", epochs, "stop after this many epochs in total");
  train_cmd->add_option("--target-accuracy", target, "stop once training accuracy reaches this");

  auto* distill_cmd = app.add_subcommand("distill", "train students and architecture logits");
  add_common(distill_cmd);
  distill_cmd->add_option("--teacher", teacher, "teacher checkpoint");
  distill_cmd->add_option("--resume", resume, "continue from a distill checkpoint");
  distill_cmd->add_option("--epochs", epochs, "stop after this many epochs in total");

  auto* eval_cmd = app.add_subcommand("eval", "key-frame schedule evaluation per distance");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "distill checkpoint")->required();
  eval_cmd->add_option("--periods", periods, "comma-separated key-frame periods");
  eval_cmd->add_option("--clips", clips, "dataset directory from datagen");
  eval_cmd->add_option("--reference", reference, "teacher checkpoint to compare against");

  auto* sweep_cmd = app.add_subcommand("sweep-beta", "compression fraction versus beta");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--teacher", teacher, "teacher checkpoint (trained if omitted)");
  sweep_cmd->add_option("--betas", betas, "comma-separated beta values")->capture_default_str();

  auto* compare_cmd = app.add_subcommand("compare-modes", "delta versus feature distillation");
  add_common(compare_cmd);
  compare_cmd->add_option("--teacher", teacher, "teacher checkpoint (trained if omitted)");

  auto* cost_cmd = app.add_subcommand("cost", "MAC accounting and table checks");
  add_common(cost_cmd);
  cost_cmd->add_option("--checkpoint", checkpoint, "checkpoint instead of a config");

  auto* datagen_cmd = app.add_subcommand("datagen", "write synthetic clips and a manifest");
  add_common(datagen_cmd);
  datagen_cmd->add_option("--count", count, "number of clips")->capture_default_str();
  datagen_cmd->add_option("--length", length, "frames per clip (default eval_length)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (train_cmd->parsed()) return cmd_train_teacher(common, resume, epochs, target);
    if (distill_cmd->parsed()) return cmd_distill(common, teacher, resume, epochs);
    if (eval_cmd->parsed()) return cmd_eval(common, checkpoint, periods, clips, reference);
    if (sweep_cmd->parsed()) return cmd_sweep(common, teacher, betas);
    if (compare_cmd->parsed()) return cmd_compare(common, teacher);
    if (cost_cmd->parsed()) return cmd_cost(common, checkpoint);
    if (datagen_cmd->parsed()) return cmd_datagen(common, count, length);
  } catch (const ConfigError& e) {
    return report_error(common, "config", e.what(), kExitConfig);
  } catch (const NumericError& e) {
    return report_error(common, "numeric", e.what(), kExitNumeric);
  } catch (const FormatError& e) {
    return report_error(common, "format", e.what(), kExitOther);
  } catch (const std::exception& e) {
    return report_error(common, "error", e.what(), kExitOther);
  }
  return kExitOther;
}
