// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "dd/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "dd/arch_search.hpp"
#include "dd/distiller.hpp"
#include "dd/errors.hpp"
#include "dd/ops.hpp"
#include "dd/scheduler.hpp"

namespace dd {

namespace {

// Offset separating distillation epoch seeds from teacher epoch seeds.
constexpr std::size_t kDistillSeedOffset = 1u << 20;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

bool is_teacher_tensor(const std::string& name) {
  return name.rfind("head.", 0) == 0 || name.find(".teacher.") != std::string::npos;
}

std::size_t compressed_student_params(const DistilledNetwork& net) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < net.num_blocks(); ++i)
    n += net.block(i).candidates[kCompressed].parameter_count();
  return n;
}

std::vector<std::vector<int>> teacher_predictions(const DistilledNetwork& net,
                                                  const VideoClip& clip) {
  NoGradGuard ng;
  std::vector<std::vector<int>> out;
  for (const auto& f : clip.frames) out.push_back(argmax_labels(net.teacher_forward(f)));
  return out;
}

}  // namespace

DistilledNetwork build_network(const ExperimentConfig& cfg) {
  DistilledNetwork net(cfg.network);
  net.init_teacher(cfg.teacher_seed());
  net.init_students(cfg.student_seed());
  return net;
}

std::vector<VideoClip> training_set(const ExperimentConfig& cfg) {
  return generate_dataset(cfg.scene, cfg.train_clips, cfg.period, cfg.data_seed());
}

std::vector<VideoClip> evaluation_set(const ExperimentConfig& cfg) {
  return generate_dataset(cfg.scene, cfg.eval_clips, cfg.eval_length, cfg.eval_data_seed());
}

std::vector<std::size_t> epoch_order(std::size_t clips, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(clips);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(clip_seed(seed, epoch));
  // Fisher-Yates with explicit draws, so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = clips; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

void load_teacher(const Checkpoint& ck, DistilledNetwork& net) {
  auto params = net.named_parameters();
  std::size_t copied = 0;
  for (auto& [name, t] : params) {
    if (!is_teacher_tensor(name)) continue;
    const auto it = std::find_if(ck.tensors.begin(), ck.tensors.end(),
                                 [&](const NamedTensor& s) { return s.name == name; });
    if (it == ck.tensors.end()) throw FormatError("checkpoint lacks teacher tensor " + name);
    if (it->shape != t.shape()) {
      throw FormatError("checkpoint tensor " + name + " has shape " + shape_to_string(it->shape) +
                        ", network expects " + shape_to_string(t.shape()));
    }
    std::copy(it->values.begin(), it->values.end(), t.mutable_values().begin());
    ++copied;
  }
  if (copied == 0) throw FormatError("checkpoint holds no teacher tensors");
}

Sgd make_teacher_optimizer(const ExperimentConfig& cfg, DistilledNetwork& net) {
  net.set_teacher_trainable(true);
  net.set_students_trainable(false);
  net.set_arch_trainable(false);
  Sgd opt(cfg.teacher_optimizer);
  for (auto& p : net.teacher_parameters()) opt.add_param(p);
  return opt;
}

double teacher_accuracy(const DistilledNetwork& net, const std::vector<VideoClip>& clips) {
  double correct = 0.0, total = 0.0;
  for (const auto& clip : clips) {
    const auto preds = teacher_predictions(net, clip);
    for (std::size_t t = 0; t < clip.length(); ++t) {
      const double n = static_cast<double>(clip.labels[t].size());
      correct += pixel_accuracy(preds[t], clip.labels[t]) * n;
      total += n;
    }
  }
  return total > 0.0 ? correct / total : 0.0;
}

TeacherTraining train_teacher(const ExperimentConfig& cfg, DistilledNetwork& net, Sgd& opt,
                              const std::vector<VideoClip>& clips, std::size_t start_epoch,
                              std::size_t end_epoch, double target_accuracy,
                              const LogSink& log) {
  if (clips.empty()) throw ConfigError("teacher training needs at least one clip");
  TeacherTraining out;
  out.epochs_completed = start_epoch;
  for (std::size_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
    double sum = 0.0;
    for (std::size_t idx : epoch_order(clips.size(), cfg.train_seed(), epoch))
      sum += teacher_step(net, clips[idx], opt, cfg.clip_norm);
    out.last_loss = sum / static_cast<double>(clips.size());
    out.epochs_completed = epoch + 1;
    nlohmann::json line = {{"phase", "teacher"}, {"epoch", epoch + 1}, {"loss", out.last_loss}};
    if (target_accuracy > 0.0) {
      out.accuracy = teacher_accuracy(net, clips);
      line["accuracy"] = out.accuracy;
    }
    if (log) log(line);
    if (target_accuracy > 0.0 && out.accuracy >= target_accuracy) {
      out.target_reached = true;
      break;
    }
  }
  if (target_accuracy <= 0.0) out.accuracy = teacher_accuracy(net, clips);
  return out;
}

Sgd make_distill_optimizer(const ExperimentConfig& cfg, DistilledNetwork& net) {
  net.set_teacher_trainable(cfg.train_teacher_jointly);
  net.set_students_trainable(true);
  net.set_arch_trainable(cfg.search == SearchSetting::kGumbel);
  return make_optimizer(net, cfg.student_optimizer, cfg.arch_lr_scale, cfg.teacher_lr_scale);
}

Selection deployed_selection(const ExperimentConfig& cfg, const DistilledNetwork& net) {
  return cfg.search == SearchSetting::kGumbel ? finalize_architecture(net)
                                              : cfg.fixed_selection();
}

DistillTraining distill(const ExperimentConfig& cfg, DistilledNetwork& net, Sgd& opt,
                        const std::vector<VideoClip>& clips, std::size_t start_epoch,
                        std::size_t end_epoch, const LogSink& log) {
  if (clips.empty()) throw ConfigError("distillation needs at least one clip");
  DistillOptions options = cfg.distill_options();
  const std::size_t total_steps = cfg.distill_epochs * clips.size();
  DistillTraining out;
  out.epochs_completed = start_epoch;
  for (std::size_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
    std::mt19937_64 rng(clip_seed(cfg.train_seed(), 2 * kDistillSeedOffset + epoch));
    const auto order = epoch_order(clips.size(), cfg.train_seed(), kDistillSeedOffset + epoch);
    double sum = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t step = epoch * clips.size() + k;
      options.temperature = temperature_at(step, total_steps, cfg.tau_start, cfg.tau_end);
      const auto rep = train_clip(net, clips[order[k]], opt, options, rng);
      sum += rep.total;
      if (log) {
        auto line = rep.to_json();
        line["phase"] = "distill";
        line["epoch"] = epoch + 1;
        line["step"] = step + 1;
        line["clip"] = order[k];
        log(line);
      }
    }
    out.last_total = sum / static_cast<double>(clips.size());
    out.epochs_completed = epoch + 1;
  }
  out.selection = deployed_selection(cfg, net);
  return out;
}

EvalReport evaluate(const DistilledNetwork& net, const Selection& selection,
                    const std::vector<VideoClip>& clips, const std::vector<std::size_t>& periods,
                    const DistilledNetwork* reference) {
  if (clips.empty()) throw ConfigError("evaluation needs at least one clip");
  NoGradGuard ng;
  EvalReport report;
  report.selection = selection;

  std::vector<std::vector<std::vector<int>>> teacher, ref;
  for (const auto& clip : clips) {
    teacher.push_back(teacher_predictions(net, clip));
    ref.push_back(reference ? teacher_predictions(*reference, clip) : teacher.back());
  }

  for (std::size_t period : periods) {
    if (period == 0) throw ConfigError("key-frame period must be at least 1");
    struct Acc {
      double correct = 0, ref_correct = 0, teacher_correct = 0, copy_correct = 0;
      double pixels = 0, miou = 0, copy_miou = 0;
      std::size_t frames = 0;
    };
    std::vector<Acc> acc(period);
    PeriodSummary summary;
    summary.period = period;
    double correct = 0, teacher_correct = 0, ref_correct = 0, copy_correct = 0, pixels = 0;
    double miou_sum = 0;
    std::size_t frames = 0;

    for (std::size_t c = 0; c < clips.size(); ++c) {
      const auto& clip = clips[c];
      const auto stream = process_stream(net, selection, clip.frames, period);
      const auto copy = frame_copy_predictions(net, clip.frames, period);
      std::vector<std::vector<int>> preds;
      for (const auto& l : stream.logits) preds.push_back(argmax_labels(l));
      for (std::size_t t = 0; t < clip.length(); ++t) {
        const auto& gt = clip.labels[t];
        const double n = static_cast<double>(gt.size());
        Acc& a = acc[t % period];
        const double ok = pixel_accuracy(preds[t], gt) * n;
        const double tok = pixel_accuracy(teacher[c][t], gt) * n;
        const double rok = pixel_accuracy(ref[c][t], gt) * n;
        const double cok = pixel_accuracy(copy[t], gt) * n;
        const double m = miou(preds[t], gt, clip.num_classes);
        a.correct += ok;
        a.teacher_correct += tok;
        a.ref_correct += rok;
        a.copy_correct += cok;
        a.pixels += n;
        a.miou += m;
        a.copy_miou += miou(copy[t], gt, clip.num_classes);
        ++a.frames;
        correct += ok;
        teacher_correct += tok;
        ref_correct += rok;
        copy_correct += cok;
        pixels += n;
        miou_sum += m;
        ++frames;
      }
      const std::size_t h = clip.height, w = clip.width, k = clip.num_classes;
      summary.tc += temporal_consistency(preds, clip.motion, h, w, k);
      summary.teacher_tc += temporal_consistency(teacher[c], clip.motion, h, w, k);
      summary.frame_copy_tc += temporal_consistency(copy, clip.motion, h, w, k);
    }
    for (std::size_t d = 0; d < period; ++d) {
      const Acc& a = acc[d];
      if (a.frames == 0) continue;
      DistanceRow row;
      row.period = period;
      row.distance = d;
      row.frames = a.frames;
      row.accuracy = a.correct / a.pixels;
      row.miou = a.miou / static_cast<double>(a.frames);
      row.teacher_accuracy = a.teacher_correct / a.pixels;
      row.reference_accuracy = a.ref_correct / a.pixels;
      row.frame_copy_accuracy = a.copy_correct / a.pixels;
      row.frame_copy_miou = a.copy_miou / static_cast<double>(a.frames);
      report.rows.push_back(row);
    }
    const double nc = static_cast<double>(clips.size());
    summary.tc /= nc;
    summary.teacher_tc /= nc;
    summary.frame_copy_tc /= nc;
    summary.accuracy = correct / pixels;
    summary.miou = miou_sum / static_cast<double>(frames);
    summary.teacher_accuracy = teacher_correct / pixels;
    summary.reference_accuracy = ref_correct / pixels;
    summary.frame_copy_accuracy = copy_correct / pixels;
    summary.cost = network_cost(net, clips.front().frames.front().shape(), period, selection);
    report.periods.push_back(summary);
  }
  return report;
}

std::vector<double> heldout_block_regression(const DistilledNetwork& net,
                                             const Selection& selection,
                                             const std::vector<VideoClip>& clips) {
  NoGradGuard ng;
  const std::size_t nb = net.num_blocks();
  if (selection.size() != nb) throw ConfigError("selection does not match the network");
  const bool delta = net.spec().mode == DistillMode::kDelta;
  std::vector<double> loss(nb, 0.0);
  std::size_t samples = 0;
  for (const auto& clip : clips) {
    std::vector<Tensor> x_prev(nb), f_prev(nb);
    for (std::size_t t = 0; t < clip.length(); ++t) {
      Tensor x = clip.frames[t];
      for (std::size_t i = 0; i < nb; ++i) {
        const Tensor f = net.block(i).teacher.forward(x);
        if (t > 0) {
          const auto& student = net.block(i).candidates[static_cast<std::size_t>(selection[i])];
          const Tensor pred = delta ? add(f_prev[i], student.forward(x, x_prev[i]))
                                    : student.forward(x, std::nullopt);
          double sq = 0.0;
          const auto pv = pred.values();
          const auto fv = f.values();
          for (std::size_t j = 0; j < pv.size(); ++j) sq += (pv[j] - fv[j]) * (pv[j] - fv[j]);
          loss[i] += sq / static_cast<double>(pv.size());
        }
        x_prev[i] = x;
        f_prev[i] = f;
        if (i + 1 < nb) x = net.block_output_to_next_input(i, f);
      }
    }
    samples += clip.length() - 1;
  }
  if (samples == 0) throw ConfigError("held-out regression needs clips of two or more frames");
  for (double& v : loss) v /= static_cast<double>(samples);
  return loss;
}

AbResult delta_vs_feature(const ExperimentConfig& cfg, const Checkpoint& teacher,
                          const std::vector<VideoClip>& train,
                          const std::vector<VideoClip>& heldout, const LogSink& log) {
  AbResult out;
  for (DistillMode mode : {DistillMode::kDelta, DistillMode::kFeature}) {
    ExperimentConfig c = cfg;
    c.network.mode = mode;
    c.search = SearchSetting::kCompressed;
    c.train_teacher_jointly = false;
    DistilledNetwork net(c.network);
    load_teacher(teacher, net);
    net.init_students(c.student_seed());
    Sgd opt = make_distill_optimizer(c, net);
    const LogSink tagged = log ? LogSink([&](const nlohmann::json& j) {
      auto line = j;
      line["mode"] = to_string(mode);
      log(line);
    })
                               : LogSink();
    distill(c, net, opt, train, 0, c.distill_epochs, tagged);
    auto loss = heldout_block_regression(net, c.fixed_selection(), heldout);
    const double total = std::accumulate(loss.begin(), loss.end(), 0.0);
    if (mode == DistillMode::kDelta) {
      out.delta_student_params = compressed_student_params(net);
      out.delta_loss = std::move(loss);
      out.delta_total = total;
      out.delta_network.emplace(std::move(net));
    } else {
      out.feature_student_params = compressed_student_params(net);
      out.feature_loss = std::move(loss);
      out.feature_total = total;
    }
  }
  if (out.delta_student_params != out.feature_student_params) {
    throw ConfigError("delta and feature students differ in size (" +
                      std::to_string(out.delta_student_params) + " vs " +
                      std::to_string(out.feature_student_params) + " parameters)");
  }
  return out;
}

SweepPoint sweep_point(const ExperimentConfig& cfg, double beta, const Checkpoint& teacher,
                       const std::vector<VideoClip>& train,
                       const std::vector<VideoClip>& heldout, const LogSink& log) {
  ExperimentConfig c = cfg;
  c.weights.beta = beta;
  c.search = SearchSetting::kGumbel;
  c.validate();
  DistilledNetwork net(c.network);
  load_teacher(teacher, net);
  net.init_students(c.student_seed());
  Sgd opt = make_distill_optimizer(c, net);
  const LogSink tagged = log ? LogSink([&](const nlohmann::json& j) {
    auto line = j;
    line["beta"] = beta;
    log(line);
  })
                             : LogSink();
  const auto run = distill(c, net, opt, train, 0, c.distill_epochs, tagged);

  SweepPoint p;
  p.beta = beta;
  p.selection = run.selection;
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
  std::size_t compressed = 0;
  for (std::size_t i = 0; i < net.num_blocks(); ++i) {
    auto& [hit, total] = counts[net.block(i).teacher.spec().stage];
    const bool comp = p.selection[i] == kCompressed;
    hit += comp ? 1 : 0;
    ++total;
    compressed += comp ? 1 : 0;
  }
  for (const auto& [stage, ht] : counts)
    p.stage_fraction[stage] = static_cast<double>(ht.first) / static_cast<double>(ht.second);
  p.compressed_fraction =
      static_cast<double>(compressed) / static_cast<double>(net.num_blocks());
  const auto report = evaluate(net, p.selection, heldout, {c.period});
  p.amortized_ratio = report.periods.front().cost.amortized_ratio();
  p.accuracy = report.periods.front().accuracy;
  return p;
}

std::string eval_csv(const EvalReport& report, const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "config_hash,seed,mode,T,distance,frames,accuracy,miou,teacher_accuracy,"
         "reference_accuracy,frame_copy_accuracy,frame_copy_miou\n";
  for (const auto& r : report.rows) {
    out << cfg.hash() << ',' << cfg.seed << ',' << to_string(cfg.network.mode) << ','
        << r.period << ',' << r.distance << ',' << r.frames << ',' << num(r.accuracy) << ','
        << num(r.miou) << ',' << num(r.teacher_accuracy) << ',' << num(r.reference_accuracy)
        << ',' << num(r.frame_copy_accuracy) << ',' << num(r.frame_copy_miou) << '\n';
  }
  return out.str();
}

std::string eval_summary_csv(const EvalReport& report, const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "config_hash,seed,mode,T,accuracy,miou,tc,teacher_accuracy,reference_accuracy,"
         "teacher_tc,frame_copy_accuracy,frame_copy_tc,teacher_macs,student_macs,"
         "amortized_macs,amortized_ratio\n";
  for (const auto& p : report.periods) {
    out << cfg.hash() << ',' << cfg.seed << ',' << to_string(cfg.network.mode) << ','
        << p.period << ',' << num(p.accuracy) << ',' << num(p.miou) << ',' << num(p.tc) << ','
        << num(p.teacher_accuracy) << ',' << num(p.reference_accuracy) << ','
        << num(p.teacher_tc) << ',' << num(p.frame_copy_accuracy) << ','
        << num(p.frame_copy_tc) << ',' << p.cost.teacher_per_frame << ','
        << p.cost.student_per_frame << ',' << num(p.cost.amortized_per_frame) << ','
        << num(p.cost.amortized_ratio()) << '\n';
  }
  return out.str();
}

std::string sweep_csv(const std::vector<SweepPoint>& points, const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "config_hash,seed,beta,stage,compressed_fraction,amortized_ratio,accuracy,selection\n";
  for (const auto& p : points) {
    std::string sel;
    for (int s : p.selection) sel += s == kCompressed ? 'C' : 'N';
    const auto row = [&](const std::string& stage, double fraction) {
      out << cfg.hash() << ',' << cfg.seed << ',' << num(p.beta) << ',' << stage << ','
          << num(fraction) << ',' << num(p.amortized_ratio) << ',' << num(p.accuracy) << ','
          << sel << '\n';
    };
    for (const auto& [stage, f] : p.stage_fraction) row(stage, f);
    row("all", p.compressed_fraction);
  }
  return out.str();
}

std::string ab_csv(const AbResult& ab, const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "config_hash,seed,block,delta_loss,feature_loss,delta_student_params,"
         "feature_student_params\n";
  const auto row = [&](const std::string& block, double d, double f) {
    out << cfg.hash() << ',' << cfg.seed << ',' << block << ',' << num(d) << ',' << num(f)
        << ',' << ab.delta_student_params << ',' << ab.feature_student_params << '\n';
  };
  for (std::size_t i = 0; i < ab.delta_loss.size(); ++i)
    row(cfg.network.blocks[i].name, ab.delta_loss[i], ab.feature_loss[i]);
  row("all", ab.delta_total, ab.feature_total);
  return out.str();
}

bool TableCheck::within(double rel_tol) const {
  return std::abs(computed - expected) <= rel_tol * std::abs(expected);
}

std::vector<TableCheck> table_checks() {
  std::vector<TableCheck> rows = {
      {2.5, 0.5, 10, 0.70, 0.0},
      {149.1, 15.9, 10, 29.2, 0.0},
      {143.7, 35.8, 3, 71.8, 0.0},
  };
  for (auto& r : rows) r.computed = amortized_cost(r.teacher, r.student, r.period);
  return rows;
}

nlohmann::json cost_document(const ExperimentConfig& cfg, const DistilledNetwork& net,
                             const Selection& selection) {
  const Shape frame{1, cfg.scene.channels, cfg.scene.height, cfg.scene.width};
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& r : table_checks()) {
    checks.push_back({{"teacher_gmacs", r.teacher},
                      {"student_gmacs", r.student},
                      {"T", r.period},
                      {"expected_gmacs", r.expected},
                      {"computed_gmacs", r.computed},
                      {"within_0.5pct", r.within(0.005)}});
  }
  return {{"config_hash", cfg.hash()},
          {"seed", cfg.seed},
          {"report", network_cost(net, frame, cfg.period, selection).to_json()},
          {"table_checks", checks}};
}

}  // namespace dd
