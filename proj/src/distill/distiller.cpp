// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "dd/distiller.hpp"

#include <cmath>

#include "dd/cost_model.hpp"
#include "dd/errors.hpp"
#include "dd/ops.hpp"

namespace dd {

void LossWeights::validate() const {
  if (!std::isfinite(alpha) || !std::isfinite(beta) || alpha < 0.0 || beta < 0.0) {
    throw ConfigError("loss weights alpha and beta must be finite and non-negative");
  }
}

double TrainStepReport::recombined(const LossWeights& w) const {
  double dd = 0.0, sp = 0.0;
  for (double v : distill_losses) dd += v;
  for (double v : sparsity_losses) sp += v;
  return task_loss + w.alpha * dd + w.beta * sp;
}

nlohmann::json TrainStepReport::to_json() const {
  return {{"task_loss", task_loss},
          {"distill_losses", distill_losses},
          {"sparsity_losses", sparsity_losses},
          {"total", total},
          {"grad_norm", grad_norm},
          {"expected_cost", expected_cost},
          {"selection", selection},
          {"temperature", temperature}};
}

namespace {

Tensor regression_loss(const Tensor& target, const Tensor& predicted, const char* what) {
  if (target.shape() != predicted.shape()) {
    throw ShapeError(std::string(what) + ": target " + shape_to_string(target.shape()) +
                     " vs prediction " + shape_to_string(predicted.shape()));
  }
  if (target.requires_grad()) {
    throw ConfigError(std::string(what) + ": target must be detached from the tape");
  }
  return l2_loss(predicted, target);
}

}  // namespace

Tensor delta_distillation_loss(const Tensor& target_delta, const Tensor& predicted_delta) {
  return regression_loss(target_delta, predicted_delta, "delta distillation loss");
}

Tensor feature_distillation_loss(const Tensor& target_features,
                                 const Tensor& predicted_features) {
  return regression_loss(target_features, predicted_features, "feature distillation loss");
}

namespace {

// Student output of one block: the fixed candidate, or the straight-through
// mixture sum_c w_c g_c whose value equals the sampled candidate's output.
struct BlockStudent {
  const BlockPair* block = nullptr;
  int choice = kCompressed;
  std::optional<Tensor> mix;  // [2] straight-through weights

  Tensor operator()(const Tensor& x_t, const std::optional<Tensor>& x_prev) const {
    if (!mix) return block->candidates[static_cast<std::size_t>(choice)].forward(x_t, x_prev);
    Tensor out;
    for (int c = 0; c < 2; ++c) {
      std::vector<double> pick(2, 0.0);
      pick[static_cast<std::size_t>(c)] = 1.0;
      const Tensor w = weighted_sum(*mix, pick);
      const Tensor term =
          scale_by(block->candidates[static_cast<std::size_t>(c)].forward(x_t, x_prev), w);
      out = c == 0 ? term : add(out, term);
    }
    return out;
  }
};

bool attached(const Tensor& t) { return t.requires_grad(); }

}  // namespace

ClipObjective clip_objective(const DistilledNetwork& net, const VideoClip& clip,
                             const DistillOptions& options, std::mt19937_64& rng) {
  options.weights.validate();
  const std::size_t frames = clip.length();
  if (frames < 2) throw ConfigError("distillation needs clips of at least two frames");
  const std::size_t nb = net.num_blocks();
  const bool delta = net.spec().mode == DistillMode::kDelta;
  const double alpha = options.weights.alpha, beta = options.weights.beta;
  const double inv_t = 1.0 / static_cast<double>(frames);

  ClipObjective out;
  TrainStepReport& rep = out.report;
  rep.temperature = options.temperature;
  rep.selection.assign(nb, kCompressed);
  rep.distill_losses.assign(nb, 0.0);
  rep.sparsity_losses.assign(nb, 0.0);

  // Architecture, one draw per clip.
  std::vector<BlockStudent> students(nb);
  if (options.search == SearchMode::kFixed && options.selection.size() != nb) {
    throw ConfigError("fixed selection has " + std::to_string(options.selection.size()) +
                      " entries for " + std::to_string(nb) + " blocks");
  }
  for (std::size_t i = 0; i < nb; ++i) {
    students[i].block = &net.block(i);
    if (options.search == SearchMode::kGumbel) {
      auto s = sample_architecture(net.block(i).arch_logits, options.temperature, rng);
      students[i].choice = s.choice;
      students[i].mix = s.weights;
    } else {
      const int c = options.selection[i];
      if (c != kNonCompressed && c != kCompressed) {
        throw ConfigError("selection entries must be 0 or 1");
      }
      students[i].choice = c;
    }
    rep.selection[i] = students[i].choice;
  }

  // Expected cost per block.
  const auto macs = block_macs(net, clip.frames.front().shape());
  Tensor sparsity_total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < nb; ++i) {
    const auto costs = candidate_costs(macs[i], options.normalize_costs);
    Tensor ls = options.search == SearchMode::kGumbel
                    ? sparsity_loss(net.block(i).arch_logits, costs)
                    : Tensor::scalar(costs[static_cast<std::size_t>(students[i].choice)]);
    rep.sparsity_losses[i] = ls.item();
    rep.expected_cost += ls.item();
    sparsity_total = add(sparsity_total, ls);
  }

  // Key-frame: teacher blocks, live graph.
  std::vector<Tensor> x_prev(nb), z_prev(nb), f_prev(nb);
  {
    Tensor x = clip.frames[0];
    Tensor z;
    for (std::size_t i = 0; i < nb; ++i) {
      z = net.block(i).teacher.forward(x);
      x_prev[i] = x;
      z_prev[i] = z;
      f_prev[i] = z.detach();
      if (i + 1 < nb) x = net.block_output_to_next_input(i, z);
    }
    out.logits.push_back(net.head_forward(z));
  }
  Tensor task_total = softmax_cross_entropy(out.logits[0], clip.labels[0]);
  std::size_t task_frames = 1;

  std::vector<Tensor> distill_total(nb, Tensor::scalar(0.0));
  for (std::size_t t = 1; t < frames; ++t) {
    // Teacher-path inputs for the teacher-forced variant.
    std::vector<Tensor> forced_in(nb), forced_out(nb);
    if (options.teacher_forced) {
      NoGradGuard ng;
      Tensor x = clip.frames[t];
      for (std::size_t i = 0; i < nb; ++i) {
        forced_in[i] = x;
        forced_out[i] = net.block(i).teacher.forward(x);
        if (i + 1 < nb) x = net.block_output_to_next_input(i, forced_out[i]);
      }
    }

    Tensor x = clip.frames[t];
    Tensor z;
    for (std::size_t i = 0; i < nb; ++i) {
      const Tensor x_in = options.teacher_forced ? forced_in[i] : x;
      const Tensor& xp_in = x_prev[i];
      const bool live_inputs = attached(x_in) || (delta && attached(xp_in));

      Tensor f_now;
      {
        NoGradGuard ng;
        f_now = options.teacher_forced ? forced_out[i]
                                       : net.block(i).teacher.forward(x_in.detach());
      }
      const auto student_on = [&](const Tensor& a, const Tensor& b) {
        return delta ? students[i](a, std::optional<Tensor>(b))
                     : students[i](a, std::nullopt);
      };

      Tensor pred_live = student_on(x_in, xp_in);
      Tensor loss;
      if (alpha > 0.0) {
        const Tensor pred_dd =
            live_inputs ? student_on(x_in.detach(), xp_in.detach()) : pred_live;
        loss = delta ? delta_distillation_loss(sub(f_now, f_prev[i]), pred_dd)
                     : feature_distillation_loss(f_now, pred_dd);
      } else {
        NoGradGuard ng;
        const Tensor pred_dd = student_on(x_in.detach(), xp_in.detach());
        loss = delta ? delta_distillation_loss(sub(f_now, f_prev[i]), pred_dd)
                     : feature_distillation_loss(f_now, pred_dd);
      }
      distill_total[i] = add(distill_total[i], loss);

      z = delta ? add(z_prev[i], pred_live) : pred_live;
      x_prev[i] = x_in;
      z_prev[i] = z;
      f_prev[i] = f_now;
      if (i + 1 < nb) x = net.block_output_to_next_input(i, z);
    }
    out.logits.push_back(net.head_forward(z));
    if (options.task_frames == TaskFrames::kAll) {
      task_total = add(task_total, softmax_cross_entropy(out.logits.back(), clip.labels[t]));
      ++task_frames;
    }
  }

  Tensor task = scale(task_total, 1.0 / static_cast<double>(task_frames));
  rep.task_loss = task.item();
  Tensor total = task;
  for (std::size_t i = 0; i < nb; ++i) {
    const Tensor dd = scale(distill_total[i], inv_t);
    rep.distill_losses[i] = dd.item();
    if (alpha > 0.0) total = add(total, scale(dd, alpha));
  }
  if (beta > 0.0) total = add(total, scale(sparsity_total, beta));
  rep.total = total.item();
  out.total = total;
  return out;
}

Sgd make_optimizer(const DistilledNetwork& net, const SgdOptions& options,
                   double arch_lr_scale, double teacher_lr_scale) {
  Sgd opt(options);
  for (auto& p : net.teacher_parameters()) opt.add_param(p, teacher_lr_scale);
  for (auto& p : net.student_parameters()) opt.add_param(p);
  for (auto& p : net.arch_parameters()) opt.add_param(p, arch_lr_scale);
  return opt;
}

namespace {

double finish_step(Sgd& optimizer, double clip_norm) {
  std::vector<Tensor> trainable;
  for (auto& p : optimizer.params()) {
    if (!p.requires_grad()) continue;
    if (!p.has_grad()) p.mutable_grad();  // unused this step: zero gradient
    trainable.push_back(p);
  }
  const double norm = clip_grad_norm(trainable, clip_norm);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  optimizer.step();
  return norm;
}

}  // namespace

TrainStepReport train_clip(DistilledNetwork& net, const VideoClip& clip, Sgd& optimizer,
                           const DistillOptions& options, std::mt19937_64& rng) {
  optimizer.zero_grad();
  ClipObjective obj = clip_objective(net, clip, options, rng);
  if (!std::isfinite(obj.report.total)) {
    throw NumericError("training loss is not finite (task " +
                       std::to_string(obj.report.task_loss) + ")");
  }
  if (obj.total.requires_grad()) obj.total.backward();
  obj.report.grad_norm = finish_step(optimizer, options.clip_norm);
  return obj.report;
}

double teacher_step(DistilledNetwork& net, const VideoClip& clip, Sgd& optimizer,
                    double clip_norm) {
  if (clip.length() == 0) throw ConfigError("empty clip");
  optimizer.zero_grad();
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < clip.length(); ++t)
    total = add(total, softmax_cross_entropy(net.teacher_forward(clip.frames[t]), clip.labels[t]));
  Tensor loss = scale(total, 1.0 / static_cast<double>(clip.length()));
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("teacher loss is not finite");
  loss.backward();
  finish_step(optimizer, clip_norm);
  return value;
}

}  // namespace dd
