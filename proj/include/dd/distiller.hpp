// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Losses and the clip-level training step.
//
// One step on a clip of T frames minimizes
//
//   (1/T) sum_t L_task(t) + alpha * sum_l (1/T) sum_{t>=1} L_dd(l, t)
//                         + beta  * sum_l L_s(l)
//
// Frame 0 runs the teacher blocks. On later frames each block runs its
// student (the Gumbel-sampled candidate, or a fixed one) on the propagated
// inputs and adds the predicted change to the previous output. Distillation
// targets come from the teacher on the same inputs and are detached; the
// student term of L_dd is evaluated on detached inputs so that it only trains
// the student and its architecture logits, while the task loss flows through
// the whole propagated graph.

#pragma once

#include <random>
#include <vector>

#include "json.hpp"
#include "dd/arch_search.hpp"
#include "dd/model.hpp"
#include "dd/optim.hpp"
#include "dd/videotask.hpp"

namespace dd {

struct LossWeights {
  double alpha = 1.0;  // distillation weight
  double beta = 0.5;   // sparsity weight

  void validate() const;  // finite and non-negative, else ConfigError
};

enum class SearchMode {
  kGumbel,  // sample per clip from softmax(psi)
  kFixed,   // use DistillOptions::selection
};

enum class TaskFrames {
  kAll,      // task loss on every frame
  kKeyOnly,  // task loss on the key-frame only
};

struct DistillOptions {
  LossWeights weights;
  SearchMode search = SearchMode::kGumbel;
  Selection selection;         // used with SearchMode::kFixed
  double temperature = 1.0;    // Gumbel temperature for this step
  bool teacher_forced = false; // students see teacher-path inputs
  TaskFrames task_frames = TaskFrames::kAll;
  bool normalize_costs = true; // sparsity costs relative to teacher MACs
  double clip_norm = 10.0;     // global gradient norm cap, 0 disables
};

struct TrainStepReport {
  double task_loss = 0.0;
  std::vector<double> distill_losses;   // per block, (1/T) sum_{t>=1}
  std::vector<double> sparsity_losses;  // per block
  double total = 0.0;
  double grad_norm = 0.0;               // before clipping
  double expected_cost = 0.0;           // sum of sparsity losses
  Selection selection;                  // candidates used this step
  double temperature = 1.0;

  // Recomputes the objective from the logged parts.
  double recombined(const LossWeights& w) const;
  nlohmann::json to_json() const;
};

// l2 loss between a detached target change and the predicted change. Throws
// ShapeError on mismatched shapes and ConfigError if the target is attached
// to the tape.
Tensor delta_distillation_loss(const Tensor& target_delta, const Tensor& predicted_delta);
Tensor feature_distillation_loss(const Tensor& target_features, const Tensor& predicted_features);

// Builds the per-step loss graph for a clip without touching parameters.
struct ClipObjective {
  Tensor total;
  TrainStepReport report;
  std::vector<Tensor> logits;  // per frame, attached to the graph
};
ClipObjective clip_objective(const DistilledNetwork& net, const VideoClip& clip,
                             const DistillOptions& options, std::mt19937_64& rng);

// SGD over the teacher, students and architecture logits, in that order. The
// scales multiply the base learning rate of the logits and teacher weights.
Sgd make_optimizer(const DistilledNetwork& net, const SgdOptions& options,
                   double arch_lr_scale = 1.0, double teacher_lr_scale = 1.0);

// One optimizer step on Theta, Phi and Psi (whichever are trainable). Throws
// ConfigError for clips shorter than two frames and NumericError on a
// non-finite loss or gradient.
TrainStepReport train_clip(DistilledNetwork& net, const VideoClip& clip, Sgd& optimizer,
                           const DistillOptions& options, std::mt19937_64& rng);

// Supervised per-frame training of the teacher path alone on every frame.
double teacher_step(DistilledNetwork& net, const VideoClip& clip, Sgd& optimizer,
                    double clip_norm = 10.0);

}  // namespace dd
