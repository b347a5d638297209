// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training orchestration and evaluation shared by the CLI and the acceptance
// runs. Every function here is deterministic given the config: data, init and
// per-epoch shuffles all derive from the config seed, so a run resumed from a
// checkpoint continues exactly as the uninterrupted run would.

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "dd/checkpoint.hpp"
#include "dd/config.hpp"
#include "dd/cost_model.hpp"
#include "dd/model.hpp"
#include "dd/optim.hpp"
#include "dd/videotask.hpp"

namespace dd {

// Receives one JSON object per training event.
using LogSink = std::function<void(const nlohmann::json&)>;

// Network with freshly initialized teacher and students.
DistilledNetwork build_network(const ExperimentConfig& cfg);

// Training clips have length T; evaluation clips have eval_length frames and
// their own seed.
std::vector<VideoClip> training_set(const ExperimentConfig& cfg);
std::vector<VideoClip> evaluation_set(const ExperimentConfig& cfg);

// Clip visiting order of one epoch.
std::vector<std::size_t> epoch_order(std::size_t clips, std::uint64_t seed, std::size_t epoch);

// Copies the teacher blocks and head from a checkpoint, leaving students and
// logits untouched.
void load_teacher(const Checkpoint& ck, DistilledNetwork& net);

// ---- teacher ----

Sgd make_teacher_optimizer(const ExperimentConfig& cfg, DistilledNetwork& net);

struct TeacherTraining {
  std::size_t epochs_completed = 0;
  double last_loss = 0.0;
  double accuracy = 0.0;  // per-frame pixel accuracy on the training clips
  bool target_reached = false;
};

// Runs epochs [start_epoch, end_epoch). With target_accuracy > 0 it stops
// after the first epoch whose training accuracy reaches the target.
TeacherTraining train_teacher(const ExperimentConfig& cfg, DistilledNetwork& net, Sgd& opt,
                              const std::vector<VideoClip>& clips, std::size_t start_epoch,
                              std::size_t end_epoch, double target_accuracy = 0.0,
                              const LogSink& log = {});

// Pooled per-frame pixel accuracy of the teacher path.
double teacher_accuracy(const DistilledNetwork& net, const std::vector<VideoClip>& clips);

// ---- distillation ----

// Sets trainable flags for the config and returns SGD over theta, phi, psi.
Sgd make_distill_optimizer(const ExperimentConfig& cfg, DistilledNetwork& net);

struct DistillTraining {
  std::size_t epochs_completed = 0;
  double last_total = 0.0;
  Selection selection;  // finalized architecture
};

DistillTraining distill(const ExperimentConfig& cfg, DistilledNetwork& net, Sgd& opt,
                        const std::vector<VideoClip>& clips, std::size_t start_epoch,
                        std::size_t end_epoch, const LogSink& log = {});

// Finalized argmax architecture for Gumbel runs, the fixed one otherwise.
Selection deployed_selection(const ExperimentConfig& cfg, const DistilledNetwork& net);

// ---- evaluation ----

struct DistanceRow {
  std::size_t period = 1;
  std::size_t distance = 0;  // frames since the last key-frame
  std::size_t frames = 0;
  double accuracy = 0.0;            // streamed schedule
  double miou = 0.0;                // mean of per-frame mIoU
  double teacher_accuracy = 0.0;    // per-frame teacher path of the same network
  double reference_accuracy = 0.0;  // reference teacher, same frames
  double frame_copy_accuracy = 0.0;
  double frame_copy_miou = 0.0;
};

struct PeriodSummary {
  std::size_t period = 1;
  double accuracy = 0.0;
  double miou = 0.0;
  double tc = 0.0;
  double teacher_accuracy = 0.0;
  double reference_accuracy = 0.0;
  double teacher_tc = 0.0;
  double frame_copy_accuracy = 0.0;
  double frame_copy_tc = 0.0;
  CostReport cost;
};

struct EvalReport {
  Selection selection;
  std::vector<DistanceRow> rows;
  std::vector<PeriodSummary> periods;
};

// Streams every clip under each key-frame period. reference, when given, is a
// teacher to compare against (e.g. the one distillation started from).
EvalReport evaluate(const DistilledNetwork& net, const Selection& selection,
                    const std::vector<VideoClip>& clips, const std::vector<std::size_t>& periods,
                    const DistilledNetwork* reference = nullptr);

// ---- delta vs feature ----

// Mean over held-out clips and frames t >= 1 of the per-block squared error of
// the reconstructed output, with every block fed teacher-path inputs. In delta
// mode the reconstruction is z_{t-1} + g(x_{t-1}, dx); in feature mode g(x_t).
std::vector<double> heldout_block_regression(const DistilledNetwork& net,
                                             const Selection& selection,
                                             const std::vector<VideoClip>& clips);

struct AbResult {
  std::size_t delta_student_params = 0;
  std::size_t feature_student_params = 0;
  std::vector<double> delta_loss;  // per block
  std::vector<double> feature_loss;
  double delta_total = 0.0;
  double feature_total = 0.0;
  std::optional<DistilledNetwork> delta_network;  // the trained delta-mode network
};

// Distills both modes from the same teacher, data order and seeds with a
// frozen teacher and fixed compressed students. Throws ConfigError when the
// student parameter counts differ.
AbResult delta_vs_feature(const ExperimentConfig& cfg, const Checkpoint& teacher,
                          const std::vector<VideoClip>& train,
                          const std::vector<VideoClip>& heldout, const LogSink& log = {});

// ---- beta sweep ----

struct SweepPoint {
  double beta = 0.0;
  Selection selection;
  std::map<std::string, double> stage_fraction;  // compressed fraction per stage
  double compressed_fraction = 0.0;
  double amortized_ratio = 1.0;
  double accuracy = 0.0;  // streamed, period T, evaluation clips
};

SweepPoint sweep_point(const ExperimentConfig& cfg, double beta, const Checkpoint& teacher,
                       const std::vector<VideoClip>& train,
                       const std::vector<VideoClip>& heldout, const LogSink& log = {});

// ---- reports ----

std::string eval_csv(const EvalReport& report, const ExperimentConfig& cfg);
std::string eval_summary_csv(const EvalReport& report, const ExperimentConfig& cfg);
std::string sweep_csv(const std::vector<SweepPoint>& points, const ExperimentConfig& cfg);
std::string ab_csv(const AbResult& ab, const ExperimentConfig& cfg);

// The three amortized-cost rows of the teacher/student table (GMACs).
struct TableCheck {
  double teacher, student;
  std::size_t period;
  double expected, computed;
  bool within(double rel_tol) const;
};
std::vector<TableCheck> table_checks();

nlohmann::json cost_document(const ExperimentConfig& cfg, const DistilledNetwork& net,
                             const Selection& selection);

}  // namespace dd
