// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "dd/distiller.hpp"
#include "dd/errors.hpp"
#include "dd/ops.hpp"
#include "dd/scheduler.hpp"
#include "exactness.hpp"
#include "test_util.hpp"

using namespace dd;
using dd::testing::max_abs_diff;
using dd::testing::random_tensor;

namespace {

SceneSpec small_scene() {
  SceneSpec s;
  s.height = 8;
  s.width = 8;
  s.num_shapes = 2;
  s.min_size = 2;
  s.max_size = 4;
  s.vx_range = {-1, 1};
  s.vy_range = {-1, 1};
  return s;
}

DistilledNetwork small_network(std::uint64_t seed, DistillMode mode = DistillMode::kDelta) {
  auto spec = dd::testing::exact_network_spec();
  spec.mode = mode;
  DistilledNetwork net(spec);
  net.init_teacher(seed);
  net.init_students(seed + 1);
  return net;
}

std::vector<double> flat_grads(const std::vector<Tensor>& params) {
  std::vector<double> g;
  for (const auto& p : params) {
    if (!p.has_grad()) {
      g.insert(g.end(), p.numel(), 0.0);
      continue;
    }
    g.insert(g.end(), p.grad().begin(), p.grad().end());
  }
  return g;
}

void clear_grads(const DistilledNetwork& net) {
  for (auto p : net.teacher_parameters()) p.zero_grad();
  for (auto p : net.student_parameters()) p.zero_grad();
  for (auto p : net.arch_parameters()) p.zero_grad();
}

}  // namespace

TEST_CASE("distillation losses") {
  std::mt19937_64 rng(1);
  const Tensor target = random_tensor({1, 4, 5, 5}, rng);
  CHECK(delta_distillation_loss(target, target).item() == 0.0);
  double ms = 0.0;
  for (double v : target.values()) ms += v * v;
  ms /= static_cast<double>(target.numel());
  CHECK(delta_distillation_loss(target, Tensor::zeros(target.shape())).item() ==
        doctest::Approx(ms).epsilon(1e-14));
  const Tensor unit = Tensor::full({1, 2, 3, 3}, 1.0);
  CHECK(feature_distillation_loss(unit, Tensor::zeros(unit.shape())).item() == 1.0);
  CHECK(feature_distillation_loss(unit, unit).item() == 0.0);

  CHECK_THROWS_AS(delta_distillation_loss(target, Tensor::zeros({1, 4, 5, 4})), ShapeError);
  Tensor w = Tensor::full({1}, 2.0, true);
  const Tensor attached = scale_by(target, w);
  CHECK_THROWS_AS(delta_distillation_loss(attached, target), ConfigError);

  // Gradients reach the prediction only.
  Tensor pred = random_tensor({1, 4, 5, 5}, rng);
  pred.set_requires_grad(true);
  delta_distillation_loss(target, pred).backward();
  CHECK(pred.has_grad());
}

TEST_CASE("a factorized student learns a fixed delta") {
  // Teacher kernel of separable rank 3, so the gamma = 1 student can reach it;
  // the least-squares optimum of this regression is zero.
  std::mt19937_64 rng(2);
  TeacherBlockSpec spec;
  spec.name = "t";
  spec.in_channels = 3;
  spec.out_channels = 6;
  TeacherBlock teacher(spec);
  const Tensor a = random_tensor({3, 3, 3, 1}, rng), b = random_tensor({6, 3, 1, 3}, rng);
  auto w = teacher.convs()[0].weight().mutable_values();
  for (std::size_t co = 0; co < 6; ++co)
    for (std::size_t ci = 0; ci < 3; ++ci)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          double acc = 0.0;
          for (std::size_t q = 0; q < 3; ++q)
            acc += a.at((q * 3 + ci) * 3 + i) * b.at((co * 3 + q) * 3 + j);
          w[((co * 3 + ci) * 3 + i) * 3 + j] = acc;
        }
  StudentBlock student(teacher, {StudentKind::kLinearSvd, 1, 2}, DistillMode::kDelta);
  student.initialize(teacher, rng);
  const Tensor x_prev = random_tensor({1, 3, 8, 8}, rng), x_t = random_tensor({1, 3, 8, 8}, rng);
  Tensor target;
  {
    NoGradGuard ng;
    target = sub(teacher.forward(x_t), teacher.forward(x_prev));
  }
  Sgd opt({0.05, 0.9, 0.0});
  for (auto& c : student.convs()) {
    opt.add_param(c.weight());
    if (c.bias()) opt.add_param(*c.bias());
  }
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 200; ++step) {
    opt.zero_grad();
    Tensor loss = delta_distillation_loss(target, student.forward(x_t, x_prev));
    if (step == 0) first = loss.item();
    last = loss.item();
    loss.backward();
    opt.step();
  }
  INFO("initial " << first << " after 200 steps " << last);
  CHECK(last * 100.0 <= first);
}

TEST_CASE("the logged parts recombine to the total") {
  std::mt19937_64 rng(3);
  auto net = small_network(4);
  const auto clips = generate_dataset(small_scene(), 3, 4, 5);
  for (const auto& w : {LossWeights{1.0, 0.5}, LossWeights{100.0, 10.0}, LossWeights{0.0, 0.0}}) {
    DistillOptions opt;
    opt.weights = w;
    opt.temperature = 0.7;
    auto sgd = make_optimizer(net, {0.01, 0.9, 0.0});
    for (const auto& clip : clips) {
      const auto rep = train_clip(net, clip, sgd, opt, rng);
      CHECK(std::abs(rep.total - rep.recombined(w)) < 1e-8);
      CHECK(rep.distill_losses.size() == net.num_blocks());
      CHECK(rep.sparsity_losses.size() == net.num_blocks());
      CHECK(std::isfinite(rep.grad_norm));
    }
  }
}

TEST_CASE("exact frozen students give zero distillation loss") {
  for (bool forced : {false, true}) {
    auto net = small_network(6);
    net.set_students_trainable(false);
    net.set_teacher_trainable(false);
    net.set_arch_trainable(false);
    DistillOptions opt;
    opt.search = SearchMode::kFixed;
    opt.selection.assign(net.num_blocks(), kNonCompressed);
    opt.teacher_forced = forced;
    std::mt19937_64 rng(7);
    const auto clip = generate_clip(small_scene(), 5, 8);
    const auto obj = clip_objective(net, clip, opt, rng);
    double dd = 0.0;
    for (double v : obj.report.distill_losses) dd += v;
    CHECK(dd < 1e-20);
    for (std::size_t t = 0; t < clip.length(); ++t)
      CHECK(max_abs_diff(obj.logits[t].values(), net.teacher_forward(clip.frames[t]).values()) <
            1e-5);
  }
}

TEST_CASE("distillation targets never push gradients into the teacher") {
  const auto clip = generate_clip(small_scene(), 4, 9);
  std::vector<std::vector<double>> grads;
  for (double alpha : {0.0, 1.0, 50.0}) {
    auto net = small_network(10);
    std::mt19937_64 perturb(11);
    for (std::size_t i = 0; i < net.num_blocks(); ++i)
      for (auto& c : net.block(i).candidates[kCompressed].convs()) c.init_fan_in(perturb);
    net.set_students_trainable(false);
    net.set_arch_trainable(false);
    DistillOptions opt;
    opt.weights = {alpha, 0.0};
    opt.search = SearchMode::kFixed;
    opt.selection.assign(net.num_blocks(), kCompressed);
    std::mt19937_64 rng(12);
    auto obj = clip_objective(net, clip, opt, rng);
    obj.total.backward();
    grads.push_back(flat_grads(net.teacher_parameters()));
    clear_grads(net);
  }
  CHECK(max_abs_diff(grads[0], grads[1]) == 0.0);
  CHECK(max_abs_diff(grads[0], grads[2]) == 0.0);
}

TEST_CASE("key-frame-only objective is supervised teacher training") {
  const auto clip = generate_clip(small_scene(), 4, 13);
  auto net = small_network(14);
  DistillOptions opt;
  opt.weights = {0.0, 0.0};
  opt.task_frames = TaskFrames::kKeyOnly;
  std::mt19937_64 rng(15);
  auto obj = clip_objective(net, clip, opt, rng);
  obj.total.backward();
  const auto g_obj = flat_grads(net.teacher_parameters());
  CHECK(flat_grads(net.student_parameters()) ==
        std::vector<double>(flat_grads(net.student_parameters()).size(), 0.0));
  clear_grads(net);
  Tensor ce = softmax_cross_entropy(net.teacher_forward(clip.frames[0]), clip.labels[0]);
  CHECK(obj.report.total == ce.item());
  ce.backward();
  CHECK(max_abs_diff(g_obj, flat_grads(net.teacher_parameters())) == 0.0);
}

TEST_CASE("training lowers the objective on a fixed mini-dataset") {
  auto net = small_network(16);
  const auto clips = generate_dataset(small_scene(), 4, 3, 17);
  DistillOptions opt;
  opt.search = SearchMode::kFixed;
  opt.selection.assign(net.num_blocks(), kCompressed);
  auto sgd = make_optimizer(net, {0.02, 0.9, 0.0});
  std::mt19937_64 rng(18);
  std::vector<double> epochs;
  for (int e = 0; e < 30; ++e) {
    double total = 0.0;
    for (const auto& c : clips) total += train_clip(net, c, sgd, opt, rng).total;
    epochs.push_back(total / static_cast<double>(clips.size()));
  }
  double head = 0.0, tail = 0.0;
  for (int e = 0; e < 10; ++e) {
    head += epochs[static_cast<std::size_t>(e)];
    tail += epochs[static_cast<std::size_t>(20 + e)];
  }
  INFO("first ten " << head / 10 << " last ten " << tail / 10);
  CHECK(tail < head);
}

TEST_CASE("frozen parts stay fixed and gumbel search moves psi") {
  auto net = small_network(19);
  net.set_teacher_trainable(false);
  const auto before = net.teacher_parameters()[0].values();
  const std::vector<double> teacher_before(before.begin(), before.end());
  DistillOptions opt;
  opt.weights = {1.0, 5.0};
  auto sgd = make_optimizer(net, {0.05, 0.9, 0.0}, 10.0);
  std::mt19937_64 rng(20);
  const auto clip = generate_clip(small_scene(), 3, 21);
  for (int s = 0; s < 5; ++s) train_clip(net, clip, sgd, opt, rng);
  CHECK(max_abs_diff(net.teacher_parameters()[0].values(), teacher_before) == 0.0);
  // Compressed candidates are cheaper, so the sparsity term favours them.
  for (std::size_t i = 0; i < net.num_blocks(); ++i)
    CHECK(net.block(i).arch_logits.at(kCompressed) > net.block(i).arch_logits.at(kNonCompressed));
}

TEST_CASE("feature mode trains students on features") {
  auto net = small_network(22, DistillMode::kFeature);
  DistillOptions opt;
  opt.search = SearchMode::kFixed;
  opt.selection.assign(net.num_blocks(), kNonCompressed);
  std::mt19937_64 rng(23);
  const auto clip = generate_clip(small_scene(), 3, 24);
  const auto obj = clip_objective(net, clip, opt, rng);
  for (double v : obj.report.distill_losses) CHECK(v < 1e-24);
  opt.selection.assign(net.num_blocks(), kCompressed);
  // Zero-initialized feature students output zeros, so on propagated inputs
  // only the first block sees a non-trivial target.
  const auto obj2 = clip_objective(net, clip, opt, rng);
  CHECK(obj2.report.distill_losses[0] > 0.0);
  CHECK(obj2.report.distill_losses[1] == 0.0);
  opt.teacher_forced = true;
  const auto obj3 = clip_objective(net, clip, opt, rng);
  for (double v : obj3.report.distill_losses) CHECK(v > 0.0);
}

TEST_CASE("training errors") {
  auto net = small_network(25);
  auto sgd = make_optimizer(net, {0.01, 0.0, 0.0});
  std::mt19937_64 rng(26);
  auto clip = generate_clip(small_scene(), 3, 27);
  auto one = clip;
  one.frames.resize(1);
  one.labels.resize(1);
  one.motion.resize(1);
  CHECK_THROWS_AS(train_clip(net, one, sgd, DistillOptions{}, rng), ConfigError);
  DistillOptions bad;
  bad.weights.alpha = -1.0;
  CHECK_THROWS_AS(train_clip(net, clip, sgd, bad, rng), ConfigError);
  DistillOptions wrong_sel;
  wrong_sel.search = SearchMode::kFixed;
  wrong_sel.selection = {1};
  CHECK_THROWS_AS(train_clip(net, clip, sgd, wrong_sel, rng), ConfigError);
  net.block(0).teacher.convs()[0].weight().mutable_values()[0] =
      std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train_clip(net, clip, sgd, DistillOptions{}, rng), NumericError);
}
