// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "doctest.h"
#include "dd/model.hpp"
#include "dd/optim.hpp"
#include "test_util.hpp"

using namespace dd;
using dd::testing::max_abs_diff;
using dd::testing::random_tensor;

namespace {

TeacherBlockSpec conv_spec(std::size_t cin, std::size_t cout, std::size_t k = 3,
                           std::size_t stride = 1) {
  TeacherBlockSpec s;
  s.name = "conv";
  s.kind = BlockKind::kConv;
  s.in_channels = cin;
  s.out_channels = cout;
  s.kernel = k;
  s.stride = stride;
  return s;
}

TeacherBlockSpec residual_spec(std::size_t c) {
  TeacherBlockSpec s = conv_spec(c, c);
  s.name = "res";
  s.kind = BlockKind::kResidual;
  s.activation = Activation::kNone;
  return s;
}

void zero_bias(ConvLayer& c) {
  if (c.bias())
    for (double& v : c.bias()->mutable_values()) v = 0.0;
}

}  // namespace

TEST_CASE("teacher forward") {
  std::mt19937_64 rng(1);
  auto x = random_tensor({1, 3, 6, 6}, rng);

  TeacherBlock zero(conv_spec(3, 4));
  {
    const Tensor out = zero.forward(x);
    for (double v : out.values()) CHECK(v == 0.0);
  }

  TeacherBlock skip(residual_spec(3));
  CHECK(max_abs_diff(skip.forward(x).values(), x.values()) == 0.0);

  TeacherBlock res(residual_spec(3));
  res.init_random(rng);
  const auto& c = res.convs();
  auto expected = add(x, conv2d(relu(conv2d(x, c[0].weight(), c[0].bias(), c[0].options())),
                                c[1].weight(), c[1].bias(), c[1].options()));
  CHECK(max_abs_diff(res.forward(x).values(), expected.values()) == 0.0);

  TeacherBlock strided(conv_spec(3, 5, 3, 2));
  CHECK(strided.output_shape({2, 3, 6, 6}) == Shape{2, 5, 3, 3});
  CHECK_THROWS_AS(strided.forward(Tensor::zeros({1, 4, 6, 6})), ShapeError);
  CHECK_THROWS_AS(TeacherBlock(residual_spec(3)).output_shape({1, 2, 4, 4}), ShapeError);

  auto bad = residual_spec(3);
  bad.out_channels = 4;
  CHECK_THROWS_AS(TeacherBlock{bad}, ConfigError);
}

TEST_CASE("linear-svd parameter count") {
  TeacherBlock teacher(conv_spec(8, 8));
  StudentBlock svd(teacher, {StudentKind::kLinearSvd, 4, 2}, DistillMode::kDelta);
  CHECK(svd_intermediate_channels(8, 8, 4) == 2);
  CHECK(svd.convs()[0].weight().numel() + svd.convs()[1].weight().numel() == 96);
  CHECK(teacher.convs()[0].weight().numel() == 576);
  CHECK(svd_intermediate_channels(3, 16, 4) == 1);
  CHECK(svd_intermediate_channels(16, 16, 64) == 1);
}

TEST_CASE("student forward semantics") {
  std::mt19937_64 rng(2);
  TeacherBlock teacher(conv_spec(4, 6));
  teacher.init_random(rng);
  zero_bias(teacher.convs()[0]);
  auto x_prev = random_tensor({2, 4, 5, 5}, rng);
  auto x_t = random_tensor({2, 4, 5, 5}, rng);

  StudentBlock svd(teacher, {StudentKind::kLinearSvd, 2, 2}, DistillMode::kDelta);
  for (auto& c : svd.convs()) c.init_fan_in(rng);
  zero_bias(svd.convs()[1]);
  {
    const Tensor out = svd.forward(x_prev, x_prev);
    for (double v : out.values()) CHECK(v == 0.0);
  }
  CHECK(svd.input_kind() == StudentInput::kDelta);
  CHECK_THROWS_AS(svd.forward(x_t, std::nullopt), ScheduleError);

  StudentBlock nc(teacher, {StudentKind::kNonCompressed, 4, 2}, DistillMode::kDelta);
  nc.initialize(teacher, rng);
  auto true_delta = sub(teacher.forward(x_t), teacher.forward(x_prev));
  CHECK(max_abs_diff(nc.forward(x_t, x_prev).values(), true_delta.values()) < 1e-6);

  // The bias cancels in the delta, so a biased teacher is also matched.
  teacher.convs()[0].init_fan_in(rng);
  for (double& b : teacher.convs()[0].bias()->mutable_values()) b = 0.3;
  nc.initialize(teacher, rng);
  true_delta = sub(teacher.forward(x_t), teacher.forward(x_prev));
  CHECK(max_abs_diff(nc.forward(x_t, x_prev).values(), true_delta.values()) < 1e-12);

  TeacherBlock res(residual_spec(4));
  StudentBlock channel(res, {StudentKind::kNonlinearChannel, 2, 2}, DistillMode::kDelta);
  CHECK(channel.input_kind() == StudentInput::kPreviousAndDelta);
  CHECK(channel.convs()[0].in_channels() == 8);
  CHECK_THROWS_AS(StudentBlock(res, {StudentKind::kLinearSvd, 2, 2}, DistillMode::kDelta),
                  ConfigError);
  CHECK_THROWS_AS(
      StudentBlock(teacher, {StudentKind::kNonlinearSpatial, 2, 2}, DistillMode::kDelta),
      ConfigError);
}

TEST_CASE("student initialization") {
  std::mt19937_64 rng(3);
  TeacherBlock conv(conv_spec(4, 8));
  conv.init_random(rng);
  TeacherBlock res(residual_spec(4));
  res.init_random(rng);
  auto x = random_tensor({1, 4, 6, 6}, rng);
  auto xp = random_tensor({1, 4, 6, 6}, rng);

  const std::vector<std::pair<const TeacherBlock*, StudentSpec>> compressed{
      {&conv, {StudentKind::kLinearSvd, 4, 2}},
      {&res, {StudentKind::kNonlinearChannel, 2, 2}},
      {&res, {StudentKind::kNonlinearSpatial, 2, 2}},
  };
  for (auto mode : {DistillMode::kDelta, DistillMode::kFeature}) {
    for (const auto& [t, spec] : compressed) {
      StudentBlock s(*t, spec, mode);
      s.initialize(*t, rng);
      {
        const Tensor out = s.forward(x, xp);
        for (double v : out.values()) CHECK(v == 0.0);
      }
    }
  }

  // Feature-mode non-compressed students are exact teacher copies.
  for (const TeacherBlock* t : {&conv, &res}) {
    StudentBlock s(*t, {StudentKind::kNonCompressed, 4, 2}, DistillMode::kFeature);
    s.initialize(*t, rng);
    CHECK(max_abs_diff(s.forward(x, std::nullopt).values(), t->forward(x).values()) == 0.0);
  }

  // Delta-mode residual mirror predicts no change for a repeated frame.
  StudentBlock mirror(res, {StudentKind::kNonCompressed, 4, 2}, DistillMode::kDelta);
  mirror.initialize(res, rng);
  {
    const Tensor out = mirror.forward(xp, xp);
    for (double v : out.values()) CHECK(v == 0.0);
  }

  // Same seed, same parameters.
  NetworkSpec ns;
  ns.in_channels = 4;
  ns.num_classes = 3;
  ns.blocks = {conv_spec(4, 8), conv_spec(8, 8)};
  DistilledNetwork a(ns), b(ns);
  a.init_teacher(5);
  b.init_teacher(5);
  a.init_students(9);
  b.init_students(9);
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(max_abs_diff(pa[i].second.values(), pb[i].second.values()) == 0.0);
  }
}

TEST_CASE("every variant preserves the teacher output shape") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> ch(1, 6), half(2, 5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cin = ch(rng), cout = ch(rng);
    const std::size_t h = 2 * half(rng), w = 2 * half(rng);
    const std::size_t k = trial % 2 ? 3 : 1, stride = trial % 3 == 0 ? 2 : 1;
    TeacherBlock conv(conv_spec(cin, cout, k, stride));
    TeacherBlock res(residual_spec(cin));
    auto x = random_tensor({1, cin, h, w}, rng);
    auto xp = random_tensor({1, cin, h, w}, rng);
    for (auto mode : {DistillMode::kDelta, DistillMode::kFeature}) {
      for (auto kind : {StudentKind::kNonCompressed, StudentKind::kLinearSvd}) {
        StudentBlock s(conv, {kind, static_cast<std::size_t>(1 + trial % 5), 2}, mode);
        s.initialize(conv, rng);
        CHECK(s.forward(x, xp).shape() == conv.output_shape(x.shape()));
      }
      for (auto kind : {StudentKind::kNonCompressed, StudentKind::kNonlinearChannel,
                        StudentKind::kNonlinearSpatial}) {
        StudentBlock s(res, {kind, static_cast<std::size_t>(1 + trial % 4), 2}, mode);
        s.initialize(res, rng);
        CHECK(s.forward(x, xp).shape() == res.output_shape(x.shape()));
      }
    }
  }
}

TEST_CASE("full-rank factorized student fits a representable delta map") {
  // Teacher kernel built from kh x 1 and 1 x kw factors with m = min(cin, cout)
  // intermediate channels, so the gamma = 1 student can represent it exactly.
  std::mt19937_64 rng(6);
  const std::size_t cin = 3, cout = 4, m = 3;
  TeacherBlock teacher(conv_spec(cin, cout));
  auto a = random_tensor({m, cin, 3, 1}, rng);
  auto b = random_tensor({cout, m, 1, 3}, rng);
  auto w = teacher.convs()[0].weight().mutable_values();
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          double acc = 0.0;
          for (std::size_t q = 0; q < m; ++q)
            acc += a.at((q * cin + ci) * 3 + i) * b.at((co * m + q) * 3 + j);
          w[((co * cin + ci) * 3 + i) * 3 + j] = acc;
        }

  StudentBlock s(teacher, {StudentKind::kLinearSvd, 1, 2}, DistillMode::kDelta);
  s.initialize(teacher, rng);
  REQUIRE(s.convs()[0].out_channels() == m);
  Sgd opt({0.05, 0.9, 0.0});
  for (auto& c : s.convs()) {
    opt.add_param(c.weight());
    if (c.bias()) opt.add_param(*c.bias());
  }
  std::vector<std::pair<Tensor, Tensor>> data;
  for (int i = 0; i < 4; ++i) data.emplace_back(random_tensor({2, cin, 6, 6}, rng),
                                                random_tensor({2, cin, 6, 6}, rng));
  const auto epoch_loss = [&](bool step) {
    double total = 0.0;
    for (const auto& [xt, xp] : data) {
      Tensor target;
      {
        NoGradGuard ng;
        target = sub(teacher.forward(xt), teacher.forward(xp));
      }
      opt.zero_grad();
      Tensor loss = l2_loss(s.forward(xt, xp), target);
      total += loss.item();
      if (step) {
        loss.backward();
        opt.step();
      }
    }
    return total / static_cast<double>(data.size());
  };
  const double initial = epoch_loss(false);
  for (int e = 0; e < 1500; ++e) epoch_loss(true);
  const double final_loss = epoch_loss(false);
  INFO("initial " << initial << " final " << final_loss);
  CHECK(final_loss < 1e-6 * initial);
}

TEST_CASE("network wiring") {
  NetworkSpec ns;
  ns.in_channels = 3;
  ns.num_classes = 4;
  ns.blocks = {conv_spec(3, 8), residual_spec(8), conv_spec(8, 6)};
  DistilledNetwork net(ns);
  net.init_teacher(1);
  net.init_students(2);
  CHECK(net.block(0).candidates[1].kind() == StudentKind::kLinearSvd);
  CHECK(net.block(1).candidates[1].kind() == StudentKind::kNonlinearChannel);
  const auto shapes = block_input_shapes(net, {1, 3, 8, 8});
  CHECK(shapes[2] == Shape{1, 8, 8, 8});
  std::mt19937_64 rng(7);
  CHECK(net.teacher_forward(random_tensor({1, 3, 8, 8}, rng)).shape() == Shape{1, 4, 8, 8});

  ns.blocks[1].in_channels = 7;
  ns.blocks[1].out_channels = 7;
  CHECK_THROWS_AS(DistilledNetwork{ns}, ConfigError);
}
