// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "cost_oracle.hpp"
#include "dd/cost_model.hpp"

using namespace dd;
using namespace dd::testing;

namespace {

TeacherBlockSpec conv_block(const std::string& name, std::size_t cin, std::size_t cout,
                            std::size_t k = 3, std::size_t stride = 1) {
  TeacherBlockSpec s;
  s.name = name;
  s.in_channels = cin;
  s.out_channels = cout;
  s.kernel = k;
  s.stride = stride;
  return s;
}

TeacherBlockSpec residual_block(const std::string& name, std::size_t c) {
  TeacherBlockSpec s = conv_block(name, c, c);
  s.kind = BlockKind::kResidual;
  return s;
}

// Student MACs counted by running the chosen students and the head.
std::uint64_t counted_student_path(const DistilledNetwork& net, const Shape& frame,
                                   const Selection& sel, std::mt19937_64& rng) {
  const auto inputs = block_input_shapes(net, frame);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < net.num_blocks(); ++i)
    total += counted_student_macs(net.block(i).candidates[sel[i]], inputs[i], rng);
  const Shape last = net.block(net.num_blocks() - 1).teacher.output_shape(inputs.back());
  const Tensor z = random_tensor(last, rng);
  ReferenceConvScope scope(&total);
  net.head_forward(z);
  return total;
}

std::uint64_t counted_teacher_path(const DistilledNetwork& net, const Shape& frame,
                                   std::mt19937_64& rng) {
  std::uint64_t total = 0;
  const Tensor x = random_tensor(frame, rng);
  ReferenceConvScope scope(&total);
  net.teacher_forward(x);
  return total;
}

}  // namespace

TEST_CASE("conv MACs") {
  CHECK(conv_macs(1, 1, 1, 1, 1, 1) == 1);

  std::uint64_t counted = 0;
  conv2d_reference(Tensor::zeros({1, 4, 16, 16}), Tensor::zeros({8, 4, 3, 3}), std::nullopt,
                   {{1, 1}, {1, 1}}, &counted);
  CHECK(counted == 73728);
  CHECK(conv_macs(4, 8, 3, 3, 16, 16) == 73728);
  CHECK_THROWS_AS(conv_macs(0, 8, 3, 3, 16, 16), ConfigError);
}

TEST_CASE("factorized student on an 8-channel 3x3 layer") {
  std::mt19937_64 rng(1);
  TeacherBlock t(conv_block("t", 8, 8));
  StudentBlock s(t, {StudentKind::kLinearSvd, 4, 2}, DistillMode::kDelta);
  const Shape in{1, 8, 16, 16};
  const auto student = counted_student_macs(s, in, rng);
  const auto teacher = counted_teacher_macs(t, in, rng);
  CHECK(student == 24576);
  CHECK(teacher == 147456);
  CHECK(trace_macs(s.trace(in, nullptr)) == student);
  CHECK(teacher == 6 * student);
}

TEST_CASE("amortized cost") {
  CHECK(amortized_cost(2.5, 0.5, 10) == doctest::Approx(0.70).epsilon(0.005));
  CHECK(amortized_cost(149.1, 15.9, 10) == doctest::Approx(29.2).epsilon(0.005));
  CHECK(amortized_cost(143.7, 35.8, 3) == doctest::Approx(71.8).epsilon(0.005));
  CHECK(amortized_cost(149.1, 15.9, 10) == doctest::Approx(29.22).epsilon(1e-12));
  CHECK(amortized_cost(7.0, 1.0, 1) == 7.0);
  CHECK_THROWS_AS(amortized_cost(1.0, 1.0, 0), ConfigError);
}

TEST_CASE("analytic MACs match instrumented counting per layer") {
  const auto cases = run_layer_cost_oracle(30, 8);
  CHECK(cases.size() >= 20);
  for (const auto& c : cases) {
    INFO(c.what);
    CHECK(c.analytic == c.counted);
  }
}

TEST_CASE("network cost report") {
  NetworkSpec ns;
  ns.in_channels = 3;
  ns.num_classes = 4;
  ns.blocks = {conv_block("stem", 3, 16), conv_block("b1", 16, 16), conv_block("b2", 16, 16)};
  DistilledNetwork net(ns);
  const Shape frame{3, 16, 16};

  const auto nc = network_cost(net, frame, 3, {0, 0, 0});
  CHECK(nc.student_per_frame == nc.teacher_per_frame);
  CHECK(nc.amortized_per_frame == static_cast<double>(nc.teacher_per_frame));

  const auto t1 = network_cost(net, frame, 1, {1, 1, 1});
  CHECK(t1.amortized_per_frame == static_cast<double>(t1.teacher_per_frame));

  const auto rep = network_cost(net, frame, 3, {1, 1, 1});
  CHECK(rep.student_per_frame < rep.teacher_per_frame);
  CHECK(rep.amortized_per_frame ==
        amortized_cost(static_cast<double>(rep.teacher_per_frame),
                       static_cast<double>(rep.student_per_frame), 3));
  CHECK(rep.head_macs == 4 * 16 * 256);
  CHECK(rep.state_buffer_bytes == 8 * 256 * (3 + 16 + 16 + 16 + 16 + 16));

  const auto macs = block_macs(net, frame);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(macs[i].candidates == rep.blocks[i].candidate_macs);
    CHECK(macs[i].teacher == rep.blocks[i].teacher_macs);
  }

  const auto j = rep.to_json();
  CHECK(j["blocks"].size() == 3);
  CHECK(j["teacher_per_frame"].get<std::uint64_t>() == rep.teacher_per_frame);

  CHECK_THROWS_AS(network_cost(net, frame, 3, {1, 1}), ConfigError);
  CHECK_THROWS_AS(network_cost(net, frame, 0, {1, 1, 1}), ConfigError);
  CHECK_THROWS_AS(network_cost(net, {4, 16, 16}, 3, {1, 1, 1}), ShapeError);
}

TEST_CASE("random network totals equal summed instrumented counts") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> ch(2, 8), nblocks(1, 4), pick(0, 1);
  for (int trial = 0; trial < 12; ++trial) {
    NetworkSpec ns;
    ns.in_channels = ch(rng);
    ns.num_classes = 2 + pick(rng);
    ns.nonlinear_variant = pick(rng) ? "channel" : "spatial";
    ns.mode = pick(rng) ? DistillMode::kDelta : DistillMode::kFeature;
    ns.compressed.gamma = pick(rng) ? 2 : 4;
    std::size_t c = ns.in_channels;
    const std::size_t n = nblocks(rng);
    for (std::size_t b = 0; b < n; ++b) {
      if (pick(rng) && b > 0) {
        ns.blocks.push_back(residual_block("r" + std::to_string(b), c));
      } else {
        const std::size_t co = ch(rng);
        ns.blocks.push_back(conv_block("c" + std::to_string(b), c, co, pick(rng) ? 3 : 1,
                                       b == 0 && pick(rng) ? 2 : 1));
        c = co;
      }
    }
    DistilledNetwork net(ns);
    const Shape frame{1, ns.in_channels, 12, 16};
    Selection sel(n);
    for (auto& s : sel) s = static_cast<int>(pick(rng));
    const auto rep = network_cost(net, frame, 1 + trial % 5, sel);
    CHECK(rep.teacher_per_frame == counted_teacher_path(net, frame, rng));
    CHECK(rep.student_per_frame == counted_student_path(net, frame, sel, rng));
  }
}

TEST_CASE("factorized students get cheaper as gamma grows until the width floor") {
  TeacherBlock t(conv_block("t", 32, 32));
  const Shape in{1, 32, 8, 8};
  std::uint64_t prev_macs = ~0ull;
  std::size_t prev_params = ~std::size_t{0};
  for (std::size_t gamma : {1, 2, 4, 8, 16, 32}) {
    StudentBlock s(t, {StudentKind::kLinearSvd, gamma, 2}, DistillMode::kDelta);
    const auto macs = trace_macs(s.trace(in, nullptr));
    CHECK(macs < prev_macs);
    CHECK(s.parameter_count() < prev_params);
    prev_macs = macs;
    prev_params = s.parameter_count();
  }
  StudentBlock floor(t, {StudentKind::kLinearSvd, 64, 2}, DistillMode::kDelta);
  CHECK(trace_macs(floor.trace(in, nullptr)) == prev_macs);
}
