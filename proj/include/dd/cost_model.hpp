// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multiply-add accounting. One MAC is one multiply plus one add; elementwise
// work and permutations are tallied separately and never enter MAC totals.
// Per-frame figures are for a single frame (batch 1).

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "dd/model.hpp"

namespace dd {

std::uint64_t conv_macs(std::size_t in_channels, std::size_t out_channels,
                        std::size_t kernel_h, std::size_t kernel_w,
                        std::size_t out_h, std::size_t out_w);

// Sum of conv MACs over a trace, including its batch dimension.
std::uint64_t trace_macs(const std::vector<ConvTrace>& trace);

// (teacher + (T - 1) * student) / T.
double amortized_cost(double teacher_total, double student_total, std::size_t period);

struct BlockCost {
  std::string name;
  std::string stage;
  std::uint64_t teacher_macs = 0;
  std::array<std::uint64_t, 2> candidate_macs{};
  int chosen = kCompressed;
  std::uint64_t chosen_macs = 0;
  std::size_t teacher_params = 0;
  std::array<std::size_t, 2> candidate_params{};
  std::uint64_t teacher_elementwise = 0;
  std::uint64_t student_elementwise = 0;
  std::uint64_t student_permuted = 0;
  std::uint64_t state_bytes = 0;  // cached x_{t-1} and z_{t-1}
};

struct CostReport {
  std::vector<BlockCost> blocks;
  std::size_t period = 1;
  std::uint64_t head_macs = 0;
  std::uint64_t teacher_per_frame = 0;  // all teacher blocks + head
  std::uint64_t student_per_frame = 0;  // chosen students + head
  double amortized_per_frame = 0.0;
  std::size_t teacher_params = 0;       // blocks + head
  std::size_t student_params = 0;       // chosen students
  std::uint64_t state_buffer_bytes = 0;

  double amortized_ratio() const;
  nlohmann::json to_json() const;
};

// Per-block teacher and candidate MACs for one frame of the given [C, H, W]
// or [1, C, H, W] shape.
struct BlockMacs {
  std::uint64_t teacher = 0;
  std::array<std::uint64_t, 2> candidates{};
};
std::vector<BlockMacs> block_macs(const DistilledNetwork& net, const Shape& frame_shape);

// Throws ConfigError when the selection length mismatches or T is zero, and
// ShapeError when the network rejects the frame shape.
CostReport network_cost(const DistilledNetwork& net, const Shape& frame_shape,
                        std::size_t period, const Selection& selection);

}  // namespace dd
