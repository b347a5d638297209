// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Streams clips through a network whose students are exact copies of
// bias-free single-conv teachers and measures the largest deviation from
// running the teacher on every frame.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dd/scheduler.hpp"
#include "dd/videotask.hpp"

namespace dd::testing {

inline NetworkSpec exact_network_spec() {
  NetworkSpec ns;
  ns.in_channels = 3;
  ns.num_classes = 4;
  std::size_t c = 3;
  for (int i = 0; i < 3; ++i) {
    TeacherBlockSpec b;
    b.name = "conv" + std::to_string(i);
    b.in_channels = c;
    b.out_channels = 8;
    ns.blocks.push_back(b);
    c = 8;
  }
  return ns;
}

struct ExactnessOutcome {
  std::size_t period = 1;
  std::size_t clips = 0;
  double max_abs_error = 0.0;
};

inline std::vector<ExactnessOutcome> run_exactness_check(const std::vector<std::size_t>& periods,
                                                         std::size_t clips, std::size_t length,
                                                         std::uint64_t seed) {
  DistilledNetwork net(exact_network_spec());
  net.init_teacher(seed);
  net.init_students(seed + 1);
  const Selection all_exact(net.num_blocks(), kNonCompressed);
  const auto data = generate_dataset(SceneSpec{}, clips, length, seed + 2);
  std::vector<ExactnessOutcome> out;
  for (std::size_t period : periods) {
    ExactnessOutcome o;
    o.period = period;
    o.clips = data.size();
    for (const auto& clip : data) {
      const auto streamed = process_stream(net, all_exact, clip.frames, period);
      for (std::size_t t = 0; t < clip.length(); ++t) {
        const Tensor ref = net.teacher_forward(clip.frames[t]);
        const auto a = streamed.logits[t].values(), b = ref.values();
        for (std::size_t i = 0; i < a.size(); ++i)
          o.max_abs_error = std::max(o.max_abs_error, std::abs(a[i] - b[i]));
      }
    }
    out.push_back(o);
  }
  return out;
}

}  // namespace dd::testing
