// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Streaming inference: the teacher runs on every T-th frame and refreshes
// per-block buffers; in between, each block's chosen student predicts the
// change of the block output, which is added to the buffered output.

#pragma once

#include <optional>
#include <vector>

#include "dd/cost_model.hpp"
#include "dd/model.hpp"
#include "dd/tensor.hpp"

namespace dd {

struct StreamState {
  std::vector<std::optional<Tensor>> x_prev;  // block inputs of the last frame
  std::vector<std::optional<Tensor>> z_prev;  // block outputs of the last frame
  std::size_t frames_seen = 0;

  bool populated() const;
};

StreamState make_stream_state(const DistilledNetwork& net);

struct FrameResult {
  Tensor logits;  // [1, K, H, W]
  bool key_frame = false;
};

// Processes one [1, C, H, W] frame. Throws ConfigError for T = 0 or a bad
// selection and ScheduleError when a student frame finds empty buffers.
FrameResult process_frame(const DistilledNetwork& net, const Selection& selection,
                          StreamState& state, std::size_t period, const Tensor& frame);

struct StreamResult {
  std::vector<Tensor> logits;
  std::vector<bool> key_frames;
  CostReport cost;
};

StreamResult process_stream(const DistilledNetwork& net, const Selection& selection,
                            const std::vector<Tensor>& frames, std::size_t period);

// Interleaved lower bound: teacher labels on key-frames, repeated unchanged
// until the next key-frame.
std::vector<std::vector<int>> frame_copy_predictions(const DistilledNetwork& net,
                                                     const std::vector<Tensor>& frames,
                                                     std::size_t period);

}  // namespace dd
