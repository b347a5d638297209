// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "dd/scheduler.hpp"

#include <algorithm>

#include "dd/errors.hpp"
#include "dd/videotask.hpp"

namespace dd {

bool StreamState::populated() const {
  return !z_prev.empty() &&
         std::all_of(z_prev.begin(), z_prev.end(), [](const auto& z) { return z.has_value(); });
}

StreamState make_stream_state(const DistilledNetwork& net) {
  StreamState s;
  s.x_prev.resize(net.num_blocks());
  s.z_prev.resize(net.num_blocks());
  return s;
}

namespace {

void check_selection(const DistilledNetwork& net, const Selection& selection) {
  if (selection.size() != net.num_blocks()) {
    throw ConfigError("selection has " + std::to_string(selection.size()) +
                      " entries for " + std::to_string(net.num_blocks()) + " blocks");
  }
  for (int c : selection)
    if (c != kNonCompressed && c != kCompressed) {
      throw ConfigError("selection entries must be 0 or 1");
    }
}

}  // namespace

FrameResult process_frame(const DistilledNetwork& net, const Selection& selection,
                          StreamState& state, std::size_t period, const Tensor& frame) {
  if (period == 0) throw ConfigError("key-frame period T must be at least 1");
  check_selection(net, selection);
  if (state.x_prev.size() != net.num_blocks() || state.z_prev.size() != net.num_blocks()) {
    throw ScheduleError("stream state was made for a different network");
  }
  NoGradGuard no_grad;
  FrameResult r;
  r.key_frame = state.frames_seen % period == 0;
  if (!r.key_frame && !state.populated()) {
    throw ScheduleError("student frame " + std::to_string(state.frames_seen) +
                        " requested before any key-frame filled the buffers");
  }
  const bool delta = net.spec().mode == DistillMode::kDelta;
  Tensor x = frame;
  Tensor z;
  for (std::size_t i = 0; i < net.num_blocks(); ++i) {
    const auto& block = net.block(i);
    if (r.key_frame) {
      z = block.teacher.forward(x);
    } else {
      const auto& student = block.candidates[static_cast<std::size_t>(selection[i])];
      if (delta) {
        z = add(*state.z_prev[i], student.forward(x, state.x_prev[i]));
      } else {
        z = student.forward(x, std::nullopt);
      }
    }
    state.x_prev[i] = x;
    state.z_prev[i] = z;
    if (i + 1 < net.num_blocks()) x = net.block_output_to_next_input(i, z);
  }
  r.logits = net.head_forward(z);
  ++state.frames_seen;
  return r;
}

StreamResult process_stream(const DistilledNetwork& net, const Selection& selection,
                            const std::vector<Tensor>& frames, std::size_t period) {
  if (frames.empty()) throw ConfigError("stream has no frames");
  StreamResult out;
  out.cost = network_cost(net, frames.front().shape(), period, selection);
  StreamState state = make_stream_state(net);
  for (const auto& f : frames) {
    auto r = process_frame(net, selection, state, period, f);
    out.logits.push_back(std::move(r.logits));
    out.key_frames.push_back(r.key_frame);
  }
  return out;
}

std::vector<std::vector<int>> frame_copy_predictions(const DistilledNetwork& net,
                                                     const std::vector<Tensor>& frames,
                                                     std::size_t period) {
  if (period == 0) throw ConfigError("key-frame period T must be at least 1");
  NoGradGuard no_grad;
  std::vector<std::vector<int>> out;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (t % period == 0) {
      out.push_back(argmax_labels(net.teacher_forward(frames[t])));
    } else {
      out.push_back(out.back());
    }
  }
  return out;
}

}  // namespace dd
