// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "dd/cost_model.hpp"

#include "dd/errors.hpp"

namespace dd {

std::uint64_t conv_macs(std::size_t in_channels, std::size_t out_channels,
                        std::size_t kernel_h, std::size_t kernel_w,
                        std::size_t out_h, std::size_t out_w) {
  if (!in_channels || !out_channels || !kernel_h || !kernel_w || !out_h || !out_w) {
    throw ConfigError("conv MACs need positive extents");
  }
  return static_cast<std::uint64_t>(out_channels) * in_channels * kernel_h * kernel_w *
         out_h * out_w;
}

std::uint64_t trace_macs(const std::vector<ConvTrace>& trace) {
  std::uint64_t total = 0;
  for (const auto& t : trace) {
    total += t.batch * conv_macs(t.in_channels, t.out_channels, t.kernel_h, t.kernel_w,
                                 t.out_h, t.out_w);
  }
  return total;
}

double amortized_cost(double teacher_total, double student_total, std::size_t period) {
  if (period == 0) throw ConfigError("key-frame period T must be at least 1");
  const double t = static_cast<double>(period);
  return (teacher_total + (t - 1.0) * student_total) / t;
}

double CostReport::amortized_ratio() const {
  return teacher_per_frame ? amortized_per_frame / static_cast<double>(teacher_per_frame)
                           : 0.0;
}

nlohmann::json CostReport::to_json() const {
  nlohmann::json blocks_json = nlohmann::json::array();
  for (const auto& b : blocks) {
    blocks_json.push_back({
        {"name", b.name},
        {"stage", b.stage},
        {"teacher_macs", b.teacher_macs},
        {"non_compressed_macs", b.candidate_macs[kNonCompressed]},
        {"compressed_macs", b.candidate_macs[kCompressed]},
        {"chosen", b.chosen == kCompressed ? "compressed" : "non-compressed"},
        {"chosen_macs", b.chosen_macs},
        {"teacher_params", b.teacher_params},
        {"non_compressed_params", b.candidate_params[kNonCompressed]},
        {"compressed_params", b.candidate_params[kCompressed]},
        {"teacher_elementwise", b.teacher_elementwise},
        {"student_elementwise", b.student_elementwise},
        {"student_permuted", b.student_permuted},
        {"state_bytes", b.state_bytes},
    });
  }
  return {
      {"unit", "multiply-adds per frame"},
      {"T", period},
      {"head_macs", head_macs},
      {"teacher_per_frame", teacher_per_frame},
      {"student_per_frame", student_per_frame},
      {"amortized_per_frame", amortized_per_frame},
      {"amortized_ratio", amortized_ratio()},
      {"teacher_params", teacher_params},
      {"student_params", student_params},
      {"state_buffer_bytes", state_buffer_bytes},
      {"blocks", blocks_json},
  };
}

namespace {

Shape single_frame(const Shape& frame_shape) {
  if (frame_shape.size() == 3) return {1, frame_shape[0], frame_shape[1], frame_shape[2]};
  if (frame_shape.size() == 4 && frame_shape[0] == 1) return frame_shape;
  throw ShapeError("cost accounting expects a [C,H,W] or [1,C,H,W] frame, got " +
                   shape_to_string(frame_shape));
}

}  // namespace

std::vector<BlockMacs> block_macs(const DistilledNetwork& net, const Shape& frame_shape) {
  const auto inputs = block_input_shapes(net, single_frame(frame_shape));
  std::vector<BlockMacs> out(net.num_blocks());
  for (std::size_t i = 0; i < net.num_blocks(); ++i) {
    const auto& b = net.block(i);
    out[i].teacher = trace_macs(b.teacher.trace(inputs[i], nullptr));
    for (int c = 0; c < 2; ++c)
      out[i].candidates[c] = trace_macs(b.candidates[c].trace(inputs[i], nullptr));
  }
  return out;
}

CostReport network_cost(const DistilledNetwork& net, const Shape& frame_shape,
                        std::size_t period, const Selection& selection) {
  if (selection.size() != net.num_blocks()) {
    throw ConfigError("selection has " + std::to_string(selection.size()) +
                      " entries for " + std::to_string(net.num_blocks()) + " blocks");
  }
  if (period == 0) throw ConfigError("key-frame period T must be at least 1");
  const Shape frame = single_frame(frame_shape);
  const auto inputs = block_input_shapes(net, frame);

  CostReport r;
  r.period = period;
  Shape last_out;
  for (std::size_t i = 0; i < net.num_blocks(); ++i) {
    const auto& b = net.block(i);
    const int choice = selection[i];
    if (choice != kNonCompressed && choice != kCompressed) {
      throw ConfigError("selection entries must be 0 or 1");
    }
    BlockCost bc;
    bc.name = b.teacher.spec().name;
    bc.stage = b.teacher.spec().stage;
    ElementwiseTrace tew;
    bc.teacher_macs = trace_macs(b.teacher.trace(inputs[i], &tew));
    std::array<ElementwiseTrace, 2> sew;
    for (int c = 0; c < 2; ++c) {
      bc.candidate_macs[c] = trace_macs(b.candidates[c].trace(inputs[i], &sew[c]));
      bc.candidate_params[c] = b.candidates[c].parameter_count();
    }
    bc.chosen = choice;
    bc.chosen_macs = bc.candidate_macs[choice];
    bc.teacher_params = b.teacher.parameter_count();

    last_out = b.teacher.output_shape(inputs[i]);
    const std::uint64_t out_numel = shape_numel(last_out);
    // The post-activation runs on every frame, whichever path produced z.
    const std::uint64_t act =
        b.teacher.spec().activation == Activation::kRelu ? out_numel : 0;
    bc.teacher_elementwise = tew.elementwise + act;
    bc.student_elementwise = sew[choice].elementwise + act;
    bc.student_permuted = sew[choice].permuted;
    if (net.spec().mode == DistillMode::kDelta) {
      bc.student_elementwise += out_numel;  // z_{t-1} + delta
      bc.state_bytes = (shape_numel(inputs[i]) + out_numel) * sizeof(double);
    }

    r.teacher_per_frame += bc.teacher_macs;
    r.student_per_frame += bc.chosen_macs;
    r.teacher_params += bc.teacher_params;
    r.student_params += bc.candidate_params[choice];
    r.state_buffer_bytes += bc.state_bytes;
    r.blocks.push_back(std::move(bc));
  }
  r.head_macs = trace_macs({net.head().trace(last_out)});
  r.teacher_per_frame += r.head_macs;
  r.student_per_frame += r.head_macs;
  r.teacher_params += net.head().parameter_count();
  r.amortized_per_frame = amortized_cost(static_cast<double>(r.teacher_per_frame),
                                         static_cast<double>(r.student_per_frame), period);
  return r;
}

}  // namespace dd
