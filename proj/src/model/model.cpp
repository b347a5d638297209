// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "dd/model.hpp"

#include <algorithm>
#include <cmath>

namespace dd {

const char* to_string(BlockKind kind) {
  return kind == BlockKind::kConv ? "conv" : "residual";
}

const char* to_string(StudentKind kind) {
  switch (kind) {
    case StudentKind::kNonCompressed: return "non-compressed";
    case StudentKind::kLinearSvd: return "linear-svd";
    case StudentKind::kNonlinearChannel: return "nonlinear-channel";
    case StudentKind::kNonlinearSpatial: return "nonlinear-spatial";
  }
  return "?";
}

const char* to_string(DistillMode mode) {
  return mode == DistillMode::kDelta ? "delta" : "feature";
}

Tensor apply_activation(const Tensor& x, Activation act) {
  return act == Activation::kRelu ? relu(x) : x;
}

// ---------------------------------------------------------------- ConvLayer

ConvLayer::ConvLayer(std::size_t out_channels, std::size_t in_channels,
                     std::size_t kernel_h, std::size_t kernel_w,
                     Conv2dOptions options, bool with_bias)
    : weight_(Tensor::zeros({out_channels, in_channels, kernel_h, kernel_w}, true)),
      options_(options) {
  if (out_channels == 0 || in_channels == 0 || kernel_h == 0 || kernel_w == 0) {
    throw ConfigError("conv layer with a zero extent: " +
                      shape_to_string(weight_.shape()));
  }
  if (with_bias) bias_ = Tensor::zeros({out_channels}, true);
}

Tensor ConvLayer::forward(const Tensor& x) const {
  return conv2d(x, weight_, bias_, options_);
}

Shape ConvLayer::output_shape(const Shape& input) const {
  if (input.size() != 4 || input[1] != in_channels()) {
    throw ShapeError("conv layer expecting " + std::to_string(in_channels()) +
                     " channels got input " + shape_to_string(input));
  }
  const auto ext = conv_output_extent(input[2], input[3], weight_.dim(2),
                                      weight_.dim(3), options_);
  return {input[0], out_channels(), ext[0], ext[1]};
}

ConvTrace ConvLayer::trace(const Shape& input) const {
  const Shape out = output_shape(input);
  return {in_channels(), out_channels(), weight_.dim(2), weight_.dim(3),
          out[2], out[3], input[0]};
}

std::size_t ConvLayer::parameter_count() const {
  return weight_.numel() + (bias_ ? bias_->numel() : 0);
}

void ConvLayer::init_fan_in(std::mt19937_64& rng) {
  const double fan_in =
      static_cast<double>(weight_.dim(1) * weight_.dim(2) * weight_.dim(3));
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : weight_.mutable_values()) v = dist(rng);
  if (bias_) std::fill(bias_->mutable_values().begin(), bias_->mutable_values().end(), 0.0);
}

void ConvLayer::init_zero() {
  std::fill(weight_.mutable_values().begin(), weight_.mutable_values().end(), 0.0);
  if (bias_) std::fill(bias_->mutable_values().begin(), bias_->mutable_values().end(), 0.0);
}

void ConvLayer::copy_from(const ConvLayer& other) {
  if (other.weight_.shape() != weight_.shape()) {
    throw ShapeError("conv copy: " + shape_to_string(other.weight_.shape()) +
                     " into " + shape_to_string(weight_.shape()));
  }
  std::copy(other.weight_.values().begin(), other.weight_.values().end(),
            weight_.mutable_values().begin());
  if (bias_) {
    if (other.bias_) {
      std::copy(other.bias_->values().begin(), other.bias_->values().end(),
                bias_->mutable_values().begin());
    } else {
      std::fill(bias_->mutable_values().begin(), bias_->mutable_values().end(), 0.0);
    }
  }
}

// ------------------------------------------------------------- TeacherBlock

namespace {

Conv2dOptions same_padding(std::size_t kernel, std::size_t stride) {
  Conv2dOptions o;
  o.stride = {stride, stride};
  o.padding = {kernel / 2, kernel / 2};
  return o;
}

}  // namespace

TeacherBlock::TeacherBlock(TeacherBlockSpec spec) : spec_(std::move(spec)) {
  if (spec_.in_channels == 0 || spec_.out_channels == 0 || spec_.kernel == 0 ||
      spec_.stride == 0) {
    throw ConfigError("block '" + spec_.name + "': channels, kernel and stride must be positive");
  }
  if (spec_.kernel % 2 == 0) {
    throw ConfigError("block '" + spec_.name + "': kernel size must be odd");
  }
  const auto opt = same_padding(spec_.kernel, spec_.stride);
  if (spec_.kind == BlockKind::kConv) {
    convs_.emplace_back(spec_.out_channels, spec_.in_channels, spec_.kernel,
                        spec_.kernel, opt, true);
  } else {
    if (spec_.in_channels != spec_.out_channels || spec_.stride != 1) {
      throw ConfigError("block '" + spec_.name +
                        "': residual blocks need equal in/out channels and stride 1");
    }
    const std::size_t c = spec_.out_channels;
    convs_.emplace_back(c, c, spec_.kernel, spec_.kernel, opt, true);
    convs_.emplace_back(c, c, spec_.kernel, spec_.kernel, opt, true);
  }
}

void TeacherBlock::check_input(const Shape& input) const {
  if (input.size() != 4 || input[1] != spec_.in_channels) {
    throw ShapeError("block '" + spec_.name + "' expects " +
                     std::to_string(spec_.in_channels) + " input channels, got " +
                     shape_to_string(input));
  }
}

Tensor TeacherBlock::forward(const Tensor& x) const {
  check_input(x.shape());
  if (spec_.kind == BlockKind::kConv) return convs_[0].forward(x);
  return add(x, convs_[1].forward(relu(convs_[0].forward(x))));
}

Shape TeacherBlock::output_shape(const Shape& input) const {
  check_input(input);
  Shape s = input;
  for (const auto& c : convs_) s = c.output_shape(s);
  return s;
}

std::vector<ConvTrace> TeacherBlock::trace(const Shape& input,
                                           ElementwiseTrace* ew) const {
  check_input(input);
  std::vector<ConvTrace> out;
  Shape s = input;
  for (const auto& c : convs_) {
    out.push_back(c.trace(s));
    s = c.output_shape(s);
  }
  if (ew && spec_.kind == BlockKind::kResidual) {
    ew->elementwise += 2 * shape_numel(s);  // inner relu + skip add
  }
  return out;
}

std::size_t TeacherBlock::parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : convs_) n += c.parameter_count();
  return n;
}

void TeacherBlock::init_random(std::mt19937_64& rng) {
  for (auto& c : convs_) c.init_fan_in(rng);
}

// ------------------------------------------------------------- StudentBlock

std::size_t svd_intermediate_channels(std::size_t in_channels,
                                      std::size_t out_channels,
                                      std::size_t gamma) {
  if (gamma == 0) throw ConfigError("compression factor gamma must be positive");
  return std::max<std::size_t>(1, std::min(in_channels, out_channels) / gamma);
}

StudentBlock::StudentBlock(const TeacherBlock& teacher, StudentSpec spec,
                           DistillMode mode)
    : spec_(spec), mode_(mode), teacher_kind_(teacher.spec().kind) {
  const auto& ts = teacher.spec();
  const bool linear = teacher_kind_ == BlockKind::kConv;
  if (spec_.kind == StudentKind::kLinearSvd && !linear) {
    throw ConfigError("block '" + ts.name + "': linear-svd students need a single-conv teacher");
  }
  if ((spec_.kind == StudentKind::kNonlinearChannel ||
       spec_.kind == StudentKind::kNonlinearSpatial) && linear) {
    throw ConfigError("block '" + ts.name +
                      "': channel/spatial students need a residual teacher");
  }
  if (mode == DistillMode::kFeature) {
    input_ = StudentInput::kCurrent;
  } else {
    input_ = linear ? StudentInput::kDelta : StudentInput::kPreviousAndDelta;
  }
  const std::size_t cin = ts.in_channels, cout = ts.out_channels, k = ts.kernel;
  const std::size_t p = k / 2, s = ts.stride;
  const std::size_t in_eff = input_ == StudentInput::kPreviousAndDelta ? 2 * cin : cin;
  const bool feature = mode == DistillMode::kFeature;

  switch (spec_.kind) {
    case StudentKind::kNonCompressed:
      if (linear) {
        convs_.emplace_back(cout, cin, k, k, same_padding(k, s), feature);
      } else {
        convs_.emplace_back(cout, in_eff, k, k, same_padding(k, 1), true);
        convs_.emplace_back(cout, cout, k, k, same_padding(k, 1), true);
      }
      break;
    case StudentKind::kLinearSvd: {
      const std::size_t m = svd_intermediate_channels(cin, cout, spec_.gamma);
      Conv2dOptions vertical;
      vertical.stride = {s, 1};
      vertical.padding = {p, 0};
      Conv2dOptions horizontal;
      horizontal.stride = {1, s};
      horizontal.padding = {0, p};
      convs_.emplace_back(m, cin, k, 1, vertical, false);
      convs_.emplace_back(cout, m, 1, k, horizontal, true);
      break;
    }
    case StudentKind::kNonlinearChannel: {
      if (spec_.gamma == 0) throw ConfigError("compression factor gamma must be positive");
      const std::size_t c = std::max<std::size_t>(1, cout / spec_.gamma);
      convs_.emplace_back(c, in_eff, 1, 1, Conv2dOptions{}, true);
      convs_.emplace_back(c, c, k, k, same_padding(k, 1), true);
      convs_.emplace_back(c, c, k, k, same_padding(k, 1), true);
      convs_.emplace_back(cout, c, 1, 1, Conv2dOptions{}, true);
      break;
    }
    case StudentKind::kNonlinearSpatial: {
      const std::size_t r = spec_.spatial_factor;
      if (r == 0) throw ConfigError("spatial reduction factor must be positive");
      Conv2dOptions strided;
      strided.stride = {r, r};
      convs_.emplace_back(cout, in_eff, 1, 1, strided, true);
      convs_.emplace_back(cout, cout, k, k, same_padding(k, 1), true);
      convs_.emplace_back(cout, cout, k, k, same_padding(k, 1), true);
      convs_.emplace_back(cout * r * r, cout, 1, 1, Conv2dOptions{}, true);
      break;
    }
  }
}

Tensor StudentBlock::prepare_input(const Tensor& x_t,
                                   const std::optional<Tensor>& x_prev) const {
  if (input_ == StudentInput::kCurrent) return x_t;
  if (!x_prev) {
    throw ScheduleError("student update requested without previous-frame input");
  }
  if (x_prev->shape() != x_t.shape()) {
    throw ShapeError("student inputs differ in shape: " + shape_to_string(x_t.shape()) +
                     " vs " + shape_to_string(x_prev->shape()));
  }
  Tensor delta = sub(x_t, *x_prev);
  if (input_ == StudentInput::kDelta) return delta;
  return concat_channels(*x_prev, delta);
}

Tensor StudentBlock::forward(const Tensor& x_t,
                             const std::optional<Tensor>& x_prev) const {
  const Tensor u = prepare_input(x_t, x_prev);
  switch (spec_.kind) {
    case StudentKind::kNonCompressed: {
      if (teacher_kind_ == BlockKind::kConv) return convs_[0].forward(u);
      // Mirrors the residual teacher; the skip carries x_t (feature) or the
      // delta channels (delta mode).
      const Tensor body = convs_[1].forward(relu(convs_[0].forward(u)));
      if (input_ == StudentInput::kCurrent) return add(x_t, body);
      return add(sub(x_t, *x_prev), body);
    }
    case StudentKind::kLinearSvd:
      return convs_[1].forward(convs_[0].forward(u));
    case StudentKind::kNonlinearChannel: {
      const Tensor e = convs_[0].forward(u);
      const Tensor b = add(e, convs_[2].forward(relu(convs_[1].forward(e))));
      return convs_[3].forward(b);
    }
    case StudentKind::kNonlinearSpatial: {
      const std::size_t r = spec_.spatial_factor;
      if (x_t.dim(2) % r != 0 || x_t.dim(3) % r != 0) {
        throw ShapeError("spatial student with factor " + std::to_string(r) +
                         " needs extents divisible by it, got " +
                         shape_to_string(x_t.shape()));
      }
      const Tensor e = convs_[0].forward(u);
      const Tensor b = add(e, convs_[2].forward(relu(convs_[1].forward(e))));
      return pixel_shuffle(convs_[3].forward(b), r);
    }
  }
  return {};
}

std::vector<ConvTrace> StudentBlock::trace(const Shape& block_input,
                                           ElementwiseTrace* ew) const {
  Shape u = block_input;
  const std::size_t plane_in = shape_numel(block_input);
  if (input_ == StudentInput::kPreviousAndDelta) u[1] *= 2;
  if (ew && input_ != StudentInput::kCurrent) ew->elementwise += plane_in;  // delta
  if (ew && input_ == StudentInput::kPreviousAndDelta) ew->permuted += 2 * plane_in;

  std::vector<ConvTrace> out;
  Shape s = u;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    out.push_back(convs_[i].trace(s));
    s = convs_[i].output_shape(s);
    if (!ew) continue;
    const bool mirror_body = convs_.size() == 4 && i == 2;
    const bool nc_residual = convs_.size() == 2 && teacher_kind_ == BlockKind::kResidual && i == 1;
    if (mirror_body || nc_residual) ew->elementwise += 2 * shape_numel(s);  // relu + skip
  }
  if (ew && spec_.kind == StudentKind::kNonlinearSpatial) ew->permuted += shape_numel(s);
  if (spec_.kind == StudentKind::kNonlinearSpatial) {
    const std::size_t r = spec_.spatial_factor;
    s = {s[0], s[1] / (r * r), s[2] * r, s[3] * r};
    if (s[2] != block_input[2] || s[3] != block_input[3]) {
      throw ShapeError("spatial student with factor " + std::to_string(r) +
                       " needs extents divisible by it, got " +
                       shape_to_string(block_input));
    }
  }
  return out;
}

std::size_t StudentBlock::parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : convs_) n += c.parameter_count();
  return n;
}

void StudentBlock::initialize(const TeacherBlock& teacher, std::mt19937_64& rng) {
  if (spec_.kind == StudentKind::kNonCompressed) {
    const auto& tc = teacher.convs();
    if (teacher_kind_ == BlockKind::kConv || input_ == StudentInput::kCurrent) {
      for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].copy_from(tc[i]);
      return;
    }
    // Delta-mode residual mirror: the first conv sees [x_{t-1}, dx]; the
    // teacher's first-layer weights act on the delta half, the x_{t-1} half
    // starts at zero. Biases start at zero so g(x, 0) = 0.
    convs_[0].init_zero();
    const std::size_t c_in = teacher.spec().in_channels;
    const std::size_t c_out = convs_[0].out_channels();
    const std::size_t k2 = convs_[0].weight().dim(2) * convs_[0].weight().dim(3);
    const auto src = tc[0].weight().values();
    auto dst = convs_[0].weight().mutable_values();
    for (std::size_t o = 0; o < c_out; ++o)
      for (std::size_t i = 0; i < c_in; ++i)
        for (std::size_t q = 0; q < k2; ++q)
          dst[(o * 2 * c_in + c_in + i) * k2 + q] = src[(o * c_in + i) * k2 + q];
    convs_[1].copy_from(tc[1]);
    auto& b = convs_[1].bias();
    if (b) std::fill(b->mutable_values().begin(), b->mutable_values().end(), 0.0);
    return;
  }
  for (auto& c : convs_) c.init_fan_in(rng);
  convs_.back().init_zero();
}

// ---------------------------------------------------------------- BlockPair

StudentSpec compressed_spec_for(const NetworkSpec& spec, BlockKind kind) {
  StudentSpec s = spec.compressed;
  if (kind == BlockKind::kConv) {
    s.kind = StudentKind::kLinearSvd;
  } else if (spec.nonlinear_variant == "channel") {
    s.kind = StudentKind::kNonlinearChannel;
  } else if (spec.nonlinear_variant == "spatial") {
    s.kind = StudentKind::kNonlinearSpatial;
  } else {
    throw ConfigError("unknown non-linear student variant '" + spec.nonlinear_variant + "'");
  }
  return s;
}

BlockPair::BlockPair(TeacherBlock teacher_block, const StudentSpec& compressed,
                     DistillMode mode)
    : teacher(std::move(teacher_block)),
      candidates{StudentBlock(teacher, StudentSpec{StudentKind::kNonCompressed,
                                                   compressed.gamma,
                                                   compressed.spatial_factor},
                              mode),
                 StudentBlock(teacher, compressed, mode)},
      arch_logits(Tensor::zeros({2}, true)) {}

// --------------------------------------------------------- DistilledNetwork

namespace {

std::vector<BlockPair> build_blocks(const NetworkSpec& spec) {
  if (spec.blocks.empty()) throw ConfigError("network needs at least one block");
  if (spec.num_classes < 2) throw ConfigError("network needs at least two classes");
  std::vector<BlockPair> blocks;
  std::size_t channels = spec.in_channels;
  for (const auto& b : spec.blocks) {
    if (b.in_channels != channels) {
      throw ConfigError("block '" + b.name + "' expects " + std::to_string(b.in_channels) +
                        " input channels but receives " + std::to_string(channels));
    }
    TeacherBlock teacher(b);
    blocks.emplace_back(std::move(teacher), compressed_spec_for(spec, b.kind), spec.mode);
    channels = b.out_channels;
  }
  return blocks;
}

}  // namespace

DistilledNetwork::DistilledNetwork(NetworkSpec spec)
    : spec_(std::move(spec)),
      blocks_(build_blocks(spec_)),
      head_(spec_.num_classes, spec_.blocks.back().out_channels, 1, 1, Conv2dOptions{}, true) {}

Tensor DistilledNetwork::block_output_to_next_input(std::size_t i, const Tensor& z) const {
  return apply_activation(z, blocks_[i].teacher.spec().activation);
}

Tensor DistilledNetwork::head_forward(const Tensor& z_last) const {
  return head_.forward(block_output_to_next_input(blocks_.size() - 1, z_last));
}

Tensor DistilledNetwork::teacher_forward(const Tensor& frame) const {
  Tensor x = frame;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Tensor z = blocks_[i].teacher.forward(x);
    if (i + 1 == blocks_.size()) return head_forward(z);
    x = block_output_to_next_input(i, z);
  }
  return {};
}

void DistilledNetwork::init_teacher(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& b : blocks_) b.teacher.init_random(rng);
  head_.init_fan_in(rng);
}

void DistilledNetwork::init_students(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& b : blocks_) {
    for (auto& c : b.candidates) c.initialize(b.teacher, rng);
    std::fill(b.arch_logits.mutable_values().begin(), b.arch_logits.mutable_values().end(), 0.0);
  }
}

namespace {

void append_conv(std::vector<Tensor>& out, const ConvLayer& c) {
  out.push_back(c.weight());
  if (c.bias()) out.push_back(*c.bias());
}

}  // namespace

std::vector<Tensor> DistilledNetwork::teacher_parameters() const {
  std::vector<Tensor> out;
  for (const auto& b : blocks_)
    for (const auto& c : b.teacher.convs()) append_conv(out, c);
  append_conv(out, head_);
  return out;
}

std::vector<Tensor> DistilledNetwork::student_parameters() const {
  std::vector<Tensor> out;
  for (const auto& b : blocks_)
    for (const auto& s : b.candidates)
      for (const auto& c : s.convs()) append_conv(out, c);
  return out;
}

std::vector<Tensor> DistilledNetwork::arch_parameters() const {
  std::vector<Tensor> out;
  for (const auto& b : blocks_) out.push_back(b.arch_logits);
  return out;
}

std::vector<std::pair<std::string, Tensor>> DistilledNetwork::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  const auto add_conv = [&](const std::string& prefix, const ConvLayer& c) {
    out.emplace_back(prefix + ".weight", c.weight());
    if (c.bias()) out.emplace_back(prefix + ".bias", *c.bias());
  };
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string bp = "blocks." + std::to_string(i);
    const auto& b = blocks_[i];
    for (std::size_t j = 0; j < b.teacher.convs().size(); ++j)
      add_conv(bp + ".teacher.conv" + std::to_string(j), b.teacher.convs()[j]);
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t j = 0; j < b.candidates[s].convs().size(); ++j)
        add_conv(bp + ".student" + std::to_string(s) + ".conv" + std::to_string(j),
                 b.candidates[s].convs()[j]);
    out.emplace_back(bp + ".arch_logits", b.arch_logits);
  }
  add_conv("head", head_);
  return out;
}

namespace {

void set_trainable(const std::vector<Tensor>& params, bool trainable) {
  for (auto p : params) {
    p.set_requires_grad(trainable);
    if (!trainable) p.zero_grad();
  }
}

}  // namespace

void DistilledNetwork::set_teacher_trainable(bool trainable) {
  set_trainable(teacher_parameters(), trainable);
}

void DistilledNetwork::set_students_trainable(bool trainable) {
  set_trainable(student_parameters(), trainable);
}

void DistilledNetwork::set_arch_trainable(bool trainable) {
  set_trainable(arch_parameters(), trainable);
}

std::vector<Shape> block_input_shapes(const DistilledNetwork& net, const Shape& frame_shape) {
  std::vector<Shape> shapes;
  Shape s = frame_shape;
  for (std::size_t i = 0; i < net.num_blocks(); ++i) {
    shapes.push_back(s);
    s = net.block(i).teacher.output_shape(s);
  }
  return shapes;
}

}  // namespace dd
