// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Teacher blocks, student variants, and the distilled network container.
//
// A network is an ordered list of blocks followed by a 1x1 classification
// head. Each block pairs a teacher with two student candidates
// (non-compressed, compressed) and a 2-vector of architecture logits.
// Between blocks, the block's post-activation is applied to its output
// before it becomes the next block's input; students therefore regress the
// change of the pre-activation output, which for single-conv teachers is a
// linear function of the input change.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dd/ops.hpp"
#include "dd/tensor.hpp"

namespace dd {

enum class BlockKind { kConv, kResidual };
enum class Activation { kNone, kRelu };
enum class DistillMode { kDelta, kFeature };

enum class StudentKind {
  kNonCompressed,
  kLinearSvd,
  kNonlinearChannel,
  kNonlinearSpatial,
};

// What a student consumes.
enum class StudentInput {
  kDelta,             // x_t - x_{t-1}
  kPreviousAndDelta,  // concat(x_{t-1}, x_t - x_{t-1})
  kCurrent,           // x_t (feature distillation)
};

const char* to_string(BlockKind kind);
const char* to_string(StudentKind kind);
const char* to_string(DistillMode mode);

Tensor apply_activation(const Tensor& x, Activation act);

// Geometry of one convolution as executed on a concrete input.
struct ConvTrace {
  std::size_t in_channels, out_channels, kernel_h, kernel_w;
  std::size_t out_h, out_w, batch;
};

// Counts of non-MAC work: elementwise adds/relus and pure permutations.
struct ElementwiseTrace {
  std::uint64_t elementwise = 0;
  std::uint64_t permuted = 0;
};

// A parameterized convolution.
class ConvLayer {
 public:
  ConvLayer(std::size_t out_channels, std::size_t in_channels,
            std::size_t kernel_h, std::size_t kernel_w, Conv2dOptions options,
            bool with_bias);

  Tensor forward(const Tensor& x) const;
  Shape output_shape(const Shape& input) const;
  ConvTrace trace(const Shape& input) const;

  std::size_t in_channels() const { return weight_.dim(1); }
  std::size_t out_channels() const { return weight_.dim(0); }
  const Conv2dOptions& options() const { return options_; }
  std::size_t parameter_count() const;

  Tensor& weight() { return weight_; }
  const Tensor& weight() const { return weight_; }
  std::optional<Tensor>& bias() { return bias_; }
  const std::optional<Tensor>& bias() const { return bias_; }

  // He-uniform weights, zero bias.
  void init_fan_in(std::mt19937_64& rng);
  void init_zero();
  void copy_from(const ConvLayer& other);

 private:
  Tensor weight_;
  std::optional<Tensor> bias_;
  Conv2dOptions options_;
};

struct TeacherBlockSpec {
  std::string name;
  std::string stage = "body";
  BlockKind kind = BlockKind::kConv;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Activation activation = Activation::kRelu;
};

class TeacherBlock {
 public:
  explicit TeacherBlock(TeacherBlockSpec spec);

  const TeacherBlockSpec& spec() const { return spec_; }
  Tensor forward(const Tensor& x) const;
  Shape output_shape(const Shape& input) const;

  std::vector<ConvLayer>& convs() { return convs_; }
  const std::vector<ConvLayer>& convs() const { return convs_; }
  std::vector<ConvTrace> trace(const Shape& input, ElementwiseTrace* ew) const;
  std::size_t parameter_count() const;

  void init_random(std::mt19937_64& rng);

 private:
  void check_input(const Shape& input) const;

  TeacherBlockSpec spec_;
  std::vector<ConvLayer> convs_;  // one for kConv, two for kResidual
};

struct StudentSpec {
  StudentKind kind = StudentKind::kLinearSvd;
  std::size_t gamma = 4;           // channel compression factor
  std::size_t spatial_factor = 2;  // stride r of the spatial variant
};

// Intermediate width of the factorized student: max(1, min(cin, cout) / gamma).
std::size_t svd_intermediate_channels(std::size_t in_channels,
                                      std::size_t out_channels,
                                      std::size_t gamma);

class StudentBlock {
 public:
  StudentBlock(const TeacherBlock& teacher, StudentSpec spec, DistillMode mode);

  StudentKind kind() const { return spec_.kind; }
  const StudentSpec& spec() const { return spec_; }
  StudentInput input_kind() const { return input_; }

  // Delta mode returns the predicted output change; feature mode returns the
  // predicted output itself. Throws ScheduleError when the input signature
  // needs x_{t-1} and none is given.
  Tensor forward(const Tensor& x_t, const std::optional<Tensor>& x_prev) const;

  std::vector<ConvLayer>& convs() { return convs_; }
  const std::vector<ConvLayer>& convs() const { return convs_; }
  std::vector<ConvTrace> trace(const Shape& block_input, ElementwiseTrace* ew) const;
  std::size_t parameter_count() const;

  // Non-compressed students copy the teacher; compressed ones get fan-in
  // initialization with the last layer zeroed.
  void initialize(const TeacherBlock& teacher, std::mt19937_64& rng);

 private:
  Tensor prepare_input(const Tensor& x_t, const std::optional<Tensor>& x_prev) const;

  StudentSpec spec_;
  DistillMode mode_;
  BlockKind teacher_kind_;
  StudentInput input_;
  std::vector<ConvLayer> convs_;
};

// Candidate index convention.
inline constexpr int kNonCompressed = 0;
inline constexpr int kCompressed = 1;

struct BlockPair {
  BlockPair(TeacherBlock teacher_block, const StudentSpec& compressed,
            DistillMode mode);

  TeacherBlock teacher;
  std::array<StudentBlock, 2> candidates;
  Tensor arch_logits;  // psi, shape [2]
};

struct NetworkSpec {
  std::size_t in_channels = 3;
  std::size_t num_classes = 4;
  std::vector<TeacherBlockSpec> blocks;
  StudentSpec compressed;  // kind ignored; chosen per block granularity
  std::string nonlinear_variant = "channel";  // channel | spatial
  DistillMode mode = DistillMode::kDelta;
};

// Compressed student spec for a block given the network-wide settings.
StudentSpec compressed_spec_for(const NetworkSpec& spec, BlockKind kind);

// Per-block candidate choice, kNonCompressed or kCompressed.
using Selection = std::vector<int>;

class DistilledNetwork {
 public:
  explicit DistilledNetwork(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  std::size_t num_blocks() const { return blocks_.size(); }
  BlockPair& block(std::size_t i) { return blocks_[i]; }
  const BlockPair& block(std::size_t i) const { return blocks_[i]; }
  ConvLayer& head() { return head_; }
  const ConvLayer& head() const { return head_; }

  // Applies block i's post-activation to its output.
  Tensor block_output_to_next_input(std::size_t i, const Tensor& z) const;
  // Post-activation of the last block, then the 1x1 head.
  Tensor head_forward(const Tensor& z_last) const;
  // Full per-frame teacher path, returning logits.
  Tensor teacher_forward(const Tensor& frame) const;

  void init_teacher(std::uint64_t seed);
  void init_students(std::uint64_t seed);

  std::vector<Tensor> teacher_parameters() const;  // blocks + head
  std::vector<Tensor> student_parameters() const;
  std::vector<Tensor> arch_parameters() const;
  // Stable names, used by checkpoints.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  void set_teacher_trainable(bool trainable);
  void set_students_trainable(bool trainable);
  void set_arch_trainable(bool trainable);

 private:
  NetworkSpec spec_;
  std::vector<BlockPair> blocks_;
  ConvLayer head_;
};

// Validates shapes through the whole network and returns each block's input
// shape for an [N, C, H, W] frame batch.
std::vector<Shape> block_input_shapes(const DistilledNetwork& net,
                                      const Shape& frame_shape);

}  // namespace dd
