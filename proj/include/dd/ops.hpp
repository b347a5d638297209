// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Activations are NCHW, convolution weights are
// [out-channels, in-channels, kernel-h, kernel-w]. No broadcasting: binary
// ops require equal shapes.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>

#include "dd/tensor.hpp"

namespace dd {

struct Conv2dOptions {
  std::array<std::size_t, 2> stride{1, 1};   // (h, w)
  std::array<std::size_t, 2> padding{0, 0};  // (h, w), zero padding
};

// Output spatial extents of a convolution, or ConfigError when they are not
// positive.
std::array<std::size_t, 2> conv_output_extent(std::size_t height,
                                              std::size_t width,
                                              std::size_t kernel_h,
                                              std::size_t kernel_w,
                                              const Conv2dOptions& options);

// Cross-correlation through an im2col lowering.
Tensor conv2d(const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias,
              const Conv2dOptions& options = {});

// Direct seven-loop cross-correlation. Not recorded on the tape; this is the
// reference path the fast one is checked against. When mac_counter is given,
// it is incremented once per multiply-add actually executed (padding taps
// included, matching the analytic count).
Tensor conv2d_reference(const Tensor& input, const Tensor& weight,
                        const std::optional<Tensor>& bias,
                        const Conv2dOptions& options = {},
                        std::uint64_t* mac_counter = nullptr);

// While alive, conv2d calls on this thread run through conv2d_reference and
// add the multiply-adds they execute to *counter. Gradients are not recorded
// inside the scope. Used to count the work of whole modules by running them.
class ReferenceConvScope {
 public:
  explicit ReferenceConvScope(std::uint64_t* counter);
  ~ReferenceConvScope();
  ReferenceConvScope(const ReferenceConvScope&) = delete;
  ReferenceConvScope& operator=(const ReferenceConvScope&) = delete;

 private:
  std::uint64_t* previous_;
  NoGradGuard no_grad_;
};

Tensor pointwise_conv(const Tensor& input, const Tensor& weight,
                      std::size_t stride = 1,
                      const std::optional<Tensor>& bias = std::nullopt);

// Depth-to-space: out[n, c, h*r + i, w*r + j] = in[n, c*r*r + i*r + j, h, w].
Tensor pixel_shuffle(const Tensor& input, std::size_t factor);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);  // relu'(0) = 0
Tensor scale(const Tensor& x, double factor);
// Multiplies every element of x by the single element of s.
Tensor scale_by(const Tensor& x, const Tensor& s);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);

// Softmax over all elements of a 1-D tensor.
Tensor softmax(const Tensor& logits);
// Sum of x[i] * weights[i]; weights are constants.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

// Mean of squared differences over every element.
Tensor l2_loss(const Tensor& a, const Tensor& b);

inline constexpr int kIgnoreLabel = -1;

// Mean negative log-likelihood over labeled pixels of NKHW logits. Labels are
// laid out NHW; entries equal to ignore_label are skipped.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             int ignore_label = kIgnoreLabel);

}  // namespace dd
