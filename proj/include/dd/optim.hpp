// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "dd/tensor.hpp"

namespace dd {

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

// SGD with heavy-ball momentum:
//   d = g + weight_decay * p;  v = momentum * v + d;  p -= lr * lr_scale * v
// Velocity buffers start at zero, so the first step uses v = d.
class Sgd {
 public:
  explicit Sgd(SgdOptions options) : options_(options) {}

  // lr_scale multiplies the base learning rate for this parameter.
  void add_param(Tensor param, double lr_scale = 1.0);

  // Throws NumericError if a requires-grad parameter has no gradient.
  // Parameters whose requires_grad flag is off are skipped (frozen).
  void step();
  void zero_grad();

  void set_lr(double lr) { options_.lr = lr; }
  const SgdOptions& options() const { return options_; }

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  // Momentum buffers, one per parameter, for checkpointing.
  std::vector<std::vector<double>>& velocity() { return velocity_; }
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }

 private:
  SgdOptions options_;
  std::vector<Tensor> params_;
  std::vector<double> lr_scales_;
  std::vector<std::vector<double>> velocity_;
};

// L2 norm of all populated gradients.
double global_grad_norm(const std::vector<Tensor>& params);

// Rescales gradients so their global norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

}  // namespace dd
