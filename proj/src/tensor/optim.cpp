// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "dd/optim.hpp"

#include <cmath>

namespace dd {

void Sgd::add_param(Tensor param, double lr_scale) {
  velocity_.emplace_back(param.numel(), 0.0);
  params_.push_back(std::move(param));
  lr_scales_.push_back(lr_scale);
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.requires_grad()) continue;
    if (!p.has_grad()) {
      throw NumericError("sgd step: parameter " + std::to_string(i) +
                         " of shape " + shape_to_string(p.shape()) +
                         " has no gradient");
    }
    auto values = p.mutable_values();
    const auto grad = p.grad();
    auto& v = velocity_[i];
    const double lr = options_.lr * lr_scales_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double d = grad[j] + options_.weight_decay * values[j];
      v[j] = options_.momentum * v[j] + d;
      values[j] -= lr * v[j];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace dd
