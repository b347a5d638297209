// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "dd/arch_search.hpp"

#include <cmath>

#include "dd/errors.hpp"
#include "dd/ops.hpp"

namespace dd {

namespace {

void require_logits(const Tensor& logits) {
  if (logits.numel() != 2) {
    throw ShapeError("architecture logits must have two entries, got " +
                     shape_to_string(logits.shape()));
  }
}

}  // namespace

GumbelNoise draw_gumbel(std::mt19937_64& rng) {
  // Open interval (0, 1) so both logs stay finite.
  std::uniform_real_distribution<double> u(std::nextafter(0.0, 1.0), 1.0);
  GumbelNoise g{};
  for (double& v : g) v = -std::log(-std::log(u(rng)));
  return g;
}

ArchSample sample_architecture(const Tensor& logits, double tau, const GumbelNoise& noise) {
  require_logits(logits);
  if (!(tau > 0.0)) throw ConfigError("Gumbel temperature must be positive");
  const Tensor perturbed = add(logits, Tensor::from_values({2}, {noise[0], noise[1]}));
  const Tensor soft = softmax(scale(perturbed, 1.0 / tau));

  ArchSample s;
  const auto p = perturbed.values();
  s.choice = p[kNonCompressed] > p[kCompressed] ? kNonCompressed : kCompressed;
  s.soft = {soft.at(0), soft.at(1)};
  std::vector<double> hard(2, 0.0);
  hard[static_cast<std::size_t>(s.choice)] = 1.0;
  // hard + soft - stop_gradient(soft): soft - soft is exactly zero in the
  // forward pass, so the value is the one-hot vector.
  s.weights = add(sub(soft, soft.detach()), Tensor::from_values({2}, std::move(hard)));
  return s;
}

ArchSample sample_architecture(const Tensor& logits, double tau, std::mt19937_64& rng) {
  return sample_architecture(logits, tau, draw_gumbel(rng));
}

Tensor sparsity_loss(const Tensor& logits, const std::array<double, 2>& costs) {
  require_logits(logits);
  for (double c : costs) {
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw ConfigError("candidate costs must be positive and finite");
    }
  }
  return weighted_sum(softmax(logits), costs);
}

std::array<double, 2> candidate_costs(const BlockMacs& macs, bool normalize) {
  if (macs.teacher == 0 || macs.candidates[0] == 0 || macs.candidates[1] == 0) {
    throw ConfigError("candidate costs are missing");
  }
  const double denom = normalize ? static_cast<double>(macs.teacher) : 1.0;
  return {static_cast<double>(macs.candidates[0]) / denom,
          static_cast<double>(macs.candidates[1]) / denom};
}

int finalize_choice(const Tensor& logits) {
  require_logits(logits);
  return logits.at(kNonCompressed) > logits.at(kCompressed) ? kNonCompressed : kCompressed;
}

Selection finalize_architecture(const DistilledNetwork& net) {
  Selection sel(net.num_blocks());
  for (std::size_t i = 0; i < net.num_blocks(); ++i)
    sel[i] = finalize_choice(net.block(i).arch_logits);
  return sel;
}

double temperature_at(std::size_t step, std::size_t total_steps, double tau_start,
                      double tau_end) {
  if (total_steps <= 1) return tau_end;
  const double f = std::min(1.0, static_cast<double>(step) /
                                     static_cast<double>(total_steps - 1));
  return tau_start + f * (tau_end - tau_start);
}

}  // namespace dd
