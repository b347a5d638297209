// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-block choice between the non-compressed and compressed student,
// relaxed with straight-through Gumbel-softmax and pushed toward cheap
// candidates by an expected-cost penalty.

#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "dd/cost_model.hpp"
#include "dd/model.hpp"
#include "dd/tensor.hpp"

namespace dd {

using GumbelNoise = std::array<double, 2>;

// Two independent standard Gumbel draws, -log(-log(u)).
GumbelNoise draw_gumbel(std::mt19937_64& rng);

struct ArchSample {
  Tensor weights;             // [2]: hard one-hot forward, soft gradient backward
  std::array<double, 2> soft{};  // softmax((psi + g) / tau)
  int choice = kCompressed;
};

// Straight-through sample for fixed noise. The forward value of `weights` is
// exactly one-hot at argmax(psi + g), ties going to the compressed candidate.
ArchSample sample_architecture(const Tensor& logits, double tau, const GumbelNoise& noise);
ArchSample sample_architecture(const Tensor& logits, double tau, std::mt19937_64& rng);

// Sum_i softmax(psi)_i * costs_i. Throws ConfigError for non-positive costs.
Tensor sparsity_loss(const Tensor& logits, const std::array<double, 2>& costs);

// Candidate costs of one block, divided by its teacher cost when normalize is
// set, otherwise in raw MACs.
std::array<double, 2> candidate_costs(const BlockMacs& macs, bool normalize);

// Deterministic argmax of psi per block; ties pick the compressed candidate.
int finalize_choice(const Tensor& logits);
Selection finalize_architecture(const DistilledNetwork& net);

// Linear annealing from tau_start at step 0 to tau_end at the last step.
double temperature_at(std::size_t step, std::size_t total_steps, double tau_start = 1.0,
                      double tau_end = 0.1);

}  // namespace dd
