// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Brute-force references for mIoU and temporal consistency.

#pragma once

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "dd/videotask.hpp"

namespace dd::testing {

inline std::vector<int> random_map(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(k) - 1);
  std::vector<int> out(n);
  for (int& v : out) v = d(rng);
  return out;
}

// Explicit confusion matrix, rows = label, cols = prediction.
inline double confusion_miou(const std::vector<int>& pred, const std::vector<int>& label,
                      std::size_t k, int ignore) {
  std::vector<std::vector<double>> cm(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (label[i] != ignore) cm[label[i]][pred[i]] += 1.0;
  double total = 0.0;
  int classes = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row += cm[c][j];
      col += cm[j][c];
    }
    const double uni = row + col - cm[c][c];
    if (uni == 0.0) continue;
    total += cm[c][c] / uni;
    ++classes;
  }
  return classes ? total / classes : 1.0;
}

// Per-class intersection and union counted pixel by pixel, with the previous
// map shifted by integer per-pixel motion.
inline double brute_force_tc(const std::vector<std::vector<int>>& preds,
                      const std::vector<std::vector<std::array<int, 2>>>& motion,
                      std::size_t h, std::size_t w, std::size_t k) {
  double total = 0.0;
  for (std::size_t t = 1; t < preds.size(); ++t) {
    double pair = 0.0;
    int classes = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double inter = 0.0, uni = 0.0;
      for (int y = 0; y < static_cast<int>(h); ++y)
        for (int x = 0; x < static_cast<int>(w); ++x) {
          const auto& m = motion[t][static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
          const int sy = y - m[0], sx = x - m[1];
          if (sy < 0 || sx < 0 || sy >= static_cast<int>(h) || sx >= static_cast<int>(w)) continue;
          const bool a = preds[t][static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] ==
                         static_cast<int>(c);
          const bool b = preds[t - 1][static_cast<std::size_t>(sy) * w +
                                      static_cast<std::size_t>(sx)] == static_cast<int>(c);
          inter += a && b;
          uni += a || b;
        }
      if (uni == 0.0) continue;
      pair += inter / uni;
      ++classes;
    }
    total += pair / classes;
  }
  return total / static_cast<double>(preds.size() - 1);
}

inline Tensor motion_tensor(const std::vector<std::array<int, 2>>& m, std::size_t h, std::size_t w) {
  std::vector<double> v(2 * h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    v[p] = m[p][0];
    v[h * w + p] = m[p][1];
  }
  return Tensor::from_values({2, h, w}, std::move(v));
}

struct MetricOracleOutcome {
  int cases = 0;
  double miou_max_error = 0.0;
  double tc_max_error = 0.0;
  double perfect_compensation_tc = 0.0;
};

// Random label maps with ignore pixels and random integer motion, compared
// against the confusion-matrix and pixel-overlap references.
inline MetricOracleOutcome run_metric_oracles(int cases, std::uint64_t seed) {
  MetricOracleOutcome out;
  out.cases = cases;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> md(-2, 2);
  const std::size_t h = 8, w = 8, k = 3;
  for (int trial = 0; trial < cases; ++trial) {
    const auto pred = random_map(h * w, k, rng);
    auto label = random_map(h * w, k, rng);
    if (trial % 2) label[static_cast<std::size_t>(trial) % label.size()] = -1;
    out.miou_max_error = std::max(
        out.miou_max_error, std::abs(miou(pred, label, k) - confusion_miou(pred, label, k, -1)));

    std::vector<std::vector<int>> preds;
    std::vector<std::vector<std::array<int, 2>>> motion;
    std::vector<Tensor> motion_t;
    for (int t = 0; t < 3; ++t) {
      preds.push_back(random_map(h * w, k, rng));
      std::vector<std::array<int, 2>> m(h * w);
      for (auto& v : m) v = {md(rng), md(rng)};
      motion_t.push_back(motion_tensor(m, h, w));
      motion.push_back(std::move(m));
    }
    out.tc_max_error =
        std::max(out.tc_max_error, std::abs(temporal_consistency(preds, motion_t, h, w, k) -
                                            brute_force_tc(preds, motion, h, w, k)));
  }

  // Predictions that follow a random uniform shift exactly; pixels whose
  // source leaves the canvas are filled arbitrarily and must not count.
  out.perfect_compensation_tc = 1.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int dy = md(rng), dx = md(rng);
    std::vector<std::vector<int>> preds{random_map(h * w, k, rng)};
    const std::vector<std::array<int, 2>> still(h * w, {0, 0}), shift(h * w, {dy, dx});
    std::vector<Tensor> motion_t{motion_tensor(still, h, w)};
    for (int t = 1; t < 4; ++t) {
      std::vector<int> next = random_map(h * w, k, rng);
      for (int y = 0; y < static_cast<int>(h); ++y)
        for (int x = 0; x < static_cast<int>(w); ++x) {
          const int sy = y - dy, sx = x - dx;
          if (sy < 0 || sx < 0 || sy >= static_cast<int>(h) || sx >= static_cast<int>(w)) continue;
          next[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] =
              preds.back()[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
        }
      preds.push_back(std::move(next));
      motion_t.push_back(motion_tensor(shift, h, w));
    }
    out.perfect_compensation_tc = std::min(out.perfect_compensation_tc,
                                           temporal_consistency(preds, motion_t, h, w, k));
  }
  return out;
}

}  // namespace dd::testing
