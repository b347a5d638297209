// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "dd/ops.hpp"
#include "dd/optim.hpp"
#include "test_util.hpp"

using namespace dd;
using dd::testing::check_gradients;
using dd::testing::max_abs_diff;
using dd::testing::naive_conv;
using dd::testing::random_tensor;

TEST_CASE("conv2d small closed forms") {
  auto x = Tensor::from_values({1, 1, 1, 1}, {3.0});
  auto w = Tensor::from_values({1, 1, 1, 1}, {1.0});
  CHECK(conv2d(x, w, std::nullopt).item() == 3.0);

  auto ones = Tensor::full({1, 1, 3, 3}, 1.0);
  auto k = Tensor::full({1, 1, 3, 3}, 1.0);
  auto y = conv2d(ones, k, std::nullopt);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 9.0);
}

TEST_CASE("conv2d matches nested-loop oracle") {
  std::mt19937_64 rng(7);
  auto x = random_tensor({2, 3, 8, 8}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  Conv2dOptions opt;
  opt.padding = {1, 1};
  auto fast = conv2d(x, w, std::nullopt, opt);
  auto ref = conv2d_reference(x, w, std::nullopt, opt);
  const auto oracle = naive_conv(x, w, 1, 1, 1, 1);
  CHECK(fast.shape() == Shape{2, 4, 8, 8});
  CHECK(max_abs_diff(fast.values(), oracle) < 1e-12);
  CHECK(max_abs_diff(ref.values(), oracle) < 1e-12);

  // Strided, asymmetric kernels and padding on both paths.
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<std::size_t> ext(1, 4);
    const std::size_t kh = ext(rng), kw = ext(rng);
    const std::size_t sh = ext(rng) % 3 + 1, sw = ext(rng) % 3 + 1;
    const std::size_t ph = ext(rng) % 2, pw = ext(rng) % 2;
    auto xi = random_tensor({2, 2, 7 + ext(rng), 6 + ext(rng)}, rng);
    auto wi = random_tensor({3, 2, kh, kw}, rng);
    Conv2dOptions o;
    o.stride = {sh, sw};
    o.padding = {ph, pw};
    auto a = conv2d(xi, wi, std::nullopt, o);
    auto b = conv2d_reference(xi, wi, std::nullopt, o);
    CHECK(max_abs_diff(a.values(), naive_conv(xi, wi, sh, sw, ph, pw)) < 1e-12);
    CHECK(max_abs_diff(a.values(), b.values()) < 1e-12);
  }
}

TEST_CASE("conv2d errors") {
  auto x = Tensor::zeros({1, 2, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 3, 3, 3}), std::nullopt), ShapeError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 2, 5, 5}), std::nullopt), ConfigError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 2, 1, 1}), Tensor::zeros({2})),
                  ShapeError);
}

TEST_CASE("conv2d is linear in the input") {
  std::mt19937_64 rng(11);
  auto x = random_tensor({1, 3, 6, 6}, rng);
  auto y = random_tensor({1, 3, 6, 6}, rng);
  auto w = random_tensor({2, 3, 3, 3}, rng);
  const double a = 0.7, b = -1.3;
  Conv2dOptions opt;
  opt.padding = {1, 1};
  auto lhs = conv2d(add(scale(x, a), scale(y, b)), w, std::nullopt, opt);
  auto rhs = add(scale(conv2d(x, w, std::nullopt, opt), a),
                 scale(conv2d(y, w, std::nullopt, opt), b));
  CHECK(max_abs_diff(lhs.values(), rhs.values()) < 1e-10);
}

TEST_CASE("pointwise conv") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({1, 3, 4, 4}, rng);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  auto id = Tensor::from_values({3, 3, 1, 1}, eye);
  CHECK(max_abs_diff(pointwise_conv(x, id).values(), x.values()) == 0.0);

  auto single = random_tensor({1, 1, 4, 4}, rng);
  auto one = Tensor::from_values({1, 1, 1, 1}, {1.0});
  auto sub2 = pointwise_conv(single, one, 2);
  REQUIRE(sub2.shape() == Shape{1, 1, 2, 2});
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t xx = 0; xx < 2; ++xx)
      CHECK(sub2.at(y * 2 + xx) == single.at((2 * y) * 4 + 2 * xx));

  auto w = random_tensor({5, 3, 1, 1}, rng);
  CHECK(max_abs_diff(pointwise_conv(x, w, 1).values(), naive_conv(x, w, 1, 1, 0, 0)) <
        1e-12);
  CHECK_THROWS_AS(pointwise_conv(x, random_tensor({5, 3, 3, 3}, rng)), ShapeError);
}

TEST_CASE("pixel shuffle layout") {
  auto x = Tensor::from_values({1, 4, 1, 1}, {1.0, 2.0, 3.0, 4.0});
  auto y = pixel_shuffle(x, 2);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.at(0) == 1.0);
  CHECK(y.at(1) == 2.0);
  CHECK(y.at(2) == 3.0);
  CHECK(y.at(3) == 4.0);

  std::mt19937_64 rng(5);
  auto r = random_tensor({2, 8, 3, 3}, rng);
  CHECK(max_abs_diff(pixel_shuffle(r, 1).values(), r.values()) == 0.0);

  // Explicit inverse index map recovers the input.
  auto s = pixel_shuffle(r, 2);
  REQUIRE(s.shape() == Shape{2, 2, 6, 6});
  std::vector<double> back(r.numel());
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t yy = 0; yy < 6; ++yy)
        for (std::size_t xx = 0; xx < 6; ++xx) {
          const std::size_t src_c = c * 4 + (yy % 2) * 2 + (xx % 2);
          back[((n * 8 + src_c) * 3 + yy / 2) * 3 + xx / 2] =
              s.at(((n * 2 + c) * 6 + yy) * 6 + xx);
        }
  CHECK(max_abs_diff(back, r.values()) == 0.0);
  CHECK_THROWS_AS(pixel_shuffle(Tensor::zeros({1, 6, 2, 2}), 2), ConfigError);
}

TEST_CASE("elementwise ops") {
  std::mt19937_64 rng(9);
  auto x = random_tensor({2, 3, 2, 2}, rng);
  const auto diff = sub(x, x);
  for (double v : diff.values()) CHECK(v == 0.0);

  auto a = Tensor::zeros({1, 2, 3, 3});
  auto b = Tensor::full({1, 3, 3, 3}, 1.0);
  auto c = concat_channels(a, b);
  CHECK(c.shape() == Shape{1, 5, 3, 3});
  CHECK(c.at(0) == 0.0);
  CHECK(c.at(2 * 9) == 1.0);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(concat_channels(a, Tensor::zeros({1, 2, 3, 4})), ShapeError);

  auto neg = Tensor::from_values({2}, {-1.0, 1.0}, true);
  sum(relu(neg)).backward();
  CHECK(neg.grad()[0] == 0.0);
  CHECK(neg.grad()[1] == 1.0);

  auto zero = Tensor::from_values({1}, {0.0}, true);
  sum(relu(zero)).backward();
  CHECK(zero.grad()[0] == 0.0);
}

TEST_CASE("l2 loss") {
  std::mt19937_64 rng(13);
  auto a = random_tensor({2, 5}, rng);
  CHECK(l2_loss(a, a).item() == 0.0);
  auto twos = Tensor::full({10}, 2.0);
  CHECK(l2_loss(twos, Tensor::zeros({10})).item() == doctest::Approx(4.0).epsilon(1e-15));

  auto b = random_tensor({2, 5}, rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < 10; ++i) acc += (a.at(i) - b.at(i)) * (a.at(i) - b.at(i));
  CHECK(std::abs(l2_loss(a, b).item() - acc / 10.0) < 1e-12);
  CHECK_THROWS_AS(l2_loss(a, Tensor::zeros({10})), ShapeError);
}

TEST_CASE("softmax cross entropy") {
  auto uniform = Tensor::zeros({1, 4, 2, 2});
  std::vector<int> labels{0, 1, 2, 3};
  CHECK(softmax_cross_entropy(uniform, labels).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-14));

  std::vector<double> sat(4 * 4, -50.0);
  for (std::size_t q = 0; q < 4; ++q) sat[labels[q] * 4 + q] = 50.0;
  CHECK(softmax_cross_entropy(Tensor::from_values({1, 4, 2, 2}, sat), labels).item() <
        1e-40);

  std::mt19937_64 rng(17);
  auto logits = random_tensor({2, 3, 3, 3}, rng, false, -4.0, 4.0);
  std::vector<int> lab(18);
  std::uniform_int_distribution<int> cls(0, 2);
  for (auto& l : lab) l = cls(rng);
  lab[4] = kIgnoreLabel;
  double total = 0.0;
  int count = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t q = 0; q < 9; ++q) {
      const int l = lab[n * 9 + q];
      if (l == kIgnoreLabel) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) s += std::exp(logits.at((n * 3 + c) * 9 + q));
      total += std::log(s) - logits.at((n * 3 + l) * 9 + q);
      ++count;
    }
  CHECK(std::abs(softmax_cross_entropy(logits, lab).item() - total / count) < 1e-10);

  lab[0] = 3;
  CHECK_THROWS_AS(softmax_cross_entropy(logits, lab), ConfigError);
}

TEST_CASE("backward semantics") {
  auto x = Tensor::full({2, 3}, 0.5, true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);

  CHECK_THROWS_AS(x.backward(), ShapeError);

  // Two uses of the same tensor accumulate.
  std::mt19937_64 rng(19);
  auto w = random_tensor({4}, rng, true);
  auto y = random_tensor({4}, rng);
  auto z = random_tensor({4}, rng);
  add(sum(mul(w, y)), sum(mul(w, z))).backward();
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(std::abs(w.grad()[i] - (y.at(i) + z.at(i))) < 1e-15);

  // Detached branch contributes nothing.
  auto p = Tensor::full({3}, 2.0, true);
  auto d = p.detach();
  CHECK_FALSE(d.requires_grad());
  add(sum(mul(p, p)), sum(mul(d, d))).backward();
  for (double g : p.grad()) CHECK(g == 4.0);

  // No tape under a guard.
  auto q = Tensor::full({3}, 1.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(sum(q).requires_grad());
  }
  CHECK(sum(q).requires_grad());
}

TEST_CASE("conv weight gradients match finite differences") {
  std::mt19937_64 rng(23);
  auto x = random_tensor({2, 3, 5, 5}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  auto target = random_tensor({2, 4, 5, 5}, rng);
  Conv2dOptions opt;
  opt.padding = {1, 1};
  auto res = check_gradients(
      [&](const std::vector<Tensor>& in) {
        return l2_loss(conv2d(x, in[0], std::nullopt, opt), target);
      },
      {w}, rng);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("sgd") {
  auto p = Tensor::from_values({1}, {1.0}, true);
  Sgd zero_lr({0.0, 0.9, 0.1});
  zero_lr.add_param(p);
  p.mutable_grad()[0] = 5.0;
  zero_lr.step();
  CHECK(p.item() == 1.0);

  auto q = Tensor::from_values({1}, {1.0}, true);
  Sgd plain({0.1, 0.0, 0.0});
  plain.add_param(q);
  q.mutable_grad()[0] = 2.0;
  plain.step();
  CHECK(q.item() == doctest::Approx(0.8).epsilon(1e-15));

  // Momentum recurrence against a scalar oracle.
  auto r = Tensor::from_values({1}, {1.0}, true);
  Sgd mom({0.1, 0.9, 0.01});
  mom.add_param(r);
  double p_ref = 1.0, v_ref = 0.0;
  for (double g : {2.0, -0.5}) {
    r.zero_grad();
    r.mutable_grad()[0] = g;
    mom.step();
    const double d = g + 0.01 * p_ref;
    v_ref = 0.9 * v_ref + d;
    p_ref -= 0.1 * v_ref;
  }
  CHECK(r.item() == doctest::Approx(p_ref).epsilon(1e-15));

  auto missing = Tensor::from_values({1}, {1.0}, true);
  Sgd fail({0.1, 0.0, 0.0});
  fail.add_param(missing);
  CHECK_THROWS_AS(fail.step(), NumericError);
}

TEST_CASE("grad clipping") {
  auto a = Tensor::zeros({2}, true);
  a.mutable_grad()[0] = 30.0;
  a.mutable_grad()[1] = 40.0;
  std::vector<Tensor> ps{a};
  CHECK(clip_grad_norm(ps, 10.0) == doctest::Approx(50.0));
  CHECK(global_grad_norm(ps) == doctest::Approx(10.0));
}

TEST_CASE("finite checks") {
  set_finite_checks(true);
  auto big = Tensor::full({1}, 1e308);
  CHECK_THROWS_AS(scale(big, 10.0), NumericError);
  set_finite_checks(false);
  CHECK_NOTHROW(scale(big, 10.0));
}
