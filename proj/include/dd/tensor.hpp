// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a dynamic reverse-mode tape.
//
// A Tensor is a cheap shared handle. Tensors produced by an operation while
// grad mode is enabled and at least one input requires grad carry a TapeNode
// that records the inputs and a closure computing the vector-Jacobian
// product. Calling backward() on a scalar walks the tape in reverse
// topological order, visiting each node exactly once, and accumulates
// gradients additively into every tensor that requires grad.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dd/errors.hpp"

namespace dd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Vector-Jacobian closure: receives the output gradient and the recorded
// inputs, and accumulates into the inputs that require grad.
using BackwardFn = std::function<void(std::span<const double> out_grad,
                                      std::span<const TensorImplPtr> inputs)>;

struct TapeNode {
  const char* op = "";
  std::vector<TensorImplPtr> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until populated
  bool requires_grad = false;
  std::optional<TapeNode> node;

  // Adds g into grad, allocating zeros on first use.
  void accumulate(std::span<const double> g);
  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> values() const;
  // Direct write access; meant for leaves (initialization, optimizer).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no tape history, never requires grad.
  Tensor detach() const;
  // Deep copy of values into a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  // Populates gradients of every requires-grad tensor reachable from this
  // scalar. Throws ShapeError if this tensor is not a scalar.
  void backward() const;

  const TensorImplPtr& impl() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

// Disables tape recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// NaN/Inf checks on every op output. On by default in debug builds and when
// DD_CHECK_FINITE=1 is set in the environment.
bool finite_checks_enabled();
void set_finite_checks(bool enabled);

namespace detail {

// Builds an op result and records a tape node when grad mode is on and any
// input requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace detail

}  // namespace dd
