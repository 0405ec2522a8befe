// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iotlm/errors.hpp"
#include "iotlm/real.hpp"

IOTLM_NAMESPACE_BEGIN

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;
class Tensor;

/// Backward rule of one graph node. Reads the output's gradient from `out`
/// and accumulates into the gradients of the node inputs.
using BackwardFn = std::function<void(const TensorImpl& out)>;

struct GraphNode {
  std::string op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
  bool released = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  bool requires_grad = false;
  std::vector<Real> grad;  // empty until a backward pass reaches the tensor
  std::shared_ptr<GraphNode> node;
};

/// Handle to a dense row-major array taking part in a reverse-mode graph.
///
/// Copies share storage. Values never change after construction, except leaf
/// tensors updated in place by the optimizer or by finite-difference probes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Real> data() const;
  Real operator[](std::size_t i) const { return data()[i]; }
  Real item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const Real> grad() const;
  void zero_grad();

  /// Leaf-only: toggles gradient tracking (e.g. freezing).
  void set_requires_grad(bool flag);
  /// Leaf-only mutable access for optimizers and probes.
  std::span<Real> mutable_data();

  /// Detached copy: same values, fresh leaf, no graph.
  Tensor clone(bool requires_grad = false) const;

  TensorImpl* impl() const { return impl_.get(); }
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_result(Shape, std::vector<Real>, std::vector<Tensor>, std::string,
                            BackwardFn);
};

/// Builds an op result. The node is attached only when some input requires a
/// gradient; otherwise the result is a plain constant.
Tensor make_result(Shape shape, std::vector<Real> values, std::vector<Tensor> inputs,
                   std::string op, BackwardFn backward);

/// While alive, ops on the current thread build no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

/// Gradient buffer of `t` if it participates in the backward pass, else null.
Real* grad_target(const Tensor& t);

// ---------------------------------------------------------------------------
// Core operations

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

enum class ElementwiseOp { Add, Sub, Mul, Relu, Gelu, Tanh, Exp, Scale };

/// Binary ops broadcast `b` over the trailing axes of `a` (b.shape must equal
/// a suffix of a.shape) or as a single-element scalar. Scale multiplies by the
/// constant `factor`.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b = nullptr,
                   Real factor = 1);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor scale(const Tensor& a, Real factor);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = 1e-5);

/// Row-wise concatenation of 2-D blocks sharing the feature width.
Tensor concat_tokens(std::span<const Tensor> parts);
Tensor concat_tokens(std::initializer_list<Tensor> parts);

/// Row lookup; the backward pass scatter-adds into `table`.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

enum class ReduceKind { Sum, Mean };
Tensor reduce(const Tensor& x, ReduceKind kind, std::optional<std::size_t> axis = std::nullopt);
inline Tensor sum(const Tensor& x) { return reduce(x, ReduceKind::Sum); }
inline Tensor mean(const Tensor& x) { return reduce(x, ReduceKind::Mean); }

/// Runs reverse-mode differentiation from a scalar loss. All reachable
/// gradients are zeroed first, then accumulated; a graph can be
/// differentiated only once.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Finite-difference verification

struct FiniteDiffReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t coordinates = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  bool passed = true;
};

/// Compares analytic gradients of `f` w.r.t. `params` against central
/// differences with step `h`. Relative error denominators are clamped at
/// `denom_floor`.
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& f,
                                   std::span<const Tensor> params, double h = 1e-3,
                                   double tol = 1e-3, double denom_floor = 1e-6);

IOTLM_NAMESPACE_END
