// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

IOTLM_NAMESPACE_BEGIN

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor_from: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return shape()[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("expected a 2-D tensor, got " + shape_str(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("expected a 2-D tensor, got " + shape_str(shape()));
  return shape()[1];
}

std::span<const Real> Tensor::data() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->data;
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
bool Tensor::is_leaf() const { return impl_ && !impl_->node; }
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const Real> Tensor::grad() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_) return;
  impl_->grad.assign(impl_->data.size(), Real(0));
}

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = flag;
  if (!flag) impl_->grad.clear();
}

std::span<Real> Tensor::mutable_data() {
  if (!is_leaf()) throw ContractError("mutable_data on a non-leaf tensor");
  return impl_->data;
}

Tensor Tensor::clone(bool requires_grad) const {
  return from(shape(), impl_->data, requires_grad);
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<Real> values, std::vector<Tensor> inputs,
                   std::string op, BackwardFn backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    impl->requires_grad = true;
    auto node = std::make_shared<GraphNode>();
    node->op = std::move(op);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

Real* grad_target(const Tensor& t) {
  TensorImpl* impl = t.impl();
  if (!impl || !impl->requires_grad) return nullptr;
  if (impl->grad.size() != impl->data.size()) impl->grad.assign(impl->data.size(), Real(0));
  return impl->grad.data();
}

// ---------------------------------------------------------------------------
// Dense kernels

namespace {

// c[m×n] += a[m×k] · b[k×n]
// Four rows of b per pass keep each output row in registers for longer; the
// summation order is fixed, so results stay deterministic.
void axpy_rows(const Real* arow, const Real* b, std::size_t b_stride, Real* crow, std::size_t k,
               std::size_t n) {
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    const Real a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2], a3 = arow[p + 3];
    const Real* b0 = b + p * b_stride;
    const Real* b1 = b0 + b_stride;
    const Real* b2 = b1 + b_stride;
    const Real* b3 = b2 + b_stride;
    for (std::size_t j = 0; j < n; ++j) crow[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
  }
  for (; p < k; ++p) {
    const Real av = arow[p];
    const Real* brow = b + p * b_stride;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) axpy_rows(a + i * k, b, n, c + i * n, k, n);
}

// c[m×k] += g[m×n] · b[k×n]ᵀ. Goes through a transposed copy of b so the
// inner loop is an axpy that vectorizes without reassociating sums.
void gemm_nt(const Real* g, const Real* b, Real* c, std::size_t m, std::size_t n, std::size_t k) {
  std::vector<Real> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  gemm_nn(g, bt.data(), c, m, n, k);
}

// c[k×n] += a[m×k]ᵀ · g[m×n]
void gemm_tn(const Real* a, const Real* g, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  // Transposing a turns this into row-wise axpys over the m dimension.
  std::vector<Real> at(k * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  }
  for (std::size_t p = 0; p < k; ++p) axpy_rows(at.data() + p * m, g, n, c + p * n, m, n);
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

Real gelu_value(Real x) {
  const Real u = Real(kGeluC) * (x + Real(0.044715) * x * x * x);
  return Real(0.5) * x * (Real(1) + std::tanh(u));
}

Real gelu_derivative(Real x) {
  const Real u = Real(kGeluC) * (x + Real(0.044715) * x * x * x);
  const Real t = std::tanh(u);
  const Real du = Real(kGeluC) * (Real(1) + Real(3 * 0.044715) * x * x);
  return Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * du;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<Real> out(m * n, Real(0));
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, "matmul", [a, b, m, k, n](const TensorImpl& o) {
    if (Real* ga = grad_target(a)) gemm_nt(o.grad.data(), b.data().data(), ga, m, n, k);
    if (Real* gb = grad_target(b)) gemm_tn(a.data().data(), o.grad.data(), gb, m, k, n);
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<Real> out(m * n);
  const auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  return make_result({n, m}, std::move(out), {a}, "transpose", [a, m, n](const TensorImpl& o) {
    if (Real* ga = grad_target(a)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += o.grad[j * m + i];
    }
  });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b, Real factor) {
  const bool binary = op == ElementwiseOp::Add || op == ElementwiseOp::Sub || op == ElementwiseOp::Mul;
  const auto x = a.data();
  const std::size_t n = x.size();
  std::vector<Real> out(n);

  if (binary) {
    if (b == nullptr || !b->defined()) throw ContractError("binary elementwise op needs two operands");
    const Tensor rhs = *b;
    const Shape& as = a.shape();
    const Shape& bs = rhs.shape();
    const bool scalar_b = rhs.numel() == 1;
    const bool suffix = bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin());
    if (!scalar_b && !suffix) {
      throw ShapeError("elementwise: cannot broadcast " + shape_str(bs) + " onto " + shape_str(as));
    }
    const std::size_t inner = rhs.numel();
    const auto y = rhs.data();
    switch (op) {
      case ElementwiseOp::Add:
        for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i % inner];
        break;
      case ElementwiseOp::Sub:
        for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i % inner];
        break;
      default:
        for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i % inner];
        break;
    }
    return make_result(as, std::move(out), {a, rhs}, "elementwise",
                       [a, rhs, op, n, inner](const TensorImpl& o) {
                         const auto& g = o.grad;
                         if (Real* ga = grad_target(a)) {
                           if (op == ElementwiseOp::Mul) {
                             const auto y = rhs.data();
                             for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i % inner];
                           } else {
                             for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                           }
                         }
                         if (Real* gb = grad_target(rhs)) {
                           if (op == ElementwiseOp::Mul) {
                             const auto x = a.data();
                             for (std::size_t i = 0; i < n; ++i) gb[i % inner] += g[i] * x[i];
                           } else {
                             const Real sign = op == ElementwiseOp::Sub ? Real(-1) : Real(1);
                             for (std::size_t i = 0; i < n; ++i) gb[i % inner] += sign * g[i];
                           }
                         }
                       });
  }

  switch (op) {
    case ElementwiseOp::Relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0 ? x[i] : Real(0);
      break;
    case ElementwiseOp::Gelu:
      for (std::size_t i = 0; i < n; ++i) out[i] = gelu_value(x[i]);
      break;
    case ElementwiseOp::Tanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
      break;
    case ElementwiseOp::Exp:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
      break;
    case ElementwiseOp::Scale:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * factor;
      break;
    default:
      throw ContractError("elementwise: unexpected op");
  }
  return make_result(a.shape(), std::move(out), {a}, "elementwise",
                     [a, op, n, factor](const TensorImpl& o) {
                       Real* ga = grad_target(a);
                       if (!ga) return;
                       const auto& g = o.grad;
                       const auto x = a.data();
                       switch (op) {
                         case ElementwiseOp::Relu:
                           for (std::size_t i = 0; i < n; ++i) ga[i] += x[i] > 0 ? g[i] : Real(0);
                           break;
                         case ElementwiseOp::Gelu:
                           for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * gelu_derivative(x[i]);
                           break;
                         case ElementwiseOp::Tanh:
                         case ElementwiseOp::Exp:
                           for (std::size_t i = 0; i < n; ++i) {
                             const Real y = o.data[i];
                             ga[i] += g[i] * (op == ElementwiseOp::Tanh ? Real(1) - y * y : y);
                           }
                           break;
                         default:
                           for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * factor;
                           break;
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Add, a, &b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Sub, a, &b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Mul, a, &b); }
Tensor relu(const Tensor& a) { return elementwise(ElementwiseOp::Relu, a); }
Tensor gelu(const Tensor& a) { return elementwise(ElementwiseOp::Gelu, a); }
Tensor tanh(const Tensor& a) { return elementwise(ElementwiseOp::Tanh, a); }
Tensor exp(const Tensor& a) { return elementwise(ElementwiseOp::Exp, a); }
Tensor scale(const Tensor& a, Real factor) { return elementwise(ElementwiseOp::Scale, a, nullptr, factor); }

namespace {

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(s));
  }
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  const auto in = x.data();
  std::vector<Real> out(in.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      Real mx = in[base];
      for (std::size_t j = 1; j < sp.len; ++j) mx = std::max(mx, in[base + j * sp.inner]);
      Real total = 0;
      for (std::size_t j = 0; j < sp.len; ++j) {
        const Real e = std::exp(in[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < sp.len; ++j) out[base + j * sp.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, "softmax", [x, sp](const TensorImpl& o) {
    Real* gx = grad_target(x);
    if (!gx) return;
    for (std::size_t oo = 0; oo < sp.outer; ++oo) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = oo * sp.len * sp.inner + i;
        Real dot = 0;
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t idx = base + j * sp.inner;
          dot += o.grad[idx] * o.data[idx];
        }
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t idx = base + j * sp.inner;
          gx[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm on a scalar");
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t n = x.shape().back();
  if (gain.numel() != n || bias.numel() != n) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(n) + " elements");
  }
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  const auto in = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  std::vector<Real> out(in.size());
  std::vector<Real> xhat(in.size());
  std::vector<Real> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = in.data() + r * n;
    double mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const Real rs = static_cast<Real>(1.0 / std::sqrt(var + eps));
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const Real xh = (row[j] - static_cast<Real>(mu)) * rs;
      xhat[r * n + j] = xh;
      out[r * n + j] = xh * g[j] + b[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
      [x, gain, bias, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](const TensorImpl& o) {
        const auto gv = gain.data();
        Real* gx = grad_target(x);
        Real* gg = grad_target(gain);
        Real* gb = grad_target(bias);
        std::vector<Real> dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* go = o.grad.data() + r * n;
          const Real* xh = xhat.data() + r * n;
          if (gg) for (std::size_t j = 0; j < n; ++j) gg[j] += go[j] * xh[j];
          if (gb) for (std::size_t j = 0; j < n; ++j) gb[j] += go[j];
          if (!gx) continue;
          Real mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = go[j] * gv[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
          }
          mean_d /= static_cast<Real>(n);
          mean_dx /= static_cast<Real>(n);
          for (std::size_t j = 0; j < n; ++j) {
            gx[r * n + j] += rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
          }
        }
      });
}

Tensor concat_tokens(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_tokens: no parts");
  const std::size_t width = parts.front().cols();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != width) {
      throw ShapeError("concat_tokens: width " + std::to_string(p.cols()) + " != " +
                       std::to_string(width));
    }
    total += p.rows();
  }
  std::vector<Real> out;
  out.reserve(total * width);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result({total, width}, std::move(out), inputs, "concat_tokens",
                     [inputs](const TensorImpl& o) {
                       std::size_t offset = 0;
                       for (const Tensor& p : inputs) {
                         if (Real* gp = grad_target(p)) {
                           for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += o.grad[offset + i];
                         }
                         offset += p.numel();
                       }
                     });
}

Tensor concat_tokens(std::initializer_list<Tensor> parts) {
  return concat_tokens(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<Real> out(ids.size() * d);
  const auto src = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " >= " + std::to_string(v));
    }
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table}, "gather_rows",
                     [table, idx = std::move(idx), d](const TensorImpl& o) {
                       Real* gt = grad_target(table);
                       if (!gt) return;
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         Real* dst = gt + idx[i] * d;
                         const Real* g = o.grad.data() + i * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0) throw ShapeError("slice_rows on a scalar");
  const std::size_t n = x.shape()[0];
  if (begin > end || end > n) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + std::to_string(n) + " rows");
  }
  const std::size_t stride = n == 0 ? 0 : x.numel() / n;
  Shape shape = x.shape();
  shape[0] = end - begin;
  const auto src = x.data();
  std::vector<Real> out(src.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                        src.begin() + static_cast<std::ptrdiff_t>(end * stride));
  return make_result(std::move(shape), std::move(out), {x}, "slice_rows",
                     [x, begin, stride](const TensorImpl& o) {
                       Real* gx = grad_target(x);
                       if (!gx) return;
                       for (std::size_t i = 0; i < o.grad.size(); ++i) gx[begin * stride + i] += o.grad[i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, "reshape", [x](const TensorImpl& o) {
    Real* gx = grad_target(x);
    if (!gx) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
  });
}

Tensor reduce(const Tensor& x, ReduceKind kind, std::optional<std::size_t> axis) {
  const auto in = x.data();
  if (!axis) {
    double total = 0;
    for (Real v : in) total += v;
    const std::size_t count = in.size();
    const Real factor = kind == ReduceKind::Mean ? (count ? Real(1) / static_cast<Real>(count) : Real(0)) : Real(1);
    const Real value = kind == ReduceKind::Mean ? (count ? static_cast<Real>(total / count) : Real(0))
                                                : static_cast<Real>(total);
    return make_result({}, {value}, {x}, "reduce", [x, factor](const TensorImpl& o) {
      Real* gx = grad_target(x);
      if (!gx) return;
      const Real g = o.grad[0] * factor;
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
    });
  }
  const AxisSplit sp = split_axis(x.shape(), *axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(*axis));
  std::vector<Real> out(sp.outer * sp.inner, Real(0));
  const Real factor = kind == ReduceKind::Mean && sp.len ? Real(1) / static_cast<Real>(sp.len) : Real(1);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < sp.len; ++j) total += in[(o * sp.len + j) * sp.inner + i];
      out[o * sp.inner + i] = kind == ReduceKind::Mean && sp.len ? static_cast<Real>(total / sp.len)
                                                                 : static_cast<Real>(total);
    }
  }
  return make_result(std::move(shape), std::move(out), {x}, "reduce", [x, sp, factor](const TensorImpl& o) {
    Real* gx = grad_target(x);
    if (!gx) return;
    for (std::size_t oo = 0; oo < sp.outer; ++oo)
      for (std::size_t j = 0; j < sp.len; ++j)
        for (std::size_t i = 0; i < sp.inner; ++i)
          gx[(oo * sp.len + j) * sp.inner + i] += o.grad[oo * sp.inner + i] * factor;
  });
}

// ---------------------------------------------------------------------------
// Backward

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar");
  }
  TensorImpl* root = loss.impl();
  if (!root->requires_grad) return;

  // Iterative post-order DFS yields a topological order (inputs first).
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      TensorImpl* child = impl->node->inputs[next++].impl();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  for (TensorImpl* impl : order) {
    if (impl->node && impl->node->released) {
      throw ContractError("backward: graph was already differentiated");
    }
  }
  for (TensorImpl* impl : order) impl->grad.assign(impl->data.size(), Real(0));
  root->grad[0] = Real(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (!impl->node) continue;
    impl->node->backward(*impl);
    impl->node->released = true;
    impl->node->backward = nullptr;  // drops saved context
  }
}

// ---------------------------------------------------------------------------
// Finite differences

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& f, std::span<const Tensor> params,
                                   double h, double tol, double denom_floor) {
  if (!(h > 0)) throw ContractError("finite_diff_check: h must be positive");
  std::vector<Tensor> leaves(params.begin(), params.end());
  for (Tensor& p : leaves) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw ContractError("finite_diff_check: parameters must be leaves requiring grad");
    }
    p.zero_grad();
  }
  backward(f());
  std::vector<std::vector<Real>> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& p : leaves) analytic.emplace_back(p.grad().begin(), p.grad().end());

  FiniteDiffReport report;
  for (std::size_t pi = 0; pi < leaves.size(); ++pi) {
    auto values = leaves[pi].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      values[i] = static_cast<Real>(saved + h);
      const double up = f().item();
      values[i] = static_cast<Real>(saved - h);
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[pi][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), denom_floor});
      ++report.coordinates;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

IOTLM_NAMESPACE_END
