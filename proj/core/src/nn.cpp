// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

IOTLM_NAMESPACE_BEGIN

// ---------------------------------------------------------------------------
// ParamSet

void ParamSet::add(const std::string& path, Tensor value) {
  if (path.empty()) throw ConfigError("empty parameter path");
  if (!value.is_leaf()) throw ContractError("parameter " + path + " must be a leaf tensor");
  if (!params_.emplace(path, std::move(value)).second) {
    throw ConfigError("duplicate parameter path " + path);
  }
}

const Tensor& ParamSet::get(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw ConfigError("missing parameter path " + path);
  return it->second;
}

Tensor& ParamSet::get(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw ConfigError("missing parameter path " + path);
  return it->second;
}

void ParamSet::erase(const std::string& path) {
  params_.erase(path);
  frozen_.erase(path);
}

std::vector<std::string> ParamSet::paths() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [path, _] : params_) out.push_back(path);
  return out;
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamSet::freeze(const std::string& path) {
  get(path).set_requires_grad(false);
  frozen_.insert(path);
}

void ParamSet::freeze_prefix(const std::string& prefix) {
  for (auto& [path, t] : params_) {
    if (path.rfind(prefix, 0) == 0) {
      t.set_requires_grad(false);
      frozen_.insert(path);
    }
  }
}

ParamSet ParamSet::with_prefix(const std::string& prefix) const {
  ParamSet out;
  for (const auto& [path, t] : params_) {
    if (path.rfind(prefix, 0) != 0) continue;
    out.params_.emplace(path, t);
    if (is_frozen(path)) out.frozen_.insert(path);
  }
  return out;
}

ParamSet ParamSet::trainable() const {
  ParamSet out;
  for (const auto& [path, t] : params_) {
    if (!is_frozen(path)) out.params_.emplace(path, t);
  }
  return out;
}

void ParamSet::zero_grads() {
  for (auto& [path, t] : params_) {
    if (!is_frozen(path)) t.zero_grad();
  }
}

ParamSet ParamSet::deep_copy() const {
  ParamSet out;
  for (const auto& [path, t] : params_) out.params_.emplace(path, t.clone(t.requires_grad()));
  out.frozen_ = frozen_;
  return out;
}

GradMap collect_grads(const ParamSet& params) {
  GradMap grads;
  for (const auto& [path, t] : params.entries()) {
    if (params.is_frozen(path)) continue;
    if (!t.has_grad()) throw ContractError("no gradient for trainable parameter " + path);
    grads.emplace(path, std::vector<Real>(t.grad().begin(), t.grad().end()));
  }
  return grads;
}

double grad_norm(const GradMap& grads) {
  double total = 0;
  for (const auto& [_, g] : grads)
    for (Real v : g) total += static_cast<double>(v) * v;
  return std::sqrt(total);
}

void adam_update(ParamSet& params, AdamState& state, const GradMap& grads) {
  for (const auto& [path, t] : params.entries()) {
    if (params.is_frozen(path)) continue;
    if (!grads.count(path)) throw ContractError("adam_update: missing gradient for " + path);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [path, tensor] : params.entries()) {
    if (params.is_frozen(path)) continue;
    const std::vector<Real>& g = grads.at(path);
    Tensor& param = params.get(path);
    auto values = param.mutable_data();
    if (g.size() != values.size()) throw ContractError("adam_update: gradient size mismatch for " + path);
    auto& m = state.m[path];
    auto& v = state.v[path];
    if (m.size() != values.size()) m.assign(values.size(), Real(0));
    if (v.size() != values.size()) v.assign(values.size(), Real(0));
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double update = state.lr * (mi / bc1) / (std::sqrt(vi / bc2) + state.eps);
      values[i] = static_cast<Real>(values[i] - update);
    }
  }
}

// ---------------------------------------------------------------------------
// Initialization

Tensor init_normal(Shape shape, Rng& rng, double stddev) {
  std::vector<Real> values(shape_numel(shape));
  for (Real& v : values) v = static_cast<Real>(rng.normal(0.0, stddev));
  return Tensor::from(std::move(shape), std::move(values), true);
}

void add_linear(ParamSet& params, const std::string& prefix, std::size_t d_in, std::size_t d_out,
                Rng& rng, bool zero_weight) {
  params.add(prefix + ".weight",
             zero_weight ? Tensor::zeros({d_in, d_out}, true) : init_normal({d_in, d_out}, rng));
  params.add(prefix + ".bias", Tensor::zeros({d_out}, true));
}

void add_layer_norm(ParamSet& params, const std::string& prefix, std::size_t width) {
  params.add(prefix + ".gain", Tensor::full({width}, Real(1), true));
  params.add(prefix + ".bias", Tensor::zeros({width}, true));
}

void add_transformer_block(ParamSet& params, const std::string& prefix, std::size_t width, Rng& rng) {
  add_layer_norm(params, prefix + ".ln1", width);
  add_linear(params, prefix + ".attn.q", width, width, rng);
  add_linear(params, prefix + ".attn.k", width, width, rng);
  add_linear(params, prefix + ".attn.v", width, width, rng);
  add_linear(params, prefix + ".attn.o", width, width, rng);
  add_layer_norm(params, prefix + ".ln2", width);
  add_linear(params, prefix + ".mlp.fc1", width, 4 * width, rng);
  add_linear(params, prefix + ".mlp.fc2", 4 * width, width, rng);
}

// ---------------------------------------------------------------------------
// Layers

Tensor linear_apply(const Tensor& weight, const Tensor& bias, const Tensor& x) {
  if (bias.rank() != 1 || bias.numel() != weight.cols()) {
    throw ShapeError("linear_apply: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  return add(matmul(x, weight), bias);
}

Tensor linear_apply(const ParamSet& params, const std::string& prefix, const Tensor& x) {
  return linear_apply(params.get(prefix + ".weight"), params.get(prefix + ".bias"), x);
}

Tensor attention_apply(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                       bool causal, std::size_t segment_len) {
  const std::size_t rows = q.rows(), d = q.cols();
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("attention_apply: q/k/v shapes differ");
  }
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention_apply: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t seg = segment_len == 0 ? rows : segment_len;
  if (seg == 0 || rows % seg != 0) {
    throw ShapeError("attention_apply: " + std::to_string(rows) + " rows not divisible into segments of " +
                     std::to_string(seg));
  }
  const std::size_t nseg = rows / seg, dh = d / heads;
  const Real inv_scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
  const auto Q = q.data(), K = k.data(), V = v.data();

  std::vector<Real> out(rows * d, Real(0));
  // probs[(s*heads + h)*seg*seg + i*seg + j]
  std::vector<Real> probs(nseg * heads * seg * seg, Real(0));
  for (std::size_t s = 0; s < nseg; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      Real* P = probs.data() + (s * heads + h) * seg * seg;
      for (std::size_t i = 0; i < seg; ++i) {
        const Real* qi = Q.data() + (s * seg + i) * d + h * dh;
        const std::size_t jmax = causal ? i + 1 : seg;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < jmax; ++j) {
          const Real* kj = K.data() + (s * seg + j) * d + h * dh;
          Real dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          P[i * seg + j] = dot * inv_scale;
          mx = std::max(mx, P[i * seg + j]);
        }
        Real total = 0;
        for (std::size_t j = 0; j < jmax; ++j) {
          P[i * seg + j] = std::exp(P[i * seg + j] - mx);
          total += P[i * seg + j];
        }
        Real* oi = out.data() + (s * seg + i) * d + h * dh;
        for (std::size_t j = 0; j < jmax; ++j) {
          P[i * seg + j] /= total;
          const Real p = P[i * seg + j];
          const Real* vj = V.data() + (s * seg + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  return make_result(
      {rows, d}, std::move(out), {q, k, v}, "attention",
      [q, k, v, heads, causal, seg, nseg, d, dh, inv_scale, probs = std::move(probs)](const TensorImpl& o) {
        Real* gq = grad_target(q);
        Real* gk = grad_target(k);
        Real* gv = grad_target(v);
        const auto Q = q.data(), K = k.data(), V = v.data();
        std::vector<Real> dS(seg);
        for (std::size_t s = 0; s < nseg; ++s) {
          for (std::size_t h = 0; h < heads; ++h) {
            const Real* P = probs.data() + (s * heads + h) * seg * seg;
            for (std::size_t i = 0; i < seg; ++i) {
              const std::size_t jmax = causal ? i + 1 : seg;
              const Real* go = o.grad.data() + (s * seg + i) * d + h * dh;
              Real dot = 0;
              for (std::size_t j = 0; j < jmax; ++j) {
                const Real* vj = V.data() + (s * seg + j) * d + h * dh;
                Real dp = 0;
                for (std::size_t c = 0; c < dh; ++c) dp += go[c] * vj[c];
                dS[j] = dp;
                dot += dp * P[i * seg + j];
                if (gv) {
                  Real* gvj = gv + (s * seg + j) * d + h * dh;
                  const Real p = P[i * seg + j];
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += p * go[c];
                }
              }
              const Real* qi = Q.data() + (s * seg + i) * d + h * dh;
              Real* gqi = gq ? gq + (s * seg + i) * d + h * dh : nullptr;
              for (std::size_t j = 0; j < jmax; ++j) {
                const Real ds = P[i * seg + j] * (dS[j] - dot) * inv_scale;
                if (gqi) {
                  const Real* kj = K.data() + (s * seg + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (gk) {
                  Real* gkj = gk + (s * seg + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

Tensor transformer_block_apply(const ParamSet& params, const std::string& prefix, const Tensor& x,
                               std::size_t heads, std::size_t segment_len) {
  const Tensor h1 = layer_norm(x, params.get(prefix + ".ln1.gain"), params.get(prefix + ".ln1.bias"));
  const Tensor q = linear_apply(params, prefix + ".attn.q", h1);
  const Tensor k = linear_apply(params, prefix + ".attn.k", h1);
  const Tensor v = linear_apply(params, prefix + ".attn.v", h1);
  const Tensor att = attention_apply(q, k, v, heads, /*causal=*/true, segment_len);
  const Tensor h = add(x, linear_apply(params, prefix + ".attn.o", att));
  const Tensor h2 = layer_norm(h, params.get(prefix + ".ln2.gain"), params.get(prefix + ".ln2.bias"));
  const Tensor mlp = linear_apply(params, prefix + ".mlp.fc2", gelu(linear_apply(params, prefix + ".mlp.fc1", h2)));
  return add(h, mlp);
}

// ---------------------------------------------------------------------------
// Losses

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets,
                     std::int64_t ignore_index) {
  const std::size_t t = logits.rows(), v = logits.cols();
  if (targets.size() != t) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(t) + " rows");
  }
  for (std::int64_t y : targets) {
    if (y == ignore_index) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(y) + " outside [0," + std::to_string(v) + ")");
    }
  }
  const auto L = logits.data();
  std::vector<Real> probs(t * v, Real(0));
  std::vector<std::int64_t> ys(targets.begin(), targets.end());
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < t; ++r) {
    if (ys[r] == ignore_index) continue;
    const Real* row = L.data() + r * v;
    const Real mx = *std::max_element(row, row + v);
    double z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < v; ++j) {
      probs[r * v + j] = static_cast<Real>(std::exp(static_cast<double>(row[j] - mx)) / z);
    }
    total += std::log(z) - static_cast<double>(row[ys[r]] - mx);
    ++counted;
  }
  const Real value = counted ? static_cast<Real>(total / static_cast<double>(counted)) : Real(0);
  return make_result({}, {value}, {logits}, "cross_entropy",
                     [logits, ys = std::move(ys), probs = std::move(probs), t, v, counted,
                      ignore_index](const TensorImpl& o) {
                       Real* gl = grad_target(logits);
                       if (!gl || counted == 0) return;
                       const Real g = o.grad[0] / static_cast<Real>(counted);
                       for (std::size_t r = 0; r < t; ++r) {
                         if (ys[r] == ignore_index) continue;
                         for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += g * probs[r * v + j];
                         gl[r * v + static_cast<std::size_t>(ys[r])] -= g;
                       }
                     });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const auto p = pred.data(), y = target.data();
  const std::size_t n = p.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = static_cast<double>(p[i]) - y[i];
    total += diff * diff;
  }
  const Real value = n ? static_cast<Real>(total / static_cast<double>(n)) : Real(0);
  return make_result({}, {value}, {pred, target}, "mse_loss", [pred, target, n](const TensorImpl& o) {
    if (n == 0) return;
    const auto p = pred.data(), y = target.data();
    const Real g = o.grad[0] * Real(2) / static_cast<Real>(n);
    if (Real* gp = grad_target(pred))
      for (std::size_t i = 0; i < n; ++i) gp[i] += g * (p[i] - y[i]);
    if (Real* gt = grad_target(target))
      for (std::size_t i = 0; i < n; ++i) gt[i] -= g * (p[i] - y[i]);
  });
}

// ---------------------------------------------------------------------------
// Serialization

void write_param_table(ByteWriter& out, const ParamSet& params) {
  out.put_u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [path, t] : params.entries()) {
    out.put_string(path);
    out.put_u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) out.put_u32(static_cast<std::uint32_t>(d));
    for (Real v : t.data()) out.put_f32(static_cast<float>(v));
  }
}

ParamSet read_param_table(ByteReader& in) {
  const std::uint32_t count = in.get_u32("parameter count");
  ParamSet out;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string path = in.get_string("parameter path");
    const std::uint32_t rank = in.get_u32("parameter rank");
    if (rank > 8) throw FormatError("parameter " + path + " has implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(in.get_u32("parameter dims"));
      n *= shape.back();
    }
    // Refuse to allocate more than the stream can supply.
    if (n > in.remaining() / 4) throw FormatError("truncated values for parameter " + path);
    std::vector<Real> values(static_cast<std::size_t>(n));
    for (Real& v : values) v = static_cast<Real>(in.get_f32("parameter values"));
    if (out.contains(path)) throw FormatError("duplicate parameter path " + path);
    out.add(path, Tensor::from(std::move(shape), std::move(values), true));
  }
  return out;
}

std::vector<std::uint8_t> params_serialize(const ParamSet& params) {
  ByteWriter out;
  write_param_table(out, params);
  return out.take();
}

ParamSet params_deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  ParamSet out = read_param_table(in);
  if (!in.done()) throw FormatError("trailing bytes after parameter table");
  return out;
}

IOTLM_NAMESPACE_END
