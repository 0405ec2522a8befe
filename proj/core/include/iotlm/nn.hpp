// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "iotlm/bytes.hpp"
#include "iotlm/rng.hpp"
#include "iotlm/tensor.hpp"

IOTLM_NAMESPACE_BEGIN

/// Named parameters keyed by dot-separated path. Iteration is sorted by path,
/// which fixes both update order and serialization order.
class ParamSet {
 public:
  void add(const std::string& path, Tensor value);
  bool contains(const std::string& path) const { return params_.count(path) != 0; }
  const Tensor& get(const std::string& path) const;
  Tensor& get(const std::string& path);
  void erase(const std::string& path);

  const std::map<std::string, Tensor>& entries() const { return params_; }
  std::vector<std::string> paths() const;
  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;

  /// Marks a path frozen and stops gradient tracking on it.
  void freeze(const std::string& path);
  /// Freezes every path starting with `prefix`.
  void freeze_prefix(const std::string& prefix);
  bool is_frozen(const std::string& path) const { return frozen_.count(path) != 0; }
  const std::set<std::string>& frozen_paths() const { return frozen_; }

  /// Shallow view (shared tensors) restricted to paths with/without a prefix.
  ParamSet with_prefix(const std::string& prefix) const;
  ParamSet trainable() const;

  /// Zero-filled gradient buffers on every trainable parameter.
  void zero_grads();
  /// Deep copy: fresh leaf tensors with identical values and flags.
  ParamSet deep_copy() const;

 private:
  std::map<std::string, Tensor> params_;
  std::set<std::string> frozen_;
};

using GradMap = std::map<std::string, std::vector<Real>>;

/// Gradients of every trainable path; throws ContractError if one is missing.
GradMap collect_grads(const ParamSet& params);
double grad_norm(const GradMap& grads);

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<Real>> m;
  std::map<std::string, std::vector<Real>> v;
};

/// One bias-corrected Adam step on the non-frozen parameters.
void adam_update(ParamSet& params, AdamState& state, const GradMap& grads);

// ---------------------------------------------------------------------------
// Initialization

Tensor init_normal(Shape shape, Rng& rng, double stddev = 0.02);
void add_linear(ParamSet& params, const std::string& prefix, std::size_t d_in, std::size_t d_out,
                Rng& rng, bool zero_weight = false);
void add_layer_norm(ParamSet& params, const std::string& prefix, std::size_t width);
void add_transformer_block(ParamSet& params, const std::string& prefix, std::size_t width, Rng& rng);

// ---------------------------------------------------------------------------
// Layers

/// x·W + b per row.
Tensor linear_apply(const Tensor& weight, const Tensor& bias, const Tensor& x);
/// Uses `<prefix>.weight` and `<prefix>.bias`.
Tensor linear_apply(const ParamSet& params, const std::string& prefix, const Tensor& x);

/// Multi-head scaled dot-product attention. Rows are grouped into independent
/// sequences of `segment_len` rows (0 = one sequence of all rows).
Tensor attention_apply(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                       bool causal, std::size_t segment_len = 0);

/// Pre-norm block: x + Attn(LN(x)), then h + MLP(LN(h)) with a GELU MLP of
/// width 4d.
Tensor transformer_block_apply(const ParamSet& params, const std::string& prefix, const Tensor& x,
                               std::size_t heads, std::size_t segment_len = 0);

// ---------------------------------------------------------------------------
// Losses

inline constexpr std::int64_t kIgnoreIndex = -100;

/// Mean negative log-likelihood over non-ignored rows; zero when all rows
/// are ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets,
                     std::int64_t ignore_index = kIgnoreIndex);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// ---------------------------------------------------------------------------
// Serialization (parameter table layout shared with checkpoints)

std::vector<std::uint8_t> params_serialize(const ParamSet& params);
ParamSet params_deserialize(std::span<const std::uint8_t> bytes);
void write_param_table(ByteWriter& out, const ParamSet& params);
ParamSet read_param_table(ByteReader& in);

IOTLM_NAMESPACE_END
