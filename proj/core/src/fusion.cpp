// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/fusion.hpp"

IOTLM_NAMESPACE_BEGIN

FusionMode fusion_mode_from_name(std::string_view name) {
  if (name == "late") return FusionMode::Late;
  if (name == "early") return FusionMode::Early;
  if (name == "model_internal") return FusionMode::ModelInternal;
  throw ConfigError("unknown fusion mode '" + std::string(name) + "'");
}

std::string_view fusion_mode_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::Late: return "late";
    case FusionMode::Early: return "early";
    case FusionMode::ModelInternal: return "model_internal";
  }
  return "?";
}

void add_gate_params(ParamSet& params, std::size_t width) {
  params.add("gate.weight", Tensor::zeros({width}, true));
  params.add("gate.kind_bias", Tensor::zeros({kModalityCount, 1}, true));
}

void add_task_gate_params(ParamSet& params, const std::string& task, std::size_t width) {
  params.add("task." + task + ".gate", Tensor::zeros({width}, true));
}

Tensor gate_weights(std::span<const EncodedBlock> blocks, const std::string& task,
                    const ParamSet& params, Real temperature) {
  if (blocks.empty()) throw ContractError("gate_weights: no modality blocks");
  if (!(temperature > 0)) throw ConfigError("gate temperature must be positive");
  std::vector<Tensor> pools;
  std::vector<std::size_t> kinds;
  pools.reserve(blocks.size());
  for (const auto& b : blocks) {
    const std::size_t d = b.tokens.cols();
    pools.push_back(reshape(reduce(b.tokens, ReduceKind::Mean, 0), {1, d}));
    kinds.push_back(static_cast<std::size_t>(b.kind));
  }
  const Tensor pooled = concat_tokens(pools);
  const std::size_t d = pooled.cols();
  const Tensor w = add(params.get("gate.weight"), params.get("task." + task + ".gate"));
  Tensor logits = matmul(pooled, reshape(w, {d, 1}));
  logits = add(logits, gather_rows(params.get("gate.kind_bias"), kinds));
  if (temperature != Real(1)) logits = scale(logits, Real(1) / temperature);
  return softmax(reshape(logits, {blocks.size()}), 0);
}

Tensor late_fuse(std::span<const EncodedBlock> blocks, const Tensor& weights) {
  if (blocks.empty()) throw ContractError("late_fuse: no modality blocks");
  if (weights.rank() != 1 || weights.dim(0) != blocks.size()) {
    throw ShapeError("late_fuse: " + std::to_string(blocks.size()) + " blocks but weights " +
                     shape_str(weights.shape()));
  }
  const Tensor column = reshape(weights, {blocks.size(), 1});
  std::vector<Tensor> scaled;
  scaled.reserve(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    scaled.push_back(mul(blocks[i].tokens, slice_rows(column, i, i + 1)));
  }
  return concat_tokens(scaled);
}

IOTLM_NAMESPACE_END
