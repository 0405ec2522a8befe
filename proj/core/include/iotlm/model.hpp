// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "iotlm/encoders.hpp"
#include "iotlm/fusion.hpp"
#include "iotlm/tasks.hpp"
#include "iotlm/toy_lm.hpp"

IOTLM_NAMESPACE_BEGIN

enum class InsertionMode { InputPrefix, PerLayerPrefix };
InsertionMode insertion_mode_from_name(std::string_view name);
std::string_view insertion_mode_name(InsertionMode mode);

struct AdapterConfig {
  std::size_t prefix_len = 40;
  InsertionMode mode = InsertionMode::InputPrefix;
  std::vector<std::size_t> layers;  // per_layer_prefix targets
  std::size_t hidden = 128;
  /// Heads read the mean adapter token instead of running the LM.
  bool direct_head = false;
  FusionMode fusion = FusionMode::Late;
  Real gate_temperature = 1;

  void validate(std::size_t lm_layers) const;
};

/// adapter.fc1 (GELU) and a zero-initialized adapter.fc2, plus zero-initialized
/// adapter.layer<l> projections in per-layer mode.
void add_adapter_params(ParamSet& params, std::size_t enc_width, std::size_t lm_width,
                        const AdapterConfig& config, Rng& rng);
/// task.<name>.prefix, normal-initialized.
void add_task_prefix(ParamSet& params, const std::string& task, std::size_t prefix_len,
                     std::size_t lm_width, Rng& rng);

struct AdapterOutput {
  Tensor prefix;                             // [p × d_lm]
  std::map<std::size_t, Tensor> layer_deltas;  // [p × d_lm] each
};

/// Token MLP → resample to p rows (truncate or zero rows) → add the task
/// prefix embedding.
AdapterOutput adapter_project(const Tensor& fused, const std::string& task,
                              const AdapterConfig& config, const ParamSet& params);

/// Frozen LM plus every trainable part: encoders, gate, adapter and the
/// task-specific embeddings, gates and heads.
struct MergedModel {
  CausalLM lm;
  ParamSet params;  // trainable paths only
  EncoderConfig encoder;
  AdapterConfig adapter;
  TaskRegistry registry;
  std::vector<std::string> tasks;  // tasks with registered parameters, sorted

  static MergedModel create(CausalLM lm, const EncoderConfig& encoder,
                            const AdapterConfig& adapter, const TaskRegistry& registry,
                            const std::vector<std::string>& tasks, std::uint64_t seed);

  /// Registers parameters for one more task (fresh head, prefix and gate),
  /// plus encoders for any modality not yet covered.
  void add_task(const std::string& task, std::uint64_t seed);
  bool has_task(const std::string& task) const;

  const ParamSet& trainable_params() const { return params; }
  /// Union of frozen LM and trainable paths (shared tensors).
  ParamSet all_params() const;
  /// Deep copy of the trainable part; the frozen LM tensors are shared.
  MergedModel clone_trainable() const;
};

struct GateSummary {
  std::vector<ModalityKind> kinds;
  std::vector<double> weights;
};

struct MergedOutput {
  Tensor readout;  // [B × d_lm]
  Tensor head;     // [B × out_dim]
  Tensor logits;   // [B*t × vocab] when text was given
  LMOutput lm;
  std::vector<GateSummary> gates;
};

/// Batched forward: sensor encoders → gated fusion → adapter → frozen LM.
/// `text` rows must share one length. Samples carrying a latent are
/// rejected.
MergedOutput merged_forward(const MergedModel& model, std::span<const SensorSample* const> samples,
                            const std::string& task,
                            const std::vector<std::vector<TokenId>>* text = nullptr);

/// Adapter output for one sample, in the single-sample LM conditioning layout.
LMInput sensor_conditioning(const MergedModel& model, const SensorSample& sample,
                            const std::string& task, GateSummary* gates = nullptr);

IOTLM_NAMESPACE_END
