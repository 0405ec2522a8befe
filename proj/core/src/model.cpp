// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/model.hpp"

#include <algorithm>

IOTLM_NAMESPACE_BEGIN

InsertionMode insertion_mode_from_name(std::string_view name) {
  if (name == "input_prefix") return InsertionMode::InputPrefix;
  if (name == "per_layer_prefix") return InsertionMode::PerLayerPrefix;
  throw ConfigError("unknown insertion mode '" + std::string(name) + "'");
}

std::string_view insertion_mode_name(InsertionMode mode) {
  return mode == InsertionMode::InputPrefix ? "input_prefix" : "per_layer_prefix";
}

void AdapterConfig::validate(std::size_t lm_layers) const {
  if (prefix_len == 0) throw ConfigError("adapter prefix length must be at least 1");
  if (hidden == 0) throw ConfigError("adapter hidden width must be positive");
  if (fusion != FusionMode::Late) {
    throw ConfigError("fusion mode '" + std::string(fusion_mode_name(fusion)) +
                      "' is declared but not implemented; use 'late'");
  }
  if (mode == InsertionMode::PerLayerPrefix) {
    if (layers.empty()) throw ConfigError("per_layer_prefix needs at least one insertion layer");
    for (std::size_t l : layers) {
      if (l >= lm_layers) {
        throw ConfigError("insertion layer " + std::to_string(l) + " outside [0, " +
                          std::to_string(lm_layers) + ")");
      }
    }
  }
}

void add_adapter_params(ParamSet& params, std::size_t enc_width, std::size_t lm_width,
                        const AdapterConfig& config, Rng& rng) {
  add_linear(params, "adapter.fc1", enc_width, config.hidden, rng);
  add_linear(params, "adapter.fc2", config.hidden, lm_width, rng, true);
  if (config.mode == InsertionMode::PerLayerPrefix) {
    for (std::size_t l : config.layers) {
      add_linear(params, "adapter.layer" + std::to_string(l), config.hidden, lm_width, rng, true);
    }
  }
}

void add_task_prefix(ParamSet& params, const std::string& task, std::size_t prefix_len,
                     std::size_t lm_width, Rng& rng) {
  params.add("task." + task + ".prefix", init_normal({prefix_len, lm_width}, rng));
}

namespace {

Tensor resample_rows(const Tensor& x, std::size_t p) {
  const std::size_t f = x.rows();
  if (f == p) return x;
  if (f > p) return slice_rows(x, 0, p);
  return concat_tokens({x, Tensor::zeros({p - f, x.cols()})});
}

}  // namespace

AdapterOutput adapter_project(const Tensor& fused, const std::string& task,
                              const AdapterConfig& config, const ParamSet& params) {
  if (fused.rank() != 2 || fused.rows() == 0) {
    throw ShapeError("adapter_project: expected a non-empty token matrix, got " +
                     shape_str(fused.shape()));
  }
  const Tensor hidden = gelu(linear_apply(params, "adapter.fc1", fused));
  AdapterOutput out;
  out.prefix = add(resample_rows(linear_apply(params, "adapter.fc2", hidden), config.prefix_len),
                   params.get("task." + task + ".prefix"));
  if (config.mode == InsertionMode::PerLayerPrefix) {
    for (std::size_t l : config.layers) {
      out.layer_deltas[l] = resample_rows(
          linear_apply(params, "adapter.layer" + std::to_string(l), hidden), config.prefix_len);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// MergedModel

namespace {

// Independent streams keep initialization stable when tasks are added later.
constexpr std::uint64_t kStreamShared = 1;
constexpr std::uint64_t kStreamEncoder = 100;
constexpr std::uint64_t kStreamTask = 200;

}  // namespace

MergedModel MergedModel::create(CausalLM lm, const EncoderConfig& encoder,
                                const AdapterConfig& adapter, const TaskRegistry& registry,
                                const std::vector<std::string>& tasks, std::uint64_t seed) {
  encoder.validate();
  adapter.validate(lm.config.layers);
  for (const auto& [path, t] : lm.params.entries()) {
    if (!lm.params.is_frozen(path)) throw ContractError("merged model needs a frozen LM; " + path + " is trainable");
  }
  MergedModel m;
  m.lm = std::move(lm);
  m.encoder = encoder;
  m.adapter = adapter;
  m.registry = registry;
  Rng rng(seed, kStreamShared);
  add_gate_params(m.params, encoder.width);
  add_adapter_params(m.params, encoder.width, m.lm.config.width, adapter, rng);
  for (const auto& t : tasks) m.add_task(t, seed);
  return m;
}

bool MergedModel::has_task(const std::string& task) const {
  return std::find(tasks.begin(), tasks.end(), task) != tasks.end();
}

void MergedModel::add_task(const std::string& task, std::uint64_t seed) {
  const TaskSpec& spec = registry.get(task);
  if (has_task(task)) throw ConfigError("task '" + task + "' already registered");
  for (ModalityKind kind : spec.modalities) {
    if (params.contains(encoder_prefix(kind) + ".type")) continue;
    Rng rng(seed, kStreamEncoder + static_cast<std::uint64_t>(kind));
    add_encoder_params(params, encoder, {kind}, rng);
  }
  Rng rng(seed, kStreamTask + spec.id);
  add_task_prefix(params, task, adapter.prefix_len, lm.config.width, rng);
  add_task_gate_params(params, task, encoder.width);
  add_task_head(params, spec, lm.config.width);
  tasks.push_back(task);
  std::sort(tasks.begin(), tasks.end());
}

ParamSet MergedModel::all_params() const {
  ParamSet all;
  for (const auto& [path, t] : lm.params.entries()) {
    all.add(path, t);
    if (lm.params.is_frozen(path)) all.freeze(path);
  }
  for (const auto& [path, t] : params.entries()) all.add(path, t);
  return all;
}

MergedModel MergedModel::clone_trainable() const {
  MergedModel copy = *this;
  copy.params = params.deep_copy();
  return copy;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

const TaskSpec& checked_task(const MergedModel& model, const std::string& task) {
  const TaskSpec& spec = model.registry.get(task);
  if (!model.has_task(task)) throw ConfigError("model has no parameters for task '" + task + "'");
  return spec;
}

AdapterOutput encode_to_prefix(const MergedModel& model, const SensorSample& sample,
                               const TaskSpec& spec, GateSummary* gates) {
  if (!sample.latent.empty()) {
    throw ContractError("sample " + std::to_string(sample.sample_id) +
                        " still carries generator latents; strip them before inference");
  }
  if (sample.payloads.empty()) {
    throw ContractError("sample " + std::to_string(sample.sample_id) + " has no payloads");
  }
  for (const auto& [kind, payload] : sample.payloads) {
    if (!spec.uses(kind)) {
      throw ConfigError("task '" + spec.name + "' does not take modality '" +
                        std::string(modality_name(kind)) + "'");
    }
  }
  const auto blocks = encode_sample(sample, model.encoder, model.params);
  const Tensor w = gate_weights(blocks, spec.name, model.params, model.adapter.gate_temperature);
  if (gates) {
    gates->kinds.clear();
    gates->weights.clear();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      gates->kinds.push_back(blocks[i].kind);
      gates->weights.push_back(w[i]);
    }
  }
  return adapter_project(late_fuse(blocks, w), spec.name, model.adapter, model.params);
}

}  // namespace

MergedOutput merged_forward(const MergedModel& model, std::span<const SensorSample* const> samples,
                            const std::string& task, const std::vector<std::vector<TokenId>>* text) {
  const TaskSpec& spec = checked_task(model, task);
  if (samples.empty()) throw ContractError("merged_forward: empty batch");
  if (text && text->size() != samples.size()) {
    throw ShapeError("merged_forward: " + std::to_string(text->size()) + " text rows for " +
                     std::to_string(samples.size()) + " samples");
  }
  const std::size_t batch = samples.size();
  const std::size_t p = model.adapter.prefix_len;
  MergedOutput out;
  out.gates.resize(batch);
  std::vector<Tensor> prefixes;
  std::map<std::size_t, std::vector<Tensor>> deltas;
  prefixes.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    AdapterOutput a = encode_to_prefix(model, *samples[b], spec, &out.gates[b]);
    prefixes.push_back(std::move(a.prefix));
    for (auto& [l, t] : a.layer_deltas) deltas[l].push_back(std::move(t));
  }

  if (model.adapter.direct_head) {
    if (text) throw ContractError("direct-head models have no text pathway");
    std::vector<Tensor> pooled;
    for (const auto& pr : prefixes) {
      pooled.push_back(reshape(reduce(pr, ReduceKind::Mean, 0), {1, pr.cols()}));
    }
    out.readout = concat_tokens(pooled);
  } else {
    LMInput in;
    in.prefix = concat_tokens(prefixes);
    in.prefix_len = p;
    if (text) in.tokens = *text;
    for (auto& [l, parts] : deltas) in.layer_deltas[l] = concat_tokens(parts);
    out.lm = lm_forward(model.lm, in);
    std::vector<std::size_t> rows(batch);
    for (std::size_t b = 0; b < batch; ++b) rows[b] = b * out.lm.seq_len + p - 1;
    out.readout = gather_rows(out.lm.hidden, rows);
    out.logits = out.lm.logits;
  }
  out.head = head_apply(model.params, spec, out.readout);
  return out;
}

LMInput sensor_conditioning(const MergedModel& model, const SensorSample& sample,
                            const std::string& task, GateSummary* gates) {
  const TaskSpec& spec = checked_task(model, task);
  if (model.adapter.direct_head) throw ContractError("direct-head models have no text pathway");
  AdapterOutput a = encode_to_prefix(model, sample, spec, gates);
  LMInput in;
  in.prefix = std::move(a.prefix);
  in.prefix_len = model.adapter.prefix_len;
  in.layer_deltas = std::move(a.layer_deltas);
  return in;
}

IOTLM_NAMESPACE_END
