// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "iotlm/dataset.hpp"
#include "iotlm/model.hpp"

IOTLM_NAMESPACE_BEGIN

enum class LossBalancing { Uniform, GradNorm };
LossBalancing loss_balancing_from_name(std::string_view name);
std::string_view loss_balancing_name(LossBalancing mode);

/// Everything a run depends on besides the seed and input files. The JSON
/// form (`to_text`/`from_text`) is both the config-file format and the
/// config echo stored in checkpoints and manifests.
struct TrainConfig {
  std::size_t epochs = 30;
  double lr = 1e-4;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  LossBalancing balancing = LossBalancing::Uniform;
  std::vector<std::string> tasks;  // empty = every registered task
  ModalityRatio modality_ratio;
  std::string lm_preset = "tiny";
  InsertionMode insertion = InsertionMode::InputPrefix;
  std::vector<std::size_t> insertion_layers;

  // Model shape.
  std::size_t prefix_len = 40;
  std::size_t adapter_hidden = 128;
  bool direct_head = false;
  EncoderConfig encoder;

  // Stub LM pretraining on the instruction-template corpus.
  std::size_t lm_steps = 1500;
  double lm_lr = 3e-3;

  // Instruction tuning loss weights.
  double text_weight = 1.0;
  double head_weight = 1.0;

  // Data generation for experiment harnesses.
  std::size_t samples_per_task = 500;
  double noise_scale = 1.0;
  std::array<double, 3> split = {0.7, 0.15, 0.15};

  std::size_t fewshot_steps = 200;
  /// Instruction-tuning epochs the experiment harnesses run after
  /// pretraining each cell; 0 evaluates the pretrained model only.
  std::size_t tune_epochs = 30;
  /// EMA factor for the grad_norm running norms.
  double grad_norm_momentum = 0.9;

  void validate(const TaskRegistry& registry) const;
  /// `tasks` with the empty-means-all rule applied, sorted.
  std::vector<std::string> task_list(const TaskRegistry& registry) const;

  std::string to_text() const;
  /// Keys absent from the text keep their current values; unknown keys are a
  /// ConfigError.
  void merge_text(const std::string& text);
  static TrainConfig from_text(const std::string& text);
};

/// Frozen LM for the config: seeded init, stub pretraining on the template
/// corpus when `lm_steps` > 0, then frozen.
CausalLM build_config_lm(const TrainConfig& config, const TaskRegistry& registry);
MergedModel build_model(const TrainConfig& config, const TaskRegistry& registry);
MergedModel build_model(const TrainConfig& config, const TaskRegistry& registry, CausalLM lm);

using TaskData = std::map<std::string, std::vector<SensorSample>>;
using InstructionData = std::map<std::string, std::vector<InstructionSample>>;

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  std::map<std::string, double> loss;       // mean per task
  std::map<std::string, double> grad_norm;  // mean raw trainable-gradient norm per task
  std::map<std::string, double> balanced_norm;  // after balancing weights
};

struct TrainLog {
  std::string stage;
  std::vector<EpochLog> epochs;

  std::string to_text() const;
  std::string digest() const;
};

/// Round-robin multitask pretraining. One optimizer step consumes one batch
/// from every task that still has batches left this epoch; per-task losses
/// are combined by plain sum or by grad-norm balancing.
TrainLog pretrain_multitask(MergedModel& model, AdamState& optimizer, const TaskData& data,
                            const TrainConfig& config);

/// Token layout of one instruction example: BOS, instruction, " Answer:",
/// answer, EOS. `answer_start` indexes the first answer token.
struct InstructionTokens {
  std::vector<TokenId> tokens;
  std::size_t answer_start = 0;
};
InstructionTokens tokenize_instruction(const InstructionSample& sample);
/// Prompt used at generation time (everything before the answer).
std::vector<TokenId> instruction_prompt(const std::string& instruction);

/// Right-pads a batch with PAD and returns next-token targets where only
/// answer and EOS positions count.
struct TextBatch {
  std::vector<std::vector<TokenId>> tokens;
  std::vector<std::int64_t> targets;  // [batch * len], kIgnoreIndex elsewhere
};
TextBatch make_text_batch(std::span<const InstructionTokens> rows);

/// Instruction tuning: text cross-entropy on answer tokens plus the head loss.
TrainLog instruct_tune(MergedModel& model, AdamState& optimizer, const InstructionData& data,
                       const TrainConfig& config);

/// Few-shot adaptation: `steps` optimizer steps on batches cycled from
/// `samples` (all trainable parameters move). No-op for empty `samples`.
TrainLog adapt_task(MergedModel& model, AdamState& optimizer, const std::string& task,
                    std::span<const SensorSample> samples, std::size_t steps,
                    const TrainConfig& config);

/// Read-only batched evaluation, one report per task in `data`.
std::vector<MetricReport> evaluate(const MergedModel& model, const TaskData& data,
                                   std::size_t batch = 32);
/// Mean task loss per task (normalized MSE or cross-entropy).
std::map<std::string, double> validation_loss(const MergedModel& model, const TaskData& data,
                                              std::size_t batch = 32);

/// Generated answer text for one sample under a given instruction.
std::string answer_question(const MergedModel& model, const SensorSample& sample,
                            const std::string& task, const std::string& instruction,
                            std::size_t max_new = 64, GateSummary* gates = nullptr);

IOTLM_NAMESPACE_END
