// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "iotlm/checkpoint.hpp"

IOTLM_NAMESPACE_BEGIN

/// Synthetic train/val/test data for one seed, plus record digests.
struct ExperimentData {
  TaskData train, val, test;
  std::map<std::string, std::string> digests;  // "<task>/<split>" -> FNV-1a hex
};

/// Generates `config.samples_per_task` samples per task with `seed`, strips
/// latents and splits with `config.split`.
ExperimentData make_experiment_data(const TaskRegistry& registry,
                                    const std::vector<std::string>& tasks,
                                    const TrainConfig& config, std::uint64_t seed);

/// FNV-1a over the record encoding of `samples`, as written by write_records.
std::string samples_digest(const TaskRegistry& registry, std::span<const SensorSample> samples);

struct ExperimentCell {
  std::string level;  // axis value: ratio level, k, preset
  std::uint64_t seed = 0;
  std::vector<std::string> tasks;  // tasks trained in this cell
  std::map<std::string, std::string> data_digests;
  /// Training stage `reports` and `val_loss` describe: "tune", "pretrain"
  /// or "adapt". Tuned cells keep their pretrained column as well.
  std::string stage;
  std::vector<MetricReport> reports;
  std::map<std::string, double> val_loss;
  std::vector<MetricReport> pretrain_reports;
  std::map<std::string, double> pretrain_val_loss;
  std::size_t trainable_params = 0;
  std::size_t frozen_params = 0;
};

struct ExperimentResult {
  std::string kind;
  std::vector<std::string> levels;
  std::vector<std::uint64_t> seeds;
  std::vector<ExperimentCell> cells;

  /// Mean over seeds of metric_error for `task` at `level`; `pretrained`
  /// selects the pretrained column of tuned cells.
  double mean_error(const std::string& level, const std::string& task, bool pretrained = false) const;
  /// Mean over seeds of the cell's mean validation loss across tasks.
  double mean_val_loss(const std::string& level, bool pretrained = false) const;
  /// True when any cell carries a separate pretrained column.
  bool has_pretrain_column() const;
  std::string to_text() const;
};

std::string reports_to_text(const std::vector<MetricReport>& reports);

/// Progress sink; receives one line per finished cell.
using ProgressFn = std::function<void(const std::string&)>;
/// Receives each adapted few-shot model (e.g. to checkpoint it).
using AdaptedFn = std::function<void(const ExperimentCell&, const MergedModel&, const AdamState&)>;

/// Ablation and scaling cells pretrain a fresh model, evaluate it, then run
/// `tune_epochs` of instruction tuning and evaluate again (skipped when
/// `tune_epochs` is 0 or heads bypass the LM).

/// One model per (level, seed) trained on modality-reduced data. The ratio
/// applies to train, validation and test splits alike.
ExperimentResult ablate_modality_ratio(const TrainConfig& base, const TaskRegistry& registry,
                                       const std::vector<std::string>& levels,
                                       const std::vector<std::uint64_t>& seeds,
                                       const ProgressFn& progress = {});

/// Nested task subsets: the probe first, then the remaining tasks in name
/// order; a level keeps max(1, round(level * N)) of them ("single" keeps 1).
std::vector<std::string> task_subset(const std::vector<std::string>& all, const std::string& probe,
                                     const std::string& level);
ExperimentResult ablate_task_ratio(const TrainConfig& base, const TaskRegistry& registry,
                                   const std::string& probe, const std::vector<std::string>& levels,
                                   const std::vector<std::uint64_t>& seeds,
                                   const ProgressFn& progress = {});

/// Adapts a clone of `base` to `target` (absent from its task set) with k
/// class-balanced shots for `config.fewshot_steps` steps. k = 0 evaluates a
/// freshly registered task without any gradient step.
ExperimentResult fewshot_eval(const Checkpoint& base, const TaskRegistry& registry,
                              const std::string& target, const std::vector<std::size_t>& ks,
                              const std::vector<std::uint64_t>& seeds, const TrainConfig& config,
                              const ProgressFn& progress = {}, const AdaptedFn& on_adapted = {});

/// Trains every preset on identical data and config.
ExperimentResult scaling_run(const TrainConfig& base, const TaskRegistry& registry,
                             const std::vector<std::string>& presets,
                             const std::vector<std::uint64_t>& seeds,
                             const ProgressFn& progress = {});

IOTLM_NAMESPACE_END
