// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "iotlm/nn.hpp"
#include "iotlm/sensors.hpp"

IOTLM_NAMESPACE_BEGIN

enum class HeadKind { Regression, Classification, GridRegression };
enum class LossKind { MSE, CrossEntropy };
enum class MetricKind { MeanEuclidean, MAE, Accuracy, BalancedAccuracy, EventF1, EPE };

std::string_view metric_name(MetricKind kind);
/// True when smaller metric values are better.
bool lower_is_better(MetricKind kind);

struct TaskSpec {
  std::size_t id = 0;
  std::string name;
  std::vector<ModalityKind> modalities;  // canonical order
  HeadKind head = HeadKind::Regression;
  std::size_t out_dim = 0;     // regression dims, class count, or h*w
  std::size_t grid_h = 0, grid_w = 0;
  std::size_t point_dim = 0;   // 2 or 3 for Euclidean metrics
  std::vector<std::string> classes;
  LossKind loss = LossKind::MSE;
  MetricKind metric = MetricKind::MAE;
  std::string units;
  // Heads regress (label - offset) / scale; metrics see native units.
  Real label_offset = 0;
  Real label_scale = 1;
  std::int64_t other_class = -1;  // event task only

  bool is_classification() const { return head == HeadKind::Classification; }
  bool uses(ModalityKind kind) const;
};

class TaskRegistry {
 public:
  static TaskRegistry default_registry();

  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const TaskSpec& get(std::string_view name) const;
  const TaskSpec& get(std::size_t id) const;
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;

 private:
  std::vector<TaskSpec> tasks_;  // sorted by name; id == index
};

// ---------------------------------------------------------------------------
// Metrics. Inputs are flat row-major n×dim arrays in native label units.

double metric_mean_euclidean(std::span<const double> preds, std::span<const double> targets,
                             std::size_t point_dim);
double metric_mae(std::span<const double> preds, std::span<const double> targets);
double metric_accuracy(std::span<const std::int64_t> preds, std::span<const std::int64_t> targets);
double metric_balanced_accuracy(std::span<const std::int64_t> preds,
                                std::span<const std::int64_t> targets, std::size_t classes);

struct EventCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};
struct EventF1Result {
  double macro_f1 = 0;
  std::vector<EventCounts> per_class;  // indexed by class id; Other stays zero
};
/// A row counts as a predicted event only when its max probability reaches
/// `threshold` and its argmax is not `other_id`. Macro F1 over event classes
/// with any support or prediction; 1.0 when no class qualifies.
EventF1Result event_f1(std::span<const double> probs, std::span<const std::int64_t> targets,
                       std::size_t classes, double threshold = 0.5, std::int64_t other_id = -1);
double metric_event_f1(std::span<const double> probs, std::span<const std::int64_t> targets,
                       std::size_t classes, double threshold = 0.5, std::int64_t other_id = -1);
double metric_epe(std::span<const double> preds, std::span<const double> targets);

/// "Error" used for trend comparisons: the value itself for lower-is-better
/// metrics, 1 - value otherwise.
double metric_error(MetricKind kind, double value);

// ---------------------------------------------------------------------------
// Heads and losses

/// task.<name>.head.{weight,bias}, zero-initialized.
void add_task_head(ParamSet& params, const TaskSpec& spec, std::size_t readout_width);
Tensor head_apply(const ParamSet& params, const TaskSpec& spec, const Tensor& readout);

/// MSE on normalized targets or cross-entropy on class ids, per sample row.
Tensor task_loss(const TaskSpec& spec, const Tensor& head_output,
                 std::span<const SensorSample* const> samples);

/// Native-unit regression predictions from head outputs.
std::vector<double> denormalize(const TaskSpec& spec, std::span<const Real> head_values);
std::vector<Real> normalize_target(const TaskSpec& spec, std::span<const Real> target);

struct MetricReport {
  std::size_t task_id = 0;
  std::string task;
  std::string metric;
  double value = 0;
  std::string units;
  std::size_t count = 0;
  std::map<std::string, double> per_class;
  std::map<std::string, double> gate_weights;  // mean weight per modality
};

IOTLM_NAMESPACE_END
