// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <set>

IOTLM_NAMESPACE_BEGIN

std::string_view metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::MeanEuclidean: return "mean_euclidean";
    case MetricKind::MAE: return "mae";
    case MetricKind::Accuracy: return "accuracy";
    case MetricKind::BalancedAccuracy: return "balanced_accuracy";
    case MetricKind::EventF1: return "event_f1";
    case MetricKind::EPE: return "epe";
  }
  return "?";
}

bool lower_is_better(MetricKind kind) {
  return kind == MetricKind::MeanEuclidean || kind == MetricKind::MAE || kind == MetricKind::EPE;
}

double metric_error(MetricKind kind, double value) {
  return lower_is_better(kind) ? value : 1.0 - value;
}

bool TaskSpec::uses(ModalityKind kind) const {
  return std::find(modalities.begin(), modalities.end(), kind) != modalities.end();
}

namespace {

using MK = ModalityKind;

std::vector<ModalityKind> canonical(std::initializer_list<ModalityKind> kinds) {
  std::set<ModalityKind> sorted(kinds);
  return {sorted.begin(), sorted.end()};
}

TaskSpec classification(std::string name, std::initializer_list<ModalityKind> kinds,
                        std::vector<std::string> classes, MetricKind metric) {
  TaskSpec t;
  t.name = std::move(name);
  t.modalities = canonical(kinds);
  t.head = HeadKind::Classification;
  t.out_dim = classes.size();
  t.classes = std::move(classes);
  t.loss = LossKind::CrossEntropy;
  t.metric = metric;
  t.units = "fraction";
  return t;
}

TaskSpec regression(std::string name, std::initializer_list<ModalityKind> kinds, std::size_t dim,
                    MetricKind metric, std::string units, Real offset, Real scale) {
  TaskSpec t;
  t.name = std::move(name);
  t.modalities = canonical(kinds);
  t.head = HeadKind::Regression;
  t.out_dim = dim;
  t.loss = LossKind::MSE;
  t.metric = metric;
  t.units = std::move(units);
  t.label_offset = offset;
  t.label_scale = scale;
  return t;
}

std::vector<std::string> touch_classes() {
  std::vector<std::string> out;
  for (const char* contact : {"thumb", "index", "middle", "ring", "pinky", "two_finger", "palm"}) {
    for (const char* depth : {"tap", "press"}) out.push_back(std::string(contact) + "_" + depth);
  }
  return out;
}

}  // namespace

TaskRegistry TaskRegistry::default_registry() {
  TaskRegistry r;
  auto& t = r.tasks_;
  // Every modality is covered: LiDAR, Video and Thermal extend depth,
  // activity and pose respectively.
  t.push_back(classification("activity", {MK::Image, MK::Pose, MK::IMU, MK::Video},
                             {"walking", "running", "jumping", "sitting", "cycling", "lying"},
                             MetricKind::BalancedAccuracy));
  {
    TaskSpec d = regression("depth", {MK::Image, MK::GPS, MK::IMU, MK::CameraMeta, MK::LiDAR},
                            256, MetricKind::MAE, "mm", 1200, 250);
    d.head = HeadKind::GridRegression;
    d.grid_h = d.grid_w = 16;
    t.push_back(std::move(d));
  }
  {
    TaskSpec e = classification("event", {MK::Audio, MK::IMU},
                                {"knocking", "typing", "washing", "brushing", "clapping", "drinking",
                                 "eating", "other"},
                                MetricKind::EventF1);
    e.other_class = 7;
    t.push_back(std::move(e));
  }
  {
    TaskSpec g = regression("gaze", {MK::Image, MK::Depth, MK::IMU}, 2, MetricKind::MeanEuclidean,
                            "cm", Real(4.8), 3);
    g.point_dim = 2;
    t.push_back(std::move(g));
  }
  t.push_back(classification("gesture", {MK::Gaze, MK::IMU}, {"nod", "shake", "lean", "roll", "idle"},
                             MetricKind::Accuracy));
  {
    // Joint-angle triplets treated as 3-D points in radians.
    TaskSpec p = regression("pose", {MK::Image, MK::IMU, MK::Thermal}, 72, MetricKind::MeanEuclidean,
                            "rad (angle triplets as points)", 0, Real(0.5));
    p.point_dim = 3;
    t.push_back(std::move(p));
  }
  {
    TaskSpec h = regression("recon3d", {MK::Image, MK::Capacitance, MK::Depth}, 63, MetricKind::EPE,
                            "mm", 0, 40);
    h.point_dim = 3;
    t.push_back(std::move(h));
  }
  t.push_back(classification("touch", {MK::Image, MK::Capacitance, MK::Depth, MK::Pose},
                             touch_classes(), MetricKind::Accuracy));
  for (std::size_t i = 0; i < t.size(); ++i) t[i].id = i;
  return r;
}

const TaskSpec& TaskRegistry::get(std::string_view name) const {
  for (const auto& t : tasks_) {
    if (t.name == name) return t;
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

const TaskSpec& TaskRegistry::get(std::size_t id) const {
  if (id >= tasks_.size()) throw ConfigError("unknown task id " + std::to_string(id));
  return tasks_[id];
}

bool TaskRegistry::contains(std::string_view name) const {
  return std::any_of(tasks_.begin(), tasks_.end(), [&](const TaskSpec& t) { return t.name == name; });
}

std::vector<std::string> TaskRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& t : tasks_) out.push_back(t.name);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": prediction/target sizes differ (" + std::to_string(a) +
                     " vs " + std::to_string(b) + ")");
  }
  if (a == 0) throw ContractError(std::string(what) + ": empty input");
}

}  // namespace

double metric_mean_euclidean(std::span<const double> preds, std::span<const double> targets,
                             std::size_t point_dim) {
  require_same(preds.size(), targets.size(), "mean_euclidean");
  if (point_dim == 0 || preds.size() % point_dim != 0) {
    throw ShapeError("mean_euclidean: size " + std::to_string(preds.size()) +
                     " not divisible into points of " + std::to_string(point_dim));
  }
  // Every sample has the same joint count, so the mean of per-sample means is
  // the mean over all points.
  const std::size_t points = preds.size() / point_dim;
  double total = 0;
  for (std::size_t p = 0; p < points; ++p) {
    double sq = 0;
    for (std::size_t k = 0; k < point_dim; ++k) {
      const double diff = preds[p * point_dim + k] - targets[p * point_dim + k];
      sq += diff * diff;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(points);
}

double metric_mae(std::span<const double> preds, std::span<const double> targets) {
  require_same(preds.size(), targets.size(), "mae");
  double total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += std::abs(preds[i] - targets[i]);
  return total / static_cast<double>(preds.size());
}

double metric_epe(std::span<const double> preds, std::span<const double> targets) {
  return metric_mean_euclidean(preds, targets, 3);
}

double metric_accuracy(std::span<const std::int64_t> preds, std::span<const std::int64_t> targets) {
  require_same(preds.size(), targets.size(), "accuracy");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == targets[i];
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double metric_balanced_accuracy(std::span<const std::int64_t> preds,
                                std::span<const std::int64_t> targets, std::size_t classes) {
  require_same(preds.size(), targets.size(), "balanced_accuracy");
  std::vector<std::size_t> support(classes, 0), hits(classes, 0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= classes) {
      throw IndexError("balanced_accuracy: target class " + std::to_string(targets[i]) + " out of range");
    }
    ++support[targets[i]];
    hits[targets[i]] += preds[i] == targets[i];
  }
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (support[c] == 0) continue;
    total += static_cast<double>(hits[c]) / static_cast<double>(support[c]);
    ++counted;
  }
  return total / static_cast<double>(counted);
}

EventF1Result event_f1(std::span<const double> probs, std::span<const std::int64_t> targets,
                       std::size_t classes, double threshold, std::int64_t other_id) {
  if (classes == 0 || probs.size() != targets.size() * classes) {
    throw ShapeError("event_f1: expected " + std::to_string(targets.size()) + "×" +
                     std::to_string(classes) + " probabilities, got " + std::to_string(probs.size()));
  }
  if (targets.empty()) throw ContractError("event_f1: empty input");
  EventF1Result r;
  r.per_class.assign(classes, {});
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto row = probs.subspan(i * classes, classes);
    double sum = 0;
    for (double p : row) {
      if (!std::isfinite(p) || p < 0) throw DataError("event_f1: malformed probability row");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-4) throw DataError("event_f1: probability row does not sum to 1");
    const auto best = static_cast<std::int64_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const std::int64_t predicted = (row[best] >= threshold && best != other_id) ? best : -1;
    const std::int64_t target = targets[i];
    if (target < 0 || static_cast<std::size_t>(target) >= classes) {
      throw IndexError("event_f1: target class " + std::to_string(target) + " out of range");
    }
    if (predicted >= 0 && predicted == target) {
      ++r.per_class[target].tp;
    } else {
      if (predicted >= 0) ++r.per_class[predicted].fp;
      if (target != other_id) ++r.per_class[target].fn;
    }
  }
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (static_cast<std::int64_t>(c) == other_id) continue;
    const auto& k = r.per_class[c];
    const std::size_t denom = 2 * k.tp + k.fp + k.fn;
    if (denom == 0) continue;
    total += 2.0 * static_cast<double>(k.tp) / static_cast<double>(denom);
    ++counted;
  }
  r.macro_f1 = counted ? total / static_cast<double>(counted) : 1.0;
  return r;
}

double metric_event_f1(std::span<const double> probs, std::span<const std::int64_t> targets,
                       std::size_t classes, double threshold, std::int64_t other_id) {
  return event_f1(probs, targets, classes, threshold, other_id).macro_f1;
}

// ---------------------------------------------------------------------------
// Heads and losses

void add_task_head(ParamSet& params, const TaskSpec& spec, std::size_t readout_width) {
  Rng unused(0);
  add_linear(params, "task." + spec.name + ".head", readout_width, spec.out_dim, unused, true);
}

Tensor head_apply(const ParamSet& params, const TaskSpec& spec, const Tensor& readout) {
  const std::string prefix = "task." + spec.name + ".head";
  if (!params.contains(prefix + ".weight")) {
    throw ConfigError("no head registered for task '" + spec.name + "'");
  }
  return linear_apply(params, prefix, readout);
}

std::vector<Real> normalize_target(const TaskSpec& spec, std::span<const Real> target) {
  std::vector<Real> out(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    out[i] = (target[i] - spec.label_offset) / spec.label_scale;
  }
  return out;
}

std::vector<double> denormalize(const TaskSpec& spec, std::span<const Real> head_values) {
  std::vector<double> out(head_values.size());
  for (std::size_t i = 0; i < head_values.size(); ++i) {
    out[i] = static_cast<double>(head_values[i]) * spec.label_scale + spec.label_offset;
  }
  return out;
}

Tensor task_loss(const TaskSpec& spec, const Tensor& head_output,
                 std::span<const SensorSample* const> samples) {
  if (head_output.rank() != 2 || head_output.rows() != samples.size() ||
      head_output.cols() != spec.out_dim) {
    throw ShapeError("task_loss(" + spec.name + "): head output " + shape_str(head_output.shape()) +
                     " for " + std::to_string(samples.size()) + " samples");
  }
  if (spec.loss == LossKind::CrossEntropy) {
    std::vector<std::int64_t> ids;
    ids.reserve(samples.size());
    for (const auto* s : samples) ids.push_back(s->class_id);
    return cross_entropy(head_output, ids);
  }
  std::vector<Real> target;
  target.reserve(samples.size() * spec.out_dim);
  for (const auto* s : samples) {
    if (s->target.size() != spec.out_dim) {
      throw ShapeError("task_loss(" + spec.name + "): label has " + std::to_string(s->target.size()) +
                       " values, expected " + std::to_string(spec.out_dim));
    }
    const auto norm = normalize_target(spec, s->target);
    target.insert(target.end(), norm.begin(), norm.end());
  }
  return mse_loss(head_output, Tensor::from(head_output.shape(), std::move(target)));
}

IOTLM_NAMESPACE_END
