// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/experiments.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "iotlm/bytes.hpp"

IOTLM_NAMESPACE_BEGIN

using json = nlohmann::json;

std::string samples_digest(const TaskRegistry& registry, std::span<const SensorSample> samples) {
  std::string text;
  for (const auto& s : samples) text += encode_record(registry, s) + "\n";
  return hex64(fnv1a64(text));
}

ExperimentData make_experiment_data(const TaskRegistry& registry,
                                    const std::vector<std::string>& tasks,
                                    const TrainConfig& config, std::uint64_t seed) {
  ExperimentData out;
  for (const auto& task : tasks) {
    auto samples = gen_task_data(registry, task, config.samples_per_task, seed, config.noise_scale);
    strip_latents(samples);
    Split split = split_dataset(samples, config.split, seed);
    out.digests[task + "/train"] = samples_digest(registry, split.train);
    out.digests[task + "/val"] = samples_digest(registry, split.val);
    out.digests[task + "/test"] = samples_digest(registry, split.test);
    out.train[task] = std::move(split.train);
    out.val[task] = std::move(split.val);
    out.test[task] = std::move(split.test);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Result grid

namespace {

double report_error(const MetricReport& r) {
  for (MetricKind k : {MetricKind::MeanEuclidean, MetricKind::MAE, MetricKind::Accuracy,
                       MetricKind::BalancedAccuracy, MetricKind::EventF1, MetricKind::EPE}) {
    if (metric_name(k) == r.metric) return metric_error(k, r.value);
  }
  throw ContractError("unknown metric '" + r.metric + "'");
}

}  // namespace

namespace {

const std::vector<MetricReport>& column(const ExperimentCell& c, bool pretrained) {
  return pretrained && !c.pretrain_reports.empty() ? c.pretrain_reports : c.reports;
}

const std::map<std::string, double>& loss_column(const ExperimentCell& c, bool pretrained) {
  return pretrained && !c.pretrain_val_loss.empty() ? c.pretrain_val_loss : c.val_loss;
}

}  // namespace

bool ExperimentResult::has_pretrain_column() const {
  return std::any_of(cells.begin(), cells.end(), [](const ExperimentCell& c) { return !c.pretrain_reports.empty(); });
}

double ExperimentResult::mean_error(const std::string& level, const std::string& task, bool pretrained) const {
  double total = 0;
  std::size_t n = 0;
  for (const auto& c : cells) {
    if (c.level != level) continue;
    for (const auto& r : column(c, pretrained)) {
      if (r.task != task) continue;
      total += report_error(r);
      ++n;
    }
  }
  if (n == 0) throw ContractError("no '" + task + "' reports at level '" + level + "'");
  return total / static_cast<double>(n);
}

double ExperimentResult::mean_val_loss(const std::string& level, bool pretrained) const {
  double total = 0;
  std::size_t n = 0;
  for (const auto& c : cells) {
    const auto& losses = loss_column(c, pretrained);
    if (c.level != level || losses.empty()) continue;
    double cell = 0;
    for (const auto& [task, v] : losses) cell += v;
    total += cell / static_cast<double>(losses.size());
    ++n;
  }
  if (n == 0) throw ContractError("no validation losses at level '" + level + "'");
  return total / static_cast<double>(n);
}

namespace {

json report_json(const MetricReport& r) {
  return {{"task_id", r.task_id}, {"task", r.task},           {"metric", r.metric},
          {"value", r.value},     {"units", r.units},         {"count", r.count},
          {"per_class", r.per_class}, {"gate_weights", r.gate_weights}};
}

}  // namespace

std::string reports_to_text(const std::vector<MetricReport>& reports) {
  json j = json::array();
  for (const auto& r : reports) j.push_back(report_json(r));
  return j.dump(2);
}

std::string ExperimentResult::to_text() const {
  json j;
  j["kind"] = kind;
  j["levels"] = levels;
  j["seeds"] = seeds;
  j["cells"] = json::array();
  const auto reports_json = [](const std::vector<MetricReport>& reports) {
    json out = json::array();
    for (const auto& r : reports) out.push_back(report_json(r));
    return out;
  };
  for (const auto& c : cells) {
    json cell = {{"level", c.level},
                 {"seed", c.seed},
                 {"tasks", c.tasks},
                 {"data_digests", c.data_digests},
                 {"stage", c.stage},
                 {"reports", reports_json(c.reports)},
                 {"val_loss", c.val_loss},
                 {"trainable_params", c.trainable_params},
                 {"frozen_params", c.frozen_params}};
    if (!c.pretrain_reports.empty()) {
      cell["pretrain_reports"] = reports_json(c.pretrain_reports);
      cell["pretrain_val_loss"] = c.pretrain_val_loss;
    }
    j["cells"].push_back(std::move(cell));
  }
  // Per-level summary of mean errors, the comparison the trend checks use.
  // Tuned grids add the same summary for their pretrained column.
  json summary;
  const bool both = has_pretrain_column();
  for (const auto& level : levels) {
    std::vector<std::string> tasks;
    for (const auto& c : cells) {
      if (c.level != level) continue;
      for (const auto& r : c.reports) {
        if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
      }
    }
    for (const auto& t : tasks) {
      summary[level]["mean_error"][t] = mean_error(level, t);
      if (both) summary[level]["pretrain_mean_error"][t] = mean_error(level, t, true);
    }
    bool has_loss = false;
    for (const auto& c : cells) has_loss |= c.level == level && !c.val_loss.empty();
    if (has_loss) {
      summary[level]["mean_val_loss"] = mean_val_loss(level);
      if (both) summary[level]["pretrain_mean_val_loss"] = mean_val_loss(level, true);
    }
  }
  j["summary"] = summary;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Harnesses

namespace {

TaskData restrict(const TaskData& data, const std::vector<std::string>& tasks) {
  TaskData out;
  for (const auto& t : tasks) out[t] = data.at(t);
  return out;
}

std::map<std::string, std::string> digests_for(const ExperimentData& data,
                                               const std::vector<std::string>& tasks) {
  std::map<std::string, std::string> out;
  for (const auto& [key, d] : data.digests) {
    const std::string task = key.substr(0, key.find('/'));
    if (std::find(tasks.begin(), tasks.end(), task) != tasks.end()) out[key] = d;
  }
  return out;
}

// Trains one cell from scratch on `train` and evaluates on `test`, once
// after pretraining and again after instruction tuning.
ExperimentCell train_cell(const TrainConfig& config, const TaskRegistry& registry, const CausalLM& lm,
                          const TaskData& train, const TaskData& val, const TaskData& test) {
  MergedModel model = build_model(config, registry, lm);
  AdamState optimizer;
  pretrain_multitask(model, optimizer, train, config);
  ExperimentCell cell;
  cell.seed = config.seed;
  cell.tasks = config.task_list(registry);
  cell.stage = "pretrain";
  cell.reports = evaluate(model, test);
  cell.val_loss = validation_loss(model, val);
  cell.trainable_params = model.params.numel();
  cell.frozen_params = model.lm.params.numel();
  if (config.tune_epochs == 0 || config.direct_head) return cell;

  InstructionData pairs;
  for (const auto& [task, samples] : train) pairs[task] = make_instruction_pairs(registry, samples, config.seed);
  TrainConfig tune = config;
  tune.epochs = config.tune_epochs;
  instruct_tune(model, optimizer, pairs, tune);
  cell.stage = "tune";
  cell.pretrain_reports = std::move(cell.reports);
  cell.pretrain_val_loss = std::move(cell.val_loss);
  cell.reports = evaluate(model, test);
  cell.val_loss = validation_loss(model, val);
  return cell;
}

std::string describe(const ExperimentCell& c, const std::string& kind) {
  std::string line = kind + " level=" + c.level + " seed=" + std::to_string(c.seed);
  for (const auto& r : c.reports) {
    char buf[96];
    std::snprintf(buf, sizeof buf, " %s=%.4f", r.task.c_str(), r.value);
    line += buf;
  }
  return line;
}

void check_levels(const std::vector<std::string>& levels) {
  if (levels.size() < 2) throw ConfigError("an ablation needs at least 2 levels");
}

}  // namespace

ExperimentResult ablate_modality_ratio(const TrainConfig& base, const TaskRegistry& registry,
                                       const std::vector<std::string>& levels,
                                       const std::vector<std::uint64_t>& seeds,
                                       const ProgressFn& progress) {
  check_levels(levels);
  if (seeds.empty()) throw ConfigError("no seeds given");
  std::vector<ModalityRatio> ratios;
  for (const auto& l : levels) ratios.push_back(ModalityRatio::parse(l));
  base.validate(registry);
  ExperimentResult result;
  result.kind = "ablate-modality";
  result.levels = levels;
  result.seeds = seeds;
  const auto tasks = base.task_list(registry);
  for (std::uint64_t seed : seeds) {
    TrainConfig config = base;
    config.seed = seed;
    const ExperimentData data = make_experiment_data(registry, tasks, config, seed);
    const CausalLM lm = build_config_lm(config, registry);
    for (std::size_t i = 0; i < levels.size(); ++i) {
      config.modality_ratio = ratios[i];
      TaskData train, val, test;
      for (const auto& t : tasks) {
        train[t] = apply_modality_ratio(data.train.at(t), ratios[i], seed);
        val[t] = apply_modality_ratio(data.val.at(t), ratios[i], seed + 1);
        test[t] = apply_modality_ratio(data.test.at(t), ratios[i], seed + 2);
      }
      ExperimentCell cell = train_cell(config, registry, lm, train, val, test);
      cell.level = levels[i];
      cell.data_digests = data.digests;
      if (progress) progress(describe(cell, result.kind));
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

std::vector<std::string> task_subset(const std::vector<std::string>& all, const std::string& probe,
                                     const std::string& level) {
  if (std::find(all.begin(), all.end(), probe) == all.end()) {
    throw ConfigError("probe task '" + probe + "' is not in the task set");
  }
  std::vector<std::string> order{probe};
  std::vector<std::string> rest;
  for (const auto& t : all) {
    if (t != probe) rest.push_back(t);
  }
  std::sort(rest.begin(), rest.end());
  order.insert(order.end(), rest.begin(), rest.end());
  std::size_t keep = 1;
  if (level != "single") {
    double f = 0;
    try {
      std::size_t used = 0;
      f = std::stod(level, &used);
      if (used != level.size()) throw std::invalid_argument(level);
    } catch (const std::exception&) {
      throw ConfigError("task ratio level '" + level + "' is neither 'single' nor a number");
    }
    if (!(f > 0 && f <= 1)) throw ConfigError("task ratio level must lie in (0, 1]");
    keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(order.size()))));
  }
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

ExperimentResult ablate_task_ratio(const TrainConfig& base, const TaskRegistry& registry,
                                   const std::string& probe, const std::vector<std::string>& levels,
                                   const std::vector<std::uint64_t>& seeds,
                                   const ProgressFn& progress) {
  check_levels(levels);
  if (seeds.empty()) throw ConfigError("no seeds given");
  base.validate(registry);
  const auto all = base.task_list(registry);
  std::vector<std::vector<std::string>> subsets;
  for (const auto& l : levels) subsets.push_back(task_subset(all, probe, l));
  ExperimentResult result;
  result.kind = "ablate-task";
  result.levels = levels;
  result.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    TrainConfig config = base;
    config.seed = seed;
    const ExperimentData data = make_experiment_data(registry, all, config, seed);
    const CausalLM lm = build_config_lm(config, registry);
    for (std::size_t i = 0; i < levels.size(); ++i) {
      config.tasks = subsets[i];
      ExperimentCell cell = train_cell(config, registry, lm, restrict(data.train, subsets[i]),
                                       restrict(data.val, subsets[i]), restrict(data.test, {probe}));
      cell.level = levels[i];
      cell.data_digests = digests_for(data, subsets[i]);
      if (progress) progress(describe(cell, result.kind));
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

ExperimentResult fewshot_eval(const Checkpoint& base, const TaskRegistry& registry,
                              const std::string& target, const std::vector<std::size_t>& ks,
                              const std::vector<std::uint64_t>& seeds, const TrainConfig& config,
                              const ProgressFn& progress, const AdaptedFn& on_adapted) {
  const TaskSpec& spec = registry.get(target);
  if (base.model.has_task(target)) {
    throw ConfigError("target task '" + target + "' was part of pretraining; few-shot needs a held-out task");
  }
  if (ks.empty() || seeds.empty()) throw ConfigError("few-shot needs k levels and seeds");
  ExperimentResult result;
  result.kind = "fewshot:" + target;
  for (std::size_t k : ks) result.levels.push_back(std::to_string(k));
  result.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    TrainConfig cfg = config;
    cfg.seed = seed;
    const ExperimentData data = make_experiment_data(registry, {target}, cfg, seed);
    const auto& train = data.train.at(target);
    for (std::size_t k : ks) {
      if (k > train.size()) {
        throw ConfigError("k=" + std::to_string(k) + " exceeds the " + std::to_string(train.size()) +
                          " training samples");
      }
      MergedModel model = base.model.clone_trainable();
      model.add_task(target, seed);
      const auto shots = fewshot_subset(spec, train, k, seed);
      AdamState optimizer;
      adapt_task(model, optimizer, target, shots, cfg.fewshot_steps, cfg);
      ExperimentCell cell;
      cell.level = std::to_string(k);
      cell.seed = seed;
      cell.tasks = {target};
      cell.stage = "adapt";
      cell.data_digests = data.digests;
      cell.data_digests["shots"] = samples_digest(registry, shots);
      cell.reports = evaluate(model, data.test);
      cell.val_loss = validation_loss(model, data.val);
      cell.trainable_params = model.params.numel();
      cell.frozen_params = model.lm.params.numel();
      if (progress) progress(describe(cell, result.kind));
      if (on_adapted) on_adapted(cell, model, optimizer);
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

ExperimentResult scaling_run(const TrainConfig& base, const TaskRegistry& registry,
                             const std::vector<std::string>& presets,
                             const std::vector<std::uint64_t>& seeds, const ProgressFn& progress) {
  if (presets.empty() || seeds.empty()) throw ConfigError("scaling needs presets and seeds");
  base.validate(registry);
  ExperimentResult result;
  result.kind = "scale";
  result.levels = presets;
  result.seeds = seeds;
  const auto tasks = base.task_list(registry);
  for (std::uint64_t seed : seeds) {
    TrainConfig config = base;
    config.seed = seed;
    const ExperimentData data = make_experiment_data(registry, tasks, config, seed);
    for (const auto& preset : presets) {
      config.lm_preset = preset;
      const CausalLM lm = build_config_lm(config, registry);
      ExperimentCell cell = train_cell(config, registry, lm, data.train, data.val, data.test);
      cell.level = preset;
      cell.data_digests = data.digests;
      if (progress) progress(describe(cell, result.kind));
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

IOTLM_NAMESPACE_END
