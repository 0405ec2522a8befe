// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include <json.hpp>

#include "iotlm/bytes.hpp"

IOTLM_NAMESPACE_BEGIN

using json = nlohmann::json;

LossBalancing loss_balancing_from_name(std::string_view name) {
  if (name == "uniform") return LossBalancing::Uniform;
  if (name == "grad_norm") return LossBalancing::GradNorm;
  throw ConfigError("unknown loss balancing '" + std::string(name) + "' (uniform|grad_norm)");
}

std::string_view loss_balancing_name(LossBalancing mode) {
  return mode == LossBalancing::Uniform ? "uniform" : "grad_norm";
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate(const TaskRegistry& registry) const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch == 0) throw ConfigError("batch must be at least 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be a positive number");
  if (!(lm_lr > 0) || !std::isfinite(lm_lr)) throw ConfigError("lm_lr must be a positive number");
  if (text_weight < 0 || head_weight < 0) throw ConfigError("loss weights must be non-negative");
  if (!(grad_norm_momentum >= 0 && grad_norm_momentum < 1)) {
    throw ConfigError("grad_norm_momentum must lie in [0, 1)");
  }
  if (!(noise_scale >= 0)) throw ConfigError("noise_scale must be non-negative");
  double total = 0;
  for (double f : split) {
    if (!(f >= 0)) throw ConfigError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  for (const auto& t : tasks) {
    if (!registry.contains(t)) throw ConfigError("unknown task '" + t + "'");
  }
  std::set<std::string> unique(tasks.begin(), tasks.end());
  if (unique.size() != tasks.size()) throw ConfigError("task list has duplicates");
  if (modality_ratio.ratio < 0 || modality_ratio.ratio > 1) {
    throw ConfigError("modality ratio must lie in [0, 1]");
  }
  encoder.validate();
  const LMConfig lm = LMConfig::preset(lm_preset);
  AdapterConfig adapter;
  adapter.prefix_len = prefix_len;
  adapter.hidden = adapter_hidden;
  adapter.mode = insertion;
  adapter.layers = insertion_layers;
  adapter.validate(lm.layers);
}

std::vector<std::string> TrainConfig::task_list(const TaskRegistry& registry) const {
  std::vector<std::string> out = tasks.empty() ? registry.names() : tasks;
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

json config_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["batch"] = c.batch;
  j["seed"] = c.seed;
  j["balancing"] = std::string(loss_balancing_name(c.balancing));
  j["tasks"] = c.tasks;
  j["modality_ratio"] = c.modality_ratio.str();
  j["lm_preset"] = c.lm_preset;
  j["insertion"] = std::string(insertion_mode_name(c.insertion));
  j["insertion_layers"] = c.insertion_layers;
  j["prefix_len"] = c.prefix_len;
  j["adapter_hidden"] = c.adapter_hidden;
  j["direct_head"] = c.direct_head;
  j["encoder"] = {{"width", c.encoder.width},   {"patch", c.encoder.patch},
                  {"window", c.encoder.window}, {"stride", c.encoder.stride},
                  {"token_cap", c.encoder.token_cap}};
  j["lm_steps"] = c.lm_steps;
  j["lm_lr"] = c.lm_lr;
  j["text_weight"] = c.text_weight;
  j["head_weight"] = c.head_weight;
  j["samples_per_task"] = c.samples_per_task;
  j["noise_scale"] = c.noise_scale;
  j["split"] = c.split;
  j["fewshot_steps"] = c.fewshot_steps;
  j["tune_epochs"] = c.tune_epochs;
  j["grad_norm_momentum"] = c.grad_norm_momentum;
  return j;
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

void merge_json(TrainConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") c.epochs = get_as<std::size_t>(v, key);
    else if (key == "lr") c.lr = get_as<double>(v, key);
    else if (key == "batch") c.batch = get_as<std::size_t>(v, key);
    else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
    else if (key == "balancing") c.balancing = loss_balancing_from_name(get_as<std::string>(v, key));
    else if (key == "tasks") c.tasks = get_as<std::vector<std::string>>(v, key);
    else if (key == "modality_ratio") {
      c.modality_ratio = v.is_number() ? ModalityRatio::parse(std::to_string(v.get<double>()))
                                       : ModalityRatio::parse(get_as<std::string>(v, key));
    } else if (key == "lm_preset") c.lm_preset = get_as<std::string>(v, key);
    else if (key == "insertion") c.insertion = insertion_mode_from_name(get_as<std::string>(v, key));
    else if (key == "insertion_layers") c.insertion_layers = get_as<std::vector<std::size_t>>(v, key);
    else if (key == "prefix_len") c.prefix_len = get_as<std::size_t>(v, key);
    else if (key == "adapter_hidden") c.adapter_hidden = get_as<std::size_t>(v, key);
    else if (key == "direct_head") c.direct_head = get_as<bool>(v, key);
    else if (key == "encoder") {
      if (!v.is_object()) throw ConfigError("config key 'encoder' must be an object");
      for (const auto& [ek, ev] : v.items()) {
        const std::string name = "encoder." + ek;
        if (ek == "width") c.encoder.width = get_as<std::size_t>(ev, name);
        else if (ek == "patch") c.encoder.patch = get_as<std::size_t>(ev, name);
        else if (ek == "window") c.encoder.window = get_as<std::size_t>(ev, name);
        else if (ek == "stride") c.encoder.stride = get_as<std::size_t>(ev, name);
        else if (ek == "token_cap") c.encoder.token_cap = get_as<std::size_t>(ev, name);
        else throw ConfigError("unknown config key '" + name + "'");
      }
    } else if (key == "lm_steps") c.lm_steps = get_as<std::size_t>(v, key);
    else if (key == "lm_lr") c.lm_lr = get_as<double>(v, key);
    else if (key == "text_weight") c.text_weight = get_as<double>(v, key);
    else if (key == "head_weight") c.head_weight = get_as<double>(v, key);
    else if (key == "samples_per_task") c.samples_per_task = get_as<std::size_t>(v, key);
    else if (key == "noise_scale") c.noise_scale = get_as<double>(v, key);
    else if (key == "split") c.split = get_as<std::array<double, 3>>(v, key);
    else if (key == "fewshot_steps") c.fewshot_steps = get_as<std::size_t>(v, key);
    else if (key == "tune_epochs") c.tune_epochs = get_as<std::size_t>(v, key);
    else if (key == "grad_norm_momentum") c.grad_norm_momentum = get_as<double>(v, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
}

}  // namespace

std::string TrainConfig::to_text() const { return config_json(*this).dump(2); }

void TrainConfig::merge_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  merge_json(*this, j);
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  c.merge_text(text);
  return c;
}

// ---------------------------------------------------------------------------
// Model construction

CausalLM build_config_lm(const TrainConfig& config, const TaskRegistry& registry) {
  std::optional<std::string> corpus;
  LMPretrainOptions options;
  options.steps = config.lm_steps;
  options.lr = config.lm_lr;
  if (config.lm_steps > 0) {
    // The corpus covers every registered task so one base LM serves all
    // task subsets of an experiment.
    corpus = template_corpus(registry, registry.names(), 64, config.seed);
  }
  return build_frozen_lm(LMConfig::preset(config.lm_preset), corpus, config.seed, options);
}

MergedModel build_model(const TrainConfig& config, const TaskRegistry& registry, CausalLM lm) {
  config.validate(registry);
  AdapterConfig adapter;
  adapter.prefix_len = config.prefix_len;
  adapter.hidden = config.adapter_hidden;
  adapter.mode = config.insertion;
  adapter.layers = config.insertion_layers;
  adapter.direct_head = config.direct_head;
  return MergedModel::create(std::move(lm), config.encoder, adapter, registry,
                             config.task_list(registry), config.seed);
}

MergedModel build_model(const TrainConfig& config, const TaskRegistry& registry) {
  config.validate(registry);
  return build_model(config, registry, build_config_lm(config, registry));
}

// ---------------------------------------------------------------------------
// Logs

std::string TrainLog::to_text() const {
  json j;
  j["stage"] = stage;
  j["epochs"] = json::array();
  for (const auto& e : epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"steps", e.steps},
                           {"loss", e.loss},
                           {"grad_norm", e.grad_norm},
                           {"balanced_norm", e.balanced_norm}});
  }
  return j.dump();
}

std::string TrainLog::digest() const {
  const std::string text = to_text();
  return hex64(fnv1a64(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
}

// ---------------------------------------------------------------------------
// Shared training loop

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError("non-finite " + what + "; training diverged");
}

// Loss of one task batch given dataset indices.
using StepLoss = std::function<Tensor(const std::string& task, std::span<const std::size_t> rows)>;

struct LoopTask {
  std::string name;
  std::size_t size = 0;
};

struct LoopState {
  std::map<std::string, double> ema;  // running grad norms for grad_norm balancing
};

// One optimizer step over a group of (task, batch) pairs. Returns per-task
// (loss, raw norm, balanced norm).
struct StepStats {
  double loss = 0, norm = 0, balanced = 0;
};

std::map<std::string, StepStats> optimizer_step(
    MergedModel& model, AdamState& optimizer, const TrainConfig& config, LoopState& state,
    const std::vector<std::pair<std::string, std::vector<std::size_t>>>& group,
    const StepLoss& step_loss) {
  std::map<std::string, StepStats> stats;
  std::vector<GradMap> grads;
  grads.reserve(group.size());
  for (const auto& [task, rows] : group) {
    model.params.zero_grads();
    const Tensor loss = step_loss(task, rows);
    const double value = loss.item();
    require_finite(value, "loss for task '" + task + "'");
    backward(loss);
    grads.push_back(collect_grads(model.params));
    const double norm = grad_norm(grads.back());
    require_finite(norm, "gradient for task '" + task + "'");
    stats[task] = {value, norm, norm};
  }

  std::vector<double> weights(group.size(), 1.0);
  if (config.balancing == LossBalancing::GradNorm && group.size() > 1) {
    double target = 0;
    for (const auto& [task, rows] : group) {
      const double n = stats[task].norm;
      auto it = state.ema.find(task);
      if (it == state.ema.end()) state.ema[task] = n;
      else it->second = config.grad_norm_momentum * it->second + (1 - config.grad_norm_momentum) * n;
      target += state.ema[task];
    }
    target /= static_cast<double>(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      auto& s = stats[group[i].first];
      weights[i] = s.norm > 0 ? target / s.norm : 1.0;
      s.balanced = s.norm * weights[i];
    }
  }

  GradMap total = std::move(grads[0]);
  if (weights[0] != 1.0) {
    for (auto& [path, g] : total) {
      for (Real& v : g) v = static_cast<Real>(v * weights[0]);
    }
  }
  for (std::size_t i = 1; i < grads.size(); ++i) {
    for (auto& [path, g] : total) {
      const auto& add = grads[i].at(path);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += static_cast<Real>(add[k] * weights[i]);
    }
  }
  adam_update(model.params, optimizer, total);
  return stats;
}

TrainLog run_epochs(MergedModel& model, AdamState& optimizer, const TrainConfig& config,
                    const std::vector<LoopTask>& tasks, const StepLoss& step_loss,
                    const std::string& stage, std::uint64_t stream) {
  optimizer.lr = config.lr;
  TrainLog log;
  log.stage = stage;
  LoopState state;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::map<std::string, std::vector<std::vector<std::size_t>>> batches;
    std::size_t max_batches = 0;
    for (const auto& t : tasks) {
      Rng rng(config.seed, stream + epoch * 4096 + model.registry.get(t.name).id);
      const auto order = shuffled(t.size, rng);
      auto& list = batches[t.name];
      for (std::size_t b = 0; b < order.size(); b += config.batch) {
        list.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + config.batch)));
      }
      max_batches = std::max(max_batches, list.size());
    }
    EpochLog entry;
    entry.epoch = epoch;
    std::map<std::string, std::size_t> counts;
    for (std::size_t j = 0; j < max_batches; ++j) {
      std::vector<std::pair<std::string, std::vector<std::size_t>>> group;
      for (const auto& t : tasks) {
        const auto& list = batches[t.name];
        if (j < list.size()) group.emplace_back(t.name, list[j]);
      }
      const auto stats = optimizer_step(model, optimizer, config, state, group, step_loss);
      for (const auto& [task, s] : stats) {
        entry.loss[task] += s.loss;
        entry.grad_norm[task] += s.norm;
        entry.balanced_norm[task] += s.balanced;
        ++counts[task];
      }
      ++entry.steps;
    }
    for (auto& [task, n] : counts) {
      entry.loss[task] /= static_cast<double>(n);
      entry.grad_norm[task] /= static_cast<double>(n);
      entry.balanced_norm[task] /= static_cast<double>(n);
    }
    log.epochs.push_back(std::move(entry));
  }
  return log;
}

std::vector<const SensorSample*> pick(std::span<const SensorSample> samples,
                                      std::span<const std::size_t> rows) {
  std::vector<const SensorSample*> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(&samples[r]);
  return out;
}

void check_task_data(const MergedModel& model, const std::string& task, std::size_t n) {
  if (!model.has_task(task)) throw ConfigError("model has no parameters for task '" + task + "'");
  if (n == 0) throw ConfigError("dataset for task '" + task + "' is empty");
}

}  // namespace

TrainLog pretrain_multitask(MergedModel& model, AdamState& optimizer, const TaskData& data,
                            const TrainConfig& config) {
  std::vector<LoopTask> tasks;
  for (const auto& t : config.task_list(model.registry)) {
    auto it = data.find(t);
    if (it == data.end()) throw ConfigError("no dataset for task '" + t + "'");
    check_task_data(model, t, it->second.size());
    tasks.push_back({t, it->second.size()});
  }
  const StepLoss step = [&](const std::string& task, std::span<const std::size_t> rows) {
    const auto ptrs = pick(data.at(task), rows);
    const MergedOutput out = merged_forward(model, ptrs, task);
    return task_loss(model.registry.get(task), out.head, ptrs);
  };
  return run_epochs(model, optimizer, config, tasks, step, "pretrain", 0x707274);
}

// ---------------------------------------------------------------------------
// Instruction tuning

InstructionTokens tokenize_instruction(const InstructionSample& sample) {
  InstructionTokens out;
  out.tokens = instruction_prompt(sample.instruction);
  out.answer_start = out.tokens.size();
  const auto answer = ByteTokenizer::tokenize(sample.answer);
  out.tokens.insert(out.tokens.end(), answer.begin(), answer.end());
  out.tokens.push_back(ByteTokenizer::kEos);
  return out;
}

std::vector<TokenId> instruction_prompt(const std::string& instruction) {
  std::vector<TokenId> out{ByteTokenizer::kBos};
  const auto body = ByteTokenizer::tokenize(instruction + " Answer:");
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

TextBatch make_text_batch(std::span<const InstructionTokens> rows) {
  if (rows.empty()) throw ContractError("make_text_batch: empty batch");
  std::size_t len = 0;
  for (const auto& r : rows) len = std::max(len, r.tokens.size());
  TextBatch out;
  out.targets.assign(rows.size() * len, kIgnoreIndex);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const auto& r = rows[b];
    std::vector<TokenId> padded = r.tokens;
    padded.resize(len, ByteTokenizer::kPad);
    // Position j predicts token j+1; only answer/EOS tokens are supervised.
    for (std::size_t j = 0; j + 1 < r.tokens.size(); ++j) {
      if (j + 1 >= r.answer_start) {
        out.targets[b * len + j] = static_cast<std::int64_t>(r.tokens[j + 1]);
      }
    }
    out.tokens.push_back(std::move(padded));
  }
  return out;
}

TrainLog instruct_tune(MergedModel& model, AdamState& optimizer, const InstructionData& data,
                       const TrainConfig& config) {
  if (model.adapter.direct_head) throw ConfigError("instruction tuning needs the LM pathway");
  std::vector<LoopTask> tasks;
  std::map<std::string, std::vector<InstructionTokens>> tokens;
  std::map<std::string, std::vector<SensorSample>> bases;
  for (const auto& [task, pairs] : data) {
    check_task_data(model, task, pairs.size());
    tasks.push_back({task, pairs.size()});
    for (const auto& p : pairs) {
      tokens[task].push_back(tokenize_instruction(p));
      bases[task].push_back(p.base);
    }
  }
  if (tasks.empty()) throw ConfigError("no instruction data");
  const StepLoss step = [&](const std::string& task, std::span<const std::size_t> rows) {
    const auto ptrs = pick(bases.at(task), rows);
    std::vector<InstructionTokens> chosen;
    for (std::size_t r : rows) chosen.push_back(tokens.at(task)[r]);
    const TextBatch batch = make_text_batch(chosen);
    const MergedOutput out = merged_forward(model, ptrs, task, &batch.tokens);
    const Tensor text = cross_entropy(out.logits, batch.targets);
    const Tensor head = task_loss(model.registry.get(task), out.head, ptrs);
    return add(scale(text, static_cast<Real>(config.text_weight)),
               scale(head, static_cast<Real>(config.head_weight)));
  };
  return run_epochs(model, optimizer, config, tasks, step, "tune", 0x74756e);
}

TrainLog adapt_task(MergedModel& model, AdamState& optimizer, const std::string& task,
                    std::span<const SensorSample> samples, std::size_t steps,
                    const TrainConfig& config) {
  TrainLog log;
  log.stage = "adapt";
  if (samples.empty() || steps == 0) return log;
  check_task_data(model, task, samples.size());
  optimizer.lr = config.lr;
  LoopState state;
  const std::size_t batch = std::min(config.batch, samples.size());
  const StepLoss step = [&](const std::string& t, std::span<const std::size_t> rows) {
    const auto ptrs = pick(samples, rows);
    const MergedOutput out = merged_forward(model, ptrs, t);
    return task_loss(model.registry.get(t), out.head, ptrs);
  };
  std::vector<std::size_t> order;
  std::size_t cursor = 0, pass = 0;
  EpochLog entry;
  entry.epoch = 1;
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<std::size_t> rows;
    while (rows.size() < batch) {
      if (cursor == order.size()) {
        Rng rng(config.seed, 0x616461 + (pass++ << 8));
        order = shuffled(samples.size(), rng);
        cursor = 0;
      }
      rows.push_back(order[cursor++]);
    }
    const auto stats = optimizer_step(model, optimizer, config, state, {{task, rows}}, step);
    entry.loss[task] += stats.at(task).loss;
    entry.grad_norm[task] += stats.at(task).norm;
    entry.balanced_norm[task] += stats.at(task).balanced;
    ++entry.steps;
  }
  entry.loss[task] /= static_cast<double>(steps);
  entry.grad_norm[task] /= static_cast<double>(steps);
  entry.balanced_norm[task] /= static_cast<double>(steps);
  log.epochs.push_back(std::move(entry));
  return log;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::int64_t argmax_row(std::span<const Real> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return static_cast<std::int64_t>(best);
}

std::vector<double> softmax_row(std::span<const Real> row) {
  double hi = row[0];
  for (Real v : row) hi = std::max(hi, static_cast<double>(v));
  std::vector<double> out(row.size());
  double total = 0;
  for (std::size_t i = 0; i < row.size(); ++i) total += out[i] = std::exp(row[i] - hi);
  for (double& v : out) v /= total;
  return out;
}

MetricReport report_for(const TaskSpec& spec, std::span<const SensorSample> samples,
                        const std::vector<Real>& head, const std::map<std::string, double>& gates) {
  MetricReport r;
  r.task_id = spec.id;
  r.task = spec.name;
  r.metric = std::string(metric_name(spec.metric));
  r.units = spec.units;
  r.count = samples.size();
  r.gate_weights = gates;
  const std::size_t d = spec.out_dim;
  if (spec.is_classification()) {
    std::vector<std::int64_t> preds, targets;
    std::vector<double> probs;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::span<const Real> row(head.data() + i * d, d);
      preds.push_back(argmax_row(row));
      targets.push_back(samples[i].class_id);
      if (spec.metric == MetricKind::EventF1) {
        const auto p = softmax_row(row);
        probs.insert(probs.end(), p.begin(), p.end());
      }
    }
    switch (spec.metric) {
      case MetricKind::Accuracy: r.value = metric_accuracy(preds, targets); break;
      case MetricKind::BalancedAccuracy:
        r.value = metric_balanced_accuracy(preds, targets, d);
        break;
      case MetricKind::EventF1: {
        const auto res = event_f1(probs, targets, d, 0.5, spec.other_class);
        r.value = res.macro_f1;
        for (std::size_t c = 0; c < d; ++c) {
          if (static_cast<std::int64_t>(c) == spec.other_class) continue;
          const auto& k = res.per_class[c];
          const double denom = 2.0 * k.tp + k.fp + k.fn;
          if (denom > 0) r.per_class[spec.classes[c]] = 2.0 * k.tp / denom;
        }
        return r;
      }
      default: throw ContractError("classification task with a regression metric");
    }
    // Per-class recall.
    std::vector<std::size_t> hit(d, 0), support(d, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const auto t = static_cast<std::size_t>(targets[i]);
      ++support[t];
      if (preds[i] == targets[i]) ++hit[t];
    }
    for (std::size_t c = 0; c < d; ++c) {
      if (support[c] > 0) r.per_class[spec.classes[c]] = static_cast<double>(hit[c]) / support[c];
    }
    return r;
  }
  std::vector<double> preds = denormalize(spec, head);
  std::vector<double> targets;
  targets.reserve(preds.size());
  for (const auto& s : samples) {
    if (s.target.size() != d) throw DataError("sample target size does not match task '" + spec.name + "'");
    targets.insert(targets.end(), s.target.begin(), s.target.end());
  }
  switch (spec.metric) {
    case MetricKind::MeanEuclidean: r.value = metric_mean_euclidean(preds, targets, spec.point_dim); break;
    case MetricKind::MAE: r.value = metric_mae(preds, targets); break;
    case MetricKind::EPE: r.value = metric_epe(preds, targets); break;
    default: throw ContractError("regression task with a classification metric");
  }
  return r;
}

template <typename Fn>
void for_batches(std::size_t n, std::size_t batch, Fn&& fn) {
  if (batch == 0) throw ConfigError("evaluation batch must be at least 1");
  for (std::size_t b = 0; b < n; b += batch) fn(b, std::min(n, b + batch));
}

}  // namespace

std::vector<MetricReport> evaluate(const MergedModel& model, const TaskData& data,
                                   std::size_t batch) {
  NoGradGuard no_grad;
  std::vector<MetricReport> out;
  for (const auto& [task, samples] : data) {
    const TaskSpec& spec = model.registry.get(task);
    check_task_data(model, task, samples.size());
    std::vector<Real> head;
    std::map<std::string, double> gate_sum;
    std::map<std::string, std::size_t> gate_count;
    for_batches(samples.size(), batch, [&](std::size_t lo, std::size_t hi) {
      std::vector<const SensorSample*> ptrs;
      for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&samples[i]);
      const MergedOutput o = merged_forward(model, ptrs, task);
      head.insert(head.end(), o.head.data().begin(), o.head.data().end());
      for (const auto& g : o.gates) {
        for (std::size_t i = 0; i < g.kinds.size(); ++i) {
          const std::string name(modality_name(g.kinds[i]));
          gate_sum[name] += g.weights[i];
          ++gate_count[name];
        }
      }
    });
    for (auto& [name, v] : gate_sum) v /= static_cast<double>(gate_count[name]);
    out.push_back(report_for(spec, samples, head, gate_sum));
  }
  return out;
}

std::map<std::string, double> validation_loss(const MergedModel& model, const TaskData& data,
                                              std::size_t batch) {
  NoGradGuard no_grad;
  std::map<std::string, double> out;
  for (const auto& [task, samples] : data) {
    check_task_data(model, task, samples.size());
    double total = 0;
    for_batches(samples.size(), batch, [&](std::size_t lo, std::size_t hi) {
      std::vector<const SensorSample*> ptrs;
      for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&samples[i]);
      const MergedOutput o = merged_forward(model, ptrs, task);
      total += task_loss(model.registry.get(task), o.head, ptrs).item() * static_cast<double>(hi - lo);
    });
    out[task] = total / static_cast<double>(samples.size());
  }
  return out;
}

std::string answer_question(const MergedModel& model, const SensorSample& sample,
                            const std::string& task, const std::string& instruction,
                            std::size_t max_new, GateSummary* gates) {
  const LMInput cond = sensor_conditioning(model, sample, task, gates);
  const auto prompt = instruction_prompt(instruction);
  const std::size_t budget = model.lm.config.max_seq - cond.prefix_len;
  if (prompt.size() >= budget) {
    throw LengthError("question of " + std::to_string(prompt.size()) +
                      " tokens leaves no room to answer within the context");
  }
  const auto ids = generate_greedy(model.lm, cond, prompt, std::min(max_new, budget - prompt.size()));
  return ByteTokenizer::detokenize(ids);
}

IOTLM_NAMESPACE_END
