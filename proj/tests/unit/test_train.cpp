// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "iotlm/checkpoint.hpp"
#include "iotlm/experiments.hpp"

using namespace iotlm;

namespace {

const TaskRegistry& registry() {
  static const TaskRegistry r = TaskRegistry::default_registry();
  return r;
}

// Small enough for unit tests; the acceptance suite runs the real sizes.
TrainConfig small_config(std::vector<std::string> tasks) {
  TrainConfig c;
  c.tasks = std::move(tasks);
  c.epochs = 2;
  c.lr = 1e-3;
  c.batch = 8;
  c.lm_steps = 0;
  c.prefix_len = 4;
  c.adapter_hidden = 16;
  c.encoder.width = 16;
  c.samples_per_task = 24;
  c.fewshot_steps = 3;
  c.tune_epochs = 1;
  return c;
}

TaskData task_data(const TrainConfig& c, std::uint64_t seed = 1) {
  TaskData d;
  for (const auto& t : c.task_list(registry())) {
    auto s = gen_task_data(registry(), t, c.samples_per_task, seed);
    strip_latents(s);
    d[t] = std::move(s);
  }
  return d;
}

}  // namespace

TEST_CASE("train config text form") {
  TrainConfig c;
  CHECK(c.lr == 1e-4);
  c.tasks = {"touch", "gaze"};
  c.balancing = LossBalancing::GradNorm;
  c.modality_ratio = ModalityRatio::parse("0.25");
  c.insertion = InsertionMode::PerLayerPrefix;
  c.insertion_layers = {1};
  const TrainConfig back = TrainConfig::from_text(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.task_list(registry()) == std::vector<std::string>{"gaze", "touch"});
  CHECK(TrainConfig{}.task_list(registry()).size() == 8);

  TrainConfig m;
  m.merge_text(R"({"epochs": 3, "lr": 0.01})");
  CHECK(m.epochs == 3);
  CHECK(m.lr == 0.01);
  CHECK(m.batch == 16);
  CHECK_THROWS_AS(m.merge_text(R"({"epoch": 3})"), ConfigError);
  CHECK_THROWS_AS(m.merge_text("{not json"), ConfigError);

  TrainConfig bad;
  bad.tasks = {"weather"};
  CHECK_THROWS_AS(bad.validate(registry()), ConfigError);
  bad = TrainConfig{};
  bad.lr = -1;
  CHECK_THROWS_AS(bad.validate(registry()), ConfigError);
  CHECK(loss_balancing_from_name("grad_norm") == LossBalancing::GradNorm);
  CHECK_THROWS_AS(loss_balancing_from_name("magic"), ConfigError);
}

TEST_CASE("instruction token layout and masking") {
  InstructionSample s;
  s.instruction = "Q?";
  s.answer = " yes";
  const InstructionTokens t = tokenize_instruction(s);
  const auto prompt = instruction_prompt("Q?");
  CHECK(t.tokens.front() == ByteTokenizer::kBos);
  CHECK(t.tokens.back() == ByteTokenizer::kEos);
  CHECK(std::equal(prompt.begin(), prompt.end(), t.tokens.begin()));
  CHECK(t.answer_start == prompt.size());
  CHECK(ByteTokenizer::detokenize(std::span(t.tokens).subspan(t.answer_start)) == " yes");

  InstructionSample longer = s;
  longer.instruction = "A longer question?";
  const InstructionTokens u = tokenize_instruction(longer);
  const InstructionTokens rows[] = {t, u};
  const TextBatch batch = make_text_batch(rows);
  const std::size_t len = u.tokens.size();
  REQUIRE(batch.tokens.size() == 2);
  CHECK(batch.tokens[0].size() == len);
  CHECK(batch.tokens[0].back() == ByteTokenizer::kPad);
  for (std::size_t r = 0; r < 2; ++r) {
    const auto& row = rows[r];
    for (std::size_t i = 0; i < len; ++i) {
      // Position i predicts token i+1; only answer and EOS tokens count.
      const bool counted = i + 1 >= row.answer_start && i + 1 < row.tokens.size();
      const std::int64_t target = batch.targets[r * len + i];
      if (counted) {
        CHECK(target == static_cast<std::int64_t>(row.tokens[i + 1]));
      } else {
        CHECK(target == kIgnoreIndex);
      }
    }
  }
}

TEST_CASE("pretraining reduces loss and keeps the LM frozen") {
  TrainConfig c = small_config({"gesture"});
  c.epochs = 30;
  c.samples_per_task = 200;
  MergedModel model = build_model(c, registry());
  const std::string frozen = frozen_digest(model.lm);
  AdamState opt;
  opt.lr = c.lr;
  const TrainLog log = pretrain_multitask(model, opt, task_data(c), c);
  REQUIRE(log.epochs.size() == 30);
  CHECK(log.epochs.back().loss.at("gesture") < 0.5 * log.epochs.front().loss.at("gesture"));
  CHECK(frozen_digest(model.lm) == frozen);
}

TEST_CASE("training is deterministic in both balancing modes") {
  for (LossBalancing mode : {LossBalancing::Uniform, LossBalancing::GradNorm}) {
    TrainConfig c = small_config({"gaze", "touch"});
    c.balancing = mode;
    std::vector<std::uint8_t> bytes[2];
    for (auto& b : bytes) {
      Checkpoint ck;
      ck.config = c;
      ck.model = build_model(c, registry());
      ck.optimizer.lr = c.lr;
      const TrainLog log = pretrain_multitask(ck.model, ck.optimizer, task_data(c), c);
      CHECK(log.epochs.size() == 2);
      ck.history.push_back({"pretrain", log.digest()});
      b = checkpoint_serialize(ck);
    }
    CHECK(bytes[0] == bytes[1]);
  }
}

TEST_CASE("grad-norm balancing equalizes weighted norms") {
  TrainConfig c = small_config({"gaze", "touch"});
  c.balancing = LossBalancing::GradNorm;
  c.epochs = 3;
  MergedModel model = build_model(c, registry());
  AdamState opt;
  const TrainLog log = pretrain_multitask(model, opt, task_data(c), c);
  const auto& last = log.epochs.back();
  const double a = last.balanced_norm.at("gaze"), b = last.balanced_norm.at("touch");
  // Raw norms differ; balanced ones are pulled together.
  const double raw_ratio = last.grad_norm.at("gaze") / last.grad_norm.at("touch");
  const double balanced_ratio = a / b;
  CHECK(std::abs(std::log(balanced_ratio)) < std::abs(std::log(raw_ratio)));
}

TEST_CASE("evaluation is read only and repeatable") {
  TrainConfig c = small_config({"gaze", "event", "activity"});
  Checkpoint ck;
  ck.config = c;
  ck.model = build_model(c, registry());
  const auto data = task_data(c, 3);
  const auto before = checkpoint_serialize(ck);
  const auto r1 = evaluate(ck.model, data);
  const auto r2 = evaluate(ck.model, data);
  CHECK(checkpoint_serialize(ck) == before);
  REQUIRE(r1.size() == 3);
  CHECK(reports_to_text(r1) == reports_to_text(r2));
  for (const auto& r : r1) {
    CHECK(r.count == c.samples_per_task);
    CHECK(std::isfinite(r.value));
    CHECK_FALSE(r.gate_weights.empty());
  }
  CHECK(r1[0].metric == "balanced_accuracy");
}

TEST_CASE("a perfect head scores perfectly") {
  TrainConfig c = small_config({"gesture", "gaze"});
  c.direct_head = true;
  MergedModel model = build_model(c, registry());
  TaskData data;
  // Constant-label data: the bias alone is an oracle.
  for (const auto& t : c.task_list(registry())) {
    auto s = gen_task_data(registry(), t, 40, 4);
    strip_latents(s);
    std::vector<SensorSample> same;
    for (auto& x : s) {
      if (t == "gesture" && x.class_id != 2) continue;
      if (t == "gaze") x.target = s[0].target;
      same.push_back(x);
    }
    data[t] = same;
  }
  for (Real& b : model.params.get("task.gesture.head.bias").mutable_data()) b = 0;
  model.params.get("task.gesture.head.bias").mutable_data()[2] = 10;
  const TaskSpec& gaze = registry().get("gaze");
  const auto norm = normalize_target(gaze, data["gaze"][0].target);
  for (std::size_t i = 0; i < 2; ++i) model.params.get("task.gaze.head.bias").mutable_data()[i] = norm[i];
  for (const auto& r : evaluate(model, data)) {
    if (r.task == "gesture") CHECK(r.value == 1.0);
    if (r.task == "gaze") CHECK(r.value == doctest::Approx(0).epsilon(1e-5));
  }
}

TEST_CASE("instruction tuning keeps the LM frozen and refuses direct heads") {
  TrainConfig c = small_config({"touch"});
  MergedModel model = build_model(c, registry());
  const std::string frozen = frozen_digest(model.lm);
  auto samples = gen_task_data(registry(), "touch", 16, 5);
  strip_latents(samples);
  InstructionData pairs{{"touch", make_instruction_pairs(registry(), samples, 1)}};
  AdamState opt;
  const TrainLog log = instruct_tune(model, opt, pairs, c);
  CHECK(log.stage == "tune");
  CHECK(frozen_digest(model.lm) == frozen);
  CHECK(opt.step > 0);

  const std::string answer = answer_question(model, samples[0], "touch", pairs["touch"][0].instruction, 8);
  CHECK(answer.size() <= 8);

  TrainConfig d = c;
  d.direct_head = true;
  MergedModel direct = build_model(d, registry());
  CHECK_THROWS_AS(instruct_tune(direct, opt, pairs, d), ConfigError);
}

TEST_CASE("task subsets are nested") {
  const auto all = registry().names();
  const auto single = task_subset(all, "gaze", "single");
  const auto quarter = task_subset(all, "gaze", "0.25");
  const auto half = task_subset(all, "gaze", "0.5");
  const auto full = task_subset(all, "gaze", "1.0");
  CHECK(single == std::vector<std::string>{"gaze"});
  CHECK(quarter.size() == 2);
  CHECK(half.size() == 4);
  CHECK(full.size() == 8);
  const auto contains = [](const std::vector<std::string>& outer, const std::vector<std::string>& inner) {
    return std::includes(outer.begin(), outer.end(), inner.begin(), inner.end());
  };
  CHECK(contains(quarter, single));
  CHECK(contains(half, quarter));
  CHECK(contains(full, half));
}

TEST_CASE("experiment grids") {
  TrainConfig c = small_config({"gaze"});
  c.epochs = 1;
  c.samples_per_task = 12;
  const std::vector<std::string> levels{"single", "1.0"};
  const std::vector<std::uint64_t> seeds{1, 2};
  const ExperimentResult r = ablate_modality_ratio(c, registry(), levels, seeds);
  CHECK(r.cells.size() == 4);
  // Every level of one seed starts from the same base data.
  std::map<std::uint64_t, std::map<std::string, std::string>> base;
  for (const auto& cell : r.cells) {
    auto [it, fresh] = base.emplace(cell.seed, cell.data_digests);
    if (!fresh) CHECK(it->second == cell.data_digests);
    CHECK(cell.reports.size() == 1);
    CHECK(cell.stage == "tune");
    CHECK(cell.pretrain_reports.size() == 1);
    CHECK(std::isfinite(r.mean_error(cell.level, "gaze")));
    CHECK(std::isfinite(r.mean_error(cell.level, "gaze", true)));
  }
  CHECK(r.has_pretrain_column());
  CHECK(r.to_text().find("pretrain_mean_error") != std::string::npos);

  CHECK(base.at(1) != base.at(2));

  // Without tuning a cell reports its pretrained model only.
  c.tune_epochs = 0;
  const ExperimentResult untuned = ablate_modality_ratio(c, registry(), levels, {1});
  CHECK_FALSE(untuned.has_pretrain_column());
  for (const auto& cell : untuned.cells) CHECK(cell.stage == "pretrain");
  CHECK(untuned.mean_error("1.0", "gaze", true) == untuned.mean_error("1.0", "gaze"));

  TrainConfig f = small_config({"gaze", "gesture"});
  Checkpoint ck;
  ck.config = f;
  ck.model = build_model(f, registry());
  CHECK_THROWS_AS(fewshot_eval(ck, registry(), "gaze", {0}, {1}, f), ConfigError);

  TrainConfig pre = small_config({"gesture"});
  Checkpoint base_ck;
  base_ck.config = pre;
  base_ck.model = build_model(pre, registry());
  const auto base_bytes = checkpoint_serialize(base_ck);
  std::size_t adapted = 0;
  const ExperimentResult fs = fewshot_eval(
      base_ck, registry(), "gaze", {0, 5}, {1}, pre, {},
      [&](const ExperimentCell& cell, const MergedModel& m, const AdamState& opt) {
        ++adapted;
        CHECK(m.has_task("gaze"));
        CHECK(opt.step == (cell.level == "0" ? 0u : pre.fewshot_steps));
      });
  CHECK(fs.cells.size() == 2);
  CHECK(adapted == 2);
  CHECK(checkpoint_serialize(base_ck) == base_bytes);
}
