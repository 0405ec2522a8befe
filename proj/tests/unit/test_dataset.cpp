// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>

#include "iotlm/dataset.hpp"

using namespace iotlm;

namespace {

const TaskRegistry& registry() {
  static const TaskRegistry r = TaskRegistry::default_registry();
  return r;
}

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "iotlm_unit";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::vector<std::uint64_t> ids(const std::vector<SensorSample>& s) {
  std::vector<std::uint64_t> out;
  for (const auto& x : s) out.push_back(x.sample_id);
  return out;
}

}  // namespace

TEST_CASE("generators are deterministic and well formed") {
  for (const auto& name : registry().names()) {
    const TaskSpec& spec = registry().get(name);
    const auto a = gen_task_data(registry(), name, 6, 42);
    const auto b = gen_task_data(registry(), name, 6, 42);
    CHECK(a == b);
    CHECK(a != gen_task_data(registry(), name, 6, 43));
    // Sample i does not depend on n.
    CHECK(gen_task_data(registry(), name, 3, 42)[2] == a[2]);
    for (const auto& s : a) {
      CHECK(s.task_id == spec.id);
      CHECK(s.payloads.size() == spec.modalities.size());
      CHECK(s.latent.size() == latent_layout(spec).total);
      if (spec.is_classification()) {
        CHECK(s.class_id >= 0);
        CHECK(static_cast<std::size_t>(s.class_id) < spec.classes.size());
      } else {
        CHECK(s.target.size() == spec.out_dim);
      }
      for (const auto& [kind, payload] : s.payloads) {
        std::visit([](const auto& p) { CHECK_NOTHROW(p.validate()); }, payload);
      }
    }
  }
}

TEST_CASE("gaze labels stay on the screen") {
  for (const auto& s : gen_task_data(registry(), "gaze", 300, 1)) {
    CHECK(s.target[0] >= 0);
    CHECK(s.target[0] <= 12.8f);
    CHECK(s.target[1] >= 0);
    CHECK(s.target[1] <= 6.4f);
  }
}

TEST_CASE("full latent explains the label better than any single view") {
  const TaskSpec& spec = registry().get("gaze");
  const auto samples = gen_task_data(registry(), "gaze", 400, 7);
  const double full = latent_least_squares_mse(spec, samples);
  CHECK(full < 1e-6);
  for (ModalityKind kind : spec.modalities) CHECK(latent_least_squares_mse(spec, samples, kind) > full);
}

TEST_CASE("instruction pairs") {
  for (const auto& name : registry().names()) {
    const TaskSpec& spec = registry().get(name);
    const auto samples = gen_task_data(registry(), name, 20, 3);
    const auto pairs = make_instruction_pairs(registry(), samples, 9);
    CHECK(pairs == make_instruction_pairs(registry(), samples, 9));
    CHECK(instruction_template_count(spec) >= 2);
    std::set<std::string> used;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& p = pairs[i];
      used.insert(p.instruction);
      CHECK(p.base == samples[i]);
      CHECK(p.answer.rfind(" ", 0) == 0);
      if (spec.is_classification()) {
        const std::string& truth = spec.classes[static_cast<std::size_t>(p.base.class_id)];
        CHECK(std::find(p.options.begin(), p.options.end(), truth) != p.options.end());
        CHECK(p.answer.find(truth) != std::string::npos);
      } else if (name == "depth") {
        // The dense map is summarized by its mean, in metres.
        double mean_mm = 0;
        for (Real v : p.base.target) mean_mm += v;
        mean_mm /= static_cast<double>(p.base.target.size());
        const auto parsed = parse_numeric_answer(p.answer);
        REQUIRE(parsed.size() == 1);
        CHECK(std::abs(parsed[0] - mean_mm / 1000.0) <= 0.005 + 1e-9);
      } else {
        const auto parsed = parse_numeric_answer(p.answer);
        const std::size_t shown = std::min(parsed.size(), p.base.target.size());
        CHECK(shown >= std::min<std::size_t>(2, p.base.target.size()));
        for (std::size_t k = 0; k < shown; ++k) {
          CHECK(std::abs(parsed[k] - p.base.target[k]) <= 0.005 + 1e-9);
        }
      }
    }
    CHECK(used.size() >= 2);
  }
}

TEST_CASE("records round trip") {
  std::vector<SensorSample> all;
  for (const auto& name : registry().names()) {
    auto s = gen_task_data(registry(), name, 13, 11);
    all.insert(all.end(), s.begin(), s.end());
  }
  all.resize(100);
  const std::string path = temp_path("round.jsonl");
  const std::string digest = write_records(registry(), path, all);
  CHECK(digest == file_digest(path));
  const RecordFile back = read_records(registry(), path, false);
  CHECK(back.samples == all);
  const RecordFile stripped = read_records(registry(), path, true);
  for (const auto& s : stripped.samples) CHECK(s.latent.empty());

  const auto pairs = make_instruction_pairs(registry(), std::span(all).first(10), 2);
  write_records(registry(), path, pairs);
  const RecordFile with = read_records(registry(), path, false);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    REQUIRE(with.instructions[i].has_value());
    CHECK(*with.instructions[i] == pairs[i]);
  }

  CHECK(parse_records(registry(), "", true).samples.empty());

  std::istringstream lines(read_file(path));
  std::string text, line;
  for (int i = 0; std::getline(lines, line); ++i) text += (i == 2 ? line.substr(0, line.size() / 2) : line) + "\n";
  try {
    parse_records(registry(), text, true);
    FAIL("corrupt line accepted");
  } catch (const FormatError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(read_records(registry(), temp_path("missing.jsonl"), true), Error);
}

TEST_CASE("dataset splits") {
  const auto samples = gen_task_data(registry(), "touch", 50, 1);
  const Split all_train = split_dataset(samples, {1, 0, 0}, 3);
  CHECK(all_train.train.size() == 50);
  CHECK(all_train.val.empty());
  CHECK(all_train.test.empty());

  const Split s = split_dataset(samples, {0.7, 0.15, 0.15}, 3);
  auto merged = ids(s.train);
  for (const auto* part : {&s.val, &s.test}) {
    const auto more = ids(*part);
    merged.insert(merged.end(), more.begin(), more.end());
  }
  std::sort(merged.begin(), merged.end());
  auto original = ids(samples);
  std::sort(original.begin(), original.end());
  CHECK(merged == original);

  const Split again = split_dataset(samples, {0.7, 0.15, 0.15}, 3);
  CHECK(ids(again.train) == ids(s.train));
  CHECK(ids(split_dataset(samples, {0.7, 0.15, 0.15}, 4).train) != ids(s.train));
  CHECK_THROWS_AS(split_dataset(samples, {0.7, 0.7, 0.15}, 3), ConfigError);
}

TEST_CASE("few-shot subsets") {
  const TaskSpec& gesture = registry().get("gesture");
  const auto train = gen_task_data(registry(), "gesture", 60, 2);
  CHECK(fewshot_subset(gesture, train, 0, 1).empty());
  CHECK(fewshot_subset(gesture, train, train.size(), 1).size() == train.size());
  const auto ten = fewshot_subset(gesture, train, 10, 1);
  REQUIRE(ten.size() == 10);
  std::map<std::int64_t, int> per_class;
  for (const auto& s : ten) ++per_class[s.class_id];
  CHECK(per_class.size() == 5);
  for (auto [c, n] : per_class) CHECK(n == 2);
  CHECK(ids(fewshot_subset(gesture, train, 10, 1)) == ids(ten));

  const TaskSpec& gaze = registry().get("gaze");
  const auto g = gen_task_data(registry(), "gaze", 30, 2);
  CHECK(fewshot_subset(gaze, g, 7, 1).size() == 7);
}

TEST_CASE("modality ratio") {
  const auto samples = gen_task_data(registry(), "activity", 100, 5);
  CHECK(apply_modality_ratio(samples, ModalityRatio::parse("1.0"), 1) == samples);
  for (const auto& s : apply_modality_ratio(samples, ModalityRatio::parse("single"), 1)) {
    CHECK(s.payloads.size() == 1);
  }
  const auto half = apply_modality_ratio(samples, ModalityRatio::parse("0.5"), 1);
  const auto reduced = std::count_if(half.begin(), half.end(), [](const SensorSample& s) { return s.payloads.size() == 1; });
  CHECK(reduced == 50);
  // The kept modality is the first in canonical order.
  for (const auto& s : half) {
    if (s.payloads.size() == 1) CHECK(s.payloads.begin()->first == ModalityKind::IMU);
  }
  CHECK(ModalityRatio::parse("0.25").str() == "0.25");
  CHECK(ModalityRatio::parse("single").single);
  CHECK_THROWS_AS(ModalityRatio::parse("1.5"), ConfigError);
  CHECK_THROWS_AS(ModalityRatio::parse("most"), ConfigError);
}
