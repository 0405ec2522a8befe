// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails. `--only 3,4` restricts the run.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "iotlm/chat.hpp"
#include "iotlm/checkpoint.hpp"
#include "iotlm/experiments.hpp"
#include "iotlm/gradcheck.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace iotlm;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "iotlm_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// In-process CLI invocation; a non-zero status throws with the captured stderr.
std::string iotlm_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  std::istringstream in;
  const int code = cli::run(args, out, err, in);
  if (code != cli::kOk) {
    throw std::runtime_error("iotlm " + args.front() + " exited " + std::to_string(code) + ": " + err.str());
  }
  return out.str();
}

std::vector<std::uint8_t> lm_bytes(const CausalLM& lm) { return params_serialize(lm.params); }

// Stub-pretrained tiny LM shared by the learnability and dialog criteria.
const CausalLM& shared_lm(const TaskRegistry& registry) {
  static std::optional<CausalLM> lm;
  if (!lm) {
    TrainConfig config;
    config.seed = 1;
    lm = build_config_lm(config, registry);
  }
  return *lm;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const Clock clock;
  const GradcheckReport report = run_gradcheck();
  const double seconds = clock.seconds();
  double worst = 0;
  std::string worst_name;
  for (const auto& e : report.entries) {
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
  }
  return {report.passed && seconds < 60,
          fmt("%zu checks, max rel error %.2e (%s), %.1f s", report.entries.size(), worst,
              worst_name.c_str(), seconds)};
}

Outcome frozen_base(const TaskRegistry& registry) {
  const fs::path dir = scratch("frozen");
  const std::string cfg_text =
      R"({"tasks": ["gaze", "gesture"], "lm_steps": 40, "epochs": 2, "samples_per_task": 40,
          "lr": 0.001, "prefix_len": 4, "adapter_hidden": 16, "fewshot_steps": 5,
          "encoder": {"width": 16, "patch": 8, "window": 16, "stride": 16, "token_cap": 8}})";
  std::ofstream(dir / "cfg.json") << cfg_text;
  const std::string cfg = (dir / "cfg.json").string();

  TrainConfig config;
  config.merge_text(cfg_text);
  config.seed = 5;
  const auto initial = lm_bytes(build_config_lm(config, registry));

  iotlm_cli({"gen-data", "--config", cfg, "--seed", "5", "--out", (dir / "data").string()});
  iotlm_cli({"pretrain", "--config", cfg, "--seed", "5", "--data", (dir / "data").string(), "--out",
             (dir / "pre").string()});
  iotlm_cli({"tune", "--config", cfg, "--seed", "5", "--checkpoint", (dir / "pre/checkpoint.bin").string(),
             "--data", (dir / "data").string(), "--out", (dir / "tune").string()});
  iotlm_cli({"fewshot", "--config", cfg, "--seed", "5", "--checkpoint", (dir / "tune/checkpoint.bin").string(),
             "--target", "touch", "--k", "0,5", "--seeds", "1", "--save-adapted", "--out",
             (dir / "fewshot").string()});

  std::vector<fs::path> checkpoints{dir / "pre/checkpoint.bin", dir / "tune/checkpoint.bin"};
  for (const auto& entry : fs::directory_iterator(dir / "fewshot/adapted")) checkpoints.push_back(entry.path());
  std::sort(checkpoints.begin(), checkpoints.end());
  std::size_t identical = 0;
  for (const auto& path : checkpoints) {
    const Checkpoint ckpt = checkpoint_load(path.string(), registry);
    identical += lm_bytes(ckpt.model.lm) == initial;
  }
  return {identical == checkpoints.size() && checkpoints.size() == 4,
          fmt("%zu/%zu checkpoints carry a byte-identical frozen LM (%zu bytes)", identical,
              checkpoints.size(), initial.size())};
}

Outcome safe_start(const TaskRegistry& registry) {
  TrainConfig config;
  config.lm_steps = 0;
  config.seed = 3;
  std::size_t exact = 0, total = 0;
  Rng rng(17);
  for (InsertionMode mode : {InsertionMode::InputPrefix, InsertionMode::PerLayerPrefix}) {
    config.insertion = mode;
    config.insertion_layers = mode == InsertionMode::PerLayerPrefix ? std::vector<std::size_t>{0, 1}
                                                                    : std::vector<std::size_t>{};
    const MergedModel model = build_model(config, registry);
    for (int prompt = 0; prompt < 10; ++prompt) {
      const std::string& task = model.tasks[rng.below(model.tasks.size())];
      auto samples = gen_task_data(registry, task, 1, 100 + prompt);
      strip_latents(samples);
      std::vector<TokenId> tokens(1 + rng.below(24));
      for (TokenId& t : tokens) t = static_cast<TokenId>(rng.below(256));
      const SensorSample* one[] = {&samples[0]};
      const std::vector<std::vector<TokenId>> text{tokens};
      const MergedOutput merged = merged_forward(model, one, task, &text);
      const Tensor& task_prefix = model.params.get("task." + task + ".prefix");
      const LMOutput frozen = lm_forward(model.lm, &task_prefix, tokens);
      const auto a = merged.logits.data();
      const auto b = frozen.logits.data();
      exact += std::equal(a.begin(), a.end(), b.begin(), b.end());
      ++total;
    }
  }
  return {exact == total, fmt("%zu/%zu prompts bit-exact (both insertion modes)", exact, total)};
}

Outcome metric_oracles() {
  Rng rng(2026);
  std::size_t mismatches = 0, instances = 0;
  const auto real_vec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0, 5);
    return v;
  };
  const auto ids = [&](std::size_t n, std::size_t classes) {
    std::vector<std::int64_t> v(n);
    for (auto& x : v) x = static_cast<std::int64_t>(rng.below(classes));
    return v;
  };
  const auto check_real = [&](double got, double want) {
    mismatches += !(std::abs(got - want) <= 1e-9);
    ++instances;
  };
  const auto check_count = [&](double got, double want) {
    mismatches += got != want;
    ++instances;
  };

  for (int i = 0; i < 100; ++i) {
    // 2-D gaze points.
    const std::size_t n = 1 + rng.below(40);
    const auto p = real_vec(n * 2), t = real_vec(n * 2);
    check_real(metric_mean_euclidean(p, t, 2), oracle::mean_euclidean(p, t, 2, 2));
  }
  for (int i = 0; i < 100; ++i) {
    // 24 joint-angle triplets per pose sample.
    const std::size_t n = 1 + rng.below(6);
    const auto p = real_vec(n * 72), t = real_vec(n * 72);
    check_real(metric_mean_euclidean(p, t, 3), oracle::mean_euclidean(p, t, 72, 3));
  }
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 1 + rng.below(600);
    const auto p = real_vec(n), t = real_vec(n);
    check_real(metric_mae(p, t), oracle::mae(p, t));
  }
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 1 + rng.below(60);
    const auto p = ids(n, 5), t = ids(n, 5);
    check_count(metric_accuracy(p, t), oracle::accuracy(p, t));
  }
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 1 + rng.below(60);
    const auto p = ids(n, 6), t = ids(n, 6);
    check_count(metric_balanced_accuracy(p, t, 6), oracle::balanced_accuracy(p, t));
  }
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 1 + rng.below(40), k = 8;
    std::vector<double> flat;
    std::vector<std::vector<double>> rows;
    for (std::size_t s = 0; s < n; ++s) {
      std::vector<double> row(k);
      double total = 0;
      for (double& x : row) total += (x = std::exp(rng.normal(0, 2)));
      for (double& x : row) x /= total;
      rows.push_back(row);
      flat.insert(flat.end(), row.begin(), row.end());
    }
    const auto t = ids(n, k);
    const double threshold = rng.uniform(0.2, 0.8);
    check_count(metric_event_f1(flat, t, k, threshold, 7), oracle::event_f1(rows, t, threshold, 7));
  }
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 1 + rng.below(6);
    const auto p = real_vec(n * 63), t = real_vec(n * 63);
    check_real(metric_epe(p, t), oracle::mean_euclidean(p, t, 63, 3));
  }

  // Hand-built confusion table: 4 classes, class 3 is Other, threshold 0.5.
  const std::vector<double> probs{
      0.70, 0.10, 0.10, 0.10,  // target 0, confident hit         -> tp0
      0.40, 0.30, 0.20, 0.10,  // target 0, below threshold        -> fn0
      0.10, 0.80, 0.05, 0.05,  // target 0, confident wrong class  -> fp1 fn0
      0.10, 0.60, 0.20, 0.10,  // target 1, confident hit          -> tp1
      0.05, 0.05, 0.10, 0.80,  // target 2, argmax is Other        -> fn2
      0.10, 0.10, 0.60, 0.20,  // target Other, false alarm        -> fp2
  };
  const std::vector<std::int64_t> targets{0, 0, 0, 1, 2, 3};
  const EventF1Result table = event_f1(probs, targets, 4, 0.5, 3);
  const auto counts = [&](std::size_t c) {
    const auto& e = table.per_class[c];
    return std::array<std::size_t, 3>{e.tp, e.fp, e.fn};
  };
  const bool table_ok = counts(0) == std::array<std::size_t, 3>{1, 0, 2} &&
                        counts(1) == std::array<std::size_t, 3>{1, 1, 0} &&
                        counts(2) == std::array<std::size_t, 3>{0, 1, 1} &&
                        counts(3) == std::array<std::size_t, 3>{0, 0, 0} &&
                        std::abs(table.macro_f1 - (0.5 + 2.0 / 3.0 + 0.0) / 3.0) < 1e-12;

  return {mismatches == 0 && table_ok,
          fmt("%zu/%zu oracle instances agree over 7 metric uses; 6-sample event table %s",
              instances - mismatches, instances, table_ok ? "matches" : "differs")};
}

Outcome learnability(const TaskRegistry& registry) {
  TrainConfig config;
  config.seed = 1;
  config.tasks = {"activity", "gaze", "gesture", "touch"};
  const CausalLM& lm = shared_lm(registry);
  const Clock clock;
  MergedModel model = build_model(config, registry, lm);
  TaskData train, test;
  for (const auto& task : config.tasks) {
    auto samples = gen_task_data(registry, task, 2000 / config.tasks.size(), 11);
    strip_latents(samples);
    Split split = split_dataset(samples, config.split, 3);
    train[task] = std::move(split.train);
    test[task] = std::move(split.test);
  }

  // Constant-mean predictor fitted on the training split.
  std::vector<double> mean(2, 0.0);
  for (const auto& s : train["gaze"]) {
    for (std::size_t d = 0; d < 2; ++d) mean[d] += s.target[d] / static_cast<double>(train["gaze"].size());
  }
  std::vector<double> constant, truth;
  for (const auto& s : test["gaze"]) {
    constant.insert(constant.end(), mean.begin(), mean.end());
    truth.insert(truth.end(), s.target.begin(), s.target.end());
  }
  const double baseline = oracle::mean_euclidean(constant, truth, 2, 2);

  AdamState optimizer;
  pretrain_multitask(model, optimizer, train, config);
  double gaze = NAN;
  for (const auto& r : evaluate(model, test)) {
    if (r.task == "gaze") gaze = r.value;
  }
  const double seconds = clock.seconds();
  return {gaze <= 0.5 * baseline && seconds < 600,
          fmt("gaze %.3f cm vs constant-mean %.3f cm (ratio %.2f), %.0f s", gaze, baseline,
              gaze / baseline, seconds)};
}

// Trend experiments share a reduced budget: random frozen LM, 8 prefix
// tokens, 200 samples per task, 15 epochs at lr 1e-3, 3 seeds.
TrainConfig trend_config() {
  TrainConfig config;
  config.lm_steps = 0;
  config.prefix_len = 8;
  config.samples_per_task = 200;
  config.epochs = 15;
  config.lr = 1e-3;
  config.fewshot_steps = 100;
  config.tune_epochs = 5;
  return config;
}

const std::vector<std::string> kRatioLevels{"single", "0.25", "0.5", "1.0"};
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

Outcome modality_trend(const TaskRegistry& registry) {
  TrainConfig config = trend_config();
  config.tasks = {"activity", "gaze"};
  const ExperimentResult r = ablate_modality_ratio(config, registry, kRatioLevels, kSeeds);
  std::string detail;
  bool ok = true;
  for (const auto& task : config.tasks) {
    const double single = r.mean_error("single", task), full = r.mean_error("1.0", task);
    ok = ok && full <= single;
    detail += fmt("%s%s error single %.3f -> full %.3f", detail.empty() ? "" : "; ", task.c_str(), single, full);
  }
  return {ok, detail};
}

Outcome task_trend(const TaskRegistry& registry) {
  const TrainConfig config = trend_config();
  const ExperimentResult r = ablate_task_ratio(config, registry, "gaze", kRatioLevels, kSeeds);
  const double single = r.mean_error("single", "gaze"), full = r.mean_error("1.0", "gaze");
  return {full <= single, fmt("gaze error single-task %.3f -> all tasks %.3f", single, full)};
}

Outcome fewshot_trend(const TaskRegistry& registry) {
  TrainConfig config = trend_config();
  config.seed = 1;
  config.tasks = {"activity", "depth", "event", "gesture", "pose", "recon3d"};
  Checkpoint base;
  base.config = config;
  base.model = build_model(config, registry);
  base.optimizer.lr = config.lr;
  TaskData train;
  for (const auto& task : config.tasks) {
    auto samples = gen_task_data(registry, task, config.samples_per_task, config.seed);
    strip_latents(samples);
    train[task] = split_dataset(samples, config.split, config.seed).train;
  }
  pretrain_multitask(base.model, base.optimizer, train, config);

  std::string detail;
  bool ok = true;
  for (const std::string target : {"gaze", "touch"}) {
    const ExperimentResult r = fewshot_eval(base, registry, target, {0, 5, 10, 20}, kSeeds, config);
    const double k0 = r.mean_error("0", target), k20 = r.mean_error("20", target);
    ok = ok && k20 <= k0;
    detail += fmt("%s%s error k=0 %.3f -> k=20 %.3f", detail.empty() ? "" : "; ", target.c_str(), k0, k20);
  }
  return {ok, detail};
}

Outcome scaling_trend(const TaskRegistry& registry) {
  TrainConfig config = trend_config();
  config.tasks = {"gaze", "gesture"};
  const std::vector<std::string> presets{"tiny", "small", "medium"};
  const ExperimentResult r = scaling_run(config, registry, presets, kSeeds);
  std::vector<std::size_t> frozen, total;
  for (const auto& preset : presets) {
    for (const auto& c : r.cells) {
      if (c.level == preset) {
        frozen.push_back(c.frozen_params);
        total.push_back(c.frozen_params + c.trainable_params);
        break;
      }
    }
  }
  const auto increasing = [](const std::vector<std::size_t>& v) {
    return v.size() == 3 && v[0] < v[1] && v[1] < v[2];
  };
  const double tiny = r.mean_val_loss("tiny"), medium = r.mean_val_loss("medium");
  return {medium <= tiny + 0.05 && increasing(frozen) && increasing(total),
          fmt("val loss tiny %.3f small %.3f medium %.3f; params %zu < %zu < %zu", tiny,
              r.mean_val_loss("small"), medium, total[0], total[1], total[2])};
}

Outcome generator_structure(const TaskRegistry& registry) {
  std::size_t beaten = 0, views = 0;
  double worst_margin = INFINITY;
  for (const auto& spec : registry.tasks()) {
    const auto samples = gen_task_data(registry, spec.name, 1000, 42);
    const double full = latent_least_squares_mse(spec, samples);
    for (ModalityKind kind : spec.modalities) {
      const double view = latent_least_squares_mse(spec, samples, kind);
      beaten += full < view;
      ++views;
      worst_margin = std::min(worst_margin, view - full);
    }
  }
  return {beaten == views, fmt("full latent beats %zu/%zu single-modality views across %zu tasks (min gap %.3g)",
                               beaten, views, registry.tasks().size(), worst_margin)};
}

Outcome dialog(const TaskRegistry& registry) {
  const fs::path dir = scratch("dialog");
  TrainConfig config;
  config.seed = 1;
  config.lr = 1e-3;
  config.epochs = 150;
  config.tasks = {"gesture"};
  MergedModel model = build_model(config, registry, shared_lm(registry));
  auto samples = gen_task_data(registry, "gesture", 100, 5);
  auto pairs = make_instruction_pairs(registry, samples, 9);
  for (auto& p : pairs) p.base.latent.clear();
  const std::string records = (dir / "gesture.train.jsonl").string();
  write_records(registry, records, pairs);

  InstructionData data;
  data["gesture"] = pairs;
  AdamState optimizer;
  instruct_tune(model, optimizer, data, config);

  std::string script;
  for (std::size_t i = 0; i < pairs.size(); ++i) script += ":load " + records + " " + std::to_string(i) + "\n:ask\n";
  script += ":quit\n";
  std::istringstream in(script);
  std::ostringstream transcript;
  ChatSession session(model, transcript);
  session.run(in);

  std::vector<std::string> answers;
  std::istringstream lines(transcript.str());
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("answer:", 0) == 0) answers.push_back(line);
  }
  std::size_t correct = 0;
  const TaskSpec& spec = registry.get("gesture");
  for (std::size_t i = 0; i < std::min(answers.size(), pairs.size()); ++i) {
    const std::string& name = spec.classes[static_cast<std::size_t>(pairs[i].base.class_id)];
    correct += answers[i].find(name) != std::string::npos;
  }
  const double rate = static_cast<double>(correct) / static_cast<double>(pairs.size());
  return {answers.size() == pairs.size() && rate >= 0.9,
          fmt("%zu/%zu scripted answers name the correct gesture (%.0f%%)", correct, pairs.size(), 100 * rate)};
}

// Every file under `dir`, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files[fs::relative(entry.path(), dir).string()] = read_file(entry.path().string());
  }
  return files;
}

Outcome determinism() {
  const fs::path dir = scratch("determinism");
  std::ofstream(dir / "cfg.json")
      << R"({"tasks": ["gaze", "gesture"], "lm_steps": 20, "epochs": 2, "samples_per_task": 30,
             "lr": 0.001, "prefix_len": 4, "adapter_hidden": 16, "fewshot_steps": 4, "tune_epochs": 1,
             "encoder": {"width": 16, "patch": 8, "window": 16, "stride": 16, "token_cap": 8}})";
  const std::string cfg = (dir / "cfg.json").string();
  const auto out = [&](const char* name) { return (dir / name).string(); };
  std::ofstream(dir / "script.txt") << ":load " << out("data") << "/gesture.train.jsonl 2\n:ask\nwhich gesture?\n:quit\n";

  const std::vector<std::vector<std::string>> commands{
      {"gen-data", "--config", cfg, "--out", out("data")},
      {"pretrain", "--config", cfg, "--data", out("data"), "--out", out("pre")},
      {"tune", "--config", cfg, "--checkpoint", out("pre") + "/checkpoint.bin", "--data", out("data"), "--out", out("tune")},
      {"eval", "--config", cfg, "--checkpoint", out("tune") + "/checkpoint.bin", "--data", out("data"), "--out", out("eval")},
      {"chat", "--checkpoint", out("tune") + "/checkpoint.bin", "--script", out("script.txt"), "--out", out("chat")},
      {"fewshot", "--config", cfg, "--checkpoint", out("pre") + "/checkpoint.bin", "--target", "touch", "--k", "0,5",
       "--seeds", "1,2", "--save-adapted", "--out", out("fewshot")},
      {"ablate-modality", "--config", cfg, "--levels", "single,1.0", "--seeds", "1", "--out", out("modality")},
      {"ablate-task", "--config", cfg, "--probe", "gaze", "--levels", "single,1.0", "--seeds", "1", "--out", out("task")},
      {"scale", "--config", cfg, "--presets", "tiny,small", "--seeds", "1", "--out", out("scale")},
      {"gradcheck", "--out", out("gradcheck")},
  };
  std::size_t stable = 0, files = 0;
  std::string unstable;
  for (const auto& args : commands) {
    const fs::path target = args.back();
    iotlm_cli(args);
    const auto first = snapshot(target);
    fs::remove_all(target);
    iotlm_cli(args);
    const auto second = snapshot(target);
    files += first.size();
    if (first == second && !first.empty()) {
      ++stable;
    } else {
      unstable += " " + args.front();
    }
  }
  return {stable == commands.size(),
          fmt("%zu/%zu commands reproduce all %zu output files byte for byte%s%s", stable, commands.size(),
              files, unstable.empty() ? "" : "; differs:", unstable.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"iotlm acceptance run", "iotlm_acceptance"};
  std::vector<int> only;
  app.add_option("--only", only, "Criteria to run (comma separated)")->delimiter(',')->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);

  const TaskRegistry registry = TaskRegistry::default_registry();
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", [] { return gradient_correctness(); }},
      {"frozen base invariant", [&] { return frozen_base(registry); }},
      {"safe start", [&] { return safe_start(registry); }},
      {"metric oracles", [] { return metric_oracles(); }},
      {"learnability", [&] { return learnability(registry); }},
      {"modality ablation trend", [&] { return modality_trend(registry); }},
      {"task ablation trend", [&] { return task_trend(registry); }},
      {"few-shot trend", [&] { return fewshot_trend(registry); }},
      {"scaling trend", [&] { return scaling_trend(registry); }},
      {"generator information structure", [&] { return generator_structure(registry); }},
      {"dialog demo", [&] { return dialog(registry); }},
      {"determinism", [] { return determinism(); }},
  };

  const std::set<int> selected(only.begin(), only.end());
  int run = 0, failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const Clock clock;
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    ++run;
    failed += !outcome.passed;
    std::cout << (outcome.passed ? "PASS" : "FAIL") << fmt(" %2d %-32s ", id, criteria[i].first) << outcome.detail
              << fmt(" [%.0f s]", clock.seconds()) << std::endl;
  }
  std::cout << run - failed << "/" << run << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
