// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "iotlm/bytes.hpp"
#include "iotlm/chat.hpp"
#include "iotlm/checkpoint.hpp"
#include "iotlm/experiments.hpp"
#include "iotlm/gradcheck.hpp"

namespace iotlm::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Shared option state

struct Options {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> tasks;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
  std::string data_dir;
  std::string checkpoint;
  std::string corpus;
  bool direct_head = false;
  std::size_t samples = 0;
  std::string split = "test";
  std::vector<std::string> levels{"single", "0.25", "0.5", "1.0"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string probe = "gaze";
  std::string target;
  std::vector<std::size_t> ks{0, 5, 10, 20};
  bool save_adapted = false;
  std::vector<std::string> presets{"tiny", "small", "medium"};
  std::string records;
  std::size_t index = 0;
  std::string script;
  double h = 1e-3;
  double tolerance = 1e-3;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--seed", o.seed, "Random seed (overrides the config file)");
  cmd->add_option("--config", o.config_path, "JSON config mirroring TrainConfig fields");
  cmd->add_option("--out", o.out_dir, "Output directory")->capture_default_str();
}

void add_training(CLI::App* cmd, Options& o) {
  cmd->add_option("--tasks", o.tasks, "Task subset (comma separated)")->delimiter(',');
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--lr", o.lr, "Learning rate");
  cmd->add_option("--batch", o.batch, "Batch size");
}

TrainConfig load_config(const Options& o, const TaskRegistry& registry) {
  TrainConfig c;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + o.config_path + "'");
    std::stringstream text;
    text << in.rdbuf();
    c.merge_text(text.str());
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.tasks.empty()) c.tasks = o.tasks;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.lr) c.lr = *o.lr;
  if (o.batch) c.batch = *o.batch;
  if (o.direct_head) c.direct_head = true;
  c.validate(registry);
  return c;
}

// Everything a run consumed and produced, written as manifest.json.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args) {
    j_["command"] = std::move(command);
    j_["args"] = args;
    j_["inputs"] = json::object();
    j_["outputs"] = json::object();
    j_["generator_version"] = kGeneratorVersion;
    j_["checkpoint_version"] = kCheckpointVersion;
  }
  void config(const TrainConfig& c) {
    j_["config"] = json::parse(c.to_text());
    j_["seed"] = c.seed;
  }
  void input(const std::string& path) { j_["inputs"][path] = file_digest(path); }
  void generated(const std::map<std::string, std::string>& digests) {
    for (const auto& [k, v] : digests) j_["generated_data"][k] = v;
  }
  void set(const std::string& key, json value) { j_[key] = std::move(value); }
  void output(const std::string& name, const std::string& digest) { j_["outputs"][name] = digest; }
  std::string write(const fs::path& dir) const {
    const std::string text = j_.dump(2) + "\n";
    write_file((dir / "manifest.json").string(), text);
    return hex64(fnv1a64(text));
  }

 private:
  json j_;
};

std::string write_text(const fs::path& dir, const std::string& name, const std::string& text,
                       Manifest& manifest) {
  write_file((dir / name).string(), text);
  const std::string digest = hex64(fnv1a64(text));
  manifest.output(name, digest);
  return digest;
}

fs::path prepare_out(const Options& o) {
  fs::path dir(o.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + o.out_dir + "': " + ec.message());
  return dir;
}

// Splits either read from --data (<task>.<split>.jsonl) or generated.
struct LoadedData {
  TaskData train, val, test;
  InstructionData train_pairs;
  std::map<std::string, std::string> digests;
};

LoadedData load_data(const Options& o, const TaskRegistry& registry, const TrainConfig& config,
                     const std::vector<std::string>& tasks, Manifest& manifest) {
  LoadedData d;
  if (o.data_dir.empty()) {
    const ExperimentData gen = make_experiment_data(registry, tasks, config, config.seed);
    d.train = gen.train;
    d.val = gen.val;
    d.test = gen.test;
    d.digests = gen.digests;
    manifest.generated(gen.digests);
    return d;
  }
  for (const auto& task : tasks) {
    for (const char* split : {"train", "val", "test"}) {
      const std::string path = (fs::path(o.data_dir) / (task + "." + split + ".jsonl")).string();
      if (!fs::exists(path)) {
        if (std::string(split) == "train") throw DataError("missing dataset " + path);
        continue;
      }
      RecordFile file = read_records(registry, path, true);
      for (const auto& s : file.samples) {
        if (registry.get(s.task_id).name != task) {
          throw DataError(path + " holds a '" + registry.get(s.task_id).name + "' record");
        }
      }
      manifest.input(path);
      d.digests[task + "/" + split] = file_digest(path);
      if (std::string(split) == "train") {
        for (std::size_t i = 0; i < file.samples.size(); ++i) {
          if (file.instructions[i]) d.train_pairs[task].push_back(*file.instructions[i]);
        }
        d.train[task] = std::move(file.samples);
      } else if (std::string(split) == "val") {
        d.val[task] = std::move(file.samples);
      } else {
        d.test[task] = std::move(file.samples);
      }
    }
  }
  return d;
}

void print_reports(std::ostream& out, const std::vector<MetricReport>& reports) {
  for (const auto& r : reports) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-9s %-18s %10.4f %s (n=%zu)", r.task.c_str(), r.metric.c_str(),
                  r.value, r.units.c_str(), r.count);
    out << buf << "\n";
  }
}

void print_last_epoch(std::ostream& out, const TrainLog& log) {
  if (log.epochs.empty()) return;
  const EpochLog& e = log.epochs.back();
  out << log.stage << " epoch " << e.epoch << ":";
  for (const auto& [task, loss] : e.loss) {
    char buf[64];
    std::snprintf(buf, sizeof buf, " %s=%.4f", task.c_str(), loss);
    out << buf;
  }
  out << "\n";
}

Checkpoint load_checkpoint(const Options& o, const TaskRegistry& registry, Manifest& manifest) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Checkpoint ckpt = checkpoint_load(o.checkpoint, registry);
  manifest.input(o.checkpoint);
  return ckpt;
}

std::vector<std::string> model_tasks(const TrainConfig& config, const MergedModel& model,
                                     const TaskRegistry& registry) {
  if (config.tasks.empty()) return model.tasks;
  for (const auto& t : config.task_list(registry)) {
    if (!model.has_task(t)) throw ConfigError("checkpoint has no parameters for task '" + t + "'");
  }
  return config.task_list(registry);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen_data(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const TaskRegistry registry = TaskRegistry::default_registry();
  TrainConfig config = load_config(o, registry);
  if (o.samples > 0) config.samples_per_task = o.samples;
  const fs::path dir = prepare_out(o);
  Manifest manifest("gen-data", args);
  manifest.config(config);
  for (const auto& task : config.task_list(registry)) {
    const auto samples = gen_task_data(registry, task, config.samples_per_task, config.seed,
                                       config.noise_scale);
    const Split split = split_dataset(samples, config.split, config.seed);
    const std::pair<const char*, const std::vector<SensorSample>*> parts[] = {
        {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
    for (const auto& [name, part] : parts) {
      const auto pairs = make_instruction_pairs(registry, *part, config.seed);
      const std::string file = task + "." + name + ".jsonl";
      const std::string digest = write_records(registry, (dir / file).string(), pairs);
      manifest.output(file, digest);
      out << file << " " << part->size() << " records " << digest << "\n";
    }
  }
  manifest.write(dir);
  return kOk;
}

int cmd_pretrain(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const TaskRegistry registry = TaskRegistry::default_registry();
  const TrainConfig config = load_config(o, registry);
  const fs::path dir = prepare_out(o);
  Manifest manifest("pretrain", args);
  manifest.config(config);
  const auto tasks = config.task_list(registry);
  const LoadedData data = load_data(o, registry, config, tasks, manifest);

  CausalLM lm;
  if (!o.corpus.empty()) {
    LMPretrainOptions lm_options;
    lm_options.steps = config.lm_steps;
    lm_options.lr = config.lm_lr;
    lm = build_frozen_lm(LMConfig::preset(config.lm_preset), read_file(o.corpus), config.seed, lm_options);
    manifest.input(o.corpus);
  } else {
    lm = build_config_lm(config, registry);
  }
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.model = build_model(config, registry, std::move(lm));
  const std::string initial_frozen = frozen_digest(ckpt.model.lm);
  const TrainLog log = pretrain_multitask(ckpt.model, ckpt.optimizer, data.train, config);
  if (frozen_digest(ckpt.model.lm) != initial_frozen) {
    throw ContractError("frozen LM parameters changed during pretraining");
  }
  ckpt.history.push_back({"pretrain", log.digest()});
  ckpt.data_digests = data.digests;
  print_last_epoch(out, log);

  manifest.output("checkpoint.bin", checkpoint_save((dir / "checkpoint.bin").string(), ckpt));
  write_text(dir, "log.json", log.to_text() + "\n", manifest);
  if (!data.val.empty()) {
    const auto reports = evaluate(ckpt.model, data.val);
    write_text(dir, "report.json", reports_to_text(reports) + "\n", manifest);
    print_reports(out, reports);
  }
  manifest.set("frozen_digest", initial_frozen);
  manifest.set("trainable_params", ckpt.model.params.numel());
  manifest.set("frozen_params", ckpt.model.lm.params.numel());
  manifest.write(dir);
  out << "wrote " << (dir / "checkpoint.bin").string() << "\n";
  return kOk;
}

int cmd_tune(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const TaskRegistry registry = TaskRegistry::default_registry();
  Manifest manifest("tune", args);
  Checkpoint ckpt = load_checkpoint(o, registry, manifest);
  const TrainConfig config = load_config(o, registry);
  manifest.config(config);
  const fs::path dir = prepare_out(o);
  const auto tasks = model_tasks(config, ckpt.model, registry);
  const LoadedData data = load_data(o, registry, config, tasks, manifest);
  InstructionData pairs;
  for (const auto& task : tasks) {
    auto it = data.train_pairs.find(task);
    if (it != data.train_pairs.end() && it->second.size() == data.train.at(task).size()) {
      pairs[task] = it->second;
    } else {
      pairs[task] = make_instruction_pairs(registry, data.train.at(task), config.seed);
    }
    for (auto& p : pairs[task]) p.base.latent.clear();
  }
  const std::string initial_frozen = frozen_digest(ckpt.model.lm);
  const TrainLog log = instruct_tune(ckpt.model, ckpt.optimizer, pairs, config);
  if (frozen_digest(ckpt.model.lm) != initial_frozen) {
    throw ContractError("frozen LM parameters changed during instruction tuning");
  }
  ckpt.config = config;
  ckpt.history.push_back({"tune", log.digest()});
  for (const auto& [k, v] : data.digests) ckpt.data_digests["tune:" + k] = v;
  print_last_epoch(out, log);
  manifest.output("checkpoint.bin", checkpoint_save((dir / "checkpoint.bin").string(), ckpt));
  write_text(dir, "log.json", log.to_text() + "\n", manifest);
  manifest.set("frozen_digest", initial_frozen);
  manifest.write(dir);
  out << "wrote " << (dir / "checkpoint.bin").string() << "\n";
  return kOk;
}

int cmd_eval(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const TaskRegistry registry = TaskRegistry::default_registry();
  Manifest manifest("eval", args);
  const Checkpoint ckpt = load_checkpoint(o, registry, manifest);
  TrainConfig config = load_config(o, registry);
  if (o.config_path.empty() && !o.seed) config.seed = ckpt.config.seed;
  if (o.config_path.empty()) config.samples_per_task = ckpt.config.samples_per_task;
  manifest.config(config);
  const fs::path dir = prepare_out(o);
  const auto tasks = model_tasks(config, ckpt.model, registry);
  const LoadedData data = load_data(o, registry, config, tasks, manifest);
  const TaskData* split = nullptr;
  if (o.split == "test") split = &data.test;
  else if (o.split == "val") split = &data.val;
  else if (o.split == "train") split = &data.train;
  else throw ConfigError("--split must be train, val or test");
  if (split->empty()) throw DataError("no " + o.split + " data found");
  const auto reports = evaluate(ckpt.model, *split);
  print_reports(out, reports);
  write_text(dir, "report.json", reports_to_text(reports) + "\n", manifest);
  manifest.write(dir);
  return kOk;
}

int write_result(const ExperimentResult& result, const fs::path& dir, Manifest& manifest,
                 std::ostream& out) {
  write_text(dir, "result.json", result.to_text() + "\n", manifest);
  // Tuned grids print the pretrained column under it.
  const bool both = result.has_pretrain_column();
  for (const auto& level : result.levels) {
    for (bool pretrained : {false, true}) {
      if (pretrained && !both) continue;
      out << result.kind << " level " << level << (pretrained ? " (pretrained):" : ":");
      std::vector<std::string> seen;
      for (const auto& c : result.cells) {
        if (c.level != level) continue;
        for (const auto& r : c.reports) {
          if (std::find(seen.begin(), seen.end(), r.task) != seen.end()) continue;
          seen.push_back(r.task);
          char buf[64];
          std::snprintf(buf, sizeof buf, " %s_error=%.4f", r.task.c_str(),
                        result.mean_error(level, r.task, pretrained));
          out << buf;
        }
      }
      char buf[48];
      std::snprintf(buf, sizeof buf, " val_loss=%.4f", result.mean_val_loss(level, pretrained));
      out << buf << "\n";
    }
  }
  manifest.write(dir);
  return kOk;
}

int cmd_ablate_modality(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const TaskRegistry registry = TaskRegistry::default_registry();
  const TrainConfig config = load_config(o, registry);
  const fs::path dir = prepare_out(o);
  Manifest manifest("ablate-modality", args);
  manifest.config(config);
  const auto progress = [&](const std::string& line) { out << line << "\n" << std::flush; };
  const ExperimentResult result = ablate_modality_ratio(config, registry, o.levels, o.seeds, progress);
  return write_result(result, dir, manifest, out);
}

int cmd_ablate_task(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const TaskRegistry registry = TaskRegistry::default_registry();
  const TrainConfig config = load_config(o, registry);
  const fs::path dir = prepare_out(o);
  Manifest manifest("ablate-task", args);
  manifest.config(config);
  const auto progress = [&](const std::string& line) { out << line << "\n" << std::flush; };
  const ExperimentResult result = ablate_task_ratio(config, registry, o.probe, o.levels, o.seeds, progress);
  return write_result(result, dir, manifest, out);
}

int cmd_fewshot(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const TaskRegistry registry = TaskRegistry::default_registry();
  Manifest manifest("fewshot", args);
  const Checkpoint base = load_checkpoint(o, registry, manifest);
  if (o.target.empty()) throw ConfigError("--target is required");
  const TrainConfig config = load_config(o, registry);
  manifest.config(config);
  const fs::path dir = prepare_out(o);
  const auto progress = [&](const std::string& line) { out << line << "\n" << std::flush; };
  AdaptedFn on_adapted;
  if (o.save_adapted) {
    fs::create_directories(dir / "adapted");
    on_adapted = [&](const ExperimentCell& cell, const MergedModel& model, const AdamState& opt) {
      Checkpoint ckpt;
      ckpt.config = config;
      ckpt.config.seed = cell.seed;
      ckpt.model = model;
      ckpt.optimizer = opt;
      ckpt.history = base.history;
      ckpt.history.push_back({"fewshot:" + o.target + ":k" + cell.level, ""});
      ckpt.data_digests = cell.data_digests;
      const std::string name =
          "adapted/" + o.target + "-k" + cell.level + "-seed" + std::to_string(cell.seed) + ".bin";
      manifest.output(name, checkpoint_save((dir / name).string(), ckpt));
    };
  }
  const ExperimentResult result =
      fewshot_eval(base, registry, o.target, o.ks, o.seeds, config, progress, on_adapted);
  return write_result(result, dir, manifest, out);
}

int cmd_scale(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const TaskRegistry registry = TaskRegistry::default_registry();
  const TrainConfig config = load_config(o, registry);
  const fs::path dir = prepare_out(o);
  Manifest manifest("scale", args);
  manifest.config(config);
  const auto progress = [&](const std::string& line) { out << line << "\n" << std::flush; };
  const ExperimentResult result = scaling_run(config, registry, o.presets, o.seeds, progress);
  for (const auto& preset : o.presets) {
    for (const auto& c : result.cells) {
      if (c.level == preset) {
        out << "params " << preset << ": frozen=" << c.frozen_params
            << " trainable=" << c.trainable_params << "\n";
        break;
      }
    }
  }
  return write_result(result, dir, manifest, out);
}

int cmd_chat(const Options& o, const std::vector<std::string>& args, std::ostream& out,
             std::istream& in) {
  const TaskRegistry registry = TaskRegistry::default_registry();
  Manifest manifest("chat", args);
  const Checkpoint ckpt = load_checkpoint(o, registry, manifest);
  const fs::path dir = prepare_out(o);
  std::ostringstream transcript;
  ChatSession session(ckpt.model, transcript, !o.script.empty());
  const auto flush = [&] {
    out << transcript.str() << std::flush;
    const std::string text = transcript.str();
    transcript.str("");
    return text;
  };
  std::string all;
  if (!o.records.empty()) {
    session.handle(":load " + o.records + " " + std::to_string(o.index));
    manifest.input(o.records);
    all += flush();
  }
  if (!o.script.empty()) {
    std::ifstream script(o.script);
    if (!script) throw DataError("cannot read script '" + o.script + "'");
    manifest.input(o.script);
    std::string line;
    while (std::getline(script, line)) {
      const bool more = session.handle(line);
      all += flush();
      if (!more) break;
    }
  } else {
    out << "iotlm chat; :help lists commands\n" << std::flush;
    std::string line;
    while (std::getline(in, line)) {
      const bool more = session.handle(line);
      all += flush();
      if (!more) break;
    }
  }
  write_text(dir, "transcript.txt", all, manifest);
  manifest.write(dir);
  return kOk;
}

int cmd_gradcheck(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const fs::path dir = prepare_out(o);
  Manifest manifest("gradcheck", args);
  GradcheckOptions options;
  options.h = o.h;
  options.tolerance = o.tolerance;
  options.seed = o.seed.value_or(0);
  const GradcheckReport report = run_gradcheck(options);
  json j;
  j["passed"] = report.passed;
  j["h"] = options.h;
  j["tolerance"] = options.tolerance;
  j["checks"] = json::array();
  for (const auto& e : report.entries) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-30s rel=%.3e abs=%.3e coords=%zu %s", e.name.c_str(),
                  e.max_rel_error, e.max_abs_error, e.coordinates, e.passed ? "ok" : "FAIL");
    out << buf << "\n";
    j["checks"].push_back({{"name", e.name}, {"max_rel_error", e.max_rel_error},
                           {"max_abs_error", e.max_abs_error}, {"coordinates", e.coordinates},
                           {"passed", e.passed}});
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "gradcheck %s in %.1f s", report.passed ? "passed" : "FAILED", report.seconds);
  out << buf << "\n";
  // Timing stays out of the report so reruns are byte-identical.
  write_text(dir, "gradcheck.json", j.dump(2) + "\n", manifest);
  manifest.write(dir);
  return report.passed ? kOk : kNumeric;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, std::istream& in) {
  CLI::App app{"iotlm: multisensory adapters over a frozen toy language model", "iotlm"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Write synthetic sensor records (with instruction pairs)");
  add_common(gen, o);
  gen->add_option("--tasks", o.tasks, "Task subset (comma separated)")->delimiter(',');
  gen->add_option("--samples", o.samples, "Samples per task (default: config samples_per_task)");

  auto* pre = app.add_subcommand("pretrain", "Multitask pretraining of encoders, gate and adapter");
  add_common(pre, o);
  add_training(pre, o);
  pre->add_option("--data", o.data_dir, "Directory with <task>.<split>.jsonl records");
  pre->add_option("--corpus", o.corpus, "Text corpus for stub LM pretraining (one example per line)");
  pre->add_flag("--direct-head", o.direct_head, "Heads read fused adapter tokens; no LM pass");

  auto* tune = app.add_subcommand("tune", "Instruction tuning of a pretrained checkpoint");
  add_common(tune, o);
  add_training(tune, o);
  tune->add_option("--checkpoint", o.checkpoint, "Pretrained checkpoint")->required();
  tune->add_option("--data", o.data_dir, "Directory with <task>.<split>.jsonl records");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, o);
  ev->add_option("--tasks", o.tasks, "Task subset (comma separated)")->delimiter(',');
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate")->required();
  ev->add_option("--data", o.data_dir, "Directory with <task>.<split>.jsonl records");
  ev->add_option("--split", o.split, "train, val or test")->capture_default_str();

  auto* am = app.add_subcommand("ablate-modality", "Modality-ratio ablation grid");
  add_common(am, o);
  add_training(am, o);
  am->add_option("--levels", o.levels, "Ratio levels")->delimiter(',')->capture_default_str();
  am->add_option("--seeds", o.seeds, "Seeds")->delimiter(',')->capture_default_str();

  auto* at = app.add_subcommand("ablate-task", "Task-ratio ablation grid");
  add_common(at, o);
  add_training(at, o);
  at->add_option("--probe", o.probe, "Probe task")->capture_default_str();
  at->add_option("--levels", o.levels, "Ratio levels")->delimiter(',')->capture_default_str();
  at->add_option("--seeds", o.seeds, "Seeds")->delimiter(',')->capture_default_str();

  auto* fs_cmd = app.add_subcommand("fewshot", "Few-shot adaptation to a held-out task");
  add_common(fs_cmd, o);
  add_training(fs_cmd, o);
  fs_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint pretrained without the target")->required();
  fs_cmd->add_option("--target", o.target, "Held-out task")->required();
  fs_cmd->add_option("--k", o.ks, "Shot counts")->delimiter(',')->capture_default_str();
  fs_cmd->add_option("--seeds", o.seeds, "Seeds")->delimiter(',')->capture_default_str();
  fs_cmd->add_flag("--save-adapted", o.save_adapted, "Checkpoint every adapted model");

  auto* sc = app.add_subcommand("scale", "LM size scaling grid");
  add_common(sc, o);
  add_training(sc, o);
  sc->add_option("--presets", o.presets, "LM presets")->delimiter(',')->capture_default_str();
  sc->add_option("--seeds", o.seeds, "Seeds")->delimiter(',')->capture_default_str();

  auto* chat = app.add_subcommand("chat", "Dialog over sensor records");
  add_common(chat, o);
  chat->add_option("--checkpoint", o.checkpoint, "Instruction-tuned checkpoint")->required();
  chat->add_option("--records", o.records, "Record file to load at start");
  chat->add_option("--index", o.index, "Record index for --records");
  chat->add_option("--script", o.script, "Replay commands from a file instead of stdin");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op and the merged model");
  add_common(gc, o);
  gc->add_option("--step", o.h, "Central difference step")->capture_default_str();
  gc->add_option("--tol", o.tolerance, "Maximum relative error")->capture_default_str();

  if (!args.empty() && !args[0].empty() && args[0][0] != '-') {
    if (app.get_subcommand_no_throw(args[0]) == nullptr) {
      err << "unknown subcommand '" << args[0] << "'\n" << app.help();
      return kUsage;
    }
  }

  std::vector<const char*> argv{"iotlm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kOk;
    // Show the relevant usage: the failing subcommand's, else the top level.
    const CLI::App* shown = &app;
    for (const CLI::App* sub : app.get_subcommands()) shown = sub;
    err << shown->help();
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, args, out);
    if (pre->parsed()) return cmd_pretrain(o, args, out);
    if (tune->parsed()) return cmd_tune(o, args, out);
    if (ev->parsed()) return cmd_eval(o, args, out);
    if (am->parsed()) return cmd_ablate_modality(o, args, out);
    if (at->parsed()) return cmd_ablate_task(o, args, out);
    if (fs_cmd->parsed()) return cmd_fewshot(o, args, out);
    if (sc->parsed()) return cmd_scale(o, args, out);
    if (chat->parsed()) return cmd_chat(o, args, out, in);
    if (gc->parsed()) return cmd_gradcheck(o, args, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kData;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  err << app.help();
  return kUsage;
}

}  // namespace iotlm::cli
