// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "iotlm/dataset.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args, const std::string& input = "") {
  std::ostringstream out, err;
  std::istringstream in(input);
  const int code = iotlm::cli::run(args, out, err, in);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "iotlm_cli_unit" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

}  // namespace

TEST_CASE("usage errors exit with status 1") {
  const Run none = cli({});
  CHECK(none.code == iotlm::cli::kUsage);
  const Run unknown = cli({"transmogrify"});
  CHECK(unknown.code == iotlm::cli::kUsage);
  CHECK((unknown.err + unknown.out).find("Usage") != std::string::npos);
  CHECK(cli({"eval"}).code == iotlm::cli::kUsage);  // --checkpoint missing
  CHECK(cli({"pretrain", "--epochs", "many"}).code == iotlm::cli::kUsage);
  CHECK(cli({"--help"}).code == iotlm::cli::kOk);

  const fs::path dir = scratch("usage");
  write(dir / "bad.json", R"({"epoch": 3})");
  CHECK(cli({"gen-data", "--config", (dir / "bad.json").string(), "--out", dir.string()}).code ==
        iotlm::cli::kUsage);
  CHECK(cli({"gen-data", "--tasks", "weather", "--out", dir.string()}).code == iotlm::cli::kUsage);
}

TEST_CASE("data errors exit with status 2") {
  const fs::path dir = scratch("data");
  const Run missing = cli({"eval", "--checkpoint", (dir / "none.bin").string(), "--out", dir.string()});
  CHECK(missing.code == iotlm::cli::kData);
  write(dir / "junk.bin", "definitely not a checkpoint");
  const Run junk = cli({"eval", "--checkpoint", (dir / "junk.bin").string(), "--out", dir.string()});
  CHECK(junk.code == iotlm::cli::kData);
  CHECK(junk.err.find("format error") != std::string::npos);
}

TEST_CASE("gen-data writes records and a manifest") {
  const fs::path dir = scratch("gen");
  const Run r = cli({"gen-data", "--tasks", "gesture", "--samples", "20", "--seed", "3", "--out", dir.string()});
  REQUIRE(r.code == 0);
  for (const char* split : {"train", "val", "test"}) {
    CHECK(fs::exists(dir / (std::string("gesture.") + split + ".jsonl")));
  }
  const auto reg = iotlm::TaskRegistry::default_registry();
  const auto file = iotlm::read_records(reg, (dir / "gesture.train.jsonl").string(), false);
  CHECK(file.samples.size() == 14);
  for (const auto& i : file.instructions) CHECK(i.has_value());

  const std::string manifest = iotlm::read_file((dir / "manifest.json").string());
  CHECK(manifest.find("\"command\": \"gen-data\"") != std::string::npos);
  CHECK(manifest.find("gesture.train.jsonl") != std::string::npos);

  // Same seed and config, same bytes.
  const fs::path again = scratch("gen2");
  REQUIRE(cli({"gen-data", "--tasks", "gesture", "--samples", "20", "--seed", "3", "--out", again.string()}).code == 0);
  CHECK(iotlm::file_digest((dir / "gesture.test.jsonl").string()) ==
        iotlm::file_digest((again / "gesture.test.jsonl").string()));
}

TEST_CASE("pretrain, tune, eval and chat end to end") {
  const fs::path dir = scratch("flow");
  write(dir / "cfg.json",
        R"({"lm_steps": 0, "epochs": 1, "samples_per_task": 20, "lr": 0.001, "prefix_len": 4,
            "adapter_hidden": 16, "encoder": {"width": 16, "patch": 8, "window": 16, "stride": 16, "token_cap": 8}})");
  const std::string cfg = (dir / "cfg.json").string();
  REQUIRE(cli({"gen-data", "--config", cfg, "--tasks", "gesture", "--out", (dir / "data").string()}).code == 0);
  const Run pre = cli({"pretrain", "--config", cfg, "--tasks", "gesture", "--data", (dir / "data").string(),
                       "--out", (dir / "pre").string()});
  REQUIRE(pre.code == 0);
  CHECK(fs::exists(dir / "pre" / "checkpoint.bin"));
  CHECK(fs::exists(dir / "pre" / "report.json"));
  const Run tune = cli({"tune", "--config", cfg, "--checkpoint", (dir / "pre" / "checkpoint.bin").string(),
                        "--data", (dir / "data").string(), "--out", (dir / "tune").string()});
  REQUIRE(tune.code == 0);
  const Run ev = cli({"eval", "--config", cfg, "--checkpoint", (dir / "tune" / "checkpoint.bin").string(),
                      "--data", (dir / "data").string(), "--out", (dir / "eval").string()});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("gesture") != std::string::npos);

  write(dir / "script.txt", ":load " + (dir / "data" / "gesture.train.jsonl").string() +
                                " 1\n:ask\n:frobnicate\n:quit\nnever reached\n");
  const Run chat = cli({"chat", "--checkpoint", (dir / "tune" / "checkpoint.bin").string(), "--script",
                        (dir / "script.txt").string(), "--out", (dir / "chat").string()});
  CHECK(chat.code == 0);
  CHECK(chat.out.find("loaded record 1") != std::string::npos);
  CHECK(chat.out.find("answer:") != std::string::npos);
  CHECK(chat.out.find("unknown command") != std::string::npos);
  CHECK(chat.out.find("never reached") == std::string::npos);

  // Interactive mode reads stdin.
  const Run interactive = cli({"chat", "--checkpoint", (dir / "tune" / "checkpoint.bin").string(), "--out",
                               (dir / "chat2").string()},
                              ":help\nwhat now?\n:quit\n");
  CHECK(interactive.code == 0);
  CHECK(interactive.out.find("no record selected") != std::string::npos);
}
