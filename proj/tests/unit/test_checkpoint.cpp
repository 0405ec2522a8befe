// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>

#include "iotlm/checkpoint.hpp"

using namespace iotlm;

namespace {

const TaskRegistry& registry() {
  static const TaskRegistry r = TaskRegistry::default_registry();
  return r;
}

Checkpoint trained_checkpoint(InsertionMode mode = InsertionMode::InputPrefix) {
  TrainConfig c;
  c.tasks = {"gesture", "gaze"};
  c.epochs = 1;
  c.lr = 1e-3;
  c.lm_steps = 0;
  c.prefix_len = 4;
  c.adapter_hidden = 16;
  c.encoder.width = 16;
  c.insertion = mode;
  if (mode == InsertionMode::PerLayerPrefix) c.insertion_layers = {0, 1};
  Checkpoint ck;
  ck.config = c;
  ck.model = build_model(c, registry());
  ck.optimizer.lr = c.lr;
  TaskData data;
  for (const auto& t : c.tasks) {
    auto s = gen_task_data(registry(), t, 16, 2);
    strip_latents(s);
    data[t] = std::move(s);
  }
  const TrainLog log = pretrain_multitask(ck.model, ck.optimizer, data, c);
  ck.history.push_back({"pretrain", log.digest()});
  ck.data_digests["gaze/train"] = "0123456789abcdef";
  return ck;
}

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "iotlm_unit";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("checkpoint round trip is byte exact") {
  for (InsertionMode mode : {InsertionMode::InputPrefix, InsertionMode::PerLayerPrefix}) {
    const Checkpoint ck = trained_checkpoint(mode);
    const auto bytes = checkpoint_serialize(ck);
    CHECK(std::string(bytes.begin(), bytes.begin() + 7) == std::string(kCheckpointMagic));
    const Checkpoint back = checkpoint_deserialize(bytes, registry());
    CHECK(checkpoint_serialize(back) == bytes);
    CHECK(back.history == ck.history);
    CHECK(back.data_digests == ck.data_digests);
    CHECK(back.optimizer.step == ck.optimizer.step);
    CHECK(back.model.tasks == ck.model.tasks);
    CHECK(frozen_digest(back.model.lm) == frozen_digest(ck.model.lm));
    CHECK(back.model.lm.params.frozen_paths().size() == back.model.lm.params.size());

    const std::string path = temp_path("ck.bin");
    const std::string digest = checkpoint_save(path, ck);
    const Checkpoint loaded = checkpoint_load(path, registry());
    CHECK(checkpoint_save(path, loaded) == digest);
  }
}

TEST_CASE("checkpoint header checks") {
  const auto bytes = checkpoint_serialize(trained_checkpoint());

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(checkpoint_deserialize(bad_magic, registry()), FormatError);
  // A file that is only a wrong header fails the same way.
  const std::vector<std::uint8_t> tiny{'n', 'o', 'p', 'e'};
  CHECK_THROWS_AS(checkpoint_deserialize(tiny, registry()), FormatError);

  auto bumped = bytes;
  bumped[7] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
  try {
    checkpoint_deserialize(bumped, registry());
    FAIL("newer version accepted");
  } catch (const FormatError& e) {
    const std::string what = e.what();
    CHECK(what.find(std::to_string(kCheckpointVersion + 1)) != std::string::npos);
    CHECK(what.find(std::to_string(kCheckpointVersion)) != std::string::npos);
  }

  for (std::size_t cut : {std::size_t{8}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(checkpoint_deserialize(std::span(bytes.data(), cut), registry()), FormatError);
  }
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(checkpoint_deserialize(extra, registry()), FormatError);
}

TEST_CASE("tampered frozen weights are detected") {
  const auto bytes = checkpoint_serialize(trained_checkpoint());
  const std::string text(bytes.begin(), bytes.end());
  const std::size_t at = text.find("lm.tok_emb");
  REQUIRE(at != std::string::npos);
  auto tampered = bytes;
  // Well inside the embedding table's float payload.
  tampered[at + 200] ^= 0x01;
  CHECK_THROWS_AS(checkpoint_deserialize(tampered, registry()), FormatError);
}
