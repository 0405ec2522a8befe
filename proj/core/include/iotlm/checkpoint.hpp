// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iotlm/train.hpp"

IOTLM_NAMESPACE_BEGIN

inline constexpr std::uint32_t kCheckpointVersion = 1;
/// "IOTLM1" plus a terminating NUL.
inline constexpr std::string_view kCheckpointMagic{"IOTLM1\0", 7};

struct StageRecord {
  std::string stage;
  std::string log_digest;
  bool operator==(const StageRecord&) const = default;
};

/// Model, optimizer and provenance. The binary layout is: magic, u32 version,
/// length-prefixed JSON config, parameter table (frozen LM and trainable
/// paths, sorted), optimizer table (m.<path>, v.<path>).
struct Checkpoint {
  TrainConfig config;
  MergedModel model;
  AdamState optimizer;
  std::vector<StageRecord> history;
  std::map<std::string, std::string> data_digests;
};

/// FNV-1a over the serialized frozen LM parameter table.
std::string frozen_digest(const CausalLM& lm);

std::vector<std::uint8_t> checkpoint_serialize(const Checkpoint& ckpt);
/// Validates magic and version before touching anything else, then checks
/// the parameter table against the structure the config implies.
Checkpoint checkpoint_deserialize(std::span<const std::uint8_t> bytes, const TaskRegistry& registry);

/// Returns the file digest.
std::string checkpoint_save(const std::string& path, const Checkpoint& ckpt);
Checkpoint checkpoint_load(const std::string& path, const TaskRegistry& registry);

IOTLM_NAMESPACE_END
