// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "iotlm/real.hpp"

IOTLM_NAMESPACE_BEGIN

/// Declaration order is the canonical modality order.
enum class ModalityKind : std::uint8_t {
  IMU,
  Audio,
  Image,
  Depth,
  Capacitance,
  Thermal,
  Video,
  Gaze,
  Pose,
  GPS,
  LiDAR,
  CameraMeta,
};
inline constexpr std::size_t kModalityCount = 12;

enum class EncoderFamily { Grid, Sequence };

/// Fixed payload layout produced by the generators for each modality.
struct ModalityLayout {
  ModalityKind kind;
  const char* name;
  EncoderFamily family;
  std::size_t dim0;  // grid height or sequence steps
  std::size_t dim1;  // grid width or sequence channels
  std::size_t channels;  // grid channels (1 for sequences)
  double sample_rate_hz;  // sequences only
  const char* units;
};

const ModalityLayout& modality_layout(ModalityKind kind);
const std::array<ModalityKind, kModalityCount>& all_modalities();
std::string_view modality_name(ModalityKind kind);
ModalityKind modality_from_name(std::string_view name);

struct GridPayload {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::string units;
  std::vector<Real> values;  // (row, col, channel) row-major

  void validate() const;
  bool operator==(const GridPayload&) const = default;
};

struct SeqPayload {
  std::size_t steps = 0;
  std::size_t channels = 0;
  double sample_rate_hz = 0;
  std::vector<Real> values;  // (step, channel) row-major

  void validate() const;
  bool operator==(const SeqPayload&) const = default;
};

using Payload = std::variant<GridPayload, SeqPayload>;

/// One multimodal record. Classification labels use `class_id`; regression
/// labels use `target`. `latent` is generator state kept for oracle tests and
/// must be stripped before a sample reaches a model.
struct SensorSample {
  std::uint64_t sample_id = 0;
  std::size_t task_id = 0;
  std::map<ModalityKind, Payload> payloads;
  std::int64_t class_id = -1;
  std::vector<Real> target;
  std::vector<Real> latent;

  bool operator==(const SensorSample&) const = default;
};

IOTLM_NAMESPACE_END
