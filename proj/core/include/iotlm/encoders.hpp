// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <vector>

#include "iotlm/nn.hpp"
#include "iotlm/sensors.hpp"

IOTLM_NAMESPACE_BEGIN

struct EncoderConfig {
  std::size_t width = 64;   // shared token width
  std::size_t patch = 8;    // grid patch side
  std::size_t window = 16;  // sequence window length
  std::size_t stride = 16;
  std::size_t token_cap = 8;

  void validate() const;
  /// Front-end feature size of one token for `kind`.
  std::size_t token_input_dim(ModalityKind kind) const;
};

/// Non-overlapping patch×patch tiles in row-major tile order, each flattened
/// as (row, col, channel). The grid is zero-padded to a patch multiple.
Tensor patchify_grid(const GridPayload& payload, std::size_t patch);

/// Sliding windows of `window` steps every `stride` steps; a trailing partial
/// window is zero-padded, and at least one window is always produced.
Tensor window_sequence(const SeqPayload& payload, std::size_t window, std::size_t stride);

/// Registers encoder.<kind>.proj.{weight,bias} and encoder.<kind>.type.
void add_encoder_params(ParamSet& params, const EncoderConfig& config,
                        const std::set<ModalityKind>& kinds, Rng& rng);

/// Front end → projection → type embedding → truncate/zero-pad to the token
/// cap. Padding rows are exact zeros.
Tensor encode_modality(ModalityKind kind, const Payload& payload, const EncoderConfig& config,
                       const ParamSet& params);

struct EncodedBlock {
  ModalityKind kind;
  Tensor tokens;  // [token_cap × width]
};

/// One block per present payload, in canonical modality order.
std::vector<EncodedBlock> encode_sample(const SensorSample& sample, const EncoderConfig& config,
                                        const ParamSet& params);

std::string encoder_prefix(ModalityKind kind);

IOTLM_NAMESPACE_END
