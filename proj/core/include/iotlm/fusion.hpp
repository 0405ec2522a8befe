// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "iotlm/encoders.hpp"

IOTLM_NAMESPACE_BEGIN

/// Only Late is implemented; the others are reserved names that fail loudly.
enum class FusionMode { Late, Early, ModelInternal };
FusionMode fusion_mode_from_name(std::string_view name);
std::string_view fusion_mode_name(FusionMode mode);

/// Shared gate.weight [d] and gate.kind_bias [modalities], plus a
/// task.<name>.gate [d] vector per task. All zero-initialized.
void add_gate_params(ParamSet& params, std::size_t width);
void add_task_gate_params(ParamSet& params, const std::string& task, std::size_t width);

/// Softmax over the present modalities of
///   mean_rows(block) · (gate.weight + task.<task>.gate) + gate.kind_bias[kind].
/// Returns a 1-D tensor aligned with `blocks`.
Tensor gate_weights(std::span<const EncodedBlock> blocks, const std::string& task,
                    const ParamSet& params, Real temperature = 1);

/// Each block scaled by its weight, then concatenated along the token axis.
Tensor late_fuse(std::span<const EncodedBlock> blocks, const Tensor& weights);

IOTLM_NAMESPACE_END
