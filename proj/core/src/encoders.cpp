// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/encoders.hpp"

#include <cmath>

IOTLM_NAMESPACE_BEGIN

namespace {

using EF = EncoderFamily;
using MK = ModalityKind;

// Shapes: grids are h×w×c, sequences are steps×channels.
const std::array<ModalityLayout, kModalityCount> kLayouts{{
    {MK::IMU, "imu", EF::Sequence, 128, 9, 1, 50.0, "m/s^2, rad/s, normalized orientation"},
    {MK::Audio, "audio", EF::Grid, 16, 16, 1, 0, "log-magnitude spectrogram"},
    {MK::Image, "image", EF::Grid, 16, 16, 1, 0, "normalized [0,1]"},
    {MK::Depth, "depth", EF::Grid, 16, 16, 1, 0, "m"},
    {MK::Capacitance, "capacitance", EF::Grid, 16, 8, 1, 0, "normalized capacitance drop"},
    {MK::Thermal, "thermal", EF::Grid, 8, 8, 1, 0, "normalized temperature"},
    {MK::Video, "video", EF::Grid, 16, 16, 4, 0, "normalized [0,1], frames on channels"},
    {MK::Gaze, "gaze", EF::Sequence, 32, 2, 1, 30.0, "normalized screen units"},
    {MK::Pose, "pose", EF::Sequence, 24, 3, 1, 0, "rad"},
    {MK::GPS, "gps", EF::Sequence, 16, 6, 1, 1.0, "normalized"},
    {MK::LiDAR, "lidar", EF::Sequence, 64, 4, 1, 0, "m, intensity"},
    {MK::CameraMeta, "camera_meta", EF::Sequence, 1, 8, 1, 0, "normalized intrinsics"},
}};

void check_finite(std::span<const Real> values, const char* what) {
  for (Real v : values) {
    if (!std::isfinite(v)) throw DataError(std::string(what) + ": non-finite payload value");
  }
}

}  // namespace

const ModalityLayout& modality_layout(ModalityKind kind) {
  const auto i = static_cast<std::size_t>(kind);
  if (i >= kModalityCount) throw ConfigError("unknown modality kind " + std::to_string(i));
  return kLayouts[i];
}

const std::array<ModalityKind, kModalityCount>& all_modalities() {
  static const std::array<ModalityKind, kModalityCount> kinds = [] {
    std::array<ModalityKind, kModalityCount> k{};
    for (std::size_t i = 0; i < kModalityCount; ++i) k[i] = kLayouts[i].kind;
    return k;
  }();
  return kinds;
}

std::string_view modality_name(ModalityKind kind) { return modality_layout(kind).name; }

ModalityKind modality_from_name(std::string_view name) {
  for (const auto& l : kLayouts) {
    if (name == l.name) return l.kind;
  }
  throw ConfigError("unknown modality '" + std::string(name) + "'");
}

void GridPayload::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw DataError("grid payload has a zero dimension");
  if (values.size() != height * width * channels) {
    throw DataError("grid payload holds " + std::to_string(values.size()) + " values, expected " +
                    std::to_string(height * width * channels));
  }
  check_finite(values, "grid payload");
}

void SeqPayload::validate() const {
  if (steps == 0 || channels == 0) throw DataError("sequence payload has a zero dimension");
  if (values.size() != steps * channels) {
    throw DataError("sequence payload holds " + std::to_string(values.size()) +
                    " values, expected " + std::to_string(steps * channels));
  }
  check_finite(values, "sequence payload");
}

void EncoderConfig::validate() const {
  if (width == 0 || patch == 0 || window == 0 || stride == 0 || token_cap == 0) {
    throw ConfigError("encoder config fields must be positive");
  }
}

std::size_t EncoderConfig::token_input_dim(ModalityKind kind) const {
  const auto& l = modality_layout(kind);
  if (l.family == EncoderFamily::Grid) return patch * patch * l.channels;
  return window * l.dim1;
}

Tensor patchify_grid(const GridPayload& payload, std::size_t patch) {
  payload.validate();
  if (patch == 0) throw ConfigError("patch size must be positive");
  const std::size_t ph = (payload.height + patch - 1) / patch;
  const std::size_t pw = (payload.width + patch - 1) / patch;
  const std::size_t c = payload.channels;
  const std::size_t dim = patch * patch * c;
  std::vector<Real> out(ph * pw * dim, Real(0));
  for (std::size_t ty = 0; ty < ph; ++ty) {
    for (std::size_t tx = 0; tx < pw; ++tx) {
      Real* dst = out.data() + (ty * pw + tx) * dim;
      for (std::size_t y = 0; y < patch; ++y) {
        const std::size_t gy = ty * patch + y;
        if (gy >= payload.height) break;
        for (std::size_t x = 0; x < patch; ++x) {
          const std::size_t gx = tx * patch + x;
          if (gx >= payload.width) break;
          for (std::size_t ch = 0; ch < c; ++ch) {
            dst[(y * patch + x) * c + ch] = payload.values[(gy * payload.width + gx) * c + ch];
          }
        }
      }
    }
  }
  return Tensor::from({ph * pw, dim}, std::move(out));
}

Tensor window_sequence(const SeqPayload& payload, std::size_t window, std::size_t stride) {
  payload.validate();
  if (window == 0 || stride == 0) throw ConfigError("window and stride must be positive");
  const std::size_t t = payload.steps, c = payload.channels;
  std::size_t n = 1;
  if (t > window) n += (t - window + stride - 1) / stride;
  const std::size_t dim = window * c;
  std::vector<Real> out(n * dim, Real(0));
  for (std::size_t w = 0; w < n; ++w) {
    const std::size_t start = w * stride;
    for (std::size_t s = 0; s < window && start + s < t; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[w * dim + s * c + ch] = payload.values[(start + s) * c + ch];
      }
    }
  }
  return Tensor::from({n, dim}, std::move(out));
}

std::string encoder_prefix(ModalityKind kind) {
  return "encoder." + std::string(modality_name(kind));
}

void add_encoder_params(ParamSet& params, const EncoderConfig& config,
                        const std::set<ModalityKind>& kinds, Rng& rng) {
  config.validate();
  for (ModalityKind kind : kinds) {
    const std::string prefix = encoder_prefix(kind);
    add_linear(params, prefix + ".proj", config.token_input_dim(kind), config.width, rng);
    params.add(prefix + ".type", init_normal({config.width}, rng));
  }
}

Tensor encode_modality(ModalityKind kind, const Payload& payload, const EncoderConfig& config,
                       const ParamSet& params) {
  const auto& layout = modality_layout(kind);
  Tensor front;
  if (layout.family == EncoderFamily::Grid) {
    const auto* grid = std::get_if<GridPayload>(&payload);
    if (!grid) throw ConfigError(std::string(layout.name) + " expects a grid payload");
    if (grid->channels != layout.channels) {
      throw DataError(std::string(layout.name) + " payload has " + std::to_string(grid->channels) +
                      " channels, expected " + std::to_string(layout.channels));
    }
    front = patchify_grid(*grid, config.patch);
  } else {
    const auto* seq = std::get_if<SeqPayload>(&payload);
    if (!seq) throw ConfigError(std::string(layout.name) + " expects a sequence payload");
    if (seq->channels != layout.dim1) {
      throw DataError(std::string(layout.name) + " payload has " + std::to_string(seq->channels) +
                      " channels, expected " + std::to_string(layout.dim1));
    }
    front = window_sequence(*seq, config.window, config.stride);
  }
  const std::string prefix = encoder_prefix(kind);
  const std::size_t n = std::min(front.rows(), config.token_cap);
  if (n < front.rows()) front = slice_rows(front, 0, n);
  Tensor tokens = add(linear_apply(params, prefix + ".proj", front), params.get(prefix + ".type"));
  if (n < config.token_cap) {
    tokens = concat_tokens({tokens, Tensor::zeros({config.token_cap - n, config.width})});
  }
  return tokens;
}

std::vector<EncodedBlock> encode_sample(const SensorSample& sample, const EncoderConfig& config,
                                        const ParamSet& params) {
  std::vector<EncodedBlock> blocks;
  blocks.reserve(sample.payloads.size());
  // std::map iterates in enum order, which is the canonical order.
  for (const auto& [kind, payload] : sample.payloads) {
    blocks.push_back({kind, encode_modality(kind, payload, config, params)});
  }
  return blocks;
}

IOTLM_NAMESPACE_END
