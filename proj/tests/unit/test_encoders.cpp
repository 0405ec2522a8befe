// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "iotlm/encoders.hpp"

using namespace iotlm;

namespace {

std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

GridPayload grid(std::size_t h, std::size_t w, std::size_t c = 1) {
  GridPayload g{h, w, c, "", std::vector<Real>(h * w * c)};
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = static_cast<Real>(i + 1);
  return g;
}

SeqPayload seq(std::size_t steps, std::size_t channels) {
  SeqPayload s{steps, channels, 10.0, std::vector<Real>(steps * channels)};
  for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = static_cast<Real>(i + 1);
  return s;
}

Payload payload_for(ModalityKind kind, Rng& rng) {
  const auto& l = modality_layout(kind);
  if (l.family == EncoderFamily::Grid) {
    GridPayload g{l.dim0, l.dim1, l.channels, l.units, std::vector<Real>(l.dim0 * l.dim1 * l.channels)};
    for (Real& v : g.values) v = static_cast<Real>(rng.normal());
    return g;
  }
  SeqPayload s{l.dim0, l.dim1, l.sample_rate_hz, std::vector<Real>(l.dim0 * l.dim1)};
  for (Real& v : s.values) v = static_cast<Real>(rng.normal());
  return s;
}

}  // namespace

TEST_CASE("patchify") {
  CHECK(patchify_grid(grid(4, 4), 4).shape() == Shape{1, 16});

  // Tile (tr, tc), offset (r, c) reads grid[(2tr + r) * 4 + 2tc + c].
  const auto g = grid(4, 4);
  const Tensor p = patchify_grid(g, 2);
  CHECK(p.shape() == Shape{4, 4});
  for (std::size_t tr = 0; tr < 2; ++tr) {
    for (std::size_t tc = 0; tc < 2; ++tc) {
      for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 2; ++c) {
          CHECK(p.data()[(tr * 2 + tc) * 4 + r * 2 + c] == g.values[(2 * tr + r) * 4 + 2 * tc + c]);
        }
      }
    }
  }

  const Tensor padded = patchify_grid(grid(3, 3), 2);
  CHECK(padded.shape() == Shape{4, 4});
  // Bottom-right tile holds grid[2][2] = 9 and three pad zeros.
  CHECK(values(slice_rows(padded, 3, 4)) == std::vector<Real>{9, 0, 0, 0});

  // Channels are interleaved per pixel.
  const Tensor two = patchify_grid(grid(2, 2, 2), 2);
  CHECK(values(two) == std::vector<Real>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("sequence windows") {
  CHECK(window_sequence(seq(4, 2), 4, 4).shape() == Shape{1, 8});
  const Tensor w = window_sequence(seq(5, 1), 2, 2);
  CHECK(values(w) == std::vector<Real>{1, 2, 3, 4, 5, 0});
  const Tensor overlap = window_sequence(seq(4, 1), 2, 1);
  CHECK(values(overlap) == std::vector<Real>{1, 2, 2, 3, 3, 4});
  // Non-overlapping windows partition the sequence.
  const Tensor part = window_sequence(seq(6, 1), 3, 3);
  CHECK(values(part) == std::vector<Real>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("encode modality") {
  EncoderConfig config;
  Rng rng(1);
  ParamSet params;
  add_encoder_params(params, config, {ModalityKind::IMU, ModalityKind::Capacitance}, rng);
  CHECK(params.contains("encoder.imu.proj.weight"));
  CHECK(params.contains("encoder.imu.type"));

  // 128 steps in windows of 16 give exactly the 8-token cap.
  const auto& imu = modality_layout(ModalityKind::IMU);
  CHECK(imu.dim1 == 9);
  CHECK(window_sequence(std::get<SeqPayload>(payload_for(ModalityKind::IMU, rng)), 16, 16).rows() == 8);

  // Zero payload through a zero projection leaves the type embedding.
  for (Real& w : params.get("encoder.imu.proj.weight").mutable_data()) w = 0;
  for (Real& t : params.get("encoder.imu.type").mutable_data()) t = static_cast<Real>(rng.normal());
  SeqPayload zero{128, 9, 50, std::vector<Real>(128 * 9, 0)};
  const Tensor tokens = encode_modality(ModalityKind::IMU, zero, config, params);
  CHECK(tokens.shape() == Shape{8, config.width});
  const auto type = params.get("encoder.imu.type").data();
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t c = 0; c < config.width; ++c) CHECK(tokens.data()[r * config.width + c] == type[c]);
  }

  // Capacitance 16×8 with 8×8 patches gives 2 tokens; the rest are zero rows.
  const Tensor cap = encode_modality(ModalityKind::Capacitance, payload_for(ModalityKind::Capacitance, rng),
                                     config, params);
  CHECK(cap.shape() == Shape{8, config.width});
  for (std::size_t i = 2 * config.width; i < cap.numel(); ++i) CHECK(cap.data()[i] == 0);

  CHECK_THROWS_AS(encode_modality(ModalityKind::IMU, grid(16, 16), config, params), ConfigError);
  SeqPayload bad{128, 3, 50, std::vector<Real>(128 * 3)};
  CHECK_THROWS_AS(encode_modality(ModalityKind::IMU, bad, config, params), DataError);
}

TEST_CASE("every modality encodes to the shared width") {
  EncoderConfig config;
  Rng rng(2);
  ParamSet params;
  const std::set<ModalityKind> kinds(all_modalities().begin(), all_modalities().end());
  add_encoder_params(params, config, kinds, rng);
  for (ModalityKind kind : all_modalities()) {
    const Tensor t = encode_modality(kind, payload_for(kind, rng), config, params);
    CHECK(t.shape() == Shape{config.token_cap, config.width});
    CHECK(modality_from_name(modality_name(kind)) == kind);
  }
  CHECK_THROWS_AS(modality_from_name("sonar"), ConfigError);
}

TEST_CASE("encode sample order and independence") {
  EncoderConfig config;
  Rng rng(3);
  ParamSet params;
  add_encoder_params(params, config, {ModalityKind::IMU, ModalityKind::Image, ModalityKind::Depth}, rng);
  const Payload imu = payload_for(ModalityKind::IMU, rng);
  const Payload image = payload_for(ModalityKind::Image, rng);
  const Payload depth = payload_for(ModalityKind::Depth, rng);

  SensorSample one;
  one.payloads.emplace(ModalityKind::Depth, depth);
  CHECK(encode_sample(one, config, params).size() == 1);

  SensorSample a, b;
  a.payloads.emplace(ModalityKind::Depth, depth);
  a.payloads.emplace(ModalityKind::IMU, imu);
  a.payloads.emplace(ModalityKind::Image, image);
  b.payloads.emplace(ModalityKind::Image, image);
  b.payloads.emplace(ModalityKind::IMU, imu);
  b.payloads.emplace(ModalityKind::Depth, depth);
  const auto ea = encode_sample(a, config, params), eb = encode_sample(b, config, params);
  REQUIRE(ea.size() == 3);
  CHECK(ea[0].kind == ModalityKind::IMU);
  CHECK(ea[1].kind == ModalityKind::Image);
  CHECK(ea[2].kind == ModalityKind::Depth);
  for (std::size_t i = 0; i < 3; ++i) CHECK(values(ea[i].tokens) == values(eb[i].tokens));

  a.payloads.erase(ModalityKind::Image);
  const auto dropped = encode_sample(a, config, params);
  REQUIRE(dropped.size() == 2);
  CHECK(values(dropped[0].tokens) == values(ea[0].tokens));
  CHECK(values(dropped[1].tokens) == values(ea[2].tokens));
}
