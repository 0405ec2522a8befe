// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "iotlm/nn.hpp"

IOTLM_NAMESPACE_BEGIN

using TokenId = std::size_t;

/// Byte-level vocabulary: ids 0..255 are raw bytes, followed by specials.
struct ByteTokenizer {
  static constexpr TokenId kPad = 256;
  static constexpr TokenId kBos = 257;
  static constexpr TokenId kEos = 258;
  static constexpr TokenId kSep = 259;
  static constexpr std::size_t kVocabSize = 260;

  static std::vector<TokenId> tokenize(std::string_view text);
  /// Special ids are dropped.
  static std::string detokenize(std::span<const TokenId> ids);
};

struct LMConfig {
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t max_seq = 320;
  std::size_t vocab_size = ByteTokenizer::kVocabSize;

  /// tiny(64, 2 layers), small(128, 4), medium(256, 6).
  static LMConfig preset(std::string_view name);
  void validate() const;
};

/// Small pre-norm causal transformer with tied input/output embeddings. All
/// parameters live under the "lm." path prefix.
struct CausalLM {
  LMConfig config;
  ParamSet params;

  static CausalLM init(const LMConfig& config, std::uint64_t seed);
};

/// Batch of equal-length sequences fed to the LM. Prefix rows for sample b
/// occupy rows [b*p, (b+1)*p) of `prefix`; `layer_deltas[l]` (same layout as
/// the prefix) is added to the prefix rows at the input of block l.
struct LMInput {
  Tensor prefix;
  std::size_t prefix_len = 0;
  std::vector<std::vector<TokenId>> tokens;
  std::map<std::size_t, Tensor> layer_deltas;
  /// Position id of the first row (used only by stub pretraining).
  std::size_t position_offset = 0;
};

struct LMOutput {
  Tensor hidden;  // [batch*seq × d] after the final layer norm
  Tensor logits;  // [batch*text × vocab], text positions only; undefined if no text
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t text_len = 0;
};

LMOutput lm_forward(const CausalLM& lm, const LMInput& input);

/// Single-sequence convenience form.
LMOutput lm_forward(const CausalLM& lm, const Tensor* prefix, std::span<const TokenId> tokens);

/// Next-token cross-entropy over a batch of equal-length sequences, PAD
/// targets ignored.
Tensor lm_next_token_loss(const CausalLM& lm, const std::vector<std::vector<TokenId>>& batch,
                          std::size_t position_offset = 0);
Tensor lm_next_token_loss(const CausalLM& lm, std::span<const TokenId> tokens);

/// Argmax decoding; ties go to the lowest id. The conditioning tensors use
/// the single-sample LMInput layout.
std::vector<TokenId> generate_greedy(const CausalLM& lm, const LMInput& conditioning,
                                     std::span<const TokenId> prompt, std::size_t max_new,
                                     TokenId stop_id = ByteTokenizer::kEos);

struct LMPretrainOptions {
  std::size_t steps = 0;
  std::size_t batch = 8;
  std::size_t seq_len = 128;
  double lr = 3e-3;
};

/// Seeded init, optional stub pretraining on `corpus` (one example per line),
/// then every lm.* path is frozen.
CausalLM build_frozen_lm(const LMConfig& config, const std::optional<std::string>& corpus,
                         std::uint64_t seed, const LMPretrainOptions& options = {});

IOTLM_NAMESPACE_END
