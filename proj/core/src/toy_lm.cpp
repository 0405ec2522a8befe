// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/toy_lm.hpp"

#include <algorithm>
#include <cmath>

IOTLM_NAMESPACE_BEGIN

std::vector<TokenId> ByteTokenizer::tokenize(std::string_view text) {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

std::string ByteTokenizer::detokenize(std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

LMConfig LMConfig::preset(std::string_view name) {
  LMConfig c;
  if (name == "tiny") {
    c.width = 64, c.layers = 2, c.heads = 4;
  } else if (name == "small") {
    c.width = 128, c.layers = 4, c.heads = 4;
  } else if (name == "medium") {
    c.width = 256, c.layers = 6, c.heads = 8;
  } else {
    throw ConfigError("unknown LM size preset '" + std::string(name) + "'");
  }
  return c;
}

void LMConfig::validate() const {
  if (width == 0 || layers == 0 || heads == 0 || max_seq == 0 || vocab_size == 0) {
    throw ConfigError("LM config fields must be positive");
  }
  if (width % heads != 0) {
    throw ConfigError("LM width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

CausalLM CausalLM::init(const LMConfig& config, std::uint64_t seed) {
  config.validate();
  CausalLM lm;
  lm.config = config;
  Rng rng(seed, 0x6c6d);
  lm.params.add("lm.tok_emb", init_normal({config.vocab_size, config.width}, rng));
  lm.params.add("lm.pos_emb", init_normal({config.max_seq, config.width}, rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    add_transformer_block(lm.params, "lm.block" + std::to_string(l), config.width, rng);
  }
  add_layer_norm(lm.params, "lm.ln_f", config.width);
  return lm;
}

LMOutput lm_forward(const CausalLM& lm, const LMInput& input) {
  const LMConfig& cfg = lm.config;
  const std::size_t d = cfg.width;
  const std::size_t p = input.prefix.defined() ? input.prefix_len : 0;

  std::size_t batch = input.tokens.size();
  if (p > 0) {
    if (input.prefix.rank() != 2 || input.prefix.cols() != d || input.prefix.rows() % p != 0) {
      throw ShapeError("lm_forward: prefix " + shape_str(input.prefix.shape()) +
                       " does not hold prefix_len=" + std::to_string(p) + " rows of width " +
                       std::to_string(d));
    }
    const std::size_t prefix_batch = input.prefix.rows() / p;
    if (batch == 0) {
      batch = prefix_batch;
    } else if (prefix_batch != batch) {
      throw ShapeError("lm_forward: prefix batch " + std::to_string(prefix_batch) +
                       " != token batch " + std::to_string(batch));
    }
  }
  const std::size_t t = input.tokens.empty() ? 0 : input.tokens.front().size();
  for (const auto& seq : input.tokens) {
    if (seq.size() != t) throw ShapeError("lm_forward: token sequences differ in length");
  }
  const std::size_t s = p + t;
  if (batch == 0 || s == 0) throw ContractError("lm_forward: empty input");
  if (input.position_offset + s > cfg.max_seq) {
    throw LengthError("lm_forward: sequence of " + std::to_string(s) + " rows at offset " +
                      std::to_string(input.position_offset) + " exceeds max_seq " +
                      std::to_string(cfg.max_seq));
  }

  const Tensor& tok_emb = lm.params.get("lm.tok_emb");
  Tensor x;
  if (t > 0) {
    std::vector<std::size_t> ids;
    ids.reserve(batch * t);
    for (const auto& seq : input.tokens) {
      for (TokenId id : seq) {
        if (id >= cfg.vocab_size) throw IndexError("token id " + std::to_string(id) + " out of vocabulary");
        ids.push_back(id);
      }
    }
    x = gather_rows(tok_emb, ids);
  }
  if (p > 0) {
    if (t == 0) {
      x = input.prefix;
    } else {
      // [all prefixes; all texts] -> per-sample [prefix_b; text_b]
      Tensor stacked = concat_tokens({input.prefix, x});
      std::vector<std::size_t> order;
      order.reserve(batch * s);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < p; ++i) order.push_back(b * p + i);
        for (std::size_t i = 0; i < t; ++i) order.push_back(batch * p + b * t + i);
      }
      x = gather_rows(stacked, order);
    }
  }
  std::vector<std::size_t> pos(batch * s);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < s; ++i) pos[b * s + i] = input.position_offset + i;
  }
  x = add(x, gather_rows(lm.params.get("lm.pos_emb"), pos));

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    auto it = input.layer_deltas.find(l);
    if (it != input.layer_deltas.end()) {
      const Tensor& delta = it->second;
      if (p == 0 || delta.rank() != 2 || delta.rows() != batch * p || delta.cols() != d) {
        throw ShapeError("lm_forward: layer delta " + shape_str(delta.shape()) +
                         " does not match the prefix layout");
      }
      // Text rows pick the appended zero row.
      Tensor padded = concat_tokens({delta, Tensor::zeros({1, d})});
      std::vector<std::size_t> idx(batch * s, batch * p);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < p; ++i) idx[b * s + i] = b * p + i;
      }
      x = add(x, gather_rows(padded, idx));
    }
    x = transformer_block_apply(lm.params, "lm.block" + std::to_string(l), x, cfg.heads, s);
  }

  LMOutput out;
  out.hidden = layer_norm(x, lm.params.get("lm.ln_f.gain"), lm.params.get("lm.ln_f.bias"));
  out.batch = batch;
  out.seq_len = s;
  out.text_len = t;
  if (t > 0) {
    Tensor text = out.hidden;
    if (p > 0) {
      std::vector<std::size_t> rows;
      rows.reserve(batch * t);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < t; ++i) rows.push_back(b * s + p + i);
      }
      text = gather_rows(out.hidden, rows);
    }
    out.logits = matmul(text, transpose(tok_emb));
  }
  return out;
}

LMOutput lm_forward(const CausalLM& lm, const Tensor* prefix, std::span<const TokenId> tokens) {
  LMInput in;
  if (prefix && prefix->defined()) {
    in.prefix = *prefix;
    in.prefix_len = prefix->rows();
  }
  in.tokens.emplace_back(tokens.begin(), tokens.end());
  return lm_forward(lm, in);
}

Tensor lm_next_token_loss(const CausalLM& lm, const std::vector<std::vector<TokenId>>& batch,
                          std::size_t position_offset) {
  if (batch.empty()) throw ContractError("lm_next_token_loss: empty batch");
  const std::size_t t = batch.front().size();
  if (t < 2) throw ContractError("lm_next_token_loss: sequence needs at least 2 tokens");
  LMInput in;
  in.tokens = batch;
  in.position_offset = position_offset;
  LMOutput out = lm_forward(lm, in);
  std::vector<std::int64_t> targets(batch.size() * t, kIgnoreIndex);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t i = 0; i + 1 < t; ++i) {
      const TokenId next = batch[b][i + 1];
      if (next != ByteTokenizer::kPad) targets[b * t + i] = static_cast<std::int64_t>(next);
    }
  }
  return cross_entropy(out.logits, targets);
}

Tensor lm_next_token_loss(const CausalLM& lm, std::span<const TokenId> tokens) {
  const std::vector<std::vector<TokenId>> batch{std::vector<TokenId>(tokens.begin(), tokens.end())};
  return lm_next_token_loss(lm, batch, 0);
}

std::vector<TokenId> generate_greedy(const CausalLM& lm, const LMInput& conditioning,
                                     std::span<const TokenId> prompt, std::size_t max_new,
                                     TokenId stop_id) {
  const std::size_t p = conditioning.prefix.defined() ? conditioning.prefix_len : 0;
  if (p + prompt.size() + max_new > lm.config.max_seq) {
    throw LengthError("generate_greedy: prefix " + std::to_string(p) + " + prompt " +
                      std::to_string(prompt.size()) + " + max_new " + std::to_string(max_new) +
                      " exceeds max_seq " + std::to_string(lm.config.max_seq));
  }
  std::vector<TokenId> generated;
  if (max_new == 0) return generated;
  NoGradGuard no_grad;
  LMInput in = conditioning;
  in.tokens.assign(1, std::vector<TokenId>(prompt.begin(), prompt.end()));
  for (std::size_t step = 0; step < max_new; ++step) {
    if (in.tokens[0].empty() && p == 0) throw ContractError("generate_greedy: nothing to condition on");
    LMOutput out = lm_forward(lm, in);
    TokenId best = 0;
    if (out.text_len == 0) {
      // Prefix only: predict from the last prefix row.
      const auto h = out.hidden.data().subspan((out.seq_len - 1) * lm.config.width, lm.config.width);
      const auto emb = lm.params.get("lm.tok_emb").data();
      Real best_score = 0;
      for (TokenId v = 0; v < lm.config.vocab_size; ++v) {
        Real score = 0;
        for (std::size_t j = 0; j < lm.config.width; ++j) score += h[j] * emb[v * lm.config.width + j];
        if (v == 0 || score > best_score) best_score = score, best = v;
      }
    } else {
      const std::size_t v = lm.config.vocab_size;
      const auto row = out.logits.data().subspan((out.text_len - 1) * v, v);
      best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    if (best == stop_id) break;
    generated.push_back(best);
    in.tokens[0].push_back(best);
  }
  return generated;
}

CausalLM build_frozen_lm(const LMConfig& config, const std::optional<std::string>& corpus,
                         std::uint64_t seed, const LMPretrainOptions& options) {
  CausalLM lm = CausalLM::init(config, seed);
  if (corpus && options.steps > 0) {
    // Each corpus line becomes BOS line EOS, the layout instruction tuning
    // uses; windows start at line starts.
    std::vector<TokenId> text;
    std::vector<std::size_t> starts;
    std::size_t pos = 0;
    while (pos < corpus->size()) {
      std::size_t end = corpus->find('\n', pos);
      if (end == std::string::npos) end = corpus->size();
      if (end > pos) {
        starts.push_back(text.size());
        text.push_back(ByteTokenizer::kBos);
        const auto line = ByteTokenizer::tokenize(std::string_view(*corpus).substr(pos, end - pos));
        text.insert(text.end(), line.begin(), line.end());
        text.push_back(ByteTokenizer::kEos);
      }
      pos = end + 1;
    }
    const std::size_t window = std::min(options.seq_len, config.max_seq);
    if (text.size() < 2 || window < 2) throw DataError("stub pretraining corpus is too short");
    AdamState adam;
    adam.lr = options.lr;
    Rng rng(seed, 0x707265);
    for (std::size_t step = 0; step < options.steps; ++step) {
      std::vector<std::vector<TokenId>> batch;
      const std::size_t len = std::min(window, text.size());
      for (std::size_t b = 0; b < options.batch; ++b) {
        const std::size_t start = std::min(starts[rng.below(starts.size())], text.size() - len);
        batch.emplace_back(text.begin() + start, text.begin() + start + len);
      }
      // Random offsets teach every position slot, including those behind a prefix.
      const std::size_t offset = rng.below(config.max_seq - len + 1);
      Tensor loss = lm_next_token_loss(lm, batch, offset);
      if (!std::isfinite(loss.item())) throw NumericError("stub pretraining diverged");
      backward(loss);
      adam_update(lm.params, adam, collect_grads(lm.params));
    }
  }
  lm.params.freeze_prefix("lm.");
  return lm;
}

IOTLM_NAMESPACE_END
