// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/checkpoint.hpp"

#include <json.hpp>

#include "iotlm/bytes.hpp"

IOTLM_NAMESPACE_BEGIN

using json = nlohmann::json;

std::string frozen_digest(const CausalLM& lm) {
  ByteWriter out;
  write_param_table(out, lm.params);
  return hex64(fnv1a64(out.bytes()));
}

namespace {

json model_json(const MergedModel& m) {
  const LMConfig& lm = m.lm.config;
  const AdapterConfig& a = m.adapter;
  const EncoderConfig& e = m.encoder;
  return {
      {"lm", {{"width", lm.width}, {"layers", lm.layers}, {"heads", lm.heads},
              {"max_seq", lm.max_seq}, {"vocab_size", lm.vocab_size}}},
      {"encoder", {{"width", e.width}, {"patch", e.patch}, {"window", e.window},
                   {"stride", e.stride}, {"token_cap", e.token_cap}}},
      {"adapter", {{"prefix_len", a.prefix_len}, {"mode", std::string(insertion_mode_name(a.mode))},
                   {"layers", a.layers}, {"hidden", a.hidden}, {"direct_head", a.direct_head},
                   {"fusion", std::string(fusion_mode_name(a.fusion))},
                   {"gate_temperature", static_cast<double>(a.gate_temperature)}}},
      {"tasks", m.tasks},
  };
}

ParamSet optimizer_table(const AdamState& opt, const ParamSet& params) {
  ParamSet table;
  for (const auto& [path, m] : opt.m) {
    const Shape& shape = params.get(path).shape();
    table.add("m." + path, Tensor::from(shape, m));
    table.add("v." + path, Tensor::from(shape, opt.v.at(path)));
  }
  return table;
}

}  // namespace

std::vector<std::uint8_t> checkpoint_serialize(const Checkpoint& ckpt) {
  json config;
  config["format"] = "iotlm-checkpoint";
  config["train"] = json::parse(ckpt.config.to_text());
  config["model"] = model_json(ckpt.model);
  config["optimizer"] = {{"lr", ckpt.optimizer.lr},       {"beta1", ckpt.optimizer.beta1},
                         {"beta2", ckpt.optimizer.beta2}, {"eps", ckpt.optimizer.eps},
                         {"step", ckpt.optimizer.step}};
  config["history"] = json::array();
  for (const auto& h : ckpt.history) {
    config["history"].push_back({{"stage", h.stage}, {"log_digest", h.log_digest}});
  }
  config["data_digests"] = ckpt.data_digests;
  config["frozen_digest"] = frozen_digest(ckpt.model.lm);

  ByteWriter out;
  out.put_raw(kCheckpointMagic);
  out.put_u32(kCheckpointVersion);
  out.put_string(config.dump());
  write_param_table(out, ckpt.model.all_params());
  write_param_table(out, optimizer_table(ckpt.optimizer, ckpt.model.params));
  return out.take();
}

namespace {

template <typename T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint config field '") + key + "': " + e.what());
  }
}

void check_same_structure(const ParamSet& expected, const ParamSet& got, const std::string& what) {
  for (const auto& [path, t] : expected.entries()) {
    if (!got.contains(path)) throw FormatError("checkpoint is missing " + what + " parameter " + path);
    if (got.get(path).shape() != t.shape()) {
      throw FormatError("checkpoint parameter " + path + " has shape " +
                        shape_str(got.get(path).shape()) + ", expected " + shape_str(t.shape()));
    }
  }
  for (const auto& [path, t] : got.entries()) {
    if (!expected.contains(path)) throw FormatError("checkpoint has unexpected " + what + " parameter " + path);
  }
}

}  // namespace

Checkpoint checkpoint_deserialize(std::span<const std::uint8_t> bytes, const TaskRegistry& registry) {
  ByteReader in(bytes);
  if (in.remaining() < kCheckpointMagic.size() ||
      in.get_raw(kCheckpointMagic.size(), "magic") != kCheckpointMagic) {
    throw FormatError("not an iotlm checkpoint (bad magic)");
  }
  const std::uint32_t version = in.get_u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) +
                      " is not supported by this build (expects version " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  json config;
  try {
    config = json::parse(in.get_string("config"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  if (!config.is_object() || config.value("format", "") != "iotlm-checkpoint") {
    throw FormatError("checkpoint config lacks the iotlm-checkpoint format tag");
  }

  Checkpoint ckpt;
  try {
    ckpt.config = TrainConfig::from_text(config.at("train").dump());
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint train config: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint train config: ") + e.what());
  }
  const json model = field<json>(config, "model");
  const json jlm = field<json>(model, "lm");
  LMConfig lm_config;
  lm_config.width = field<std::size_t>(jlm, "width");
  lm_config.layers = field<std::size_t>(jlm, "layers");
  lm_config.heads = field<std::size_t>(jlm, "heads");
  lm_config.max_seq = field<std::size_t>(jlm, "max_seq");
  lm_config.vocab_size = field<std::size_t>(jlm, "vocab_size");
  const json je = field<json>(model, "encoder");
  EncoderConfig enc;
  enc.width = field<std::size_t>(je, "width");
  enc.patch = field<std::size_t>(je, "patch");
  enc.window = field<std::size_t>(je, "window");
  enc.stride = field<std::size_t>(je, "stride");
  enc.token_cap = field<std::size_t>(je, "token_cap");
  const json ja = field<json>(model, "adapter");
  AdapterConfig adapter;
  adapter.prefix_len = field<std::size_t>(ja, "prefix_len");
  adapter.mode = insertion_mode_from_name(field<std::string>(ja, "mode"));
  adapter.layers = field<std::vector<std::size_t>>(ja, "layers");
  adapter.hidden = field<std::size_t>(ja, "hidden");
  adapter.direct_head = field<bool>(ja, "direct_head");
  adapter.fusion = fusion_mode_from_name(field<std::string>(ja, "fusion"));
  adapter.gate_temperature = static_cast<Real>(field<double>(ja, "gate_temperature"));
  const auto tasks = field<std::vector<std::string>>(model, "tasks");

  ParamSet params = read_param_table(in);
  ParamSet opt_table = read_param_table(in);
  if (!in.done()) throw FormatError("trailing bytes after checkpoint optimizer table");

  // Rebuild the expected structure, then adopt the stored values.
  CausalLM lm;
  lm.config = lm_config;
  try {
    lm_config.validate();
    CausalLM shape_lm = CausalLM::init(lm_config, 0);
    for (const auto& [path, t] : params.entries()) {
      if (path.rfind("lm.", 0) == 0) lm.params.add(path, t);
    }
    check_same_structure(shape_lm.params, lm.params, "LM");
    lm.params.freeze_prefix("lm.");
    MergedModel shape = MergedModel::create(lm, enc, adapter, registry, tasks, 0);
    ParamSet trainable;
    for (const auto& [path, t] : params.entries()) {
      if (path.rfind("lm.", 0) != 0) trainable.add(path, t);
    }
    check_same_structure(shape.params, trainable, "trainable");
    ckpt.model = std::move(shape);
    ckpt.model.params = std::move(trainable);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint model config: ") + e.what());
  }
  if (frozen_digest(ckpt.model.lm) != field<std::string>(config, "frozen_digest")) {
    throw FormatError("checkpoint frozen LM digest does not match its parameters");
  }

  const json jopt = field<json>(config, "optimizer");
  ckpt.optimizer.lr = field<double>(jopt, "lr");
  ckpt.optimizer.beta1 = field<double>(jopt, "beta1");
  ckpt.optimizer.beta2 = field<double>(jopt, "beta2");
  ckpt.optimizer.eps = field<double>(jopt, "eps");
  ckpt.optimizer.step = field<std::uint64_t>(jopt, "step");
  for (const auto& [path, t] : opt_table.entries()) {
    const bool is_m = path.rfind("m.", 0) == 0;
    if (!is_m && path.rfind("v.", 0) != 0) throw FormatError("bad optimizer entry " + path);
    const std::string target = path.substr(2);
    if (!ckpt.model.params.contains(target) ||
        ckpt.model.params.get(target).shape() != t.shape()) {
      throw FormatError("optimizer entry " + path + " does not match a trainable parameter");
    }
    const auto values = t.data();
    (is_m ? ckpt.optimizer.m : ckpt.optimizer.v)[target].assign(values.begin(), values.end());
  }
  if (ckpt.optimizer.m.size() != ckpt.optimizer.v.size()) {
    throw FormatError("optimizer table has unpaired moment entries");
  }

  for (const auto& h : field<json>(config, "history")) {
    ckpt.history.push_back({field<std::string>(h, "stage"), field<std::string>(h, "log_digest")});
  }
  ckpt.data_digests = field<std::map<std::string, std::string>>(config, "data_digests");
  return ckpt;
}

std::string checkpoint_save(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = checkpoint_serialize(ckpt);
  write_file(path, std::string(bytes.begin(), bytes.end()));
  return hex64(fnv1a64(bytes));
}

Checkpoint checkpoint_load(const std::string& path, const TaskRegistry& registry) {
  const std::string text = read_file(path);
  return checkpoint_deserialize(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()),
      registry);
}

IOTLM_NAMESPACE_END
