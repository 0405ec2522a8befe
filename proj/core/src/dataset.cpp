// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "iotlm/bytes.hpp"
#include "iotlm/encoders.hpp"
#include "iotlm/rng.hpp"

IOTLM_NAMESPACE_BEGIN

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Instruction templates

namespace {

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  // "-0.00" reads back fine but looks odd in answers.
  if (std::string(buf) == "-0.00") return "0.00";
  return buf;
}

const char* class_noun(const std::string& task) {
  if (task == "activity") return "activity";
  if (task == "event") return "event";
  if (task == "gesture") return "gesture";
  return "touch";
}

std::vector<std::string> regression_templates(const std::string& task) {
  if (task == "gaze") {
    return {"Report the gaze location in centimeters as x,y.",
            "Where on the screen is the user looking? Give x,y in cm.",
            "Estimate the gaze point as x,y centimeters."};
  }
  if (task == "depth") {
    return {"Report the mean scene depth in meters.", "How far away is the scene on average, in meters?",
            "Estimate the average depth in meters."};
  }
  if (task == "pose") {
    return {"Report the first joint angles in radians as a,b,c.",
            "Give the root joint angles in radians as a,b,c.",
            "Estimate the first joint's three angles in radians."};
  }
  return {"Report the wrist position in millimeters as x,y,z.",
          "Where is the wrist joint? Give x,y,z in mm.",
          "Estimate the wrist location as x,y,z millimeters."};
}

// --- rationale statistics, computed from payloads ---

const SeqPayload& seq_of(const SensorSample& s, ModalityKind k) { return std::get<SeqPayload>(s.payloads.at(k)); }
const GridPayload& grid_of(const SensorSample& s, ModalityKind k) { return std::get<GridPayload>(s.payloads.at(k)); }

double channel_mean(const SeqPayload& p, std::size_t c) {
  double acc = 0;
  for (std::size_t t = 0; t < p.steps; ++t) acc += p.values[t * p.channels + c];
  return acc / static_cast<double>(p.steps);
}

double channel_std(const SeqPayload& p, std::size_t c) {
  const double m = channel_mean(p, c);
  double acc = 0;
  for (std::size_t t = 0; t < p.steps; ++t) {
    const double d = p.values[t * p.channels + c] - m;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(p.steps));
}

std::string rationale(const TaskSpec& spec, const SensorSample& s) {
  if (spec.name == "activity" && s.payloads.count(ModalityKind::IMU)) {
    const double e = channel_mean(seq_of(s, ModalityKind::IMU), 8);
    const char* level = e < 0.15 ? "still" : e < 0.5 ? "light" : e < 0.9 ? "moderate" : "vigorous";
    return std::string("Motion energy is ") + level + ".";
  }
  if (spec.name == "event" && s.payloads.count(ModalityKind::Audio)) {
    const GridPayload& g = grid_of(s, ModalityKind::Audio);
    std::vector<double> frame(g.width, 0.0);
    for (std::size_t f = 0; f < g.height; ++f)
      for (std::size_t t = 0; t < g.width; ++t) frame[t] += g.values[f * g.width + t];
    std::size_t best = 2;
    double best_score = -1e300;
    for (std::size_t period = 2; period <= 5; ++period) {
      double on = 0, off = 0;
      std::size_t n_on = 0, n_off = 0;
      for (std::size_t t = 0; t < g.width; ++t) {
        if (t % period == 0) on += frame[t], ++n_on;
        else off += frame[t], ++n_off;
      }
      const double score = on / n_on - off / n_off;
      if (score > best_score) best_score = score, best = period;
    }
    return "Audio spikes repeat every " + std::to_string(best) + " frames.";
  }
  if (spec.name == "gesture" && s.payloads.count(ModalityKind::Gaze)) {
    const SeqPayload& g = seq_of(s, ModalityKind::Gaze);
    const double sx = channel_std(g, 0), sy = channel_std(g, 1);
    const char* dir = std::max(sx, sy) < 0.15 ? "barely" : sx > sy ? "horizontally" : "vertically";
    return std::string("Gaze moves ") + dir + ".";
  }
  if (spec.name == "touch" && s.payloads.count(ModalityKind::Depth)) {
    const GridPayload& g = grid_of(s, ModalityKind::Depth);
    const double m = std::accumulate(g.values.begin(), g.values.end(), 0.0) / static_cast<double>(g.values.size());
    return std::string("Contact is ") + (m < 0.02 ? "firm" : "light") + ".";
  }
  return "Sensor evidence is limited.";
}

}  // namespace

std::size_t instruction_template_count(const TaskSpec& spec) {
  return spec.is_classification() ? 3 : regression_templates(spec.name).size();
}

std::string render_instruction(const TaskSpec& spec, std::size_t template_id) {
  if (template_id >= instruction_template_count(spec)) {
    throw IndexError("template " + std::to_string(template_id) + " out of range for " + spec.name);
  }
  if (!spec.is_classification()) return regression_templates(spec.name)[template_id];
  const std::string noun = class_noun(spec.name);
  const std::string opts = join(spec.classes, ", ");
  switch (template_id) {
    case 0: return "Which " + noun + " best matches this recording? Options: " + opts + ".";
    case 1: return "Classify the " + noun + ". Options: " + opts + ".";
    default: return "Name the " + noun + " the sensors show. Options: " + opts + ".";
  }
}

std::string render_answer(const TaskSpec& spec, const SensorSample& s) {
  if (spec.is_classification()) {
    if (s.class_id < 0 || static_cast<std::size_t>(s.class_id) >= spec.classes.size()) {
      throw DataError("sample class id out of range for " + spec.name);
    }
    return " " + spec.classes[static_cast<std::size_t>(s.class_id)] + ". " + rationale(spec, s);
  }
  if (s.target.size() != spec.out_dim) throw DataError("regression label size mismatch for " + spec.name);
  if (spec.name == "depth") {
    const double m = std::accumulate(s.target.begin(), s.target.end(), 0.0) / static_cast<double>(s.target.size());
    return " " + fixed2(m / 1000.0);
  }
  const std::size_t n = spec.name == "gaze" ? 2 : 3;
  std::vector<std::string> parts;
  for (std::size_t i = 0; i < n; ++i) parts.push_back(fixed2(s.target[i]));
  return " " + join(parts, ",");
}

std::vector<double> parse_numeric_answer(const std::string& answer) {
  std::vector<double> out;
  std::stringstream ss(answer);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      throw FormatError("answer '" + answer + "' is not a number list", 0);
    }
  }
  return out;
}

std::vector<InstructionSample> make_instruction_pairs(const TaskRegistry& registry,
                                                      std::span<const SensorSample> samples,
                                                      std::uint64_t template_seed) {
  if (samples.empty()) throw ContractError("make_instruction_pairs: no samples");
  std::vector<InstructionSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const TaskSpec& spec = registry.get(s.task_id);
    Rng rng(template_seed, s.sample_id);
    const std::size_t t = rng.below(instruction_template_count(spec));
    InstructionSample is;
    is.base = s;
    is.instruction = render_instruction(spec, t);
    is.answer = render_answer(spec, s);
    if (spec.is_classification()) is.options = spec.classes;
    out.push_back(std::move(is));
  }
  return out;
}

std::string template_corpus(const TaskRegistry& registry, const std::vector<std::string>& tasks,
                            std::size_t samples_per_task, std::uint64_t seed) {
  std::string corpus;
  for (const auto& task : tasks) {
    if (samples_per_task == 0) break;
    const auto samples = gen_task_data(registry, task, samples_per_task, seed ^ 0xc0de);
    for (const auto& p : make_instruction_pairs(registry, samples, seed)) {
      corpus += p.instruction + " Answer:" + p.answer + "\n";
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Records

namespace {

// 9 significant digits round-trip any 32-bit float exactly.
json number9(Real v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return json(std::strtod(buf, nullptr));
}

json values9(std::span<const Real> values) {
  json arr = json::array();
  arr.get_ref<json::array_t&>().reserve(values.size());
  for (Real v : values) arr.push_back(number9(v));
  return arr;
}

json payload_json(const Payload& payload) {
  json j;
  if (const auto* g = std::get_if<GridPayload>(&payload)) {
    j["shape"] = {g->height, g->width, g->channels};
    j["units"] = g->units;
    j["values"] = values9(g->values);
  } else {
    const auto& s = std::get<SeqPayload>(payload);
    j["shape"] = {s.steps, s.channels};
    j["sample_rate"] = s.sample_rate_hz;
    j["values"] = values9(s.values);
  }
  return j;
}

std::vector<Real> read_values(const json& arr) {
  if (!arr.is_array()) throw DataError("'values' must be an array");
  std::vector<Real> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw DataError("non-numeric value");
    out.push_back(static_cast<Real>(v.get<double>()));
  }
  return out;
}

Payload payload_from_json(ModalityKind kind, const json& j) {
  const auto& layout = modality_layout(kind);
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (layout.family == EncoderFamily::Grid) {
    if (shape.size() != 3) throw DataError("grid payload needs a 3-D shape");
    GridPayload g;
    g.height = shape[0];
    g.width = shape[1];
    g.channels = shape[2];
    g.units = j.value("units", std::string());
    g.values = read_values(j.at("values"));
    g.validate();
    return g;
  }
  if (shape.size() != 2) throw DataError("sequence payload needs a 2-D shape");
  SeqPayload s;
  s.steps = shape[0];
  s.channels = shape[1];
  s.sample_rate_hz = j.value("sample_rate", 0.0);
  s.values = read_values(j.at("values"));
  s.validate();
  return s;
}

}  // namespace

std::string encode_record(const TaskRegistry& registry, const SensorSample& s,
                          const InstructionSample* instr) {
  const TaskSpec& spec = registry.get(s.task_id);
  json j;
  j["sample_id"] = s.sample_id;
  j["task_id"] = s.task_id;
  j["task"] = spec.name;
  json payloads = json::object();
  for (const auto& [kind, p] : s.payloads) payloads[std::string(modality_name(kind))] = payload_json(p);
  j["payloads"] = std::move(payloads);
  if (spec.is_classification()) {
    j["label"] = s.class_id;
  } else {
    j["label"] = values9(s.target);
  }
  j["latent"] = values9(s.latent);
  if (instr) {
    j["instruction"] = instr->instruction;
    j["answer"] = instr->answer;
    j["options"] = instr->options;
  }
  return j.dump();
}

RecordFile parse_records(const TaskRegistry& registry, const std::string& text, bool strip_latent) {
  RecordFile out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      SensorSample s;
      s.sample_id = j.at("sample_id").get<std::uint64_t>();
      s.task_id = j.at("task_id").get<std::size_t>();
      const TaskSpec& spec = registry.get(s.task_id);
      if (j.contains("task") && j["task"].get<std::string>() != spec.name) {
        throw DataError("task name does not match task_id");
      }
      for (const auto& [name, pj] : j.at("payloads").items()) {
        const ModalityKind kind = modality_from_name(name);
        if (!spec.uses(kind)) throw DataError("modality '" + name + "' not used by task " + spec.name);
        s.payloads.emplace(kind, payload_from_json(kind, pj));
      }
      const json& label = j.at("label");
      if (spec.is_classification()) {
        s.class_id = label.get<std::int64_t>();
        if (s.class_id < 0 || static_cast<std::size_t>(s.class_id) >= spec.out_dim) {
          throw DataError("class label out of range");
        }
      } else {
        s.target = read_values(label);
        if (s.target.size() != spec.out_dim) throw DataError("label has the wrong size");
      }
      if (!strip_latent && j.contains("latent")) s.latent = read_values(j["latent"]);
      std::optional<InstructionSample> instr;
      if (j.contains("instruction")) {
        InstructionSample is;
        is.instruction = j.at("instruction").get<std::string>();
        is.answer = j.at("answer").get<std::string>();
        is.options = j.value("options", std::vector<std::string>{});
        is.base = s;
        instr = std::move(is);
      }
      out.samples.push_back(std::move(s));
      out.instructions.push_back(std::move(instr));
    } catch (const json::exception& e) {
      throw FormatError(std::string("malformed record: ") + e.what(), line_no);
    } catch (const Error& e) {
      throw FormatError(std::string("invalid record: ") + e.what(), line_no);
    }
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write to '" + path + "' failed");
}

std::string file_digest(const std::string& path) { return hex64(fnv1a64(read_file(path))); }

RecordFile read_records(const TaskRegistry& registry, const std::string& path, bool strip_latent) {
  return parse_records(registry, read_file(path), strip_latent);
}

std::string write_records(const TaskRegistry& registry, const std::string& path,
                          std::span<const SensorSample> samples) {
  std::string text;
  for (const auto& s : samples) text += encode_record(registry, s) + "\n";
  write_file(path, text);
  return hex64(fnv1a64(text));
}

std::string write_records(const TaskRegistry& registry, const std::string& path,
                          std::span<const InstructionSample> samples) {
  std::string text;
  for (const auto& s : samples) text += encode_record(registry, s.base, &s) + "\n";
  write_file(path, text);
  return hex64(fnv1a64(text));
}

// ---------------------------------------------------------------------------
// Splits and subsets

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed, stream);
  // Fisher-Yates with our own draws so the order is library-independent.
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

}  // namespace

Split split_dataset(std::span<const SensorSample> samples, std::array<double, 3> fractions,
                    std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 || *std::min_element(fractions.begin(), fractions.end()) < 0) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  const std::size_t n = samples.size();
  const auto idx = shuffled_indices(n, seed, 0x5b11);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));
  Split out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? out.train : i < n_train + n_val ? out.val : out.test;
    dst.push_back(samples[idx[i]]);
  }
  return out;
}

std::vector<SensorSample> fewshot_subset(const TaskSpec& spec, std::span<const SensorSample> train,
                                         std::size_t k, std::uint64_t seed) {
  if (k > train.size()) {
    throw ConfigError("few-shot k=" + std::to_string(k) + " exceeds " + std::to_string(train.size()) +
                      " training samples");
  }
  const auto idx = shuffled_indices(train.size(), seed, 0xf5);
  std::vector<SensorSample> out;
  if (!spec.is_classification()) {
    for (std::size_t i = 0; i < k; ++i) out.push_back(train[idx[i]]);
    return out;
  }
  std::vector<std::vector<std::size_t>> by_class(spec.out_dim);
  for (std::size_t i : idx) by_class.at(static_cast<std::size_t>(train[i].class_id)).push_back(i);
  std::vector<std::size_t> cursor(spec.out_dim, 0);
  while (out.size() < k) {
    for (std::size_t c = 0; c < spec.out_dim && out.size() < k; ++c) {
      if (cursor[c] < by_class[c].size()) out.push_back(train[by_class[c][cursor[c]++]]);
    }
  }
  return out;
}

ModalityRatio ModalityRatio::parse(const std::string& text) {
  ModalityRatio r;
  if (text == "single") {
    r.single = true;
    r.ratio = 0;
    return r;
  }
  try {
    std::size_t used = 0;
    r.ratio = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw ConfigError("modality ratio must be 'single' or a number in [0,1], got '" + text + "'");
  }
  if (!(r.ratio >= 0 && r.ratio <= 1)) throw ConfigError("modality ratio must lie in [0,1]");
  return r;
}

std::string ModalityRatio::str() const {
  if (single) return "single";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", ratio);
  return buf;
}

std::vector<SensorSample> apply_modality_ratio(std::span<const SensorSample> samples,
                                               const ModalityRatio& ratio, std::uint64_t seed) {
  std::vector<SensorSample> out(samples.begin(), samples.end());
  const std::size_t n = out.size();
  const std::size_t reduce =
      ratio.single ? n : static_cast<std::size_t>(std::llround((1.0 - ratio.ratio) * static_cast<double>(n)));
  const auto idx = shuffled_indices(n, seed, 0x3a71);
  for (std::size_t i = 0; i < reduce; ++i) {
    auto& payloads = out[idx[i]].payloads;
    if (payloads.size() > 1) payloads.erase(std::next(payloads.begin()), payloads.end());
  }
  return out;
}

IOTLM_NAMESPACE_END
