// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iotlm/sensors.hpp"
#include "iotlm/tasks.hpp"

IOTLM_NAMESPACE_BEGIN

inline constexpr int kGeneratorVersion = 1;

/// Draws `n` samples of `task`. Sample i depends only on (task, seed, i).
/// Every modality renders a noisy partial view of the sample's latent; the
/// label is a deterministic function of the full latent.
std::vector<SensorSample> gen_task_data(const TaskRegistry& registry, const std::string& task,
                                        std::size_t n, std::uint64_t seed,
                                        double noise_scale = 1.0);

/// Latent vector layout: the label-determining block first (class one-hot or
/// true parameters), then one noise-free view block per modality in
/// canonical order.
struct LatentLayout {
  std::size_t label_dims = 0;
  struct View {
    ModalityKind kind;
    std::size_t offset;
    std::size_t size;
  };
  std::vector<View> views;
  std::size_t total = 0;
};
LatentLayout latent_layout(const TaskSpec& spec);

/// Design matrix rows = latent (or a view of it) plus intercept; targets are
/// the normalized label (regression) or the class one-hot. Returns in-sample
/// least-squares mean squared error.
double latent_least_squares_mse(const TaskSpec& spec, std::span<const SensorSample> samples,
                                std::optional<ModalityKind> view = std::nullopt);

void strip_latents(std::vector<SensorSample>& samples);

// ---------------------------------------------------------------------------
// Instruction pairs

struct InstructionSample {
  SensorSample base;
  std::string instruction;
  std::string answer;  // starts with a space; follows "Answer:"
  std::vector<std::string> options;

  bool operator==(const InstructionSample&) const = default;
};

std::size_t instruction_template_count(const TaskSpec& spec);
/// Fills one of the task's fixed templates chosen by (template_seed, sample id).
std::vector<InstructionSample> make_instruction_pairs(const TaskRegistry& registry,
                                                      std::span<const SensorSample> samples,
                                                      std::uint64_t template_seed);
/// Instruction text for a given template index (used by the chat REPL).
std::string render_instruction(const TaskSpec& spec, std::size_t template_id);
/// Canonical answer for a sample: class name plus rationale, or numbers with
/// two decimals.
std::string render_answer(const TaskSpec& spec, const SensorSample& sample);
/// Leading class name or numbers of an answer, for parse-back checks.
std::vector<double> parse_numeric_answer(const std::string& answer);

/// Text corpus drawn from the instruction templates for stub LM pretraining.
std::string template_corpus(const TaskRegistry& registry, const std::vector<std::string>& tasks,
                            std::size_t samples_per_task, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Records: one JSON object per line.

std::string encode_record(const TaskRegistry& registry, const SensorSample& sample,
                          const InstructionSample* instr = nullptr);

struct RecordFile {
  std::vector<SensorSample> samples;
  std::vector<std::optional<InstructionSample>> instructions;  // parallel to samples
};

/// Malformed lines raise FormatError naming the line; nothing is returned on
/// failure.
RecordFile parse_records(const TaskRegistry& registry, const std::string& text, bool strip_latent);
RecordFile read_records(const TaskRegistry& registry, const std::string& path, bool strip_latent);

/// Writes the file and returns its FNV-1a digest (hex).
std::string write_records(const TaskRegistry& registry, const std::string& path,
                          std::span<const SensorSample> samples);
std::string write_records(const TaskRegistry& registry, const std::string& path,
                          std::span<const InstructionSample> samples);

std::string file_digest(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

// ---------------------------------------------------------------------------
// Splits and subsets

struct Split {
  std::vector<SensorSample> train, val, test;
};
Split split_dataset(std::span<const SensorSample> samples, std::array<double, 3> fractions,
                    std::uint64_t seed);

/// Class-balanced draw for classification tasks (round-robin over classes in
/// id order), uniform otherwise.
std::vector<SensorSample> fewshot_subset(const TaskSpec& spec, std::span<const SensorSample> train,
                                         std::size_t k, std::uint64_t seed);

/// For a (1 - ratio) fraction of samples keep only the first canonical
/// modality; `single` reduces every sample.
struct ModalityRatio {
  bool single = false;
  double ratio = 1.0;

  static ModalityRatio parse(const std::string& text);
  std::string str() const;
};
std::vector<SensorSample> apply_modality_ratio(std::span<const SensorSample> samples,
                                               const ModalityRatio& ratio, std::uint64_t seed);

IOTLM_NAMESPACE_END
