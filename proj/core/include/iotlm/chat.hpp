// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "iotlm/train.hpp"

IOTLM_NAMESPACE_BEGIN

/// Line-oriented dialog over a tuned model. Commands:
///   :load <records.jsonl> [index]   select a sensor record
///   :ask                            ask the record's stored instruction
///   :help                           list commands
///   :quit                           leave
/// Any other line is a question about the selected record. Errors (bad
/// path, malformed record, no record selected) are reported and the session
/// continues.
class ChatSession {
 public:
  ChatSession(const MergedModel& model, std::ostream& out, bool echo = false);

  /// Handles one line; returns false once the session should end.
  bool handle(const std::string& line);
  /// Runs until `:quit` or end of input. Returns the exit status (0).
  int run(std::istream& in);

  bool has_sample() const { return sample_.has_value(); }
  std::size_t answers() const { return answers_; }

  static std::string help_text();

 private:
  void load(const std::string& args);
  void ask(const std::string& question);

  const MergedModel& model_;
  std::ostream& out_;
  bool echo_;
  std::optional<SensorSample> sample_;
  std::optional<std::string> instruction_;
  std::string task_;
  std::size_t answers_ = 0;
};

IOTLM_NAMESPACE_END
