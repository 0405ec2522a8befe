// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "iotlm/chat.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

IOTLM_NAMESPACE_BEGIN

ChatSession::ChatSession(const MergedModel& model, std::ostream& out, bool echo)
    : model_(model), out_(out), echo_(echo) {}

std::string ChatSession::help_text() {
  return "commands:\n"
         "  :load <records.jsonl> [index]  select a sensor record (default index 0)\n"
         "  :ask                           ask the record's stored instruction\n"
         "  :help                          show this help\n"
         "  :quit                          leave the session\n"
         "any other line is a question about the selected record\n";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

bool ChatSession::handle(const std::string& raw) {
  const std::string line = trim(raw);
  if (echo_) out_ << "> " << line << "\n";
  if (line.empty()) return true;
  if (line[0] != ':') {
    ask(line);
    return true;
  }
  std::istringstream words(line);
  std::string cmd;
  words >> cmd;
  std::string rest;
  std::getline(words, rest);
  rest = trim(rest);
  if (cmd == ":quit") return false;
  if (cmd == ":help") {
    out_ << help_text();
  } else if (cmd == ":load") {
    load(rest);
  } else if (cmd == ":ask") {
    if (!sample_) {
      out_ << "error: no record selected; use :load first\n";
    } else if (!instruction_) {
      out_ << "error: the selected record has no stored instruction\n";
    } else {
      ask(*instruction_);
    }
  } else {
    out_ << "unknown command '" << cmd << "'\n" << help_text();
  }
  return true;
}

int ChatSession::run(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    if (!handle(line)) break;
  }
  return 0;
}

void ChatSession::load(const std::string& args) {
  std::istringstream words(args);
  std::string path;
  std::size_t index = 0;
  if (!(words >> path)) {
    out_ << "error: usage :load <records.jsonl> [index]\n";
    return;
  }
  std::string index_text;
  if (words >> index_text) {
    try {
      std::size_t used = 0;
      index = std::stoul(index_text, &used);
      if (used != index_text.size()) throw std::invalid_argument(index_text);
    } catch (const std::exception&) {
      out_ << "error: record index '" << index_text << "' is not a number\n";
      return;
    }
  }
  try {
    RecordFile file = read_records(model_.registry, path, true);
    if (index >= file.samples.size()) {
      out_ << "error: " << path << " has " << file.samples.size() << " records, no index " << index
           << "\n";
      return;
    }
    const TaskSpec& spec = model_.registry.get(file.samples[index].task_id);
    if (!model_.has_task(spec.name)) {
      out_ << "error: the model was not trained on task '" << spec.name << "'\n";
      return;
    }
    sample_ = std::move(file.samples[index]);
    instruction_.reset();
    if (file.instructions[index]) instruction_ = file.instructions[index]->instruction;
    task_ = spec.name;
    out_ << "loaded record " << index << " (task " << task_ << ", modalities";
    for (const auto& [kind, payload] : sample_->payloads) out_ << " " << modality_name(kind);
    out_ << ")\n";
  } catch (const Error& e) {
    out_ << "error: " << e.what() << "\n";
  }
}

void ChatSession::ask(const std::string& question) {
  if (!sample_) {
    out_ << "error: no record selected; use :load first\n";
    return;
  }
  try {
    GateSummary gates;
    const std::string answer = answer_question(model_, *sample_, task_, question, 64, &gates);
    out_ << "answer:" << (answer.empty() || answer[0] == ' ' ? "" : " ") << answer << "\n";

    const TaskSpec& spec = model_.registry.get(task_);
    NoGradGuard no_grad;
    const SensorSample* one[] = {&*sample_};
    const MergedOutput o = merged_forward(model_, one, task_);
    const auto head = o.head.data();
    out_ << "head:";
    if (spec.is_classification()) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < head.size(); ++i) {
        if (head[i] > head[best]) best = i;
      }
      out_ << " " << spec.classes[best];
    } else {
      const auto values = denormalize(spec, head);
      const std::size_t shown = std::min<std::size_t>(values.size(), 3);
      for (std::size_t i = 0; i < shown; ++i) out_ << (i ? "," : " ") << fmt2(values[i]);
      if (values.size() > shown) out_ << ",... (" << values.size() << " values)";
      out_ << " " << spec.units;
    }
    out_ << "\ngates:";
    for (std::size_t i = 0; i < gates.kinds.size(); ++i) {
      out_ << " " << modality_name(gates.kinds[i]) << "=" << fmt2(gates.weights[i]);
    }
    out_ << "\n";
    ++answers_;
  } catch (const Error& e) {
    out_ << "error: " << e.what() << "\n";
  }
}

IOTLM_NAMESPACE_END
