// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Precision independent entry point; the implementation lives in the 64-bit
// core library (link iotlm::core_f64) because central differences at h=1e-3
// are too coarse for 32-bit arithmetic.
namespace iotlm {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t coordinates = 0;
  bool passed = false;
};

struct GradcheckOptions {
  double h = 1e-3;
  double tolerance = 1e-3;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double seconds = 0;
  bool passed = false;
};

/// Every differentiable op on small random inputs, then the full merged-model
/// loss (text + head) on two generated samples in both insertion modes.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace iotlm
