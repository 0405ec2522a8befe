// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The whole model stack is compiled against one scalar type. The default build
// uses 32-bit reals; a second build of the same sources with
// IOTLM_DOUBLE_PRECISION defined backs the finite-difference gradient checker.
// Each build lives in its own inline namespace so both can be linked together.

#ifdef IOTLM_DOUBLE_PRECISION
#define IOTLM_PRECISION_NS f64
#else
#define IOTLM_PRECISION_NS f32
#endif

#define IOTLM_NAMESPACE_BEGIN \
  namespace iotlm {           \
  inline namespace IOTLM_PRECISION_NS {
#define IOTLM_NAMESPACE_END \
  }                         \
  }

IOTLM_NAMESPACE_BEGIN

#ifdef IOTLM_DOUBLE_PRECISION
using Real = double;
#else
using Real = float;
#endif

IOTLM_NAMESPACE_END
