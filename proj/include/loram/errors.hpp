// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace loram {

// Each error family maps onto one CLI exit code (see tools/loram_cli.cpp).

/// Invalid or inconsistent configuration value. Exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A required input artifact does not exist or cannot be read. Exit code 3.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch or structural inconsistency between inputs. Exit code 4.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced, or a degenerate numerical state. Exit code 5.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace loram
