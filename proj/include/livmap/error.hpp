// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace livmap {

/// Bad input: malformed files, violated preconditions, inconsistent
/// configuration. The CLI maps it to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while computing, e.g. a diverging training run. Exit code 2.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace livmap
