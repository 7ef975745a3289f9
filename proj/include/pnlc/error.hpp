// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pnlc {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: dataset lines, config files, checkpoints.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a documented precondition (bad dimension, bad tau, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A text or embedding provider failed after exhausting its retries.
class ProviderError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during training or value iteration.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace pnlc
