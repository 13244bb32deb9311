// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flipnorm {

enum class ErrorKind {
  invalid_input,
  invalid_label,
  invalid_encoding,
  invalid_spec,
  undefined_metric,
  config,
  data,
  divergence,
  io,
  checkpoint_mismatch,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
  case ErrorKind::invalid_input: return "invalid input";
  case ErrorKind::invalid_label: return "invalid label";
  case ErrorKind::invalid_encoding: return "invalid encoding";
  case ErrorKind::invalid_spec: return "invalid target spec";
  case ErrorKind::undefined_metric: return "undefined metric";
  case ErrorKind::config: return "config error";
  case ErrorKind::data: return "data error";
  case ErrorKind::divergence: return "divergence";
  case ErrorKind::io: return "i/o error";
  case ErrorKind::checkpoint_mismatch: return "checkpoint mismatch";
  }
  return "error";
}

/// Every failure raised by the library carries a kind so the CLI can map it
/// to a stable exit code.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string &what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string &what) {
  if (!condition) {
    fail(kind, what);
  }
}

} // namespace flipnorm
