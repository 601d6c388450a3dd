// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace patchflow {

// Error categories surfaced by the CLI as "error: <category>: <message>".
enum class ErrorKind {
  Config,      // bad configuration value or key
  Dimension,   // shape mismatch between tensors
  Domain,      // argument outside its valid range
  Conversion,  // checkpoint/schedule conversion not possible
  Format,      // malformed file contents
  Io,          // missing/unreadable/unwritable file
  Statistics,  // not enough data for a statistic
  Contract,    // API misuse (e.g. non-scalar loss)
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Conversion: return "conversion";
    case ErrorKind::Format: return "format";
    case ErrorKind::Io: return "io";
    case ErrorKind::Statistics: return "statistics";
    case ErrorKind::Contract: return "contract";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

}  // namespace patchflow
