#pragma once

#include <stdexcept>
#include <string>

namespace alab {

enum class ErrorKind {
  InvalidInput,   // malformed argument or shape mismatch
  Config,         // configuration rejected before any work
  Io,             // missing or corrupt file
  Verification,   // a designed network failed its oracle check
  Numeric,        // non-finite value or singular system
};

class LabError : public std::runtime_error {
 public:
  LabError(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw LabError(kind, what);
}

}  // namespace alab
