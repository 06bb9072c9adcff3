#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace invlab {

enum class ErrorCode {
  InvalidParams,
  OutOfRange,
  GridDegenerate,
  EtaSingular,
  ShapeMismatch,
  NonFinite,
  AlphaZero,
  AlphaOne,
  Divergence,
  NoConvergence,
  UnknownMethod,
  SchemaViolation,
  IoError,
  ConfigError,
  EmptySamples,
};

std::string_view to_string(ErrorCode code);

// Every library failure is reported through this type; `code()` lets callers
// (and the CLI exit-code mapping) branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace invlab
