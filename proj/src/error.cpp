#include "invlab/error.hpp"

namespace invlab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidParams: return "invalid-params";
    case ErrorCode::OutOfRange: return "out-of-range";
    case ErrorCode::GridDegenerate: return "grid-degenerate";
    case ErrorCode::EtaSingular: return "eta-singular";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::AlphaZero: return "alpha-zero";
    case ErrorCode::AlphaOne: return "alpha-one";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::NoConvergence: return "no-convergence";
    case ErrorCode::UnknownMethod: return "unknown-method";
    case ErrorCode::SchemaViolation: return "schema-violation";
    case ErrorCode::IoError: return "io-error";
    case ErrorCode::ConfigError: return "config-error";
    case ErrorCode::EmptySamples: return "empty-samples";
  }
  return "unknown";
}

}  // namespace invlab
