#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lmap {

enum class ErrorCode {
  kInvalidArgument,
  kInvalidState,
  kConflict,
  kDegenerateGeometry,
  kWindowTooSmall,
  kInsufficientData,
  kGenerationFailed,
  kCapacityExceeded,
  kNumerical,
  kParse,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInvalidState: return "invalid-state";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kDegenerateGeometry: return "degenerate-geometry";
    case ErrorCode::kWindowTooSmall: return "window-too-small";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kGenerationFailed: return "generation-failed";
    case ErrorCode::kCapacityExceeded: return "capacity-exceeded";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kParse: return "parse";
  }
  return "unknown";
}

// Error: every failure the library reports carries one of the codes above.
class Error : public std::runtime_error {

  public:

  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), _code{code} {}

  ErrorCode code() const noexcept { return _code; }

  private:

  ErrorCode _code;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) {
    throw Error(code, what);
  }
}

}  // namespace lmap
