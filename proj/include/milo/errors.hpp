#pragma once

#include <stdexcept>
#include <string>

namespace milo {

/// Error category, used for machine-parsable reporting and CLI exit codes.
enum class ErrorCode {
  Format,
  Data,
  Io,
  Shape,
  Rank,
  Numeric,
  Stat,
  Plan,
  Range,
  Config,
};

class MiloError : public std::runtime_error {
public:
  MiloError(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

#define MILO_DEFINE_ERROR(Name, Code)                   \
  class Name : public MiloError {                       \
  public:                                               \
    explicit Name(const std::string& msg)               \
        : MiloError(ErrorCode::Code, msg) {}            \
  }

MILO_DEFINE_ERROR(FormatError, Format);
MILO_DEFINE_ERROR(DataError, Data);
MILO_DEFINE_ERROR(IoError, Io);
MILO_DEFINE_ERROR(ShapeError, Shape);
MILO_DEFINE_ERROR(RankError, Rank);
MILO_DEFINE_ERROR(NumericError, Numeric);
MILO_DEFINE_ERROR(StatError, Stat);
MILO_DEFINE_ERROR(PlanError, Plan);
MILO_DEFINE_ERROR(RangeError, Range);
MILO_DEFINE_ERROR(ConfigError, Config);

#undef MILO_DEFINE_ERROR

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::Format: return "format";
    case ErrorCode::Data: return "data";
    case ErrorCode::Io: return "io";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::Rank: return "rank";
    case ErrorCode::Numeric: return "numeric";
    case ErrorCode::Stat: return "stat";
    case ErrorCode::Plan: return "plan";
    case ErrorCode::Range: return "range";
    case ErrorCode::Config: return "config";
  }
  return "unknown";
}

/// Process exit code for a failed operation: 2 config, 3 data/format, 4 numeric.
inline int error_exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::Config:
    case ErrorCode::Plan:
      return 2;
    case ErrorCode::Numeric:
      return 4;
    default:
      return 3;
  }
}

}  // namespace milo
