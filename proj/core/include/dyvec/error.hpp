#pragma once

#include <stdexcept>
#include <string>

namespace dyvec {

// Machine-parsable error category. The CLI prints `error: <code>: <message>`.
enum class ErrorCode {
  kInvalidArgument,
  kOutOfRange,
  kSequenceTooLong,
  kSegmentMismatch,
  kNotDivisible,
  kEmptyInput,
  kShapeMismatch,
  kHashMismatch,
  kDivergence,
  kNonFinite,
  kIo,
  kFormat,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace dyvec
