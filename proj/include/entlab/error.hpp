#pragma once

#include <stdexcept>
#include <string>

namespace entlab {

// Mirrors entlab_status in entlab.h; the C boundary maps one onto the other.
enum class ErrorCode {
  kInvalidArgument = 1,
  kOutOfRange = 2,
  kExhausted = 3,
  kNotFound = 4,
  kIo = 5,
  kFormat = 6,
  kNumerical = 7,
  kDiverged = 8,
  kInternal = 9,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::kInvalidArgument, what);
}

}  // namespace entlab
