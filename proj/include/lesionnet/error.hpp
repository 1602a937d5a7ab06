#pragma once

#include <stdexcept>
#include <string>

namespace lesionnet {

// Failure categories. The numeric values double as CLI exit codes and as
// C API status codes, so they must stay stable.
enum class ErrorKind : int {
  kInvalidArgument = 2,
  kNumeric = 3,
  kIo = 4,
  kConsistency = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace lesionnet
