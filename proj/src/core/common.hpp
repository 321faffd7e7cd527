#pragma once

#include <stdexcept>
#include <string>

namespace opcorr {

enum class ErrorKind {
  config,   // bad configuration / construction parameters
  input,    // bad runtime input (shape mismatch, non-finite data, ...)
  io,       // filesystem / serialization
  numeric,  // divergence, non-finite intermediate state
  internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

}  // namespace opcorr
