#pragma once

#include <stdexcept>
#include <string>

namespace stargnn {

enum class ErrorKind {
  usage,           // bad flags or arguments
  config,          // invalid configuration, missing backbone weights, bad window spec
  input,           // undecodable video, unreadable file
  empty_video,     // decodable container with no frames
  format,          // corrupt or foreign artifact file
  config_mismatch, // artifact produced under a different configuration
  contract,        // violated precondition (dimension mismatch, duplicate node, ...)
  lookup,          // referenced id not present
  mining,          // no valid negative in a batch
  pipeline_order,  // required upstream artifact missing
  numeric,         // non-finite values
  degenerate_embedding,
};

const char* to_string(ErrorKind kind);

// Process exit code / C API status for an error kind: 1 usage, 2 data, 3 numeric.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace stargnn
