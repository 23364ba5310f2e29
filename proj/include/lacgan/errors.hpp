#pragma once

#include <stdexcept>
#include <string>

namespace lacgan {

enum class ErrorKind {
  Config,      // bad configuration, checkpoint/config mismatch
  Load,        // corrupt or incompatible checkpoint
  Data,        // malformed or missing input data
  Shape,       // tensor or raster shape mismatch
  Geometry,    // degenerate geometric input
  Alignment,   // face alignment could not be computed
  Contract,    // caller violated a precondition
  Divergence,  // non-finite loss during training
  Metric,      // metric undefined on the given inputs
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Process exit code used by the command line tools for an error category:
/// 2 configuration, 3 data, 4 divergence/metric, 1 anything else.
int exit_code(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace lacgan
