#pragma once

#include <stdexcept>

namespace dpm {

/// Malformed or truncated file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed input in a variant we do not handle (e.g. stereo WAV).
class UnsupportedFormat : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace dpm
