#pragma once

#include <stdexcept>
#include <string>

namespace convlstm {

// Error taxonomy. The CLI maps these onto its stable exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };   // shape or axis mismatch
struct ConfigError : Error { using Error::Error; };      // invalid configuration value
struct ArgumentError : Error { using Error::Error; };    // invalid call argument
struct IndexError : Error { using Error::Error; };       // out-of-range index
struct ParseError : Error { using Error::Error; };       // malformed text input
struct ValidationError : Error { using Error::Error; };  // semantically invalid data
struct FormatError : Error { using Error::Error; };      // malformed binary input
struct TrainingError : Error { using Error::Error; };    // divergence and friends

}  // namespace convlstm
