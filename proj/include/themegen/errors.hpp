#pragma once

#include <stdexcept>
#include <string>

namespace themegen {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad flags, malformed config files, incompatible model settings.  Exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Unreadable or inconsistent input data (MIDI, token files, manifests).  Exit code 3.
struct DataError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required (e.g. training loss).  Exit code 4.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace themegen
