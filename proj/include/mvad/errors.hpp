#pragma once

#include <stdexcept>

namespace mvad {

// Filesystem or stream failure, as opposed to malformed content. The CLI
// maps this to its I/O exit code.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mvad
