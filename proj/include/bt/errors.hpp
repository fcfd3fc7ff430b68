#pragma once

#include <stdexcept>
#include <string>

namespace bt {

// Error classes map onto process exit codes: config 2, data 3, numeric 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient; a training step must never apply one.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bt
