#pragma once

#include <stdexcept>
#include <string>

namespace dsc {

// Error taxonomy mirrored by the CLI exit codes:
//   input_error  -> 1, format_error -> 2, numeric_error -> 3.
struct input_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Container / on-disk format violations.
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training or attribution numeric failures (non-finite loss, exploding
// gradients, degenerate batches).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Model graph construction failures (shape mismatches, invalid topology).
struct build_error : input_error {
  using input_error::input_error;
};

}  // namespace dsc
