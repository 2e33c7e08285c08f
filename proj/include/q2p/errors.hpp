#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace q2p {

// Bad user-supplied input: missing files, unknown labels, out-of-range ids,
// malformed config. The CLI maps these to exit code 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Text that does not conform to a grammar. `position` is a byte offset for
// query strings and a 1-based line number for files.
struct ParseError : InputError {
  ParseError(const std::string& msg, std::size_t pos)
      : InputError(msg), position(pos) {}
  std::size_t position;
};

// A violated call contract: wrong arity, shape mismatch, non-scalar loss.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Shape mismatch between tensor operands.
struct ShapeError : ContractError {
  using ContractError::ContractError;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The query sampler ran out of attempts for a requested query type.
struct SamplingExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Corrupt, truncated, or incompatible checkpoint files.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace q2p
