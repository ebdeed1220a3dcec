#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace petsgan {

// Bad arguments: wrong shapes, out-of-range hyperparameters, unknown enums.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Image smaller than what the preprocessing rule can handle.
struct SizeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DecodeError : std::runtime_error {
  DecodeError(const std::string& path, const std::string& what)
      : std::runtime_error("cannot decode '" + path + "': " + what), path(path) {}
  std::string path;
};

// An operation's precondition on a trained model is not met (e.g. an IR net
// that does not reconstruct its exemplar).
struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingDivergence : std::runtime_error {
  TrainingDivergence(const std::string& what, std::int64_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step(step) {}
  std::int64_t step;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorruptArchive : CheckpointError {
  using CheckpointError::CheckpointError;
};

struct VersionMismatch : CheckpointError {
  using CheckpointError::CheckpointError;
};

struct ProviderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace petsgan
