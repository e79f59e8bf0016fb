#pragma once

#include <stdexcept>
#include <string>

namespace rankdenoise {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent corpus data (parse errors carry file:line).
struct CorpusError : Error {
  using Error::Error;
};

// Filesystem trouble: unwritable paths, failed renames, truncated files.
struct IoError : Error {
  using Error::Error;
};

// Invalid configuration values.
struct ConfigError : Error {
  using Error::Error;
};

// Checkpoint missing, corrupt, or shape-inconsistent.
struct CheckpointError : Error {
  using Error::Error;
};

// Non-finite loss during training.
struct TrainingDiverged : Error {
  using Error::Error;
};

}  // namespace rankdenoise
