#pragma once

#include <stdexcept>
#include <string>

namespace weightscape {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint does not match the parameter manifest of a graph.
class ManifestError : public Error {
 public:
  using Error::Error;
};

class PlanError : public Error {
 public:
  using Error::Error;
};

// Checkpoint file errors. Each failure mode has its own type so callers
// (and the CLI exit-code mapping) can tell them apart.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class FormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class DuplicateNameError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace weightscape
