#pragma once

#include <stdexcept>
#include <string>

namespace entstream {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shapes inconsistent with the requested operation.
struct ShapeError : Error {
  using Error::Error;
};

/// Non-finite or otherwise invalid numeric input.
struct NumericError : Error {
  using Error::Error;
};

/// Invalid configuration value (temperature <= 0, batch-norm on batch of 1, ...).
struct ConfigError : Error {
  using Error::Error;
};

/// Out-of-range index (class targets, question fields).
struct IndexError : Error {
  using Error::Error;
};

/// Unknown answer token.
struct VocabularyError : Error {
  using Error::Error;
};

/// Malformed dataset/checkpoint bytes; message carries the byte offset.
struct FormatError : Error {
  using Error::Error;
};

/// Missing or unreadable/unwritable file.
struct FileError : Error {
  using Error::Error;
};

/// Training produced a non-finite loss; message names epoch and batch.
struct DivergenceError : Error {
  using Error::Error;
};

/// Checkpoint does not match the model it is loaded into.
struct CompatibilityError : Error {
  using Error::Error;
};

/// A caller-supplied callable violated its contract (e.g. non-scalar loss).
struct ContractError : Error {
  using Error::Error;
};

/// Scene placement failed after the retry bound.
struct GenerationError : Error {
  using Error::Error;
};

}  // namespace entstream
