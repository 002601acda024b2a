#pragma once

#include <stdexcept>
#include <string>

namespace biasaudit {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files (lexicon, config, model files, CSV, banks).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Violated invariants or inconsistent configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Requested words or groups are absent from a corpus, bank, or vocabulary.
class CoverageError : public Error {
 public:
  using Error::Error;
};

// Operation is not supported by the given model handle.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Optimization failed to make progress or produced non-finite values.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Filesystem problems (missing paths, failed writes).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace biasaudit
