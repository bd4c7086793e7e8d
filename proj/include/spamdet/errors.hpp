#pragma once

#include <stdexcept>
#include <string>

namespace spamdet {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not compose.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad data values: out-of-range labels or token IDs.
class InputError : public Error {
 public:
  using Error::Error;
};

// Invalid or mutually inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class VocabError : public Error {
 public:
  using Error::Error;
};

// Corpus files that cannot be ingested.
class LoadError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace spamdet
