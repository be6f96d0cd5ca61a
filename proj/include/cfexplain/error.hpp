// Exception hierarchy shared by all modules.
#pragma once

#include <stdexcept>
#include <string>

namespace cfexplain {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or precondition violation at an API boundary.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Failure reading a dataset, manifest, image or checkpoint.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// An object was used in a state that does not permit the call
/// (e.g. explaining with an untrained bundle).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Degenerate numeric input (zero variance, singular matrix, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training could not proceed or diverged.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given labels (e.g. AUC with one class).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration; the message names the dotted field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cfexplain
