#pragma once

#include <stdexcept>
#include <string>

namespace mld {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimension or shape contract violated.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by an op; the message names the offending node.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Malformed file: bad magic, truncation, version, corrupt table.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or model pieces that cannot work together.
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, size_t last_good_epoch)
      : Error(what), last_good_epoch_(last_good_epoch) {}
  size_t last_good_epoch() const noexcept { return last_good_epoch_; }

 private:
  size_t last_good_epoch_;
};

}  // namespace mld
