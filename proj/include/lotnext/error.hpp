#pragma once

#include <stdexcept>
#include <string>

namespace lotnext {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or indices that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input records, datasets, or generator settings that cannot be used.
class DataError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Unknown or malformed configuration keys and values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss; `dump` describes the offending batch.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::string dump)
      : Error(what), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

}  // namespace lotnext
