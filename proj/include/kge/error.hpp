#pragma once

#include <stdexcept>
#include <string>

namespace kge {

// Base of every error raised by the library. Anything that is not a
// UserError is treated as an internal failure by the command line driver.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caused by bad input the user can fix: dataset files, configuration, flags.
class UserError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public UserError {
 public:
  using UserError::UserError;
};

class ConfigError : public UserError {
 public:
  using UserError::UserError;
};

class CacheError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Training produced a NaN or infinite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Every tuning trial failed.
class NoResultError : public Error {
 public:
  using Error::Error;
};

}  // namespace kge
