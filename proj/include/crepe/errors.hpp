#pragma once

#include <stdexcept>
#include <string>

namespace crepe {

// Every failure the library reports derives from Error so callers can catch
// one type at the CLI boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class TokenLimitError : public Error {
 public:
  using Error::Error;
};

class RetrievalError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class DependencyError : public Error {
 public:
  using Error::Error;
};

class StaleConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace crepe
