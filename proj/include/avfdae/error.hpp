#pragma once

#include <stdexcept>
#include <string>

namespace avfdae {

// Exit codes shared by the CLI. Every library error derives from Error and
// carries the code the CLI should return for it.
enum class ExitCode : int { Ok = 0, Config = 2, Data = 3, Numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::Config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::Data, what) {}
};

// Malformed audio container.
class FormatError : public DataError {
 public:
  explicit FormatError(const std::string& what) : DataError("wav format: " + what) {}
};

class PreprocessError : public DataError {
 public:
  explicit PreprocessError(const std::string& what) : DataError("preprocess: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::Numeric, what) {}
};

}  // namespace avfdae
