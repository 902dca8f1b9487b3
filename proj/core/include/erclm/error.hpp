#pragma once

#include <stdexcept>
#include <string>

namespace erclm {

enum class ErrorCode {
  dimension,
  singular_configuration,
  insufficient_data,
  invalid_argument,
  unalignable,
  parse,
  io,
  checksum,
  version,
  truncated,
};

const char* to_string(ErrorCode code) noexcept;

/// Base exception for every failure raised by the library.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

class DimensionError : public Error {
public:
  explicit DimensionError(const std::string& what) : Error(ErrorCode::dimension, what) {}
};

class SingularConfigurationError : public Error {
public:
  explicit SingularConfigurationError(const std::string& what)
      : Error(ErrorCode::singular_configuration, what) {}
};

class InsufficientDataError : public Error {
public:
  explicit InsufficientDataError(const std::string& what)
      : Error(ErrorCode::insufficient_data, what) {}
};

class UnalignableError : public Error {
public:
  explicit UnalignableError(const std::string& what) : Error(ErrorCode::unalignable, what) {}
};

/// Parse failure; `line()` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
public:
  ParseError(const std::string& what, int line)
      : Error(ErrorCode::parse, line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  int line() const noexcept { return line_; }

private:
  int line_;
};

}  // namespace erclm
