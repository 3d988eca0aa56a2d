#pragma once

#include <stdexcept>
#include <string>

namespace textlens {

/// Base for every error the library raises. The `exit_code` is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code) : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

namespace exit_codes {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kData = 3;
inline constexpr int kNumeric = 4;
inline constexpr int kIo = 5;
}  // namespace exit_codes

/// Bad arguments, invalid configuration, infeasible requests.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what, exit_codes::kUsage) {}
};

/// Tensor shapes that do not conform.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(what, exit_codes::kUsage) {}
};

/// Content that parses but is semantically wrong (duplicate pairs, unknown skills).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, exit_codes::kData) {}
};

/// Malformed file content; the message carries the line number.
class ParseError : public DataError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// An item that an embedding provider cannot resolve.
class LookupError : public DataError {
 public:
  explicit LookupError(const std::string& what) : DataError(what) {}
};

/// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, exit_codes::kNumeric) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, exit_codes::kIo) {}
};

}  // namespace textlens
