#pragma once

#include <stdexcept>
#include <string>

namespace trialscope {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Input violates a domain invariant (bad configuration, bad parameters, ...).
class ValidationError : public Error {
public:
  using Error::Error;
};

/// A referenced run, group, plugin, job or configuration does not exist.
class NotFoundError : public Error {
public:
  using Error::Error;
};

/// Filesystem access failed.
class IoError : public Error {
public:
  using Error::Error;
};

/// On-disk data could not be parsed. Carries the file and 1-based line when known.
class ParseError : public Error {
public:
  ParseError(std::string file, std::size_t line, const std::string& what)
      : Error(file + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        file_(std::move(file)), line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

private:
  std::string file_;
  std::size_t line_;
};

}  // namespace trialscope
