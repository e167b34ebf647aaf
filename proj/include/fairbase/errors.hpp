#pragma once

#include <stdexcept>
#include <string>

namespace fairbase {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument content (bad shape, out-of-range value, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// An operation that requires at least one element received none.
class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// Configuration that cannot be executed (flag conflicts, impossible batch
// layout, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A (demographic, target) cell required by a metric is absent.
class MissingGroupError : public Error {
 public:
  MissingGroupError(int demographic, int target)
      : Error("missing group: demographic=" + std::to_string(demographic) +
              " target=" + std::to_string(target)),
        demographic_(demographic),
        target_(target) {}

  int demographic() const { return demographic_; }
  int target() const { return target_; }

 private:
  int demographic_;
  int target_;
};

// A declared demographic (optionally at one target class) has no samples
// where at least one was required. target() is -1 when the whole demographic
// is empty rather than a single cell.
class DegenerateGroupError : public Error {
 public:
  DegenerateGroupError(const std::string& what, int demographic, int target = -1)
      : Error(what), demographic_(demographic), target_(target) {}

  int demographic() const { return demographic_; }
  int target() const { return target_; }

 private:
  int demographic_;
  int target_;
};

// Malformed input file; line is 1-based and includes the header row.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what),
        path_(path),
        line_(line) {}

  const std::string& path() const { return path_; }
  std::size_t line() const { return line_; }

 private:
  std::string path_;
  std::size_t line_;
};

// Non-finite value where a finite one is required (diverged training, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace fairbase
