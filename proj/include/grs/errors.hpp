#pragma once

#include <stdexcept>
#include <string>

namespace grs {

// Malformed or inconsistent caller input (shapes, files, configs).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical problem without a well-defined answer (collinear points,
// rotation at pi, singular system).
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parse failure with the offending 1-based line number.
class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : InputError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace grs
