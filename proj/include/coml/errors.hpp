#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace coml {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A forward value or a cotangent became NaN/Inf. `node` is the tape index of
// the offending node (or npos when raised outside a tape).
class NonFiniteError : public Error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  NonFiniteError(const std::string& what, std::size_t node, bool backward)
      : Error(what), node_(node), backward_(backward) {}

  std::size_t node() const { return node_; }
  bool in_backward_pass() const { return backward_; }

 private:
  std::size_t node_;
  bool backward_;
};

class UnsupportedPrimitive : public Error {
 public:
  explicit UnsupportedPrimitive(std::string name)
      : Error("unsupported primitive: " + name), name_(std::move(name)) {}
  const std::string& primitive() const { return name_; }

 private:
  std::string name_;
};

// A closed-loop simulation left the finite range.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double time)
      : Error(what + " (t = " + std::to_string(time) + " s)"), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

// Malformed text input. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace coml
