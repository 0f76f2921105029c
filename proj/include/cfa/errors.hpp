#pragma once

#include <stdexcept>
#include <string>

namespace cfa {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. The message names the record index and field.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside an operation's domain (bad window, unmatched ids, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Tensor shapes that do not compose.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace cfa
