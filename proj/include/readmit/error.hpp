#ifndef READMIT_ERROR_HPP
#define READMIT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace readmit {

/// Base of every error raised by the library. The CLI maps each subclass
/// onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed a value outside an operation's domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Unparsable or inconsistent file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Missing or unreadable path.
class PathError : public Error {
 public:
  using Error::Error;
};

/// Records that parse but violate a domain invariant (e.g. overlapping stays).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value during forward/backward or training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace readmit

#endif  // READMIT_ERROR_HPP
