#pragma once

#include <stdexcept>
#include <string>

namespace fedglmm {

// Base for all toolkit errors so callers can catch one type at the CLI edge.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid argument or configuration supplied by the caller.
class ParamError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; carries file and line context in the message.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, long line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what),
        file_(file),
        line_(line) {}
  const std::string& file() const { return file_; }
  long line() const { return line_; }

 private:
  std::string file_;
  long line_;
};

// Two datasets that must share identifiers do not.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// A linear solve hit a singular or indefinite system; message carries
// condition diagnostics.
class SingularHessianError : public Error {
 public:
  using Error::Error;
};

// Ill-formed or out-of-order federation message.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Broken channel, disconnect, or socket failure; names the peer.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Inconsistent site/coordinator setup detected at initialization.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedglmm
