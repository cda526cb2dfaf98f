#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace zoomshot {

/// Broad failure class. Drives the CLI exit code.
enum class ErrorKind {
  Config,      // bad flag or configuration value
  Usage,       // API misuse (out-of-range step, non-scalar loss, ...)
  Shape,       // dimension mismatch between operands
  Degenerate,  // zero-norm row, zero variance, empty dataset
  Validation,  // payload violates a type invariant
  Parse,       // malformed file bytes
  Pairing,     // student/teacher image sets do not describe the same images
  Io,          // filesystem failure
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(ErrorKind::Usage, w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorKind::Shape, w) {}
};
struct PairingError : Error {
  explicit PairingError(const std::string& w) : Error(ErrorKind::Pairing, w) {}
};
struct ValidationError : Error {
  explicit ValidationError(const std::string& w) : Error(ErrorKind::Validation, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::Io, w) {}
};

/// Degenerate numeric input. `index` names the offending row when known.
class DegenerateError : public Error {
 public:
  static constexpr std::size_t kNoIndex = static_cast<std::size_t>(-1);
  explicit DegenerateError(const std::string& w, std::size_t index = kNoIndex)
      : Error(ErrorKind::Degenerate, w), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

enum class ParseFault {
  BadMagic,
  BadVersion,
  Truncated,
  NonFinite,
  BadField,
  TrailingBytes,
};

const char* to_string(ParseFault fault);

/// Structured parse failure carrying the byte offset where decoding stopped.
class ParseError : public Error {
 public:
  ParseError(ParseFault fault, std::size_t offset, const std::string& detail);
  ParseFault fault() const noexcept { return fault_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  ParseFault fault_;
  std::size_t offset_;
};

}  // namespace zoomshot
