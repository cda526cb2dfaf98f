#include "zoomshot/errors.hpp"

namespace zoomshot {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config error";
    case ErrorKind::Usage: return "usage error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Degenerate: return "degenerate input";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Pairing: return "pairing error";
    case ErrorKind::Io: return "I/O error";
  }
  return "error";
}

const char* to_string(ParseFault fault) {
  switch (fault) {
    case ParseFault::BadMagic: return "bad magic";
    case ParseFault::BadVersion: return "unsupported version";
    case ParseFault::Truncated: return "truncated";
    case ParseFault::NonFinite: return "non-finite value";
    case ParseFault::BadField: return "invalid field";
    case ParseFault::TrailingBytes: return "trailing bytes";
  }
  return "?";
}

ParseError::ParseError(ParseFault fault, std::size_t offset, const std::string& detail)
    : Error(ErrorKind::Parse, std::string(to_string(fault)) + " at byte offset " +
                                  std::to_string(offset) + (detail.empty() ? "" : ": " + detail)),
      fault_(fault),
      offset_(offset) {}

}  // namespace zoomshot
