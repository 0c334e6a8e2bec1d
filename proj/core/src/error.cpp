#include "calf/error.hpp"

namespace calf {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage: return "usage error";
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::format: return "format error";
    case ErrorKind::config: return "config error";
    case ErrorKind::manifest: return "manifest error";
    case ErrorKind::capacity: return "capacity error";
    case ErrorKind::parse: return "parse error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(what), kind_(kind) {}

FormatError::FormatError(const std::string& what, std::size_t offset)
    : Error(ErrorKind::format, what + " (at byte offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

FormatError::FormatError(const std::string& what) : Error(ErrorKind::format, what) {}

FormatError::FormatError(const std::string& prefix, const FormatError& inner)
    : Error(ErrorKind::format, prefix + ": " + inner.what()), offset_(inner.offset()) {}

namespace {
std::string with_position(const std::string& what, std::size_t row, std::size_t column) {
  if (row == 0) return what;
  std::string out = what + " (row " + std::to_string(row);
  if (column != 0) out += ", column " + std::to_string(column);
  return out + ")";
}
}  // namespace

ParseError::ParseError(const std::string& what, std::size_t row, std::size_t column)
    : Error(ErrorKind::parse, with_position(what, row, column)), row_(row), column_(column) {}

}  // namespace calf
