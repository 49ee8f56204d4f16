#pragma once

#include <stdexcept>
#include <string>

namespace bevrecon {

/// Classified decode failures for the binary formats (tensor container,
/// collaboration payload, checkpoint archive).
enum class DecodeErrorKind {
  kBadMagic,
  kBadVersion,
  kUnknownDType,
  kBadHeader,
  kTruncated,
  kTrailingBytes,
  kMissingSection,
  kNonCanonicalOrder,
  kIndexOutOfRange,
};

const char* to_string(DecodeErrorKind kind);

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail),
        kind_(kind) {}

  DecodeErrorKind kind() const { return kind_; }

 private:
  DecodeErrorKind kind_;
};

/// Raised for malformed key=value config text, unknown keys, or
/// checkpoint/config mismatches.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bevrecon
