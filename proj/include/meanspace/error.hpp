#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace meanspace {

enum class ErrorCode {
  invalid_argument,
  grid_mismatch,
  count_mismatch,
  divergence,
  undefined_measure,
  empty_mask,
  usage,
  io_open,
  io_magic,
  io_version,
  io_dtype,
  io_dims,
  io_payload,
  io_domain,
  io_header,
  config,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::grid_mismatch: return "grid_mismatch";
    case ErrorCode::count_mismatch: return "count_mismatch";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::undefined_measure: return "undefined_measure";
    case ErrorCode::empty_mask: return "empty_mask";
    case ErrorCode::usage: return "usage";
    case ErrorCode::io_open: return "io_open";
    case ErrorCode::io_magic: return "io_magic";
    case ErrorCode::io_version: return "io_version";
    case ErrorCode::io_dtype: return "io_dtype";
    case ErrorCode::io_dims: return "io_dims";
    case ErrorCode::io_payload: return "io_payload";
    case ErrorCode::io_domain: return "io_domain";
    case ErrorCode::io_header: return "io_header";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

// Every failure raised by the library. `field` names the offending input
// (a header field, config key, iteration, ...) and may be empty.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string field, const std::string& message)
      : std::runtime_error(message), code_(code), field_(std::move(field)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::string field_;
};

}  // namespace meanspace
