// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace kafa {

enum class Errc {
  io,
  corrupt_header,
  dimension_mismatch,
  duplicate_id,
  non_finite,
  unnormalized,
  unknown_id,
  shape_mismatch,
  invalid_argument,
  insufficient_data,
  modality_mismatch,
  divergence,
};

inline const char* errc_name(Errc e) {
  switch (e) {
    case Errc::io: return "io";
    case Errc::corrupt_header: return "corrupt header";
    case Errc::dimension_mismatch: return "dimension mismatch";
    case Errc::duplicate_id: return "duplicate id";
    case Errc::non_finite: return "non-finite value";
    case Errc::unnormalized: return "unnormalized vector";
    case Errc::unknown_id: return "unknown id";
    case Errc::shape_mismatch: return "shape mismatch";
    case Errc::invalid_argument: return "invalid argument";
    case Errc::insufficient_data: return "insufficient data";
    case Errc::modality_mismatch: return "checkpoint modality mismatch";
    case Errc::divergence: return "divergence";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the Errc codes so
/// callers (and the CLI exit-code mapping) can branch on the case.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace kafa
