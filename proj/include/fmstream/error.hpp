// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fmstream {

enum class ErrorCode {
  // validation
  ShapeMismatch,
  UnsupportedKernel,
  CyclicBypass,
  InvalidArgument,
  Format,
  Io,
  // capacity
  DoesNotFit,
  SegmentOverflow,
  WbufOverflow,
  SliceTooSmall,
  BufferOverflow,
  // runtime
  BypassSourceMissing,
  UnresolvedFlag,
  BmMiss,
  CmMiss,
  VerificationMismatch,
  Internal,
};

const char* error_code_name(ErrorCode code);

// Coarse class used for process exit codes and the C API.
enum class ErrorClass { Validation, Capacity, Verification, Internal };
ErrorClass error_class(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, int layer = kNoLayer)
      : std::runtime_error(std::move(message)), code_(code), layer_(layer) {}

  ErrorCode code() const { return code_; }
  // Offending layer index, kNoLayer when not layer-specific.
  int layer() const { return layer_; }

  static constexpr int kNoLayer = -2;

 private:
  ErrorCode code_;
  int layer_;
};

}  // namespace fmstream
