//
// Copyright 2026 The ragdp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ragdp {

// Coarse error categories. The CLI maps these onto its machine-readable
// error record, so the names are part of the external surface.
enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kOutOfRange,
  kNonFinite,
  kInvariantViolation,
  kFormat,
  kChecksumMismatch,
  kMissingArtifact,
  kBudgetExceeded,
  kIo,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "invalid_argument";
    case ErrorCode::kDimensionMismatch:
      return "dimension_mismatch";
    case ErrorCode::kOutOfRange:
      return "out_of_range";
    case ErrorCode::kNonFinite:
      return "non_finite";
    case ErrorCode::kInvariantViolation:
      return "invariant_violation";
    case ErrorCode::kFormat:
      return "format";
    case ErrorCode::kChecksumMismatch:
      return "checksum_mismatch";
    case ErrorCode::kMissingArtifact:
      return "missing_artifact";
    case ErrorCode::kBudgetExceeded:
      return "budget_exceeded";
    case ErrorCode::kIo:
      return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Raised by network evaluation; `layer` is the zero-based layer index that
// rejected its input.
class LayerError : public Error {
 public:
  LayerError(std::size_t layer, const std::string& message)
      : Error(ErrorCode::kDimensionMismatch,
              "layer " + std::to_string(layer) + ": " + message),
        layer_(layer) {}

  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

// Raised when a per-example loss is not finite. Carries the example index
// within its batch (or -1 when evaluated outside a batch).
class NonFiniteLossError : public Error {
 public:
  explicit NonFiniteLossError(long long example_index)
      : Error(ErrorCode::kNonFinite,
              "non-finite loss at example " + std::to_string(example_index)),
        example_index_(example_index) {}

  long long example_index() const { return example_index_; }

 private:
  long long example_index_;
};

namespace internal {

inline void Require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace internal
}  // namespace ragdp
