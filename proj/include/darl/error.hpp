// Copyright 2026 The DARL Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DARL_ERROR_HPP_
#define DARL_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace darl {

enum class ErrorCode {
  kUnsatisfiableClassSize,
  kInvalidToken,
  kEmptyTarget,
  kEmptyAnswer,
  kNonfiniteGradient,
  kNonfiniteRatio,
  kModeMismatch,
  kGroupTooSmall,
  kNoVariants,
  kGridMismatch,
  kInvalidConfig,
  kIo,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnsatisfiableClassSize: return "UNSATISFIABLE_CLASS_SIZE";
    case ErrorCode::kInvalidToken: return "INVALID_TOKEN";
    case ErrorCode::kEmptyTarget: return "EMPTY_TARGET";
    case ErrorCode::kEmptyAnswer: return "EMPTY_ANSWER";
    case ErrorCode::kNonfiniteGradient: return "NONFINITE_GRADIENT";
    case ErrorCode::kNonfiniteRatio: return "NONFINITE_RATIO";
    case ErrorCode::kModeMismatch: return "MODE_MISMATCH";
    case ErrorCode::kGroupTooSmall: return "GROUP_TOO_SMALL";
    case ErrorCode::kNoVariants: return "NO_VARIANTS";
    case ErrorCode::kGridMismatch: return "GRID_MISMATCH";
    case ErrorCode::kInvalidConfig: return "INVALID_CONFIG";
    case ErrorCode::kIo: return "IO_ERROR";
  }
  return "UNKNOWN";
}

/// Every recoverable failure in the library is reported as an Error carrying
/// a machine-readable code; what() is "<CODE>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace darl

#endif  // DARL_ERROR_HPP_
