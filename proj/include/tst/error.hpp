// Copyright 2026 The temporal-state-tomography Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tst {

enum class ErrorCode {
  invalid_argument,
  index_out_of_range,
  dimension_mismatch,
  not_hermitian,
  not_positive_definite,
  not_orthonormal,
  not_a_povm,
  singular_gram,
  not_in_span,
  not_informationally_complete,
  not_qubit,
  io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::index_out_of_range: return "IndexOutOfRange";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::not_hermitian: return "NotHermitian";
    case ErrorCode::not_positive_definite: return "NotPositiveDefinite";
    case ErrorCode::not_orthonormal: return "NotOrthonormal";
    case ErrorCode::not_a_povm: return "NotAPovm";
    case ErrorCode::singular_gram: return "SingularGram";
    case ErrorCode::not_in_span: return "NotInSpan";
    case ErrorCode::not_informationally_complete: return "NotInformationallyComplete";
    case ErrorCode::not_qubit: return "NotQubit";
    case ErrorCode::io: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The text without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

/// Numerical slack shared by all modules.
struct Tolerances {
  double psd = 1e-9;    // min eigenvalue >= -psd counts as positive semidefinite
  double recon = 1e-8;  // reconstruction / equality checks
  double pd = 1e-10;    // positive-definiteness floor for inverse square roots
  double rank = 1e-10;  // relative singular-value cutoff for numerical rank
  double pinv = 1e-8;   // relative cutoff for pseudo-inverses of reduced states
  bool operator==(const Tolerances&) const = default;
};

}  // namespace tst
