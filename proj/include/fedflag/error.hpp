// Copyright 2026 The fedflag Authors
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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedflag {

enum class ErrorCode {
  kInvalidArgument,
  kOverflow,
  kDimensionMismatch,
  kSessionMismatch,
  kDecode,
  kAuthentication,
  kDuplicateAccount,
  kUnknownAccount,
  kUnknownCurrency,
  kNoAnomalous,
  kNoPositives,
  kNonFinite,
  kTransport,
  kTimeout,
  kProtocol,
  kConfig,
  kIo,
  kAccessViolation,
};

std::string_view error_code_name(ErrorCode code);

// All library failures surface as this exception type; callers switch on
// code() when they need to distinguish causes (the CLI maps codes to exit
// statuses).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fedflag
