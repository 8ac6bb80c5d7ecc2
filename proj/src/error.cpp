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

#include "fedflag/error.hpp"

namespace fedflag {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kOverflow: return "overflow";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kSessionMismatch: return "session_mismatch";
    case ErrorCode::kDecode: return "decode";
    case ErrorCode::kAuthentication: return "authentication";
    case ErrorCode::kDuplicateAccount: return "duplicate_account";
    case ErrorCode::kUnknownAccount: return "unknown_account";
    case ErrorCode::kUnknownCurrency: return "unknown_currency";
    case ErrorCode::kNoAnomalous: return "no_anomalous";
    case ErrorCode::kNoPositives: return "no_positives";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kTransport: return "transport";
    case ErrorCode::kTimeout: return "timeout";
    case ErrorCode::kProtocol: return "protocol";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kAccessViolation: return "access_violation";
  }
  return "unknown";
}

}  // namespace fedflag
