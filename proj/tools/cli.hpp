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

#include <ostream>
#include <string>
#include <vector>

#include "fedflag/error.hpp"

namespace fedflag::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitIo = 4,
  kExitProtocol = 5,
  kExitData = 6,
};

int exit_code_for(ErrorCode code);

// args[0] is the program name. Reports go to files; `out` gets a one-line
// summary, `err` gets usage text and a JSON error object on failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedflag::cli
