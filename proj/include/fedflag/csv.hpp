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

#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fedflag::csv {

using Row = std::vector<std::string>;

// RFC 4180: fields containing comma, quote, CR or LF are quoted; embedded
// quotes are doubled. Lines end with CRLF on write; LF or CRLF on read.
void write_row(std::ostream& out, const Row& row);

// Reads one record, honoring quoted newlines. Returns nullopt at EOF.
// Throws kDecode on an unterminated quoted field.
std::optional<Row> read_row(std::istream& in);

// Header-indexed table.
class Table {
 public:
  static Table read(std::istream& in);
  static Table read_file(const std::string& path);

  const Row& header() const { return header_; }
  const std::vector<Row>& rows() const { return rows_; }
  // Throws kDecode if the column is missing.
  std::size_t column(const std::string& name) const;

 private:
  Row header_;
  std::map<std::string, std::size_t> index_;
  std::vector<Row> rows_;
};

}  // namespace fedflag::csv
