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

#include "fedflag/csv.hpp"

#include <fstream>

#include "fedflag/error.hpp"

namespace fedflag::csv {

void write_row(std::ostream& out, const Row& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i > 0) out << ',';
    const std::string& f = row[i];
    if (f.find_first_of(",\"\r\n") == std::string::npos) {
      out << f;
      continue;
    }
    out << '"';
    for (char c : f) {
      if (c == '"') out << '"';
      out << c;
    }
    out << '"';
  }
  out << "\r\n";
}

std::optional<Row> read_row(std::istream& in) {
  if (in.peek() == std::char_traits<char>::eof()) return std::nullopt;
  Row row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (;;) {
    const int ci = in.get();
    if (ci == std::char_traits<char>::eof()) {
      if (quoted) throw Error(ErrorCode::kDecode, "unterminated quoted CSV field");
      row.push_back(std::move(field));
      return row;
    }
    const char c = static_cast<char>(ci);
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get();
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && in.peek() == '\n') in.get();
      row.push_back(std::move(field));
      return row;
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
}

Table Table::read(std::istream& in) {
  Table t;
  auto header = read_row(in);
  if (!header) throw Error(ErrorCode::kDecode, "CSV has no header");
  // Tolerate a UTF-8 byte order mark.
  if (!header->empty() && header->front().rfind("\xEF\xBB\xBF", 0) == 0) {
    header->front().erase(0, 3);
  }
  t.header_ = std::move(*header);
  for (std::size_t i = 0; i < t.header_.size(); ++i) t.index_[t.header_[i]] = i;
  while (auto row = read_row(in)) {
    if (row->size() == 1 && row->front().empty()) continue;
    if (row->size() != t.header_.size()) {
      throw Error(ErrorCode::kDecode,
                  "CSV row " + std::to_string(t.rows_.size() + 2) + " has " +
                      std::to_string(row->size()) + " fields, expected " +
                      std::to_string(t.header_.size()));
    }
    t.rows_.push_back(std::move(*row));
  }
  return t;
}

Table Table::read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return read(in);
}

std::size_t Table::column(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw Error(ErrorCode::kDecode, "CSV missing column '" + name + "'");
  }
  return it->second;
}

}  // namespace fedflag::csv
