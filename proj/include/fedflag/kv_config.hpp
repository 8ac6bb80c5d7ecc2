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

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>

namespace fedflag {

// `key = value` lines; `#` starts a comment; blank lines ignored; values may
// be wrapped in double quotes. Later keys override earlier ones.
class KvConfig {
 public:
  static KvConfig parse(std::istream& in);
  static KvConfig parse_string(const std::string& text);
  static KvConfig load(const std::string& path);

  bool contains(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& def) const;
  // Typed getters throw kConfig on malformed values.
  double get_double(const std::string& key, double def) const;
  std::int64_t get_int(const std::string& key, std::int64_t def) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
  bool get_bool(const std::string& key, bool def) const;

  // Canonical `key = value\n` rendering in key order.
  std::string canonical() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace fedflag
