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

#include "fedflag/kv_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "fedflag/error.hpp"

namespace fedflag {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value,
                      const char* what) {
  throw Error(ErrorCode::kConfig,
              "config key '" + key + "': expected " + what + ", got '" + value + "'");
}

}  // namespace

KvConfig KvConfig::parse(std::istream& in) {
  KvConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Comments start at an unquoted '#'.
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quotes = !in_quotes;
      if (line[i] == '#' && !in_quotes) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kConfig,
                  "config line " + std::to_string(lineno) + ": missing '='");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw Error(ErrorCode::kConfig,
                  "config line " + std::to_string(lineno) + ": empty key");
    }
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    cfg.values_[key] = value;
  }
  return cfg;
}

KvConfig KvConfig::parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

KvConfig KvConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path);
  return parse(in);
}

std::optional<std::string> KvConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KvConfig::get_string(const std::string& key,
                                 const std::string& def) const {
  return get(key).value_or(def);
}

double KvConfig::get_double(const std::string& key, double def) const {
  auto v = get(key);
  if (!v) return def;
  try {
    std::size_t used = 0;
    double d = std::stod(*v, &used);
    if (used != v->size()) bad(key, *v, "a number");
    return d;
  } catch (const std::logic_error&) {
    bad(key, *v, "a number");
  }
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t def) const {
  auto v = get(key);
  if (!v) return def;
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || p != v->data() + v->size()) bad(key, *v, "an integer");
  return out;
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t def) const {
  auto v = get(key);
  if (!v) return def;
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || p != v->data() + v->size()) {
    bad(key, *v, "an unsigned integer");
  }
  return out;
}

bool KvConfig::get_bool(const std::string& key, bool def) const {
  auto v = get(key);
  if (!v) return def;
  if (*v == "true" || *v == "1" || *v == "on" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "off" || *v == "no") return false;
  bad(key, *v, "a boolean");
}

std::string KvConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace fedflag
