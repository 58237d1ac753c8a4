// Copyright 2026 The edit3k Authors
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


#pragma once

// Flat key=value text configuration. One entry per line, '#' starts a
// comment, keys are dotted names. Values are stored as text and parsed on
// access, so a written file reloads to identical values.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace edit3k {

class KeyValues {
 public:
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set(const std::string& key, const char* value) { values_[key] = value; }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }
  void set(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    values_[key] = buf;
  }
  void set(const std::string& key, float value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(value));
    values_[key] = buf;
  }
  template <typename I>
    requires std::is_integral_v<I>
  void set(const std::string& key, I value) {
    values_[key] = std::to_string(value);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::out_of_range("config: missing key '" + key + "'");
    return it->second;
  }

  template <typename T>
  T get(const std::string& key) const {
    const std::string& s = raw(key);
    if constexpr (std::is_same_v<T, std::string>) {
      return s;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (s == "true" || s == "1") return true;
      if (s == "false" || s == "0") return false;
      throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + s + "'");
    } else if constexpr (std::is_floating_point_v<T>) {
      try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return static_cast<T>(v);
      } catch (const std::exception&) {
        throw std::invalid_argument("config: '" + key + "' expects a number, got '" + s + "'");
      }
    } else {
      T v{};
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) {
        throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + s + "'");
      }
      return v;
    }
  }

  template <typename T>
  std::vector<T> get_list(const std::string& key) const {
    std::vector<T> out;
    std::stringstream ss(raw(key));
    std::string item;
    KeyValues tmp;
    while (std::getline(ss, item, ',')) {
      tmp.set("item", item);
      out.push_back(tmp.get<T>("item"));
    }
    return out;
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

  /// Merges `other` into this; with `strict`, keys not already present are
  /// rejected.
  void merge(const KeyValues& other, bool strict) {
    for (const auto& [k, v] : other.values_) {
      if (strict && !has(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
      values_[k] = v;
    }
  }

  static KeyValues parse(std::istream& is, const std::string& origin = "config") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos) continue;
      const auto e = line.find_last_not_of(" \t\r");
      line = line.substr(b, e - b + 1);
      const auto eq = line.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key=value");
      }
      auto key = line.substr(0, eq);
      auto val = line.substr(eq + 1);
      key.erase(key.find_last_not_of(" \t") + 1);
      val.erase(0, val.find_first_not_of(" \t"));
      kv.values_[key] = val;
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file " + path);
    return parse(is, path);
  }

  void write(std::ostream& os) const {
    for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
  }

  std::string str() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path);
    write(os);
  }

 private:
  std::map<std::string, std::string> values_;
};

/// FNV-1a over the canonical text form; used to address output directories.
inline std::uint64_t config_hash(const KeyValues& kv) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : kv.str()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace edit3k
