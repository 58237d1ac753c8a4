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

// Checkpoint bundle: a UTF-8 header followed by concatenated EDT3 blobs.
//
//   EDIT3K-BUNDLE 1
//   meta <n bytes>
//   <key=value text, n bytes>
//   tensors <count>
//   <name>\t<d0,d1,...>\t<offset>\t<bytes>      (offset into the payload)
//   end
//   <payload>

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edit3k/kv.hpp"
#include "edit3k/tensor.hpp"

namespace edit3k {

struct Bundle {
  KeyValues meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(std::string name, Tensor t) {
    for (const auto& [n, _] : tensors) {
      if (n == name) throw std::invalid_argument("bundle: duplicate tensor '" + name + "'");
    }
    tensors.emplace_back(std::move(name), std::move(t));
  }

  bool has(const std::string& name) const {
    for (const auto& [n, _] : tensors)
      if (n == name) return true;
    return false;
  }

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw std::out_of_range("bundle: no tensor '" + name + "'");
  }
};

inline void write_bundle(std::ostream& os, const Bundle& b) {
  const std::string meta = b.meta.str();
  os << "EDIT3K-BUNDLE 1\n" << "meta " << meta.size() << "\n" << meta;
  os << "tensors " << b.tensors.size() << "\n";
  std::size_t off = 0;
  for (const auto& [name, t] : b.tensors) {
    if (name.find_first_of("\t\n") != std::string::npos) {
      throw std::invalid_argument("bundle: tensor name contains tab/newline");
    }
    std::string dims;
    for (std::size_t i = 0; i < t.ndim(); ++i) dims += (i ? "," : "") + std::to_string(t.dim(i));
    const std::size_t n = edt3::encoded_size(t.shape());
    os << name << '\t' << dims << '\t' << off << '\t' << n << '\n';
    off += n;
  }
  os << "end\n";
  for (const auto& [name, t] : b.tensors) edt3::write(os, t);
  if (!os) throw std::runtime_error("bundle: write failed");
}

inline Bundle read_bundle(std::istream& is, const std::string& origin = "bundle") {
  auto fail = [&](const std::string& msg) -> std::runtime_error {
    return std::runtime_error(origin + ": " + msg + " (expected an EDIT3K-BUNDLE checkpoint)");
  };
  std::string line;
  if (!std::getline(is, line) || line != "EDIT3K-BUNDLE 1") throw fail("bad header line");
  std::size_t meta_len = 0;
  if (!std::getline(is, line) || std::sscanf(line.c_str(), "meta %zu", &meta_len) != 1) {
    throw fail("missing meta length");
  }
  std::string meta(meta_len, '\0');
  if (!is.read(meta.data(), static_cast<std::streamsize>(meta_len))) throw fail("truncated meta");
  Bundle b;
  std::istringstream ms(meta);
  b.meta = KeyValues::parse(ms, origin);
  std::size_t count = 0;
  if (!std::getline(is, line) || std::sscanf(line.c_str(), "tensors %zu", &count) != 1) {
    throw fail("missing tensor count");
  }
  std::vector<std::pair<std::string, std::size_t>> index;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw fail("truncated tensor table");
    const auto t1 = line.find('\t');
    if (t1 == std::string::npos) throw fail("malformed tensor table row");
    index.emplace_back(line.substr(0, t1), 0);
  }
  if (!std::getline(is, line) || line != "end") throw fail("missing end marker");
  for (auto& [name, _] : index) {
    try {
      b.tensors.emplace_back(name, edt3::read(is));
    } catch (const std::exception& e) {
      throw fail("tensor '" + name + "': " + e.what());
    }
  }
  return b;
}

inline void save_bundle(const std::string& path, const Bundle& b) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_bundle(os, b);
}

inline Bundle load_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  return read_bundle(is, path);
}

}  // namespace edit3k
