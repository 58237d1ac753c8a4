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

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace edit3k {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major n-dimensional array. Value semantics; gradients live on
/// the autodiff tape, not here.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw std::invalid_argument("tensor: data length " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return data_[r * shape_.back() + c];
  }

  /// Rows of the tensor viewed as [numel / last, last].
  std::size_t rows() const { return shape_.empty() ? 0 : size() / shape_.back(); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::span<T> row(std::size_t r) {
    return std::span<T>(data_).subspan(r * cols(), cols());
  }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size()) {
      throw std::invalid_argument("reshape: cannot view " + shape_str(shape_) +
                                  " as " + shape_str(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    for (auto e : shape_) {
      if (e == 0) {
        throw std::invalid_argument("tensor: zero extent in shape " +
                                    shape_str(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

// ---------------------------------------------------------------------------
// EDT3 binary format: "EDT3", u8 version, u8 dtype (0 = f32), u32 ndim,
// ndim x u64 extents, row-major little-endian f32 payload.

namespace edt3 {

inline constexpr std::array<char, 4> kMagic = {'E', 'D', 'T', '3'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_integral_v<U>);
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  }
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is, const std::string& what) {
  std::array<unsigned char, sizeof(U)> buf{};
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
    throw std::runtime_error("EDT3: truncated " + what);
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  }
  return static_cast<U>(v);
}

}  // namespace detail

inline std::size_t encoded_size(const Shape& shape) {
  return 4 + 1 + 1 + 4 + 8 * shape.size() + 4 * shape_numel(shape);
}

inline void write(std::ostream& os, const Tensor& t) {
  os.write(kMagic.data(), kMagic.size());
  detail::put_le<std::uint8_t>(os, kVersion);
  detail::put_le<std::uint8_t>(os, kDtypeF32);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
  for (auto e : t.shape()) detail::put_le<std::uint64_t>(os, e);
  for (float v : t.data()) {
    detail::put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw std::runtime_error("EDT3: write failed");
}

inline Tensor read(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error("EDT3: bad magic (expected \"EDT3\")");
  }
  auto version = detail::get_le<std::uint8_t>(is, "version");
  if (version != kVersion) {
    throw std::runtime_error("EDT3: unsupported version " +
                             std::to_string(version));
  }
  auto dtype = detail::get_le<std::uint8_t>(is, "dtype");
  if (dtype != kDtypeF32) {
    throw std::runtime_error("EDT3: unsupported dtype " + std::to_string(dtype));
  }
  auto ndim = detail::get_le<std::uint32_t>(is, "ndim");
  if (ndim == 0 || ndim > 16) {
    throw std::runtime_error("EDT3: implausible ndim " + std::to_string(ndim));
  }
  Shape shape(ndim);
  for (auto& e : shape) {
    e = detail::get_le<std::uint64_t>(is, "extent");
    if (e == 0) throw std::runtime_error("EDT3: zero extent");
  }
  std::vector<float> data(shape_numel(shape));
  std::vector<unsigned char> raw(data.size() * 4);
  if (!is.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size()))) {
    throw std::runtime_error("EDT3: truncated payload for shape " +
                             shape_str(shape));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t bits = std::uint32_t{raw[4 * i]} |
                         (std::uint32_t{raw[4 * i + 1]} << 8) |
                         (std::uint32_t{raw[4 * i + 2]} << 16) |
                         (std::uint32_t{raw[4 * i + 3]} << 24);
    data[i] = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void save(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("EDT3: cannot open for writing: " + path);
  write(os, t);
}

inline Tensor load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("EDT3: cannot open " + path);
  try {
    return read(is);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace edt3
}  // namespace edit3k
