/*
 * Copyright 2026 The nomad-mf Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef NOMAD_BYTES_HPP
#define NOMAD_BYTES_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "nomad/core.hpp"

namespace nomad {

class TruncatedError : public Error {
 public:
  using Error::Error;
};

/// Appends fixed-width little-endian values.
class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const std::uint8_t> bytes) {
    out_.insert(out_.end(), bytes.begin(), bytes.end());
  }

  /// Overwrites a u32 previously written at `offset`.
  void patch_u32(std::size_t offset, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out_[offset + static_cast<std::size_t>(b)] =
        static_cast<std::uint8_t>(v >> (8 * b));
  }

  std::size_t size() const { return out_.size(); }

 private:
  template <typename T>
  void put(T v) {
    for (std::size_t b = 0; b < sizeof(T); ++b)
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }

  std::vector<std::uint8_t>& out_;
};

/// Bounds-checked little-endian reader; throws TruncatedError past the end.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get<std::uint8_t>()); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  template <typename T>
  T get() {
    if (remaining() < sizeof(T))
      throw TruncatedError("truncated input: need " + std::to_string(sizeof(T)) +
                           " bytes at offset " + std::to_string(pos_) + ", have " +
                           std::to_string(remaining()));
    T v = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b)
      v |= static_cast<T>(static_cast<T>(in_[pos_ + b]) << (8 * b));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace nomad

#endif  // NOMAD_BYTES_HPP
