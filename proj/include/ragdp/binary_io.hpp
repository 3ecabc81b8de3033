//
// Copyright 2026 The ragdp Authors
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
//

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>

#include "ragdp/error.hpp"

namespace ragdp {

// Little-endian byte sink. Every on-disk format in this library is written
// through this class so the byte order is fixed regardless of host.
class ByteWriter {
 public:
  void PutBytes(std::string_view bytes) { buffer_.append(bytes); }

  void PutU8(std::uint8_t v) { buffer_.push_back(static_cast<char>(v)); }
  void PutU16(std::uint16_t v) { PutLittleEndian(v); }
  void PutU32(std::uint32_t v) { PutLittleEndian(v); }
  void PutU64(std::uint64_t v) { PutLittleEndian(v); }
  void PutI32(std::int32_t v) { PutLittleEndian(static_cast<std::uint32_t>(v)); }
  void PutF64(double v) { PutLittleEndian(std::bit_cast<std::uint64_t>(v)); }

  void PutF64s(std::span<const double> values) {
    for (double v : values) PutF64(v);
  }

  // u16 length prefix followed by raw bytes.
  void PutString(std::string_view s) {
    internal::Require(s.size() <= 0xFFFF, ErrorCode::kInvalidArgument,
                      "string too long for u16 length prefix");
    PutU16(static_cast<std::uint16_t>(s.size()));
    PutBytes(s);
  }

  const std::string& bytes() const { return buffer_; }
  std::string Release() { return std::move(buffer_); }

 private:
  template <typename U>
  void PutLittleEndian(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
  }

  std::string buffer_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::string_view GetBytes(std::size_t n) {
    Need(n);
    std::string_view out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint8_t GetU8() { return static_cast<std::uint8_t>(GetBytes(1)[0]); }
  std::uint16_t GetU16() { return GetLittleEndian<std::uint16_t>(); }
  std::uint32_t GetU32() { return GetLittleEndian<std::uint32_t>(); }
  std::uint64_t GetU64() { return GetLittleEndian<std::uint64_t>(); }
  std::int32_t GetI32() { return static_cast<std::int32_t>(GetU32()); }
  double GetF64() { return std::bit_cast<double>(GetU64()); }

  void GetF64s(std::span<double> out) {
    for (double& v : out) v = GetF64();
  }

  std::string GetString() {
    const std::uint16_t n = GetU16();
    return std::string(GetBytes(n));
  }

  void ExpectMagic(std::string_view magic) {
    if (GetBytes(magic.size()) != magic) {
      throw Error(ErrorCode::kFormat,
                  "bad magic, expected \"" + std::string(magic) + "\"");
    }
  }

  bool AtEnd() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void Need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw Error(ErrorCode::kFormat, "unexpected end of data");
    }
  }

  template <typename U>
  U GetLittleEndian() {
    std::string_view raw = GetBytes(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(raw[i])) << (8 * i);
    }
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

inline void WriteFileBytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path);
}

}  // namespace ragdp
