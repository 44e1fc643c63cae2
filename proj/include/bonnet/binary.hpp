// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian byte streams shared by the checkpoint and frozen-model
// formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bonnet/error.hpp"
#include "bonnet/tensor.hpp"

namespace bonnet {

static_assert(std::endian::native == std::endian::little,
              "serialisation assumes a little-endian host");

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  /// name, dtype u8, dims 4 x u32, [scale f64, zero_point i32], raw data.
  void tensor(const std::string& name, const Tensor& t);
  /// Appends the CRC-32 of everything written so far.
  void seal() { u32(crc32_of(bytes_)); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked reader; every overrun is a CorruptFileError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes, std::string what = "file")
      : bytes_(bytes), what_(std::move(what)) {}

  /// Verifies and strips the trailing CRC-32.
  void verify_crc();

  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::int32_t i32() { return pod<std::int32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int64_t i64() { return pod<std::int64_t>(); }
  double f64() { return pod<double>(); }
  std::string str();
  std::span<const std::uint8_t> take(std::size_t n);
  std::pair<std::string, Tensor> tensor(Layout layout = Layout::nchw);

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& why) const;

 private:
  template <class T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof v).data(), sizeof v);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace bonnet
