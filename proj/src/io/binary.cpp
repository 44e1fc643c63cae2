// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "bonnet/binary.hpp"

#include <zlib.h>

namespace bonnet {

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes 32-bit lengths; feed large buffers in pieces.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::tensor(const std::string& name, const Tensor& t) {
  str(name);
  u8(static_cast<std::uint8_t>(t.dtype()));
  for (const auto d : {t.dims().n, t.dims().c, t.dims().h, t.dims().w}) {
    u32(static_cast<std::uint32_t>(d));
  }
  if (t.quant()) {
    f64(t.quant()->scale);
    i32(t.quant()->zero_point);
  }
  const auto b = t.bytes();
  raw(b.data(), b.size());
}

void ByteReader::fail(const std::string& why) const {
  throw CorruptFileError(what_ + ": " + why);
}

void ByteReader::verify_crc() {
  if (bytes_.size() < 4) {
    fail("too short for a checksum");
  }
  const auto body = bytes_.first(bytes_.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes_.data() + body.size(), 4);
  if (crc32_of(body) != stored) {
    fail("checksum mismatch");
  }
  bytes_ = body;
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  if (n > remaining()) {
    fail("unexpected end of data");
  }
  const auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::str() {
  const auto n = u32();
  const auto b = take(n);
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

std::pair<std::string, Tensor> ByteReader::tensor(Layout layout) {
  std::string name = str();
  const auto dtype_raw = u8();
  if (dtype_raw > static_cast<std::uint8_t>(DType::i8)) {
    fail("tensor '" + name + "' has unknown dtype " + std::to_string(dtype_raw));
  }
  const auto dtype = static_cast<DType>(dtype_raw);
  Dims d;
  d.n = u32();
  d.c = u32();
  d.h = u32();
  d.w = u32();
  const std::size_t elem = dtype == DType::f64 ? 8 : dtype == DType::f32 ? 4 : 1;
  if (d.count() < 0 || static_cast<std::uint64_t>(d.count()) * elem > remaining()) {
    fail("tensor '" + name + "' extends past the end of the data");
  }
  Tensor t;
  if (dtype == DType::i8) {
    QuantParams q;
    q.scale = f64();
    q.zero_point = i32();
    if (!(q.scale > 0.0) || q.zero_point < -128 || q.zero_point > 127) {
      fail("tensor '" + name + "' has invalid quantization parameters");
    }
    t = Tensor::quantized(d, q, layout);
  } else {
    t = Tensor(d, dtype, layout);
  }
  const auto src = take(t.byte_size());
  std::memcpy(t.bytes().data(), src.data(), src.size());
  return {std::move(name), std::move(t)};
}

}  // namespace bonnet
