// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "bonnet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

namespace bonnet {

namespace {
std::atomic<std::int64_t> g_live_bytes{0};
}  // namespace

namespace detail {
void note_alloc(std::size_t bytes) {
  g_live_bytes.fetch_add(static_cast<std::int64_t>(bytes), std::memory_order_relaxed);
}
void note_free(std::size_t bytes) {
  g_live_bytes.fetch_sub(static_cast<std::int64_t>(bytes), std::memory_order_relaxed);
}
}  // namespace detail

std::int64_t live_tensor_bytes() { return g_live_bytes.load(std::memory_order_relaxed); }

std::string_view to_string(Layout layout) {
  return layout == Layout::nchw ? "nchw" : "nhwc";
}

std::string_view to_string(DType dtype) {
  switch (dtype) {
    case DType::f32:
      return "float32";
    case DType::f64:
      return "float64";
    case DType::i8:
      return "int8";
  }
  return "?";
}

std::string to_string(const Dims& d) {
  return "(" + std::to_string(d.n) + "," + std::to_string(d.c) + "," +
         std::to_string(d.h) + "," + std::to_string(d.w) + ")";
}

Tensor::Tensor(Dims dims, DType dtype, Layout layout)
    : dims_(dims), dtype_(dtype), layout_(layout) {
  if (dims.n < 0 || dims.c < 0 || dims.h < 0 || dims.w < 0) {
    throw ShapeError("negative extent in dims " + to_string(dims));
  }
  const auto count = static_cast<std::size_t>(dims.count());
  switch (dtype) {
    case DType::f32:
      data_ = Buffer<float>(count, 0.0f);
      break;
    case DType::f64:
      data_ = Buffer<double>(count, 0.0);
      break;
    case DType::i8:
      data_ = Buffer<std::int8_t>(count, 0);
      quant_ = QuantParams{};
      break;
  }
}

Tensor Tensor::quantized(Dims dims, QuantParams quant, Layout layout) {
  if (!(quant.scale > 0.0) || quant.zero_point < -128 || quant.zero_point > 127) {
    throw DomainError("invalid quantization parameters");
  }
  Tensor t(dims, DType::i8, layout);
  t.quant_ = quant;
  return t;
}

std::size_t Tensor::byte_size() const {
  switch (dtype_) {
    case DType::f32:
      return static_cast<std::size_t>(size()) * sizeof(float);
    case DType::f64:
      return static_cast<std::size_t>(size()) * sizeof(double);
    case DType::i8:
      return static_cast<std::size_t>(size());
  }
  return 0;
}

std::span<const std::byte> Tensor::bytes() const {
  return std::visit(
      [](const auto& buf) {
        return std::as_bytes(std::span(buf.data(), buf.size()));
      },
      data_);
}

std::span<std::byte> Tensor::bytes() {
  return std::visit(
      [](auto& buf) { return std::as_writable_bytes(std::span(buf.data(), buf.size())); },
      data_);
}

void Tensor::check_dtype(DType expected) const {
  if (expected != dtype_) {
    throw ShapeError("tensor dtype is " + std::string(to_string(dtype_)) + ", expected " +
                     std::string(to_string(expected)));
  }
}

double Tensor::flat(std::size_t i) const {
  switch (dtype_) {
    case DType::f32:
      return std::get<Buffer<float>>(data_)[i];
    case DType::f64:
      return std::get<Buffer<double>>(data_)[i];
    case DType::i8: {
      const auto q = std::get<Buffer<std::int8_t>>(data_)[i];
      return quant_->scale * (static_cast<double>(q) - quant_->zero_point);
    }
  }
  return 0.0;
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  return flat(offset(n, c, h, w));
}

Tensor Tensor::cast(DType target) const {
  if (target == dtype_) {
    return *this;
  }
  if (!is_float() || target == DType::i8) {
    throw ShapeError("cast supports float32 <-> float64 only");
  }
  Tensor out(dims_, target, layout_);
  if (target == DType::f64) {
    std::copy(data<float>().begin(), data<float>().end(), out.data<double>().begin());
  } else {
    auto src = data<double>();
    auto dst = out.data<float>();
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i] = static_cast<float>(src[i]);
    }
  }
  return out;
}

Tensor Tensor::reshaped(Dims dims) const {
  if (dims.count() != dims_.count()) {
    throw ShapeError("cannot reshape " + to_string(dims_) + " to " + to_string(dims));
  }
  Tensor out = *this;
  out.dims_ = dims;
  return out;
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (dims_ != other.dims_ || dtype_ != other.dtype_ || layout_ != other.layout_ ||
      quant_ != other.quant_) {
    return false;
  }
  auto a = bytes();
  auto b = other.bytes();
  return std::memcmp(a.data(), b.data(), a.size()) == 0;
}

namespace {

template <class T>
void permute(std::span<const T> src, std::span<T> dst, const Dims& d, Layout from) {
  const auto C = d.c, H = d.h, W = d.w;
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      for (std::int64_t h = 0; h < H; ++h) {
        for (std::int64_t w = 0; w < W; ++w) {
          const auto nchw = ((n * C + c) * H + h) * W + w;
          const auto nhwc = ((n * H + h) * W + w) * C + c;
          if (from == Layout::nchw) {
            dst[nhwc] = src[nchw];
          } else {
            dst[nchw] = src[nhwc];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor convert_layout(const Tensor& t, Layout target) {
  if (t.layout() == target) {
    return t;
  }
  Tensor out = t.quant() && t.dtype() == DType::i8
                   ? Tensor::quantized(t.dims(), *t.quant(), target)
                   : Tensor(t.dims(), t.dtype(), target);
  switch (t.dtype()) {
    case DType::f32:
      permute<float>(t.data<float>(), out.data<float>(), t.dims(), t.layout());
      break;
    case DType::f64:
      permute<double>(t.data<double>(), out.data<double>(), t.dims(), t.layout());
      break;
    case DType::i8:
      permute<std::int8_t>(t.data<std::int8_t>(), out.data<std::int8_t>(), t.dims(),
                           t.layout());
      break;
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError("max_abs_diff: dims " + to_string(a.dims()) + " vs " +
                     to_string(b.dims()));
  }
  const auto& d = a.dims();
  double worst = 0.0;
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t c = 0; c < d.c; ++c) {
      for (std::int64_t h = 0; h < d.h; ++h) {
        for (std::int64_t w = 0; w < d.w; ++w) {
          const double diff = std::abs(a.at(n, c, h, w) - b.at(n, c, h, w));
          if (std::isnan(diff)) {
            return diff;
          }
          worst = std::max(worst, diff);
        }
      }
    }
  }
  return worst;
}

}  // namespace bonnet
