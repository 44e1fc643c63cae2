// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bonnet/error.hpp"

namespace bonnet {

enum class Layout : std::uint8_t { nchw = 0, nhwc = 1 };
enum class DType : std::uint8_t { f32 = 0, f64 = 1, i8 = 2 };

std::string_view to_string(Layout layout);
std::string_view to_string(DType dtype);

struct Dims {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t count() const { return n * c * h * w; }
  bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& dims);

/// Affine int8 quantization: real = scale * (q - zero_point).
struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;

  bool operator==(const QuantParams&) const = default;
};

namespace detail {
void note_alloc(std::size_t bytes);
void note_free(std::size_t bytes);
}  // namespace detail

/// Bytes currently held by tensor buffers across the process.
std::int64_t live_tensor_bytes();

/// Allocator that feeds live_tensor_bytes(); used for every tensor buffer so
/// leaks and scratch growth are observable from tests.
template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    detail::note_alloc(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    detail::note_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }
  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, TrackingAllocator<T>>;

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::f32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::f64;
}
template <>
constexpr DType dtype_of<std::int8_t>() {
  return DType::i8;
}

/// Dense 4-D tensor. The flat buffer is row-major in the order given by the
/// layout; `quant` is present exactly when the dtype is i8.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Dims dims, DType dtype, Layout layout = Layout::nchw);

  static Tensor quantized(Dims dims, QuantParams quant,
                          Layout layout = Layout::nchw);

  template <class T>
  static Tensor from_values(Dims dims, std::span<const T> values,
                            Layout layout = Layout::nchw) {
    Tensor t(dims, dtype_of<T>(), layout);
    if (static_cast<std::int64_t>(values.size()) != dims.count()) {
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match dims " + to_string(dims));
    }
    auto dst = t.data<T>();
    std::copy(values.begin(), values.end(), dst.begin());
    return t;
  }
  template <class T>
  static Tensor from_values(Dims dims, std::initializer_list<T> values,
                            Layout layout = Layout::nchw) {
    return from_values<T>(dims, std::span<const T>(values.begin(), values.size()),
                          layout);
  }

  const Dims& dims() const { return dims_; }
  Layout layout() const { return layout_; }
  DType dtype() const { return dtype_; }
  const std::optional<QuantParams>& quant() const { return quant_; }
  std::int64_t size() const { return dims_.count(); }
  bool empty() const { return dims_.count() == 0; }
  bool is_float() const { return dtype_ != DType::i8; }
  std::size_t byte_size() const;

  template <class T>
  std::span<T> data() {
    check_dtype(dtype_of<T>());
    auto& buf = std::get<Buffer<T>>(data_);
    return {buf.data(), buf.size()};
  }
  template <class T>
  std::span<const T> data() const {
    check_dtype(dtype_of<T>());
    const auto& buf = std::get<Buffer<T>>(data_);
    return {buf.data(), buf.size()};
  }

  /// Raw buffer bytes, in layout order.
  std::span<const std::byte> bytes() const;
  std::span<std::byte> bytes();

  /// Flat offset of logical element (n, c, h, w) under this tensor's layout.
  std::size_t offset(std::int64_t n, std::int64_t c, std::int64_t h,
                     std::int64_t w) const {
    if (layout_ == Layout::nchw) {
      return static_cast<std::size_t>(((n * dims_.c + c) * dims_.h + h) * dims_.w + w);
    }
    return static_cast<std::size_t>(((n * dims_.h + h) * dims_.w + w) * dims_.c + c);
  }

  /// Element as a real number; quantized tensors are dequantized.
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;
  double flat(std::size_t i) const;

  /// Float-to-float precision change (layout preserved).
  Tensor cast(DType target) const;

  /// Same data, new extents of equal count (layout kept).
  Tensor reshaped(Dims dims) const;

  bool bit_equal(const Tensor& other) const;

 private:
  void check_dtype(DType expected) const;

  Dims dims_{};
  DType dtype_ = DType::f32;
  Layout layout_ = Layout::nchw;
  std::variant<Buffer<float>, Buffer<double>, Buffer<std::int8_t>> data_;
  std::optional<QuantParams> quant_;
};

/// Reorders the buffer into `target` layout. Values are copied bit-exactly.
Tensor convert_layout(const Tensor& t, Layout target);

/// Ordered name -> tensor table (parameters, gradients, weights).
using TensorMap = std::map<std::string, Tensor>;

/// max |a - b| over all elements; both must share dims (layouts may differ).
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Applies `fn` with a typed tag for float tensors; throws for i8.
template <class Fn>
decltype(auto) visit_float(DType dtype, Fn&& fn) {
  switch (dtype) {
    case DType::f32:
      return fn(float{});
    case DType::f64:
      return fn(double{});
    default:
      throw ShapeError("operation requires a float tensor");
  }
}

}  // namespace bonnet
