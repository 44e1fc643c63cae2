// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>

#include "bonnet/tensor.hpp"
#include "support.hpp"

namespace bonnet {
namespace {

TEST(Tensor, BufferLengthMatchesDims) {
  Tensor t({2, 3, 4, 5}, DType::f32);
  EXPECT_EQ(t.size(), 120);
  EXPECT_EQ(t.data<float>().size(), 120u);
  EXPECT_EQ(t.byte_size(), 480u);
  EXPECT_FALSE(t.quant().has_value());
}

TEST(Tensor, QuantPresentExactlyForInt8) {
  const Tensor q = Tensor::quantized({1, 1, 2, 2}, {0.5, -3});
  ASSERT_TRUE(q.quant().has_value());
  EXPECT_EQ(q.dtype(), DType::i8);
  EXPECT_FALSE(Tensor({1, 1, 1, 1}, DType::f64).quant().has_value());
}

TEST(Tensor, QuantizedElementsDequantize) {
  Tensor q = Tensor::quantized({1, 1, 1, 2}, {0.5, -3});
  q.data<std::int8_t>()[0] = 1;
  q.data<std::int8_t>()[1] = -3;
  EXPECT_DOUBLE_EQ(q.flat(0), 2.0);
  EXPECT_DOUBLE_EQ(q.flat(1), 0.0);
}

TEST(Tensor, OffsetsFollowLayoutFormula) {
  const Dims d{2, 3, 4, 5};
  const Tensor a(d, DType::f32, Layout::nchw);
  const Tensor b(d, DType::f32, Layout::nhwc);
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t c = 0; c < d.c; ++c) {
      for (std::int64_t h = 0; h < d.h; ++h) {
        for (std::int64_t w = 0; w < d.w; ++w) {
          EXPECT_EQ(a.offset(n, c, h, w),
                    static_cast<std::size_t>(n * 60 + c * 20 + h * 5 + w));
          EXPECT_EQ(b.offset(n, c, h, w),
                    static_cast<std::size_t>(n * 60 + h * 15 + w * 3 + c));
        }
      }
    }
  }
}

TEST(Tensor, FromValuesRejectsWrongCount) {
  EXPECT_THROW(Tensor::from_values<float>({1, 1, 2, 2}, {1.f, 2.f, 3.f}), ShapeError);
}

TEST(ConvertLayout, KnownPermutation) {
  std::vector<float> v(8);
  std::iota(v.begin(), v.end(), 0.f);
  const Tensor t = Tensor::from_values<float>({1, 2, 2, 2}, v);
  const Tensor n = convert_layout(t, Layout::nhwc);
  EXPECT_EQ(n.layout(), Layout::nhwc);
  const std::vector<float> expected{0, 4, 1, 5, 2, 6, 3, 7};
  const auto got = n.data<float>();
  EXPECT_TRUE(std::equal(got.begin(), got.end(), expected.begin()));
}

TEST(ConvertLayout, SingleElementUnchanged) {
  const Tensor t = Tensor::from_values<double>({1, 1, 1, 1}, {3.25});
  EXPECT_EQ(convert_layout(t, Layout::nhwc).data<double>()[0], 3.25);
}

TEST(ConvertLayout, RoundTripIsBitExactProperty) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 gen(seed);
    auto ext = [&] { return static_cast<std::int64_t>(1 + gen() % 5); };
    const Dims d{ext(), ext(), ext(), ext()};
    const Tensor t = test::random_tensor(d, seed, seed % 2 ? DType::f32 : DType::f64);
    const Tensor there = convert_layout(t, Layout::nhwc);
    const Tensor back = convert_layout(there, Layout::nchw);
    EXPECT_TRUE(back.bit_equal(t));
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t c = 0; c < d.c; ++c) {
        for (std::int64_t h = 0; h < d.h; ++h) {
          for (std::int64_t w = 0; w < d.w; ++w) {
            ASSERT_EQ(t.at(n, c, h, w), there.at(n, c, h, w));
          }
        }
      }
    }
  }
}

TEST(ConvertLayout, QuantizedKeepsParams) {
  Tensor q = Tensor::quantized({1, 2, 1, 2}, {0.25, 4});
  auto d = q.data<std::int8_t>();
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = static_cast<std::int8_t>(i * 10);
  }
  const Tensor r = convert_layout(convert_layout(q, Layout::nhwc), Layout::nchw);
  EXPECT_TRUE(r.bit_equal(q));
  EXPECT_EQ(*r.quant(), *q.quant());
}

TEST(Tensor, LiveBytesReturnToBaseline) {
  const std::int64_t before = live_tensor_bytes();
  {
    Tensor a({4, 4, 4, 4}, DType::f64);
    Tensor b = a;
    EXPECT_GE(live_tensor_bytes(), before + 2 * 256 * 8);
  }
  EXPECT_EQ(live_tensor_bytes(), before);
}

TEST(Tensor, CastChangesPrecision) {
  const Tensor t = Tensor::from_values<double>({1, 1, 1, 2}, {0.1, -2.5});
  const Tensor f = t.cast(DType::f32);
  EXPECT_EQ(f.dtype(), DType::f32);
  EXPECT_FLOAT_EQ(f.data<float>()[0], 0.1f);
  EXPECT_EQ(f.data<float>()[1], -2.5f);
}

}  // namespace
}  // namespace bonnet
