// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "bonnet/tape.hpp"
#include "support.hpp"

namespace bonnet {
namespace {

using test::gradcheck;
using test::random_tensor;
using Ids = std::map<std::string, ValueId>;

constexpr double kTolerance = 1e-4;

// Pushes every element at least `margin` away from zero so ReLU kinks are
// never inside the finite-difference step.
Tensor away_from_zero(Tensor t, double margin = 1e-3) {
  for (auto& v : t.data<double>()) {
    if (std::abs(v) < margin) {
      v = v < 0 ? v - 2 * margin : v + 2 * margin;
    }
  }
  return t;
}

// Squared-sum head gives every output element a distinct upstream gradient.
ValueId sq_loss(Tape& t, ValueId y) {
  return t.apply(OpSpec::of(OpKind::reduce_sum), {t.apply(OpSpec::of(OpKind::square), {y})});
}

TEST(Gradient, SumGivesOnes) {
  Tape t({Mode::train, 0, 1});
  const Tensor x = random_tensor({2, 3, 2, 2}, 1);
  const ValueId p = t.parameter("x", x);
  const TensorMap g = backward(t, t.apply(OpSpec::of(OpKind::reduce_sum), {p}));
  for (const double v : test::values_of(g.at("x"))) {
    EXPECT_EQ(v, 1.0);
  }
}

TEST(Gradient, SumOfSquaresGivesTwoX) {
  Tape t({Mode::train, 0, 1});
  const Tensor x = random_tensor({2, 3, 2, 2}, 1);
  const ValueId p = t.parameter("x", x);
  const TensorMap g = backward(t, sq_loss(t, p));
  const auto got = test::values_of(g.at("x"));
  const auto xs = test::values_of(x);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_EQ(got[i], 2.0 * xs[i]);
  }
}

TEST(Gradient, NonScalarLossIsShapeError) {
  Tape t;
  const ValueId p = t.parameter("x", random_tensor({1, 1, 2, 2}, 1));
  EXPECT_THROW(backward(t, t.apply(OpSpec::of(OpKind::square), {p})), ShapeError);
}

TEST(Gradient, ArgmaxHasNoDerivative) {
  Tape t({Mode::train, 0, 1});
  const ValueId p = t.parameter("x", random_tensor({1, 3, 2, 2}, 1));
  const ValueId am = t.apply(OpSpec::of(OpKind::argmax), {p});
  EXPECT_THROW(backward(t, t.apply(OpSpec::of(OpKind::reduce_sum), {am})), UnsupportedOpError);
}

TEST(GradCheck, Conv2d) {
  const TensorMap params{{"x", random_tensor({2, 3, 6, 5}, 1)},
                         {"w", random_tensor({4, 3, 3, 3}, 2)},
                         {"b", random_tensor({1, 4, 1, 1}, 3)}};
  for (int dil : {1, 2}) {
    for (int stride : {1, 2}) {
      for (Padding pad : {Padding::same, Padding::valid}) {
        if (pad == Padding::valid && dil == 2 && stride == 2) {
          continue;
        }
        const auto loss = [&](Tape& t, const Ids& id) {
          return sq_loss(t, t.apply(OpSpec::conv(3, 3, stride, dil, pad),
                                    {id.at("x"), id.at("w"), id.at("b")}));
        };
        EXPECT_LT(gradcheck(params, loss), kTolerance) << dil << stride;
      }
    }
  }
}

TEST(GradCheck, FactorizedConvWithFusedRelu) {
  const TensorMap params{{"x", random_tensor({1, 2, 5, 5}, 4)},
                         {"w", random_tensor({3, 2, 3, 1}, 5)},
                         {"b", away_from_zero(random_tensor({1, 3, 1, 1}, 6))}};
  OpSpec spec = OpSpec::conv(3, 1, 1, 2);
  spec.fused_relu = true;
  const auto loss = [&](Tape& t, const Ids& id) {
    return sq_loss(t, t.apply(spec, {id.at("x"), id.at("w"), id.at("b")}));
  };
  EXPECT_LT(gradcheck(params, loss), kTolerance);
}

TEST(GradCheck, TransposedConv2d) {
  const TensorMap params{{"x", random_tensor({2, 3, 3, 4}, 7)},
                         {"w", random_tensor({3, 2, 3, 3}, 8)},
                         {"b", random_tensor({1, 2, 1, 1}, 9)}};
  for (int stride : {1, 2}) {
    for (Padding pad : {Padding::same, Padding::valid}) {
      const auto loss = [&](Tape& t, const Ids& id) {
        return sq_loss(t, t.apply(OpSpec::transposed_conv(3, 3, stride, pad),
                                  {id.at("x"), id.at("w"), id.at("b")}));
      };
      EXPECT_LT(gradcheck(params, loss), kTolerance) << stride;
    }
  }
}

TEST(GradCheck, BatchNormTrainAndInfer) {
  const TensorMap params{{"x", random_tensor({3, 2, 3, 3}, 10)},
                         {"g", random_tensor({1, 2, 1, 1}, 11, DType::f64, 0.5, 1.5)},
                         {"b", random_tensor({1, 2, 1, 1}, 12)}};
  const Tensor mean = random_tensor({1, 2, 1, 1}, 13);
  const Tensor var = random_tensor({1, 2, 1, 1}, 14, DType::f64, 0.5, 2.0);
  for (Mode mode : {Mode::train, Mode::infer}) {
    const auto loss = [&](Tape& t, const Ids& id) {
      const ValueId m = t.constant(mean), v = t.constant(var);
      return sq_loss(t, t.apply(OpSpec::batch_norm(1e-3, 0.9),
                                {id.at("x"), id.at("g"), id.at("b"), m, v}));
    };
    EXPECT_LT(gradcheck(params, loss, {mode, 0, 1}), kTolerance);
  }
}

TEST(GradCheck, ReluDropoutScaleShift) {
  const TensorMap params{{"x", away_from_zero(random_tensor({2, 3, 4, 4}, 15))},
                         {"s", random_tensor({1, 3, 1, 1}, 16, DType::f64, 0.5, 1.5)},
                         {"h", random_tensor({1, 3, 1, 1}, 17)}};
  const auto loss = [&](Tape& t, const Ids& id) {
    const ValueId r = t.apply(OpSpec::of(OpKind::relu), {id.at("x")});
    const ValueId d = t.apply(OpSpec::dropout(0.6, 99), {r});
    return sq_loss(t, t.apply(OpSpec::of(OpKind::scale_shift), {d, id.at("s"), id.at("h")}));
  };
  EXPECT_LT(gradcheck(params, loss), kTolerance);
}

TEST(GradCheck, MaxPoolConcatAdd) {
  const TensorMap params{{"a", random_tensor({2, 2, 6, 6}, 18)},
                         {"b", random_tensor({2, 3, 3, 3}, 19)},
                         {"c", random_tensor({2, 5, 3, 3}, 20)}};
  const auto loss = [&](Tape& t, const Ids& id) {
    const ValueId p = t.apply(OpSpec::pool(2, 2), {id.at("a")});
    const ValueId cat = t.apply(OpSpec::of(OpKind::concat), {p, id.at("b")});
    return sq_loss(t, t.apply(OpSpec::of(OpKind::add), {cat, id.at("c")}));
  };
  EXPECT_LT(gradcheck(params, loss), kTolerance);
}

TEST(GradCheck, SoftmaxAndResize) {
  const TensorMap params{{"x", random_tensor({1, 3, 3, 4}, 21, DType::f64, -2, 2)}};
  OpSpec resize = OpSpec::of(OpKind::resize_bilinear);
  resize.out_h = 7;
  resize.out_w = 5;
  const auto loss = [&](Tape& t, const Ids& id) {
    const ValueId s = t.apply(OpSpec::of(OpKind::softmax), {id.at("x")});
    return sq_loss(t, t.apply(resize, {s}));
  };
  EXPECT_LT(gradcheck(params, loss), kTolerance);
}

TEST(GradCheck, FocalLoss) {
  const Tensor labels = Tensor::from_values<double>({2, 1, 2, 2}, {0, 1, 2, 3, 3, 2, 1, 0});
  const TensorMap params{{"x", random_tensor({2, 4, 2, 2}, 22, DType::f64, -3, 3)}};
  for (double gamma : {0.0, 0.5, 2.0}) {
    OpSpec spec = OpSpec::of(OpKind::focal_loss);
    spec.gamma = gamma;
    spec.class_weights = {1.0, 2.0, 0.5, 1.5};
    const auto loss = [&](Tape& t, const Ids& id) {
      return t.apply(spec, {id.at("x"), t.constant(labels)});
    };
    EXPECT_LT(gradcheck(params, loss), kTolerance) << gamma;
  }
}

TEST(GradCheck, FocalLossAtCertainty) {
  // p_y == 1 exactly: the (1-p)^(gamma-1) term must not produce NaN.
  const Tensor logits = Tensor::from_values<double>({1, 2, 1, 1}, {800.0, 0.0});
  const Tensor labels = Tensor::from_values<double>({1, 1, 1, 1}, {0.0});
  Tape t({Mode::train, 0, 1});
  OpSpec spec = OpSpec::of(OpKind::focal_loss);
  spec.gamma = 0.5;
  const ValueId x = t.parameter("x", logits);
  const TensorMap g = backward(t, t.apply(spec, {x, t.constant(labels)}));
  for (const double v : test::values_of(g.at("x"))) {
    EXPECT_TRUE(std::isfinite(v));
  }
}

}  // namespace
}  // namespace bonnet
