// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "bonnet/ops.hpp"

namespace bonnet {

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::input:
      return "input";
    case OpKind::conv2d:
      return "conv2d";
    case OpKind::transposed_conv2d:
      return "transposed_conv2d";
    case OpKind::batch_norm:
      return "batch_norm";
    case OpKind::relu:
      return "relu";
    case OpKind::dropout:
      return "dropout";
    case OpKind::max_pool2d:
      return "max_pool2d";
    case OpKind::concat:
      return "concat";
    case OpKind::add:
      return "add";
    case OpKind::softmax:
      return "softmax";
    case OpKind::argmax:
      return "argmax";
    case OpKind::resize_bilinear:
      return "resize_bilinear";
    case OpKind::scale_shift:
      return "scale_shift";
    case OpKind::reduce_sum:
      return "reduce_sum";
    case OpKind::square:
      return "square";
    case OpKind::focal_loss:
      return "focal_loss";
  }
  return "unknown";
}

void OpSpec::validate() const {
  const auto fail = [&](const std::string& what) {
    throw InvalidArgument(std::string(to_string(kind)) + ": " + what);
  };
  switch (kind) {
    case OpKind::conv2d:
    case OpKind::transposed_conv2d:
    case OpKind::max_pool2d:
      if (kernel_h < 1 || kernel_w < 1) {
        fail("kernel extents must be >= 1");
      }
      if (stride < 1) {
        fail("stride must be >= 1");
      }
      if (dilation < 1) {
        fail("dilation must be >= 1");
      }
      break;
    case OpKind::dropout:
      if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
        fail("keep probability must lie in (0, 1]");
      }
      break;
    case OpKind::batch_norm:
      if (!(eps > 0.0)) {
        fail("epsilon must be > 0");
      }
      if (!(decay >= 0.0 && decay < 1.0)) {
        fail("decay must lie in [0, 1)");
      }
      break;
    case OpKind::resize_bilinear:
      if (out_h < 1 || out_w < 1) {
        fail("output extents must be >= 1");
      }
      break;
    case OpKind::focal_loss:
      if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
        fail("gamma must be finite and >= 0");
      }
      for (const double w : class_weights) {
        if (!(w > 0.0) || !std::isfinite(w)) {
          fail("class weights must be finite and positive");
        }
      }
      break;
    default:
      break;
  }
}

OpSpec OpSpec::conv(std::int32_t kh, std::int32_t kw, std::int32_t stride,
                    std::int32_t dilation, Padding padding) {
  OpSpec s;
  s.kind = OpKind::conv2d;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.stride = stride;
  s.dilation = dilation;
  s.padding = padding;
  return s;
}

OpSpec OpSpec::transposed_conv(std::int32_t kh, std::int32_t kw, std::int32_t stride,
                               Padding padding) {
  OpSpec s = conv(kh, kw, stride, 1, padding);
  s.kind = OpKind::transposed_conv2d;
  return s;
}

OpSpec OpSpec::pool(std::int32_t window, std::int32_t stride, Padding padding) {
  OpSpec s = conv(window, window, stride, 1, padding);
  s.kind = OpKind::max_pool2d;
  return s;
}

OpSpec OpSpec::batch_norm(double eps, double decay) {
  OpSpec s;
  s.kind = OpKind::batch_norm;
  s.eps = eps;
  s.decay = decay;
  return s;
}

OpSpec OpSpec::dropout(double keep_prob, std::uint64_t seed) {
  OpSpec s;
  s.kind = OpKind::dropout;
  s.keep_prob = keep_prob;
  s.seed = seed;
  return s;
}

OpSpec OpSpec::of(OpKind kind) {
  OpSpec s;
  s.kind = kind;
  return s;
}

}  // namespace bonnet
