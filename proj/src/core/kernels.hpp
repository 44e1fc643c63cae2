// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

// Backward kernels shared between the op implementations and the dispatcher.

#pragma once

#include "bonnet/ops.hpp"

namespace bonnet::detail {

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

ConvGrads conv2d_backward(const Tensor& x, const Tensor& weights, const Tensor& grad_out,
                          const OpSpec& spec, bool need_input, bool need_weights,
                          bool need_bias);
ConvGrads transposed_conv2d_backward(const Tensor& x, const Tensor& weights,
                                     const Tensor& grad_out, const OpSpec& spec,
                                     bool need_input, bool need_weights, bool need_bias);

struct NormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

NormGrads batch_norm_backward(const Tensor& x, const Tensor& gamma,
                              const Tensor& running_mean, const Tensor& running_var,
                              const Tensor& grad_out, Mode mode, double eps);
NormGrads scale_shift_backward(const Tensor& x, const Tensor& scale, const Tensor& shift,
                               const Tensor& grad_out, bool fused_relu);

Tensor relu_backward(const Tensor& x, const Tensor& grad_out);
Tensor dropout_backward(const Tensor& grad_out, double keep_prob, std::uint64_t seed,
                        std::int64_t sample_offset, Mode mode);
Tensor max_pool2d_backward(const Tensor& x, const Tensor& grad_out, const OpSpec& spec);
std::pair<Tensor, Tensor> concat_backward(const Tensor& a, const Tensor& b,
                                          const Tensor& grad_out);
Tensor add_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out,
                    bool fused_relu);
Tensor softmax_backward(const Tensor& logits, const Tensor& grad_out);
Tensor resize_bilinear_backward(const Tensor& x, const Tensor& grad_out);
Tensor reduce_sum_backward(const Tensor& x, const Tensor& grad_out);
Tensor square_backward(const Tensor& x, const Tensor& grad_out);
Tensor focal_loss_backward(const Tensor& logits, const Tensor& labels, double gamma,
                           std::span<const double> class_weights, const Tensor& grad_out);

/// Channel index of flat element `i` of tensor `t`.
inline std::int64_t channel_of(const Tensor& t, std::int64_t i) {
  const auto& d = t.dims();
  return t.layout() == Layout::nchw ? (i / (d.h * d.w)) % d.c : i % d.c;
}

/// Weight tensors are consumed in NCHW order; NHWC-stored weights are
/// repacked first.
inline const Tensor& as_nchw(const Tensor& t, Tensor& storage) {
  if (t.layout() == Layout::nchw) {
    return t;
  }
  storage = convert_layout(t, Layout::nchw);
  return storage;
}

}  // namespace bonnet::detail
