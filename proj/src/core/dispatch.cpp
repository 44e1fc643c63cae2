// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "bonnet/ops.hpp"
#include "kernels.hpp"

namespace bonnet {

namespace {

std::size_t expected_inputs(OpKind kind, std::size_t given) {
  switch (kind) {
    case OpKind::conv2d:
    case OpKind::transposed_conv2d:
      return given == 3 ? 3 : 2;
    case OpKind::batch_norm:
      return 5;
    case OpKind::scale_shift:
      return 3;
    case OpKind::concat:
    case OpKind::add:
    case OpKind::focal_loss:
      return 2;
    default:
      return 1;
  }
}

void check_arity(const OpSpec& spec, std::span<const Tensor* const> inputs) {
  if (inputs.size() != expected_inputs(spec.kind, inputs.size())) {
    throw ShapeError(std::string(to_string(spec.kind)) + ": expected " +
                     std::to_string(expected_inputs(spec.kind, inputs.size())) +
                     " inputs, got " + std::to_string(inputs.size()));
  }
  for (const Tensor* t : inputs) {
    if (t == nullptr) {
      throw ShapeError(std::string(to_string(spec.kind)) + ": null input");
    }
  }
}

Tensor normalize_input(const Tensor& x, double scale, double mean) {
  if (scale == 1.0 && mean == 0.0) {
    return x;
  }
  Tensor out(x.dims(), x.dtype(), x.layout());
  visit_float(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ys[i] = static_cast<T>(xs[i] * scale - mean);
    }
  });
  return out;
}

}  // namespace

Tensor forward(const OpSpec& spec, std::span<const Tensor* const> inputs,
               const ExecContext& ctx, BatchStats* stats) {
  check_arity(spec, inputs);
  const Tensor& x = *inputs[0];
  switch (spec.kind) {
    case OpKind::input:
      return normalize_input(x, spec.norm_scale, spec.norm_mean);
    case OpKind::conv2d:
      return conv2d(x, *inputs[1], inputs.size() > 2 ? inputs[2] : nullptr, spec,
                    ctx.threads);
    case OpKind::transposed_conv2d:
      return transposed_conv2d(x, *inputs[1], inputs.size() > 2 ? inputs[2] : nullptr, spec,
                               ctx.threads);
    case OpKind::batch_norm:
      return batch_norm(x, *inputs[1], *inputs[2], *inputs[3], *inputs[4], ctx.mode, spec.eps,
                        stats);
    case OpKind::relu:
      return relu(x);
    case OpKind::dropout:
      return dropout(x, spec.keep_prob, spec.seed, ctx.sample_offset, ctx.mode);
    case OpKind::max_pool2d:
      return max_pool2d(x, spec);
    case OpKind::concat:
      return concat_channels(x, *inputs[1]);
    case OpKind::add:
      return add(x, *inputs[1], spec.fused_relu);
    case OpKind::softmax:
      return softmax(x);
    case OpKind::argmax:
      return argmax(x);
    case OpKind::resize_bilinear:
      spec.validate();
      return resize_bilinear(x, spec.out_h, spec.out_w);
    case OpKind::scale_shift:
      return scale_shift(x, *inputs[1], *inputs[2], spec.fused_relu);
    case OpKind::reduce_sum:
      return reduce_sum(x);
    case OpKind::square:
      return square(x);
    case OpKind::focal_loss:
      spec.validate();
      return focal_loss(x, *inputs[1], spec.gamma, spec.class_weights);
  }
  throw UnsupportedOpError("unknown op kind " +
                           std::to_string(static_cast<int>(spec.kind)));
}

bool has_derivative(OpKind kind) {
  return kind != OpKind::argmax;
}

std::vector<Tensor> backward(const OpSpec& spec, std::span<const Tensor* const> inputs,
                             const Tensor& grad_out, std::span<const bool> needs_grad,
                             const ExecContext& ctx) {
  check_arity(spec, inputs);
  if (needs_grad.size() != inputs.size()) {
    throw ShapeError("backward: needs_grad has " + std::to_string(needs_grad.size()) +
                     " flags for " + std::to_string(inputs.size()) + " inputs");
  }
  if (!has_derivative(spec.kind)) {
    throw UnsupportedOpError(std::string(to_string(spec.kind)) + " has no derivative");
  }
  std::vector<Tensor> grads(inputs.size());
  const Tensor& x = *inputs[0];
  const auto need = [&](std::size_t i) { return needs_grad[i]; };
  switch (spec.kind) {
    case OpKind::input:
      if (need(0)) {
        grads[0] = normalize_input(grad_out, spec.norm_scale, 0.0);
      }
      break;
    case OpKind::conv2d:
    case OpKind::transposed_conv2d: {
      const bool has_bias = inputs.size() > 2;
      Tensor g = grad_out;
      if (spec.fused_relu) {
        // The activation is recovered from the forward output.
        const Tensor y = forward(spec, inputs, ctx);
        g = detail::relu_backward(y, grad_out);
      }
      auto r = spec.kind == OpKind::conv2d
                   ? detail::conv2d_backward(x, *inputs[1], g, spec, need(0), need(1),
                                             has_bias && need(2))
                   : detail::transposed_conv2d_backward(x, *inputs[1], g, spec, need(0),
                                                        need(1), has_bias && need(2));
      grads[0] = std::move(r.input);
      grads[1] = std::move(r.weights);
      if (has_bias) {
        grads[2] = std::move(r.bias);
      }
      break;
    }
    case OpKind::batch_norm: {
      auto r = detail::batch_norm_backward(x, *inputs[1], *inputs[3], *inputs[4], grad_out,
                                           ctx.mode, spec.eps);
      if (need(0)) grads[0] = std::move(r.input);
      if (need(1)) grads[1] = std::move(r.gamma);
      if (need(2)) grads[2] = std::move(r.beta);
      break;
    }
    case OpKind::scale_shift: {
      auto r = detail::scale_shift_backward(x, *inputs[1], *inputs[2], grad_out,
                                            spec.fused_relu);
      if (need(0)) grads[0] = std::move(r.input);
      if (need(1)) grads[1] = std::move(r.gamma);
      if (need(2)) grads[2] = std::move(r.beta);
      break;
    }
    case OpKind::relu:
      if (need(0)) grads[0] = detail::relu_backward(x, grad_out);
      break;
    case OpKind::dropout:
      if (need(0)) {
        grads[0] = detail::dropout_backward(grad_out, spec.keep_prob, spec.seed,
                                            ctx.sample_offset, ctx.mode);
      }
      break;
    case OpKind::max_pool2d:
      if (need(0)) grads[0] = detail::max_pool2d_backward(x, grad_out, spec);
      break;
    case OpKind::concat: {
      auto [ga, gb] = detail::concat_backward(x, *inputs[1], grad_out);
      if (need(0)) grads[0] = std::move(ga);
      if (need(1)) grads[1] = std::move(gb);
      break;
    }
    case OpKind::add: {
      Tensor g = detail::add_backward(x, *inputs[1], grad_out, spec.fused_relu);
      if (need(0)) grads[0] = g;
      if (need(1)) grads[1] = std::move(g);
      break;
    }
    case OpKind::softmax:
      if (need(0)) grads[0] = detail::softmax_backward(x, grad_out);
      break;
    case OpKind::resize_bilinear:
      if (need(0)) grads[0] = detail::resize_bilinear_backward(x, grad_out);
      break;
    case OpKind::reduce_sum:
      if (need(0)) grads[0] = detail::reduce_sum_backward(x, grad_out);
      break;
    case OpKind::square:
      if (need(0)) grads[0] = detail::square_backward(x, grad_out);
      break;
    case OpKind::focal_loss:
      if (need(0)) {
        grads[0] = detail::focal_loss_backward(x, *inputs[1], spec.gamma, spec.class_weights,
                                               grad_out);
      }
      break;
    case OpKind::argmax:
      break;
  }
  return grads;
}

}  // namespace bonnet
