// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "bonnet/tensor.hpp"

namespace bonnet {

/// Operator kinds. The numeric values are part of the frozen container
/// format and must never be renumbered.
enum class OpKind : std::uint8_t {
  input = 0,
  conv2d = 1,
  transposed_conv2d = 2,
  batch_norm = 3,
  relu = 4,
  dropout = 5,
  max_pool2d = 6,
  concat = 7,
  add = 8,
  softmax = 9,
  argmax = 10,
  resize_bilinear = 11,
  scale_shift = 12,
  reduce_sum = 13,
  square = 14,
  focal_loss = 15,
};

std::string_view to_string(OpKind kind);

/// "same": output = ceil(in / stride), symmetric padding with the odd pixel
/// on the high side. "valid": no padding.
enum class Padding : std::uint8_t { same = 0, valid = 1 };

enum class Mode : std::uint8_t { train = 0, infer = 1 };

/// Operator description. Fields that do not apply to a kind keep their
/// defaults; `validate()` checks the ones that do.
struct OpSpec {
  OpKind kind = OpKind::relu;

  // conv2d, transposed_conv2d, max_pool2d (window = kernel)
  std::int32_t kernel_h = 1;
  std::int32_t kernel_w = 1;
  std::int32_t stride = 1;
  std::int32_t dilation = 1;
  Padding padding = Padding::same;
  // conv2d, transposed_conv2d, add, scale_shift
  bool fused_relu = false;

  // dropout
  double keep_prob = 1.0;
  std::uint64_t seed = 0;

  // batch_norm
  double eps = 1e-3;
  double decay = 0.9;

  // resize_bilinear
  std::int32_t out_h = 0;
  std::int32_t out_w = 0;

  // focal_loss
  double gamma = 0.0;
  std::vector<double> class_weights;

  // input: x * norm_scale - norm_mean
  double norm_scale = 1.0;
  double norm_mean = 0.0;

  // Per-tensor quantization of this node's output (quantized models only).
  std::optional<QuantParams> act_quant;

  void validate() const;
  bool operator==(const OpSpec&) const = default;

  static OpSpec conv(std::int32_t kh, std::int32_t kw, std::int32_t stride = 1,
                     std::int32_t dilation = 1, Padding padding = Padding::same);
  static OpSpec transposed_conv(std::int32_t kh, std::int32_t kw, std::int32_t stride,
                                Padding padding = Padding::same);
  static OpSpec pool(std::int32_t window, std::int32_t stride,
                     Padding padding = Padding::valid);
  static OpSpec batch_norm(double eps, double decay);
  static OpSpec dropout(double keep_prob, std::uint64_t seed);
  static OpSpec of(OpKind kind);
};

/// Runtime context shared by every op of one forward/backward pass.
struct ExecContext {
  Mode mode = Mode::infer;
  /// Global index of batch element 0. Dropout masks are keyed by the global
  /// sample index, so sharding a batch across workers does not change them.
  std::int64_t sample_offset = 0;
  int threads = 1;
};

/// Per-channel batch statistics observed by a train-mode batch norm.
struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
  std::int64_t count = 0;   // elements per channel
};

std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                std::int64_t dilation, Padding padding);
std::int64_t transposed_output_extent(std::int64_t in, std::int64_t kernel,
                                      std::int64_t stride, std::int64_t dilation,
                                      Padding padding);

// ---------------------------------------------------------------------------
// Forward operators. Float tensors only; NCHW and NHWC are both accepted and
// the output keeps the input layout.

/// Weights (C_out, C_in, k_h, k_w); bias (1, C_out, 1, 1) or null.
Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor* bias, const OpSpec& spec,
              int threads = 1);
/// Direct seven-loop reference; defines conv2d's results.
Tensor conv2d_direct(const Tensor& x, const Tensor& weights, const Tensor* bias,
                     const OpSpec& spec);
/// Adjoint of conv2d. Weights (C_in, C_out, k_h, k_w).
Tensor transposed_conv2d(const Tensor& x, const Tensor& weights, const Tensor* bias,
                         const OpSpec& spec, int threads = 1);

/// gamma/beta/mean/var are (1, C, 1, 1). In train mode the batch statistics
/// are used (and reported through `stats`); in infer mode the running ones.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const Tensor& running_mean, const Tensor& running_var, Mode mode,
                  double eps, BatchStats* stats = nullptr);

/// running <- decay * running + (1 - decay) * batch. Requires decay in [0, 1).
void update_running_stats(Tensor& running_mean, Tensor& running_var,
                          const BatchStats& stats, double decay);

/// Pools per-worker statistics into the statistics of the union batch.
BatchStats merge_batch_stats(std::span<const BatchStats> parts);

/// y = x * scale + shift per channel.
Tensor scale_shift(const Tensor& x, const Tensor& scale, const Tensor& shift,
                   bool fused_relu = false);
Tensor relu(const Tensor& x);
/// Inverted dropout: train mode keeps with probability keep_prob and scales
/// by 1/keep_prob; infer mode is the identity.
Tensor dropout(const Tensor& x, double keep_prob, std::uint64_t seed,
               std::int64_t sample_offset, Mode mode);
Tensor max_pool2d(const Tensor& x, const OpSpec& spec);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b, bool fused_relu = false);
Tensor softmax(const Tensor& logits);
/// (n, 1, h, w) tensor of class indices stored as floats.
Tensor argmax(const Tensor& logits);

struct SoftmaxArgmax {
  Tensor probabilities;
  std::vector<std::int32_t> labels;  // n*h*w, row-major (n, h, w)
};
SoftmaxArgmax softmax_argmax(const Tensor& logits);

/// Half-pixel-centre bilinear resampling.
Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);
/// Scalar (1,1,1,1) sum of all elements.
Tensor reduce_sum(const Tensor& x);
Tensor square(const Tensor& x);

/// Mean over pixels of w_y * (1 - p_y)^gamma * (-ln p_y). `labels` is
/// (n, 1, h, w) with class ids stored as floats. Result is (1,1,1,1).
Tensor focal_loss(const Tensor& logits, const Tensor& labels, double gamma,
                  std::span<const double> class_weights);

// ---------------------------------------------------------------------------
// Generic dispatch used by the tape and graph executors.
//
// Input conventions:
//   conv2d / transposed_conv2d: x, weights[, bias]
//   batch_norm:                 x, gamma, beta, running_mean, running_var
//   scale_shift:                x, scale, shift
//   concat / add:               a, b
//   focal_loss:                 logits, labels
//   everything else:            x

Tensor forward(const OpSpec& spec, std::span<const Tensor* const> inputs,
               const ExecContext& ctx, BatchStats* stats = nullptr);

bool has_derivative(OpKind kind);

/// Vector-Jacobian product. Returns one tensor per input; entries whose
/// `needs_grad` flag is false (or that are not differentiable) are empty.
std::vector<Tensor> backward(const OpSpec& spec, std::span<const Tensor* const> inputs,
                             const Tensor& grad_out, std::span<const bool> needs_grad,
                             const ExecContext& ctx);

}  // namespace bonnet
