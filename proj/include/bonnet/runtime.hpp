// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "bonnet/colorize.hpp"
#include "bonnet/freezer.hpp"
#include "bonnet/image.hpp"

namespace bonnet {

enum class Backend : std::uint8_t { reference_float, quantized_int8 };
enum class Device : std::uint8_t { cpu_single, cpu_parallel };

std::string_view to_string(Backend backend);
std::string_view to_string(Device device);
std::optional<Backend> parse_backend(std::string_view text);
std::optional<Device> parse_device(std::string_view text);

class SessionError : public Error {
 public:
  using Error::Error;
};

struct StageTiming {
  double preprocess_ms = 0.0;
  double inference_ms = 0.0;
  double postprocess_ms = 0.0;

  double total_ms() const { return preprocess_ms + inference_ms + postprocess_ms; }
};

struct Mask {
  /// Class ids at the input resolution (one channel).
  Image labels;
  /// Per-class probabilities at inference resolution, (1, C, H, W) NCHW,
  /// when requested.
  std::optional<Tensor> probabilities;
  StageTiming timing;
};

/// Inference handle over one frozen model. The model is immutable for the
/// session's lifetime; infer() keeps its buffers local, so one session can
/// serve concurrent callers.
class Session {
 public:
  Session(FrozenModel model, Backend backend, Device device);

  Mask infer(const Image& image, bool probabilities = false) const;

  const FrozenModel& model() const { return model_; }
  Backend backend() const { return backend_; }
  Device device() const { return device_; }
  int threads() const { return threads_; }

 private:
  FrozenModel model_;
  TensorMap weights_;
  Backend backend_;
  Device device_;
  int threads_ = 1;
};

/// Loads `model_dir`/model_<variant>.bnnf (checksum verified) and checks
/// nodes.yaml against it.
Session open_session(const std::filesystem::path& model_dir, Variant variant, Backend backend,
                     Device device = Device::cpu_single);

/// Color mask, or an overlay of `image` when given.
Image render_overlay(const Session& session, const Mask& mask, const Image* image,
                     double alpha = 0.5);

}  // namespace bonnet
