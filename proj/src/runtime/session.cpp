// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>

#include "bonnet/parallel.hpp"
#include "bonnet/runtime.hpp"

namespace bonnet {

std::string_view to_string(Backend backend) {
  return backend == Backend::reference_float ? "reference_float" : "quantized_int8";
}

std::string_view to_string(Device device) {
  return device == Device::cpu_single ? "cpu_single" : "cpu_parallel";
}

std::optional<Backend> parse_backend(std::string_view text) {
  for (const auto b : {Backend::reference_float, Backend::quantized_int8}) {
    if (to_string(b) == text) {
      return b;
    }
  }
  return std::nullopt;
}

std::optional<Device> parse_device(std::string_view text) {
  for (const auto d : {Device::cpu_single, Device::cpu_parallel}) {
    if (to_string(d) == text) {
      return d;
    }
  }
  return std::nullopt;
}

Session::Session(FrozenModel model, Backend backend, Device device)
    : model_(std::move(model)), backend_(backend), device_(device) {
  model_.validate();
  if (backend_ == Backend::quantized_int8 && model_.variant != Variant::quantized) {
    throw SessionError("backend quantized_int8 needs the quantized variant, got variant '" +
                       std::string(to_string(model_.variant)) + "'");
  }
  weights_ = float_weights(model_);
  threads_ = device_ == Device::cpu_parallel ? std::max(1, hardware_threads()) : 1;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

Mask Session::infer(const Image& image, bool probabilities) const {
  if (image.empty()) {
    throw InvalidArgument("cannot run inference on an empty image");
  }
  if (image.channels != 3 && image.channels != 1) {
    throw InvalidArgument("expected an RGB or gray image, got " +
                          std::to_string(image.channels) + " channels");
  }
  Mask mask;
  auto t0 = Clock::now();
  const int w = static_cast<int>(model_.input.w);
  const int h = static_cast<int>(model_.input.h);
  const Image resized = resize_bilinear(image, w, h);
  Tensor input({1, 3, h, w}, DType::f32, model_.layout);
  auto d = input.data<float>();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        d[input.offset(0, c, y, x)] = resized.at(x, y, resized.channels == 3 ? c : 0);
      }
    }
  }
  mask.timing.preprocess_ms = ms_since(t0);

  t0 = Clock::now();
  std::vector<std::string> outputs{model_.nodes.argmax};
  if (probabilities) {
    outputs.push_back(model_.nodes.softmax);
  }
  ExecOptions options;
  options.threads = threads_;
  options.quantize_activations = backend_ == Backend::quantized_int8;
  TensorMap out = execute(model_, weights_, input, outputs, options);
  mask.timing.inference_ms = ms_since(t0);

  t0 = Clock::now();
  const Tensor& ids = out.at(model_.nodes.argmax);
  Image small(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      small.at(x, y) = static_cast<std::uint8_t>(ids.at(0, 0, y, x));
    }
  }
  mask.labels = resize_nearest(small, image.width, image.height);
  if (probabilities) {
    mask.probabilities = convert_layout(out.at(model_.nodes.softmax), Layout::nchw);
  }
  mask.timing.postprocess_ms = ms_since(t0);
  return mask;
}

Session open_session(const std::filesystem::path& model_dir, Variant variant, Backend backend,
                     Device device) {
  const auto path = model_dir / model_file_name(variant);
  if (!std::filesystem::exists(path)) {
    throw SessionError("model directory " + model_dir.string() + " has no variant '" +
                       std::string(to_string(variant)) + "' (" + path.filename().string() + ")");
  }
  if (backend == Backend::quantized_int8 && variant != Variant::quantized) {
    throw SessionError("backend quantized_int8 needs the quantized variant, got variant '" +
                       std::string(to_string(variant)) + "'");
  }
  FrozenModel model = load_model(path);
  const auto nodes_path = model_dir / "nodes.yaml";
  if (!std::filesystem::exists(nodes_path)) {
    throw SessionError("model directory " + model_dir.string() + " has no nodes.yaml");
  }
  const NodesConfig nodes = load_nodes_config(nodes_path);
  for (const auto* name : {&nodes.input, &nodes.code, &nodes.logits, &nodes.softmax, &nodes.argmax}) {
    if (!model.has_node(*name)) {
      throw SessionError("nodes.yaml names '" + *name + "', which " + path.filename().string() +
                         " does not contain");
    }
  }
  model.nodes = nodes;
  return Session(std::move(model), backend, device);
}

Image render_overlay(const Session& session, const Mask& mask, const Image* image, double alpha) {
  if (image == nullptr) {
    return colorize(mask.labels, session.model().classes);
  }
  if (image->channels == 3) {
    return colorize(mask.labels, session.model().classes, image, alpha);
  }
  Image rgb(image->width, image->height, 3);
  for (std::size_t i = 0; i < image->pixels.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      rgb.pixels[i * 3 + static_cast<std::size_t>(c)] = image->pixels[i];
    }
  }
  return colorize(mask.labels, session.model().classes, &rgb, alpha);
}

}  // namespace bonnet
