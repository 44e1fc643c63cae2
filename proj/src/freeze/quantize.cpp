// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>

#include "bonnet/freezer.hpp"

namespace bonnet {

namespace {

constexpr double kScaleFloor = 1e-8;

}  // namespace

QuantParams weight_quant_params(const Tensor& weights) {
  double peak = 0.0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(weights.size()); ++i) {
    peak = std::max(peak, std::abs(weights.flat(i)));
  }
  return {std::max(peak / 127.0, kScaleFloor), 0};
}

QuantParams activation_quant_params(double min, double max) {
  if (!std::isfinite(min) || !std::isfinite(max) || min > max) {
    throw DomainError("invalid activation range [" + std::to_string(min) + ", " +
                      std::to_string(max) + "]");
  }
  const double scale = std::max((max - min) / 255.0, kScaleFloor);
  const long zp = std::lround(-min / scale) - 128;
  return {scale, static_cast<std::int32_t>(std::clamp(zp, -128L, 127L))};
}

std::int8_t quantize_value(double x, const QuantParams& q) {
  const double v = std::round(x / q.scale) + q.zero_point;
  return static_cast<std::int8_t>(std::clamp(v, -128.0, 127.0));
}

double dequantize_value(std::int8_t q, const QuantParams& p) {
  return p.scale * (static_cast<int>(q) - p.zero_point);
}

Tensor quantize(const Tensor& t, const QuantParams& q) {
  Tensor out = Tensor::quantized(t.dims(), q, t.layout());
  auto d = out.data<std::int8_t>();
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = quantize_value(t.flat(i), q);
  }
  return out;
}

Tensor dequantize(const Tensor& t, DType dtype) {
  if (t.is_float()) {
    return t.dtype() == dtype ? t : t.cast(dtype);
  }
  Tensor out(t.dims(), dtype, t.layout());
  visit_float(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = out.data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = static_cast<T>(t.flat(i));
    }
  });
  return out;
}

FrozenModel quantize_model(const FrozenModel& model, std::span<const Tensor> calibration) {
  if (calibration.empty()) {
    throw FreezeError("quantization needs at least one calibration batch");
  }
  for (const auto& [name, t] : model.weights) {
    if (!t.is_float()) {
      throw FreezeError("model is already quantized ('" + name + "' is int8)");
    }
  }
  struct Range {
    double min = std::numeric_limits<double>::infinity();
    double max = -std::numeric_limits<double>::infinity();
  };
  std::map<std::string, Range> ranges;
  const TensorMap weights = float_weights(model);
  for (const Tensor& batch : calibration) {
    execute(model, weights, batch, {model.nodes.argmax}, {},
            [&](const GraphNode& node, const Tensor& value) {
              if (node.spec.kind == OpKind::argmax) {
                return;
              }
              Range& r = ranges[node.name];
              visit_float(value.dtype(), [&](auto tag) {
                for (const auto v : value.data<decltype(tag)>()) {
                  r.min = std::min(r.min, static_cast<double>(v));
                  r.max = std::max(r.max, static_cast<double>(v));
                }
              });
            });
  }

  FrozenModel q = model;
  q.variant = Variant::quantized;
  for (auto& [name, t] : q.weights) {
    t = quantize(t, weight_quant_params(t));
  }
  for (auto& node : q.graph) {
    if (node.spec.kind == OpKind::argmax) {
      node.spec.act_quant.reset();
      continue;
    }
    const auto it = ranges.find(node.name);
    if (it == ranges.end()) {
      throw FreezeError("node '" + node.name + "' was not reached during calibration");
    }
    // The representable range always contains zero (ReLU outputs, padding).
    node.spec.act_quant =
        activation_quant_params(std::min(it->second.min, 0.0), std::max(it->second.max, 0.0));
  }
  q.validate();
  return q;
}

}  // namespace bonnet
