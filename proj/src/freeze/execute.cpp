// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include "bonnet/freezer.hpp"

namespace bonnet {

TensorMap float_weights(const FrozenModel& model) {
  TensorMap out;
  for (const auto& [name, t] : model.weights) {
    out.emplace(name, dequantize(t, DType::f32));
  }
  return out;
}

namespace {

void fake_quantize(Tensor& t, const QuantParams& q) {
  visit_float(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : t.data<T>()) {
      v = static_cast<T>(dequantize_value(quantize_value(v, q), q));
    }
  });
}

}  // namespace

TensorMap execute(const FrozenModel& model, const TensorMap& weights, const Tensor& image,
                  const std::vector<std::string>& outputs, const ExecOptions& options,
                  const NodeObserver& observer) {
  const Dims& d = image.dims();
  if (d.c != model.input.c || d.h != model.input.h || d.w != model.input.w || d.n < 1) {
    throw ShapeError("model expects input (n, " + std::to_string(model.input.c) + ", " +
                     std::to_string(model.input.h) + ", " + std::to_string(model.input.w) +
                     "), got " + to_string(d));
  }
  if (image.layout() != model.layout) {
    throw ShapeError("model expects " + std::string(to_string(model.layout)) + " input, got " +
                     std::string(to_string(image.layout())));
  }
  std::map<std::string, std::size_t> last_use;
  for (std::size_t i = 0; i < model.graph.size(); ++i) {
    for (const auto& in : model.graph[i].inputs) {
      last_use[in] = i;
    }
  }
  const std::set<std::string> wanted(outputs.begin(), outputs.end());
  std::map<std::string, Tensor> live;
  TensorMap result;
  const auto lookup = [&](const std::string& name) -> const Tensor* {
    if (const auto it = live.find(name); it != live.end()) {
      return &it->second;
    }
    if (const auto it = weights.find(name); it != weights.end()) {
      return &it->second;
    }
    throw ShapeError("model value '" + name + "' is not available");
  };
  const ExecContext ctx{Mode::infer, 0, options.threads};
  const bool need_all = static_cast<bool>(observer);
  for (std::size_t i = 0; i < model.graph.size(); ++i) {
    if (!need_all && result.size() == wanted.size()) {
      break;
    }
    const auto& node = model.graph[i];
    std::vector<const Tensor*> ins;
    if (node.spec.kind == OpKind::input) {
      ins.push_back(&image);
    } else {
      for (const auto& name : node.inputs) {
        ins.push_back(lookup(name));
      }
    }
    Tensor out = forward(node.spec, ins, ctx);
    if (observer) {
      observer(node, out);
    }
    if (options.quantize_activations && node.spec.act_quant) {
      fake_quantize(out, *node.spec.act_quant);
    }
    for (const auto& name : node.inputs) {
      if (last_use[name] == i && !wanted.contains(name)) {
        live.erase(name);
      }
    }
    if (wanted.contains(node.name)) {
      result.emplace(node.name, out);
    }
    if (last_use.contains(node.name)) {
      live.emplace(node.name, std::move(out));
    }
  }
  for (const auto& name : outputs) {
    if (!result.contains(name)) {
      throw InvalidArgument("model has no node named '" + name + "'");
    }
  }
  return result;
}

}  // namespace bonnet
