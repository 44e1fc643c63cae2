// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <set>

#include "bonnet/dataset.hpp"
#include "bonnet/error.hpp"
#include "bonnet/model.hpp"

namespace bonnet {

const GraphNode& ModelGraph::node(const std::string& name) const {
  for (const auto& n : nodes) {
    if (n.name == name) {
      return n;
    }
  }
  throw InvalidArgument("graph has no node named '" + name + "'");
}

bool ModelGraph::has_node(const std::string& name) const {
  return std::any_of(nodes.begin(), nodes.end(), [&](const GraphNode& n) { return n.name == name; });
}

std::int64_t ModelGraph::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& [name, t] : parameters) {
    total += t.size();
  }
  return total;
}

void ModelGraph::validate() const {
  std::set<std::string> known;
  for (const auto& [name, t] : parameters) {
    known.insert(name);
  }
  for (const auto& [name, t] : buffers) {
    if (!known.insert(name).second) {
      throw ShapeError("tensor name '" + name + "' is both a parameter and a buffer");
    }
  }
  for (const auto& n : nodes) {
    if (n.spec.kind != OpKind::input) {
      for (const auto& in : n.inputs) {
        if (!known.contains(in)) {
          throw ShapeError("node '" + n.name + "' reads unknown or later value '" + in + "'");
        }
      }
    }
    if (!known.insert(n.name).second) {
      throw ShapeError("duplicate graph name '" + n.name + "'");
    }
  }
  for (const auto* name : {&names.input, &names.code, &names.logits, &names.softmax, &names.argmax}) {
    if (!has_node(*name)) {
      throw ShapeError("named node '" + *name + "' is missing from the graph");
    }
  }
}

Tensor images_to_tensor(const std::vector<const Sample*>& samples, DType dtype) {
  if (samples.empty()) {
    throw ShapeError("empty batch");
  }
  const int h = samples[0]->image.height;
  const int w = samples[0]->image.width;
  Tensor t({static_cast<std::int64_t>(samples.size()), 3, h, w}, dtype);
  visit_float(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (std::size_t n = 0; n < samples.size(); ++n) {
      const Image& img = samples[n]->image;
      if (img.width != w || img.height != h || img.channels != 3) {
        throw ShapeError("batch images must share one size and be RGB");
      }
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            d[t.offset(static_cast<std::int64_t>(n), c, y, x)] = static_cast<T>(img.at(x, y, c));
          }
        }
      }
    }
  });
  return t;
}

Tensor labels_to_tensor(const std::vector<const Sample*>& samples, DType dtype) {
  if (samples.empty()) {
    throw ShapeError("empty batch");
  }
  const int h = samples[0]->label.height;
  const int w = samples[0]->label.width;
  Tensor t({static_cast<std::int64_t>(samples.size()), 1, h, w}, dtype);
  visit_float(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    std::size_t i = 0;
    for (const Sample* s : samples) {
      if (s->label.width != w || s->label.height != h) {
        throw ShapeError("batch labels must share one size");
      }
      for (const auto v : s->label.pixels) {
        d[i++] = static_cast<T>(v);
      }
    }
  });
  return t;
}

RecordedGraph record(Tape& tape, const ModelGraph& graph, const Tensor& image,
                     const std::string& last) {
  return record(tape, graph, graph.parameters, image, last);
}

RecordedGraph record(Tape& tape, const ModelGraph& graph, const TensorMap& parameters,
                     const Tensor& image, const std::string& last) {
  RecordedGraph rec;
  std::map<std::string, ValueId> leaves;
  const auto leaf = [&](const std::string& name) -> ValueId {
    if (const auto it = rec.values.find(name); it != rec.values.end()) {
      return it->second;
    }
    if (const auto it = leaves.find(name); it != leaves.end()) {
      return it->second;
    }
    ValueId id;
    if (const auto p = parameters.find(name); p != parameters.end()) {
      id = tape.parameter(name, p->second);
    } else if (const auto b = graph.buffers.find(name); b != graph.buffers.end()) {
      id = tape.constant(b->second);
    } else {
      throw ShapeError("graph value '" + name + "' is not defined");
    }
    leaves.emplace(name, id);
    return id;
  };
  for (const auto& node : graph.nodes) {
    std::vector<ValueId> ins;
    if (node.spec.kind == OpKind::input) {
      ins.push_back(tape.constant(image));
    } else {
      for (const auto& name : node.inputs) {
        ins.push_back(leaf(name));
      }
    }
    rec.values[node.name] = tape.apply(node.spec, ins, node.name);
    if (node.name == last) {
      return rec;
    }
  }
  if (!last.empty()) {
    throw InvalidArgument("graph has no node named '" + last + "'");
  }
  return rec;
}

TensorMap run_graph(const ModelGraph& graph, const Tensor& image, const ExecContext& ctx,
                    const std::vector<std::string>& outputs) {
  std::map<std::string, std::size_t> last_use;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    for (const auto& in : graph.nodes[i].inputs) {
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
    if (const auto it = graph.parameters.find(name); it != graph.parameters.end()) {
      return &it->second;
    }
    if (const auto it = graph.buffers.find(name); it != graph.buffers.end()) {
      return &it->second;
    }
    throw ShapeError("graph value '" + name + "' is not available");
  };
  for (std::size_t i = 0; i < graph.nodes.size() && result.size() < wanted.size(); ++i) {
    const auto& node = graph.nodes[i];
    std::vector<const Tensor*> ins;
    if (node.spec.kind == OpKind::input) {
      ins.push_back(&image);
    } else {
      for (const auto& name : node.inputs) {
        ins.push_back(lookup(name));
      }
    }
    Tensor out = forward(node.spec, ins, ctx);
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
      throw InvalidArgument("graph has no node named '" + name + "'");
    }
  }
  return result;
}

ModelGraph cast_graph(const ModelGraph& graph, DType dtype) {
  ModelGraph out = graph;
  for (auto* table : {&out.parameters, &out.buffers}) {
    for (auto& [name, t] : *table) {
      t = t.cast(dtype);
    }
  }
  return out;
}

}  // namespace bonnet
