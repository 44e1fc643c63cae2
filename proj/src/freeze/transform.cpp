// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>

#include "bonnet/freezer.hpp"

namespace bonnet {

namespace {

std::set<std::string> named_nodes(const NodesConfig& n) {
  return {n.input, n.code, n.logits, n.softmax, n.argmax};
}

std::map<std::string, int> consumer_counts(const std::vector<GraphNode>& nodes) {
  std::map<std::string, int> counts;
  for (const auto& n : nodes) {
    for (const auto& in : n.inputs) {
      ++counts[in];
    }
  }
  return counts;
}

const Tensor& table_at(const ModelGraph& g, const std::string& name) {
  if (const auto it = g.parameters.find(name); it != g.parameters.end()) {
    return it->second;
  }
  if (const auto it = g.buffers.find(name); it != g.buffers.end()) {
    return it->second;
  }
  throw FreezeError("graph tensor '" + name + "' is missing");
}

std::vector<double> channel_values(const Tensor& t) {
  std::vector<double> v(static_cast<std::size_t>(t.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = t.flat(i);
  }
  return v;
}

Tensor channel_tensor(const std::vector<double>& values, DType dtype) {
  Tensor t({1, static_cast<std::int64_t>(values.size()), 1, 1}, dtype);
  visit_float(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) {
      d[i] = static_cast<T>(values[i]);
    }
  });
  return t;
}

// Drops tensors no node reads.
void prune_tensors(ModelGraph& g) {
  std::set<std::string> used;
  for (const auto& n : g.nodes) {
    used.insert(n.inputs.begin(), n.inputs.end());
  }
  for (auto* table : {&g.parameters, &g.buffers}) {
    std::erase_if(*table, [&](const auto& kv) { return !used.contains(kv.first); });
  }
}

}  // namespace

ModelGraph strip_training_ops(const ModelGraph& graph) {
  const auto named = named_nodes(graph.names);
  std::map<std::string, std::string> alias;
  const auto resolve = [&](std::string name) {
    for (auto it = alias.find(name); it != alias.end(); it = alias.find(name)) {
      name = it->second;
    }
    return name;
  };
  ModelGraph out = graph;
  out.nodes.clear();
  for (const auto& node : graph.nodes) {
    if (node.spec.kind == OpKind::dropout) {
      if (named.contains(node.name)) {
        throw FreezeError("named node '" + node.name + "' is a dropout op");
      }
      alias[node.name] = node.inputs.at(0);
      continue;
    }
    if (node.spec.kind == OpKind::focal_loss) {
      throw FreezeError("graph contains the loss node '" + node.name + "'");
    }
    GraphNode copy = node;
    for (auto& in : copy.inputs) {
      in = resolve(in);
    }
    if (node.spec.kind == OpKind::batch_norm) {
      for (std::size_t k = 3; k <= 4; ++k) {
        const auto it = graph.buffers.find(node.inputs.at(k));
        if (it == graph.buffers.end()) {
          throw FreezeError("batch norm '" + node.name + "' has no running statistics");
        }
        for (const double v : channel_values(it->second)) {
          if (!std::isfinite(v) || (k == 4 && v < 0.0)) {
            throw FreezeError("batch norm '" + node.name + "' has invalid running statistics");
          }
        }
      }
    }
    out.nodes.push_back(std::move(copy));
  }
  out.validate();
  return out;
}

FoldedConv fold_batch_norm(const Tensor& weights, const Tensor* bias, const Tensor& gamma,
                           const Tensor& beta, const Tensor& mean, const Tensor& var, double eps,
                           bool transposed) {
  const Dims& d = weights.dims();
  const std::int64_t channels = transposed ? d.c : d.n;
  for (const Tensor* t : {&gamma, &beta, &mean, &var}) {
    if (t->size() != channels) {
      throw ShapeError("batch norm has " + std::to_string(t->size()) +
                       " channels, convolution produces " + std::to_string(channels));
    }
  }
  if (bias != nullptr && bias->size() != channels) {
    throw ShapeError("convolution bias has " + std::to_string(bias->size()) + " channels, expected " +
                     std::to_string(channels));
  }
  std::vector<double> factor(static_cast<std::size_t>(channels));
  std::vector<double> shift(factor.size());
  for (std::size_t c = 0; c < factor.size(); ++c) {
    factor[c] = gamma.flat(c) / std::sqrt(var.flat(c) + eps);
    const double b = bias != nullptr ? bias->flat(c) : 0.0;
    shift[c] = beta.flat(c) + (b - mean.flat(c)) * factor[c];
  }
  FoldedConv out;
  out.weights = Tensor(d, weights.dtype(), weights.layout());
  visit_float(weights.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto dst = out.weights.data<T>();
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t c = 0; c < d.c; ++c) {
        const double f = factor[static_cast<std::size_t>(transposed ? c : n)];
        for (std::int64_t h = 0; h < d.h; ++h) {
          for (std::int64_t w = 0; w < d.w; ++w) {
            const auto i = weights.offset(n, c, h, w);
            dst[i] = static_cast<T>(weights.at(n, c, h, w) * f);
          }
        }
      }
    }
  });
  out.bias = channel_tensor(shift, weights.dtype());
  return out;
}

ModelGraph optimize_graph(const ModelGraph& stripped) {
  const auto named = named_nodes(stripped.names);
  ModelGraph g = stripped;

  // Batch norms: fold into a sole-consumer convolution, else precompute.
  {
    const auto consumers = consumer_counts(g.nodes);
    std::map<std::string, std::size_t> index;
    std::set<std::size_t> dropped;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      index[g.nodes[i].name] = i;
    }
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      GraphNode& bn = g.nodes[i];
      if (bn.spec.kind != OpKind::batch_norm) {
        continue;
      }
      const Tensor& gamma = table_at(g, bn.inputs[1]);
      const Tensor& beta = table_at(g, bn.inputs[2]);
      const Tensor& mean = table_at(g, bn.inputs[3]);
      const Tensor& var = table_at(g, bn.inputs[4]);
      const auto src = index.find(bn.inputs[0]);
      if (src != index.end()) {
        GraphNode& conv = g.nodes[src->second];
        const bool foldable =
            (conv.spec.kind == OpKind::conv2d || conv.spec.kind == OpKind::transposed_conv2d) &&
            !conv.spec.fused_relu && consumers.at(conv.name) == 1 && !named.contains(conv.name);
        if (foldable) {
          const Tensor* bias = conv.inputs.size() > 2 ? &table_at(g, conv.inputs[2]) : nullptr;
          FoldedConv f = fold_batch_norm(table_at(g, conv.inputs[1]), bias, gamma, beta, mean, var,
                                         bn.spec.eps,
                                         conv.spec.kind == OpKind::transposed_conv2d);
          const std::string wname = bn.name + "/folded_w";
          const std::string bname = bn.name + "/folded_b";
          g.parameters.insert_or_assign(wname, std::move(f.weights));
          g.parameters.insert_or_assign(bname, std::move(f.bias));
          GraphNode fused{bn.name, conv.spec, {conv.inputs[0], wname, bname}};
          bn = std::move(fused);
          dropped.insert(src->second);
          continue;
        }
      }
      const auto gv = channel_values(gamma);
      const auto bv = channel_values(beta);
      const auto mv = channel_values(mean);
      const auto vv = channel_values(var);
      std::vector<double> scale(gv.size()), shift(gv.size());
      for (std::size_t c = 0; c < gv.size(); ++c) {
        scale[c] = gv[c] / std::sqrt(vv[c] + bn.spec.eps);
        shift[c] = bv[c] - mv[c] * scale[c];
      }
      const DType dt = gamma.dtype();
      g.parameters.insert_or_assign(bn.name + "/scale", channel_tensor(scale, dt));
      g.parameters.insert_or_assign(bn.name + "/shift", channel_tensor(shift, dt));
      bn = GraphNode{bn.name, OpSpec::of(OpKind::scale_shift),
                     {bn.inputs[0], bn.name + "/scale", bn.name + "/shift"}};
    }
    std::vector<GraphNode> kept;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      if (!dropped.contains(i)) {
        kept.push_back(std::move(g.nodes[i]));
      }
    }
    g.nodes = std::move(kept);
  }

  // ReLU fusion into the producer; the fused node takes the ReLU's name.
  {
    const auto consumers = consumer_counts(g.nodes);
    std::map<std::string, std::size_t> index;
    std::set<std::size_t> dropped;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      index[g.nodes[i].name] = i;
    }
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      GraphNode& r = g.nodes[i];
      if (r.spec.kind != OpKind::relu) {
        continue;
      }
      const auto src = index.find(r.inputs[0]);
      if (src == index.end()) {
        continue;
      }
      GraphNode& p = g.nodes[src->second];
      const OpKind k = p.spec.kind;
      const bool fusable = (k == OpKind::conv2d || k == OpKind::transposed_conv2d ||
                            k == OpKind::add || k == OpKind::scale_shift) &&
                           !p.spec.fused_relu && consumers.at(p.name) == 1 &&
                           !named.contains(p.name);
      if (!fusable) {
        continue;
      }
      GraphNode fused = p;
      fused.name = r.name;
      fused.spec.fused_relu = true;
      r = std::move(fused);
      dropped.insert(src->second);
    }
    std::vector<GraphNode> kept;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      if (!dropped.contains(i)) {
        kept.push_back(std::move(g.nodes[i]));
      }
    }
    g.nodes = std::move(kept);
  }

  prune_tensors(g);
  g.validate();
  return g;
}

FrozenModel make_frozen(const ModelGraph& graph, Variant variant, const DataConfig& data) {
  if (graph.classes != static_cast<int>(data.class_count())) {
    throw FreezeError("graph predicts " + std::to_string(graph.classes) + " classes, data.yaml has " +
                      std::to_string(data.class_count()));
  }
  FrozenModel m;
  m.variant = variant;
  m.layout = Layout::nchw;
  m.input = {1, 3, data.inference_height, data.inference_width};
  m.classes = data.classes;
  m.nodes = graph.names;
  m.graph = graph.nodes;
  for (const auto* table : {&graph.parameters, &graph.buffers}) {
    for (const auto& [name, t] : *table) {
      m.weights.insert_or_assign(name, t.dtype() == DType::f32 ? t : t.cast(DType::f32));
    }
  }
  m.validate();
  return m;
}

FrozenModel convert_model_layout(const FrozenModel& model, Layout layout, Variant variant) {
  FrozenModel m = model;
  m.layout = layout;
  m.variant = variant;
  for (auto& [name, t] : m.weights) {
    t = convert_layout(t, layout);
  }
  return m;
}

}  // namespace bonnet
