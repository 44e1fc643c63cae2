// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <mutex>

#include "bonnet/error.hpp"
#include "bonnet/model.hpp"
#include "bonnet/rng.hpp"

namespace bonnet {

namespace {

// Appends nodes and parameters to a graph under construction. Values are
// referred to by node name.
class GraphBuilder {
 public:
  GraphBuilder(ModelGraph& g, std::uint64_t seed) : g_(g), seed_(seed) {}

  std::string add(const std::string& name, OpSpec spec, std::vector<std::string> inputs) {
    g_.nodes.push_back({name, std::move(spec), std::move(inputs)});
    return name;
  }

  std::string conv(const std::string& name, const std::string& x, std::int64_t cin,
                   std::int64_t cout, int kh, int kw, int stride = 1, int dilation = 1) {
    const auto w = weight(name + "/w", {cout, cin, kh, kw}, cin * kh * kw);
    const auto b = zeros(name + "/b", cout);
    return add(name, OpSpec::conv(kh, kw, stride, dilation), {x, w, b});
  }

  std::string deconv(const std::string& name, const std::string& x, std::int64_t cin,
                     std::int64_t cout, int k, int stride) {
    const auto w = weight(name + "/w", {cin, cout, k, k}, cin * k * k / (stride * stride));
    const auto b = zeros(name + "/b", cout);
    return add(name, OpSpec::transposed_conv(k, k, stride), {x, w, b});
  }

  std::string bn(const std::string& name, const std::string& x, std::int64_t c,
                 const NetConfig& net) {
    const auto gamma = filled(g_.parameters, name + "/gamma", c, 1.0);
    const auto beta = filled(g_.parameters, name + "/beta", c, 0.0);
    const auto mean = filled(g_.buffers, name + "/mean", c, 0.0);
    const auto var = filled(g_.buffers, name + "/var", c, 1.0);
    return add(name, OpSpec::batch_norm(1e-3, net.bn_decay), {x, gamma, beta, mean, var});
  }

  std::string relu(const std::string& name, const std::string& x) {
    return add(name, OpSpec::of(OpKind::relu), {x});
  }

  std::string dropout(const std::string& name, const std::string& x, double keep) {
    return add(name, OpSpec::dropout(keep, fnv1a(name)), {x});
  }

  // The last node added gets a new name (used for the named "code" node).
  std::string rename_last(const std::string& name) {
    g_.nodes.back().name = name;
    return name;
  }

 private:
  std::string weight(const std::string& name, Dims dims, std::int64_t fan_in) {
    Tensor t(dims, DType::f32);
    Rng rng(hash_seed(seed_, fnv1a(name)));
    const double sd = std::sqrt(2.0 / static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
    for (auto& v : t.data<float>()) {
      v = static_cast<float>(sd * rng.normal());
    }
    g_.parameters.emplace(name, std::move(t));
    return name;
  }

  std::string zeros(const std::string& name, std::int64_t c) {
    return filled(g_.parameters, name, c, 0.0);
  }

  static std::string filled(TensorMap& table, const std::string& name, std::int64_t c,
                            double value) {
    Tensor t({1, c, 1, 1}, DType::f32);
    for (auto& v : t.data<float>()) {
      v = static_cast<float>(value);
    }
    table.emplace(name, std::move(t));
    return name;
  }

  ModelGraph& g_;
  std::uint64_t seed_;
};

void check_stages(const NetConfig& net) {
  if (net.kernels_per_layer.size() != net.layers_per_stage.size()) {
    throw ConfigError(ConfigError::Kind::invariant, "kernels_per_layer",
                      "kernels_per_layer has " + std::to_string(net.kernels_per_layer.size()) +
                          " entries but layers_per_stage has " +
                          std::to_string(net.layers_per_stage.size()));
  }
  if (net.kernels_per_layer.size() % 2 == 0) {
    throw ConfigError(ConfigError::Kind::invariant, "kernels_per_layer",
                      "kernels_per_layer needs an odd stage count (encoder stages followed by "
                      "one fewer decoder stages), got " +
                          std::to_string(net.kernels_per_layer.size()));
  }
}

std::string input_node(GraphBuilder& b) {
  OpSpec in = OpSpec::of(OpKind::input);
  in.norm_scale = 1.0 / 255.0;
  in.norm_mean = 0.0;
  return b.add("input", in, {});
}

void heads(GraphBuilder& b, const std::string& logits) {
  b.add("softmax", OpSpec::of(OpKind::softmax), {logits});
  b.add("argmax", OpSpec::of(OpKind::argmax), {logits});
}

// Parallel stride-2 convolution and max-pool, concatenated, then BN + ReLU.
std::string downsampler(GraphBuilder& b, const std::string& p, const std::string& x,
                        std::int64_t cin, std::int64_t cout, const NetConfig& net) {
  std::string y;
  if (cout > cin) {
    const auto c = b.conv(p + "/conv", x, cin, cout - cin, 3, 3, 2);
    const auto m = b.add(p + "/pool", OpSpec::pool(2, 2, Padding::same), {x});
    y = b.add(p + "/concat", OpSpec::of(OpKind::concat), {c, m});
  } else {
    y = b.conv(p + "/conv", x, cin, cout, 3, 3, 2);
  }
  return b.relu(p + "/relu", b.bn(p + "/bn", y, cout, net));
}

std::string non_bottleneck(GraphBuilder& b, const std::string& p, const std::string& x,
                           std::int64_t c, int dilation, const NetConfig& net, bool drop) {
  auto y = b.conv(p + "/conv3x1_1", x, c, c, 3, 1);
  y = b.relu(p + "/relu1", y);
  y = b.conv(p + "/conv1x3_1", y, c, c, 1, 3);
  y = b.relu(p + "/relu2", b.bn(p + "/bn1", y, c, net));
  y = b.conv(p + "/conv3x1_2", y, c, c, 3, 1, 1, dilation);
  y = b.relu(p + "/relu3", y);
  y = b.conv(p + "/conv1x3_2", y, c, c, 1, 3, 1, dilation);
  y = b.bn(p + "/bn2", y, c, net);
  if (drop && net.dropout_keep < 1.0) {
    y = b.dropout(p + "/dropout", y, net.dropout_keep);
  }
  y = b.add(p + "/add", OpSpec::of(OpKind::add), {y, x});
  return b.relu(p + "/relu4", y);
}

ModelGraph build_erfnet_mini(const NetConfig& net, int classes, std::uint64_t seed) {
  check_stages(net);
  ModelGraph g;
  g.architecture = "erfnet-mini";
  g.classes = classes;
  GraphBuilder b(g, seed);
  auto x = input_node(b);
  std::int64_t ch = 3;
  const std::size_t stages = net.kernels_per_layer.size();
  const std::size_t encoder = stages / 2 + 1;
  for (std::size_t s = 0; s < encoder; ++s) {
    const std::string p = "enc" + std::to_string(s);
    const std::int64_t k = net.kernels_per_layer[s];
    x = downsampler(b, p + "/down", x, ch, k, net);
    ch = k;
    for (int l = 0; l < net.layers_per_stage[s]; ++l) {
      x = non_bottleneck(b, p + "/nb" + std::to_string(l), x, ch, 1 << (l % 4), net, true);
    }
  }
  b.rename_last(g.names.code);
  x = g.names.code;
  for (std::size_t s = encoder; s < stages; ++s) {
    const std::string p = "dec" + std::to_string(s - encoder);
    const std::int64_t k = net.kernels_per_layer[s];
    x = b.deconv(p + "/up", x, ch, k, 3, 2);
    x = b.relu(p + "/up/relu", b.bn(p + "/up/bn", x, k, net));
    ch = k;
    for (int l = 0; l < net.layers_per_stage[s]; ++l) {
      x = non_bottleneck(b, p + "/nb" + std::to_string(l), x, ch, 1, net, false);
    }
  }
  heads(b, b.deconv("logits", x, ch, classes, 2, 2));
  return g;
}

// Plain convolution/ReLU encoder-decoder without normalisation or dropout.
// Every output pixel depends only on its own sample, which makes it the
// reference network for data-parallel equivalence.
ModelGraph build_simple_fcn(const NetConfig& net, int classes, std::uint64_t seed) {
  check_stages(net);
  ModelGraph g;
  g.architecture = "simple-fcn";
  g.classes = classes;
  GraphBuilder b(g, seed);
  auto x = input_node(b);
  std::int64_t ch = 3;
  const std::size_t stages = net.kernels_per_layer.size();
  const std::size_t encoder = stages / 2 + 1;
  for (std::size_t s = 0; s < stages; ++s) {
    const std::string p = (s < encoder ? "enc" : "dec") + std::to_string(s);
    const std::int64_t k = net.kernels_per_layer[s];
    x = s < encoder ? b.conv(p + "/down", x, ch, k, 3, 3, 2) : b.deconv(p + "/up", x, ch, k, 3, 2);
    x = b.relu(p + "/relu", x);
    ch = k;
    for (int l = 0; l < net.layers_per_stage[s]; ++l) {
      const auto q = p + "/conv" + std::to_string(l);
      x = b.relu(q + "/relu", b.conv(q, x, ch, ch, 3, 3));
    }
    if (s + 1 == encoder) {
      x = b.rename_last(g.names.code);
    }
  }
  heads(b, b.deconv("logits", x, ch, classes, 2, 2));
  return g;
}

struct Registry {
  std::mutex mutex;
  std::map<std::string, ArchitectureBuilder> builders;
};

Registry& registry() {
  static Registry* r = [] {
    auto* init = new Registry;
    init->builders["erfnet-mini"] = build_erfnet_mini;
    init->builders["simple-fcn"] = build_simple_fcn;
    return init;
  }();
  return *r;
}

}  // namespace

void register_architecture(const std::string& name, ArchitectureBuilder builder) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.builders[name] = std::move(builder);
}

std::vector<std::string> architecture_names() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [name, fn] : r.builders) {
    names.push_back(name);
  }
  return names;
}

ModelGraph build_architecture(const NetConfig& net, int classes, std::uint64_t init_seed) {
  if (classes < 1) {
    throw InvalidArgument("class count must be >= 1");
  }
  ArchitectureBuilder builder;
  {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    const auto it = r.builders.find(net.architecture);
    if (it == r.builders.end()) {
      throw ConfigError(ConfigError::Kind::invariant, "architecture",
                        "unknown architecture '" + net.architecture + "'");
    }
    builder = it->second;
  }
  ModelGraph g = builder(net, classes, init_seed);
  g.validate();
  return g;
}

}  // namespace bonnet
