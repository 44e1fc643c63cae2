// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "bonnet/model.hpp"
#include "support.hpp"

namespace bonnet {
namespace {

using test::random_tensor;

NetConfig tiny_net(const std::string& arch = "erfnet-mini") {
  NetConfig net;
  net.architecture = arch;
  net.kernels_per_layer = {4, 6, 4};
  net.layers_per_stage = {0, 1, 1};
  net.dropout_keep = 0.8;
  return net;
}

TEST(Architecture, SingleConvParameterCount) {
  register_architecture("single-conv", [](const NetConfig&, int classes, std::uint64_t) {
    ModelGraph g;
    g.architecture = "single-conv";
    g.classes = classes;
    g.parameters.emplace("w", Tensor({8, 3, 3, 3}, DType::f32));
    g.parameters.emplace("b", Tensor({1, 8, 1, 1}, DType::f32));
    g.nodes.push_back({"input", OpSpec::of(OpKind::input), {}});
    g.nodes.push_back({"code", OpSpec::conv(3, 3), {"input", "w", "b"}});
    g.nodes.push_back({"logits", OpSpec::of(OpKind::relu), {"code"}});
    g.nodes.push_back({"softmax", OpSpec::of(OpKind::softmax), {"logits"}});
    g.nodes.push_back({"argmax", OpSpec::of(OpKind::argmax), {"logits"}});
    return g;
  });
  NetConfig net;
  net.architecture = "single-conv";
  EXPECT_EQ(build_architecture(net, 8).parameter_count(), 3 * 3 * 3 * 8 + 8);
  const auto names = architecture_names();
  EXPECT_NE(std::find(names.begin(), names.end(), "erfnet-mini"), names.end());
}

TEST(Architecture, DownsamplerHalvesResolution) {
  const ModelGraph g = build_architecture(NetConfig{}, 4);
  const TensorMap out = run_graph(g, random_tensor({1, 3, 64, 64}, 1, DType::f32, 0, 255),
                                  {Mode::infer, 0, 1}, {"enc0/down/relu", "enc1/down/relu"});
  EXPECT_EQ(out.at("enc0/down/relu").dims(), (Dims{1, 16, 32, 32}));
  EXPECT_EQ(out.at("enc1/down/relu").dims(), (Dims{1, 32, 16, 16}));
}

TEST(Architecture, ErfnetMiniForward) {
  const ModelGraph g = build_architecture(NetConfig{}, 4, 3);
  EXPECT_LE(g.parameter_count(), 200000);
  EXPECT_GT(g.parameter_count(), 10000);
  for (const auto* name : {"input", "code", "logits", "softmax", "argmax"}) {
    EXPECT_TRUE(g.has_node(name)) << name;
  }
  const Tensor image = random_tensor({2, 3, 40, 48}, 2, DType::f32, 0, 255);
  const TensorMap out = run_graph(g, image, {Mode::infer, 0, 1}, {"logits", "argmax", "code"});
  EXPECT_EQ(out.at("logits").dims(), (Dims{2, 4, 40, 48}));
  EXPECT_EQ(out.at("code").dims(), (Dims{2, 32, 10, 12}));
  const Tensor& mask = out.at("argmax");
  EXPECT_EQ(mask.dims(), (Dims{2, 1, 40, 48}));
  for (std::int64_t i = 0; i < mask.size(); ++i) {
    EXPECT_LT(mask.flat(static_cast<std::size_t>(i)), 4.0);
  }
}

TEST(Architecture, PureFunctionOfConfig) {
  for (const auto* arch : {"erfnet-mini", "simple-fcn"}) {
    const ModelGraph a = build_architecture(tiny_net(arch), 3, 7);
    const ModelGraph b = build_architecture(tiny_net(arch), 3, 7);
    const ModelGraph c = build_architecture(tiny_net(arch), 3, 8);
    EXPECT_EQ(a.nodes, b.nodes);
    EXPECT_EQ(a.nodes, c.nodes);
    ASSERT_EQ(a.parameters.size(), c.parameters.size());
    for (const auto& [name, t] : a.parameters) {
      EXPECT_TRUE(t.bit_equal(b.parameters.at(name))) << name;
      EXPECT_EQ(t.dims(), c.parameters.at(name).dims()) << name;
    }
  }
}

TEST(Architecture, ConfigErrors) {
  NetConfig net;
  net.architecture = "inception-v9";
  EXPECT_THROW(build_architecture(net, 3), ConfigError);
  net = NetConfig{};
  net.kernels_per_layer = {8, 16};
  net.layers_per_stage = {1, 1};
  try {
    build_architecture(net, 3);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "kernels_per_layer");
  }
}

// Full erfnet-mini graph (downsamplers, dilated non-bottleneck blocks,
// transposed-conv decoder, batch norm, dropout) against central differences.
TEST(Architecture, ErfnetMiniGradcheck) {
  const ModelGraph g = cast_graph(build_architecture(tiny_net(), 3, 5), DType::f64);
  const Tensor image = random_tensor({2, 3, 8, 8}, 9, DType::f64, 0, 255);
  Tensor labels({2, 1, 8, 8}, DType::f64);
  Rng rng(3);
  for (auto& v : labels.data<double>()) {
    v = static_cast<double>(rng.below(3));
  }
  LossSpec loss{{0.5, 1.5, 1.0}, 1.0};
  test::LossBuilder build = [&](Tape& t, const std::map<std::string, ValueId>& ids) {
    ModelGraph view = g;
    std::map<std::string, ValueId> rec;
    std::vector<ValueId> ins;
    for (const auto& node : view.nodes) {
      std::vector<ValueId> inputs;
      if (node.spec.kind == OpKind::input) {
        inputs.push_back(t.constant(image));
      } else {
        for (const auto& name : node.inputs) {
          if (const auto it = rec.find(name); it != rec.end()) {
            inputs.push_back(it->second);
          } else if (const auto p = ids.find(name); p != ids.end()) {
            inputs.push_back(p->second);
          } else {
            inputs.push_back(t.constant(view.buffers.at(name)));
          }
        }
      }
      rec[node.name] = t.apply(node.spec, inputs, node.name);
      if (node.name == "logits") {
        break;
      }
    }
    return t.apply(loss_op(loss), {rec.at("logits"), t.constant(labels)});
  };
  EXPECT_LT(test::gradcheck(g.parameters, build), 1e-4);
}

TEST(Architecture, RecordMatchesRunGraph) {
  const ModelGraph g = build_architecture(tiny_net(), 3, 5);
  const Tensor image = random_tensor({1, 3, 12, 12}, 4, DType::f32, 0, 255);
  Tape tape({Mode::infer, 0, 1});
  const auto rec = record(tape, g, image);
  const TensorMap out = run_graph(g, image, {Mode::infer, 0, 1}, {"logits", "softmax"});
  EXPECT_TRUE(tape.value(rec.at("logits")).bit_equal(out.at("logits")));
  EXPECT_TRUE(tape.value(rec.at("softmax")).bit_equal(out.at("softmax")));
}

// ---------------------------------------------------------------------------

TEST(ClassWeights, Examples) {
  for (const auto policy :
       {WeightingPolicy::none, WeightingPolicy::inverse_frequency, WeightingPolicy::log_inverse}) {
    const auto w = class_weights({0.25, 0.25, 0.25, 0.25}, policy);
    for (const double v : w) {
      EXPECT_DOUBLE_EQ(v, w[0]);
    }
  }
  const auto inv = class_weights({0.9, 0.1}, WeightingPolicy::inverse_frequency);
  EXPECT_NEAR(inv[0], 0.2, 1e-12);
  EXPECT_NEAR(inv[1], 1.8, 1e-12);
  const auto log = class_weights({0.9, 0.1}, WeightingPolicy::log_inverse);
  EXPECT_NEAR(log[0], 1.0 / std::log(1.92), 1e-12);
  EXPECT_NEAR(log[0], 1.533, 1e-3);
  EXPECT_NEAR(log[1], 1.0 / std::log(1.12), 1e-12);
  EXPECT_NEAR(log[1], 8.825, 2e-3);
  EXPECT_THROW(class_weights({1.1, -0.1}, WeightingPolicy::none), DomainError);
  const auto zero = class_weights({1.0, 0.0}, WeightingPolicy::inverse_frequency);
  EXPECT_TRUE(std::isfinite(zero[1]));
}

Tensor one_pixel_logits(double p_true) {
  // Two classes; class 1 is the truth.
  return Tensor::from_values<double>({1, 2, 1, 1}, {0.0, std::log(p_true / (1 - p_true))});
}

TEST(Loss, Examples) {
  const Tensor label = Tensor::from_values<double>({1, 1, 1, 1}, {1.0});
  EXPECT_NEAR(segmentation_loss(one_pixel_logits(0.5), label, {{}, 2.0}),
              0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(0.25 * std::log(2.0), 0.1733, 1e-4);
  const Tensor sure = Tensor::from_values<double>({1, 2, 1, 1}, {-800.0, 800.0});
  EXPECT_EQ(segmentation_loss(sure, label, {}), 0.0);
  // gamma 0 with unit weights is the mean cross-entropy.
  const Tensor logits = random_tensor({2, 3, 2, 2}, 1);
  Tensor labels({2, 1, 2, 2}, DType::f64);
  for (std::int64_t i = 0; i < 8; ++i) {
    labels.data<double>()[static_cast<std::size_t>(i)] = static_cast<double>(i % 3);
  }
  const Tensor p = softmax(logits);
  double ce = 0.0;
  for (std::int64_t n = 0; n < 2; ++n) {
    for (std::int64_t y = 0; y < 2; ++y) {
      for (std::int64_t x = 0; x < 2; ++x) {
        const auto cls = static_cast<std::int64_t>(labels.at(n, 0, y, x));
        ce -= std::log(p.at(n, cls, y, x));
      }
    }
  }
  EXPECT_NEAR(segmentation_loss(logits, labels, {}), ce / 8, 1e-12);
  EXPECT_THROW(segmentation_loss(logits, Tensor::from_values<double>({1, 1, 1, 1}, {3.0}), {}),
               ShapeError);
  Tensor bad = labels;
  bad.data<double>()[0] = 3.0;
  EXPECT_THROW(segmentation_loss(logits, bad, {}), DomainError);
}

TEST(Loss, WeightScalingAndPermutationProperty) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor logits = random_tensor({1, 4, 3, 3}, seed, DType::f64, -3, 3);
    Tensor labels({1, 1, 3, 3}, DType::f64);
    Rng rng(seed);
    for (auto& v : labels.data<double>()) {
      v = static_cast<double>(rng.below(4));
    }
    const std::vector<double> w{0.5, 1.0, 2.0, 0.7};
    std::vector<double> w3(w);
    for (auto& v : w3) {
      v *= 3.0;
    }
    const double base = segmentation_loss(logits, labels, {w, 1.5});
    EXPECT_NEAR(segmentation_loss(logits, labels, {w3, 1.5}), 3.0 * base, 1e-12);

    // Gradient direction unchanged under weight scaling.
    const auto grad = [&](const std::vector<double>& weights) {
      Tape t({Mode::train, 0, 1});
      const ValueId l = t.parameter("l", logits);
      return backward(t, t.apply(loss_op({weights, 1.5}), {l, t.constant(labels)})).at("l");
    };
    const Tensor g1 = grad(w);
    const Tensor g3 = grad(w3);
    for (std::int64_t i = 0; i < g1.size(); ++i) {
      EXPECT_NEAR(3.0 * g1.flat(static_cast<std::size_t>(i)), g3.flat(static_cast<std::size_t>(i)),
                  1e-12);
    }

    // Permuting pixels (same permutation for logits and labels).
    std::vector<std::int64_t> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor pl(logits.dims(), DType::f64);
    Tensor pb(labels.dims(), DType::f64);
    for (std::int64_t i = 0; i < 9; ++i) {
      const auto j = perm[static_cast<std::size_t>(i)];
      for (std::int64_t c = 0; c < 4; ++c) {
        pl.data<double>()[pl.offset(0, c, i / 3, i % 3)] = logits.at(0, c, j / 3, j % 3);
      }
      pb.data<double>()[static_cast<std::size_t>(i)] = labels.flat(static_cast<std::size_t>(j));
    }
    EXPECT_NEAR(segmentation_loss(pl, pb, {w, 1.5}), base, 1e-12);
  }
}

TEST(Loss, FocalMonotoneInTrueProbability) {
  const Tensor label = Tensor::from_values<double>({1, 1, 1, 1}, {1.0});
  for (const double gamma : {0.0, 0.5, 1.0, 2.0, 5.0}) {
    double prev = INFINITY;
    for (double p = 0.01; p < 0.995; p += 0.01) {
      const double l = segmentation_loss(one_pixel_logits(p), label, {{}, gamma});
      EXPECT_LE(l, prev + 1e-15) << gamma << " " << p;
      prev = l;
    }
  }
}

// ---------------------------------------------------------------------------

TEST(Confusion, Examples) {
  ConfusionMatrix perfect(3);
  const std::vector<std::uint8_t> a{0, 1, 2, 2, 1};
  perfect.update(a, a);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i != j) {
        EXPECT_EQ(perfect.at(i, j), 0u);
      }
    }
  }
  EXPECT_EQ(*metrics(perfect).miou, 1.0);
  EXPECT_EQ(*metrics(perfect).macc, 1.0);

  ConfusionMatrix wrong(2);
  wrong.update(std::vector<std::uint8_t>(6, 1), std::vector<std::uint8_t>(6, 0));
  EXPECT_EQ(wrong.at(0, 1), 6u);
  EXPECT_EQ(wrong.total(), 6u);
  EXPECT_EQ(*metrics(wrong).miou, 0.0);

  ConfusionMatrix cm(2);
  const std::vector<std::uint8_t> gt{0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  const std::vector<std::uint8_t> pr{0, 0, 0, 1, 0, 0, 1, 1, 1, 1};
  cm.update(pr, gt);
  EXPECT_EQ(cm.at(0, 0), 3u);
  EXPECT_EQ(cm.at(0, 1), 1u);
  EXPECT_EQ(cm.at(1, 0), 2u);
  EXPECT_EQ(cm.at(1, 1), 4u);
  const Metrics m = metrics(cm);
  EXPECT_DOUBLE_EQ(*m.iou[0], 3.0 / 6.0);
  EXPECT_DOUBLE_EQ(*m.iou[1], 4.0 / 7.0);
  EXPECT_NEAR(*m.miou, 0.5357, 1e-4);
  EXPECT_NEAR(*m.macc, 0.7083, 1e-4);
}

TEST(Confusion, UndefinedClassesExcluded) {
  ConfusionMatrix cm(3);
  const std::vector<std::uint8_t> a{0, 0, 1};
  cm.update(a, a);
  const Metrics m = metrics(cm);
  EXPECT_FALSE(m.iou[2].has_value());
  EXPECT_EQ(*m.miou, 1.0);
  EXPECT_FALSE(metrics(ConfusionMatrix(3)).defined());
}

TEST(Confusion, IgnoreClassAndMerge) {
  ConfusionMatrix a(3, 2);
  a.update(std::vector<std::uint8_t>{0, 1, 0}, std::vector<std::uint8_t>{0, 2, 1});
  EXPECT_EQ(a.total(), 2u);
  ConfusionMatrix b(3, 2);
  b.update(std::vector<std::uint8_t>{1}, std::vector<std::uint8_t>{1});
  a += b;
  EXPECT_EQ(a.total(), 3u);
  EXPECT_EQ(a.at(1, 1), 1u);
  EXPECT_THROW(a.update(std::vector<std::uint8_t>{0}, std::vector<std::uint8_t>{0, 1}),
               ShapeError);
}

}  // namespace
}  // namespace bonnet
