// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "bonnet/freezer.hpp"
#include "bonnet/trainer.hpp"
#include "support.hpp"

namespace bonnet {
namespace {

using test::random_tensor;

NetConfig small_erfnet() {
  NetConfig n;
  n.layers_per_stage = {0, 2, 1};
  n.kernels_per_layer = {8, 12, 8};
  n.dropout_keep = 0.7;
  return n;
}

DataConfig data_for(int classes, int size) {
  DataConfig d;
  d.classes.clear();
  for (int c = 0; c < classes; ++c) {
    d.classes.push_back({c, "c" + std::to_string(c),
                         {static_cast<std::uint8_t>(40 * c), static_cast<std::uint8_t>(255 - 30 * c), 7}});
  }
  d.inference_width = size;
  d.inference_height = size;
  return d;
}

// Trained-looking batch norms: non-trivial affine terms and running stats.
ModelGraph trained_graph(std::uint64_t seed, const NetConfig& net = small_erfnet(),
                         int classes = 4) {
  ModelGraph g = build_architecture(net, classes, seed);
  std::uint64_t k = seed * 1000;
  for (auto* table : {&g.parameters, &g.buffers}) {
    for (auto& [name, t] : *table) {
      const auto suffix = name.substr(name.rfind('/') + 1);
      const double lo = suffix == "var" || suffix == "gamma" ? 0.5 : -0.3;
      const double hi = suffix == "var" || suffix == "gamma" ? 1.5 : 0.3;
      if (suffix == "w") {
        continue;
      }
      t = random_tensor(t.dims(), ++k, DType::f64, lo, hi).cast(DType::f32);
    }
  }
  return g;
}

Tensor random_image(Dims dims, std::uint64_t seed) {
  return random_tensor(dims, seed, DType::f64, 0.0, 255.0).cast(DType::f32);
}

TensorMap run_model(const FrozenModel& m, const Tensor& image, ExecOptions opts = {}) {
  const Tensor input = convert_layout(image, m.layout);
  return execute(m, float_weights(m), input, {m.nodes.logits, m.nodes.argmax}, opts);
}

Tensor infer_logits(const ModelGraph& g, const Tensor& image) {
  return run_graph(g, image, {Mode::infer, 0, 1}, {g.names.logits}).at(g.names.logits);
}

// ---------------------------------------------------------------------------

TEST(FoldBatchNorm, IdentityStatistics) {
  const Tensor w = random_tensor({3, 2, 3, 3}, 1);
  const Tensor b = random_tensor({1, 3, 1, 1}, 2);
  const auto f = fold_batch_norm(w, &b, test::filled({1, 3, 1, 1}, 1.0),
                                 test::filled({1, 3, 1, 1}, 0.0), test::filled({1, 3, 1, 1}, 0.0),
                                 test::filled({1, 3, 1, 1}, 1.0), 0.0);
  EXPECT_TRUE(f.weights.bit_equal(w));
  EXPECT_TRUE(f.bias.bit_equal(b));
}

TEST(FoldBatchNorm, DirectFormula) {
  const auto one = [](double v) { return test::filled({1, 1, 1, 1}, v); };
  const Tensor w = one(2.0);
  const Tensor b = one(0.0);
  const auto f = fold_batch_norm(w, &b, one(3.0), one(1.0), one(4.0), one(3.0), 1.0);
  EXPECT_DOUBLE_EQ(f.weights.flat(0), 3.0);
  EXPECT_DOUBLE_EQ(f.bias.flat(0), -5.0);
}

TEST(FoldBatchNorm, RandomConvMatchesUnfused) {
  for (const bool transposed : {false, true}) {
    const Tensor x = random_tensor({2, 3, 7, 6}, 5, DType::f64, -1, 1).cast(DType::f32);
    const Tensor w = (transposed ? random_tensor({3, 4, 3, 3}, 6) : random_tensor({4, 3, 3, 3}, 6))
                         .cast(DType::f32);
    const Tensor b = random_tensor({1, 4, 1, 1}, 7).cast(DType::f32);
    const Tensor gamma = random_tensor({1, 4, 1, 1}, 8, DType::f64, 0.5, 2.0).cast(DType::f32);
    const Tensor beta = random_tensor({1, 4, 1, 1}, 9).cast(DType::f32);
    const Tensor mean = random_tensor({1, 4, 1, 1}, 10).cast(DType::f32);
    const Tensor var = random_tensor({1, 4, 1, 1}, 11, DType::f64, 0.2, 3.0).cast(DType::f32);
    const OpSpec spec = transposed ? OpSpec::transposed_conv(3, 3, 2) : OpSpec::conv(3, 3);
    const Tensor y = transposed ? transposed_conv2d(x, w, &b, spec) : conv2d(x, w, &b, spec);
    const Tensor ref = batch_norm(y, gamma, beta, mean, var, Mode::infer, 1e-3);
    const auto f = fold_batch_norm(w, &b, gamma, beta, mean, var, 1e-3, transposed);
    const Tensor fused =
        transposed ? transposed_conv2d(x, f.weights, &f.bias, spec) : conv2d(x, f.weights, &f.bias, spec);
    EXPECT_LT(max_abs_diff(fused, ref), 1e-5) << transposed;
  }
}

// ---------------------------------------------------------------------------

TEST(Strip, GraphWithoutTrainingOpsUnchanged) {
  NetConfig n;
  n.architecture = "simple-fcn";
  const ModelGraph g = build_architecture(n, 3, 1);
  EXPECT_EQ(strip_training_ops(g).nodes, g.nodes);
}

TEST(Strip, RemovesExactlyTheDropouts) {
  const ModelGraph g = trained_graph(3);
  const auto dropouts = std::count_if(g.nodes.begin(), g.nodes.end(), [](const GraphNode& n) {
    return n.spec.kind == OpKind::dropout;
  });
  ASSERT_GT(dropouts, 0);
  const ModelGraph s = strip_training_ops(g);
  EXPECT_EQ(static_cast<std::ptrdiff_t>(s.nodes.size()),
            static_cast<std::ptrdiff_t>(g.nodes.size()) - dropouts);
  for (const auto& n : s.nodes) {
    EXPECT_NE(n.spec.kind, OpKind::dropout);
  }
}

TEST(Strip, OutputEqualsInferMode) {
  const ModelGraph g = trained_graph(4);
  const ModelGraph s = strip_training_ops(g);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Tensor x = random_image({2, 3, 16, 16}, seed);
    EXPECT_LT(max_abs_diff(infer_logits(g, x), infer_logits(s, x)), 1e-6);
  }
}

TEST(Strip, InvalidRunningStatsRejected) {
  ModelGraph g = trained_graph(5);
  for (auto& [name, t] : g.buffers) {
    if (name.ends_with("/var")) {
      t.data<float>()[0] = std::numeric_limits<float>::quiet_NaN();
      break;
    }
  }
  EXPECT_THROW(strip_training_ops(g), FreezeError);
}

TEST(Optimize, PreservesLogitsAndNames) {
  const ModelGraph g = trained_graph(6);
  const ModelGraph s = strip_training_ops(g);
  const ModelGraph o = optimize_graph(s);
  EXPECT_LT(o.nodes.size(), s.nodes.size());
  for (const auto& n : o.nodes) {
    EXPECT_NE(n.spec.kind, OpKind::batch_norm);
  }
  for (const auto* name : {&g.names.input, &g.names.code, &g.names.logits, &g.names.softmax,
                           &g.names.argmax}) {
    EXPECT_TRUE(o.has_node(*name)) << *name;
  }
  const auto fused = std::count_if(o.nodes.begin(), o.nodes.end(),
                                   [](const GraphNode& n) { return n.spec.fused_relu; });
  EXPECT_GT(fused, 0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_image({1, 3, 16, 16}, 10 + seed);
    EXPECT_LT(max_abs_diff(infer_logits(g, x), infer_logits(o, x)), 1e-5);
    const Tensor code_g = run_graph(g, x, {}, {g.names.code}).at(g.names.code);
    const Tensor code_o = run_graph(o, x, {}, {o.names.code}).at(o.names.code);
    EXPECT_LT(max_abs_diff(code_g, code_o), 1e-5);
  }
}

// ---------------------------------------------------------------------------

TEST(Quantize, ZeroWeightsUseScaleFloor) {
  const Tensor z = test::filled({2, 2, 3, 3}, 0.0);
  const QuantParams q = weight_quant_params(z);
  EXPECT_EQ(q.scale, 1e-8);
  EXPECT_EQ(q.zero_point, 0);
  const Tensor t = quantize(z, q);
  for (const auto v : t.data<std::int8_t>()) {
    EXPECT_EQ(v, 0);
  }
  EXPECT_EQ(activation_quant_params(0.0, 0.0).scale, 1e-8);
}

TEST(Quantize, UnitRangeWeights) {
  const Tensor w = Tensor::from_values<double>({1, 1, 1, 3}, {-1.0, 0.25, 1.0});
  const QuantParams q = weight_quant_params(w);
  EXPECT_DOUBLE_EQ(q.scale, 1.0 / 127.0);
  EXPECT_EQ(quantize_value(1.0, q), 127);
  EXPECT_EQ(quantize_value(-1.0, q), -127);
}

TEST(Quantize, ActivationParameters) {
  const QuantParams q = activation_quant_params(-1.0, 3.0);
  EXPECT_DOUBLE_EQ(q.scale, 4.0 / 255.0);
  EXPECT_EQ(q.zero_point, std::lround(1.0 / q.scale) - 128);
  EXPECT_EQ(quantize_value(-1.0, q), -128);
  EXPECT_EQ(quantize_value(3.0, q), 127);
  EXPECT_THROW(activation_quant_params(2.0, 1.0), DomainError);
}

TEST(Quantize, GridRoundTripWithinHalfScale) {
  const std::vector<std::pair<double, double>> ranges{{-1, 1}, {0, 6}, {-3.5, 0.2}, {-0.01, 250}};
  for (const auto& [lo, hi] : ranges) {
    const QuantParams a = activation_quant_params(lo, hi);
    const QuantParams w = weight_quant_params(Tensor::from_values<double>({1, 1, 1, 2}, {lo, hi}));
    for (int i = 0; i < 1000; ++i) {
      const double x = lo + (hi - lo) * i / 999.0;
      EXPECT_LE(std::abs(dequantize_value(quantize_value(x, a), a) - x), a.scale / 2 + 1e-12)
          << lo << " " << hi << " " << x;
      EXPECT_LE(std::abs(dequantize_value(quantize_value(x, w), w) - x), w.scale / 2 + 1e-12);
    }
  }
}

TEST(Quantize, EmptyCalibrationRejected) {
  const FrozenModel m =
      make_frozen(optimize_graph(strip_training_ops(trained_graph(7))), Variant::optimized,
                  data_for(4, 16));
  EXPECT_THROW(quantize_model(m, {}), FreezeError);
}

TEST(Quantize, ModelCarriesQuantizationEverywhere) {
  const FrozenModel m =
      make_frozen(optimize_graph(strip_training_ops(trained_graph(7))), Variant::optimized,
                  data_for(4, 16));
  const std::vector<Tensor> calib{random_image({4, 3, 16, 16}, 1), random_image({4, 3, 16, 16}, 2)};
  const FrozenModel q = quantize_model(m, calib);
  EXPECT_EQ(q.variant, Variant::quantized);
  for (const auto& [name, t] : q.weights) {
    EXPECT_EQ(t.dtype(), DType::i8) << name;
    ASSERT_TRUE(t.quant().has_value());
    EXPECT_EQ(t.quant()->zero_point, 0);
  }
  for (const auto& n : q.graph) {
    EXPECT_EQ(n.spec.act_quant.has_value(), n.spec.kind != OpKind::argmax) << n.name;
  }
  // Mask agreement with the float model on calibration-like inputs.
  std::int64_t same = 0, total = 0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Tensor x = random_image({1, 3, 16, 16}, 100 + s);
    const Tensor a = run_model(m, x).at(m.nodes.argmax);
    const Tensor b = run_model(q, x, {1, true}).at(q.nodes.argmax);
    for (std::size_t i = 0; i < static_cast<std::size_t>(a.size()); ++i) {
      same += a.flat(i) == b.flat(i);
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(same) / static_cast<double>(total), 0.8);
}

// ---------------------------------------------------------------------------

class Variants : public ::testing::Test {
 protected:
  void SetUp() override {
    graph_ = trained_graph(9);
    const ModelGraph s = strip_training_ops(graph_);
    nchw_ = make_frozen(s, Variant::nchw, data_for(4, 16));
    nhwc_ = convert_model_layout(nchw_, Layout::nhwc, Variant::nhwc);
    optimized_ = make_frozen(optimize_graph(s), Variant::optimized, data_for(4, 16));
    const std::vector<Tensor> calib{random_image({4, 3, 16, 16}, 3)};
    quantized_ = quantize_model(optimized_, calib);
  }

  ModelGraph graph_;
  FrozenModel nchw_, nhwc_, optimized_, quantized_;
};

TEST_F(Variants, FloatVariantsMatchTrainGraph) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_image({1, 3, 16, 16}, 50 + seed);
    const Tensor ref = infer_logits(graph_, x);
    const auto a = run_model(nchw_, x);
    const auto b = run_model(nhwc_, x);
    const auto c = run_model(optimized_, x);
    EXPECT_LT(max_abs_diff(a.at("logits"), ref), 1e-5);
    EXPECT_LT(max_abs_diff(b.at("logits"), ref), 1e-5);
    EXPECT_LT(max_abs_diff(c.at("logits"), ref), 1e-5);
    EXPECT_LT(max_abs_diff(a.at("logits"), b.at("logits")), 1e-6);
    EXPECT_EQ(max_abs_diff(a.at("argmax"), b.at("argmax")), 0.0);
    EXPECT_EQ(b.at("logits").layout(), Layout::nhwc);
  }
}

TEST_F(Variants, ParallelExecutionIsIdentical) {
  const Tensor x = random_image({1, 3, 16, 16}, 77);
  for (const FrozenModel* m : {&nchw_, &nhwc_, &optimized_}) {
    const auto a = run_model(*m, x, {1, false});
    const auto b = run_model(*m, x, {4, false});
    EXPECT_TRUE(a.at("logits").bit_equal(b.at("logits")));
  }
}

TEST_F(Variants, ContainerRoundTripIsByteIdentical) {
  for (const FrozenModel* m : {&nchw_, &nhwc_, &optimized_, &quantized_}) {
    const auto bytes = serialize_model(*m);
    const FrozenModel back = deserialize_model(bytes);
    EXPECT_TRUE(back == *m) << to_string(m->variant);
    EXPECT_EQ(serialize_model(back), bytes);
    for (const auto* name : {&m->nodes.input, &m->nodes.code, &m->nodes.logits,
                             &m->nodes.softmax, &m->nodes.argmax}) {
      EXPECT_TRUE(back.has_node(*name));
    }
  }
}

TEST_F(Variants, ContainerErrors) {
  auto bytes = serialize_model(nchw_);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "BNNF");
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_model(flipped), CorruptFileError);
  auto version = bytes;
  version[4] = 2;
  EXPECT_THROW(deserialize_model(version), VersionError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_model(magic), FormatError);
  EXPECT_THROW(deserialize_model(std::span(bytes).first(bytes.size() - 9)), FormatError);
}

TEST_F(Variants, NoTrainingOpsInFrozenModels) {
  for (const FrozenModel* m : {&nchw_, &nhwc_, &optimized_, &quantized_}) {
    for (const auto& n : m->graph) {
      EXPECT_NE(n.spec.kind, OpKind::dropout);
    }
    for (const auto& [name, t] : m->weights) {
      EXPECT_EQ(t.layout(), m->layout);
    }
  }
  FrozenModel bad = nchw_;
  bad.graph.insert(bad.graph.end() - 2, GraphNode{"drop", OpSpec::dropout(0.5, 1), {"logits"}});
  EXPECT_THROW(bad.validate(), FormatError);
}

// ---------------------------------------------------------------------------

TEST(Freeze, MissingCheckpointNamesLogDir) {
  test::TempDir dir;
  try {
    freeze(dir.path() / "log", dir.path() / "out");
    FAIL() << "expected FreezeError";
  } catch (const FreezeError& e) {
    EXPECT_NE(std::string(e.what()).find((dir.path() / "log").string()), std::string::npos);
  }
}

TEST(Freeze, WritesDeploymentDirectory) {
  test::TempDir dir;
  generate_toy_dataset(dir.path() / "raw", 20, 16, 2);
  DataConfig data = toy_data_config();
  data.inference_width = 16;
  data.inference_height = 16;
  const auto ds =
      import_dataset(dir.path() / "raw" / "img", dir.path() / "raw" / "lbl", data, 1, dir.path() / "ds");
  TrainConfig train;
  train.epochs = 1;
  train.batch_size = 4;
  fit(ds, small_erfnet(), train, dir.path() / "log");
  const FreezeResult r = freeze(dir.path() / "log", dir.path() / "out");
  ASSERT_EQ(r.models.size(), 4u);
  for (const char* f : {"model_nchw.bnnf", "model_nhwc.bnnf", "model_optimized.bnnf",
                        "model_quantized.bnnf", "nodes.yaml", "data.yaml", "net.yaml"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "out" / f)) << f;
  }
  const NodesConfig nodes = load_nodes_config(dir.path() / "out" / "nodes.yaml");
  for (const auto& path : r.models) {
    const FrozenModel m = load_model(path);
    EXPECT_EQ(m.nodes, nodes);
    EXPECT_EQ(m.classes, data.classes);
    EXPECT_EQ(m.input, (Dims{1, 3, 16, 16}));
  }
  // Freezing is deterministic.
  freeze(dir.path() / "log", dir.path() / "out2");
  for (const auto v : {Variant::nchw, Variant::nhwc, Variant::optimized, Variant::quantized}) {
    EXPECT_EQ(read_file(dir.path() / "out" / model_file_name(v)),
              read_file(dir.path() / "out2" / model_file_name(v)));
  }
}

}  // namespace
}  // namespace bonnet
