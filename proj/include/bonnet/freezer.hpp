// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

// Conversion of trained checkpoints into deployable frozen models, the
// frozen container format and the executor shared by freezing and runtime.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bonnet/config.hpp"
#include "bonnet/model.hpp"

namespace bonnet {

class FreezeError : public Error {
 public:
  using Error::Error;
};

enum class Variant : std::uint8_t { nchw = 0, nhwc = 1, optimized = 2, quantized = 3 };

std::string_view to_string(Variant variant);
std::optional<Variant> parse_variant(std::string_view text);
/// "model_<variant>.bnnf"
std::string model_file_name(Variant variant);

/// Inference-only model. `input` holds the logical (1, 3, H, W) input
/// extents; normalisation constants live in the input node's spec.
struct FrozenModel {
  Variant variant = Variant::nchw;
  Layout layout = Layout::nchw;
  Dims input{1, 3, 1, 1};
  std::vector<ClassInfo> classes;
  NodesConfig nodes;
  std::vector<GraphNode> graph;
  TensorMap weights;

  const GraphNode& node(const std::string& name) const;
  bool has_node(const std::string& name) const;
  /// Structural checks: known inputs, named nodes present, no training ops,
  /// quantization metadata complete for the quantized variant.
  void validate() const;
  bool operator==(const FrozenModel&) const;
};

// ---------------------------------------------------------------------------
// Graph transformations

/// Removes dropout (consumers are rewired to its input) and checks that
/// every batch norm has usable running statistics. The result evaluates
/// exactly like the input graph in infer mode.
ModelGraph strip_training_ops(const ModelGraph& graph);

struct FoldedConv {
  Tensor weights;
  Tensor bias;
};

/// Folds an inference-mode batch norm into the preceding convolution:
/// w' = w * gamma / sqrt(var + eps) per output channel,
/// b' = beta + (b - mean) * gamma / sqrt(var + eps). Output channels are
/// dim 0 of the weights, or dim 1 when `transposed`. Computed in double.
FoldedConv fold_batch_norm(const Tensor& weights, const Tensor* bias, const Tensor& gamma,
                           const Tensor& beta, const Tensor& mean, const Tensor& var, double eps,
                           bool transposed = false);

/// Batch-norm folding, the remaining batch norms turned into precomputed
/// scale_shift ops, and ReLU fusion into conv / transposed conv / add /
/// scale_shift producers. Named nodes keep their names.
ModelGraph optimize_graph(const ModelGraph& stripped);

/// Float frozen model (weights cast to f32) from an inference graph.
FrozenModel make_frozen(const ModelGraph& graph, Variant variant, const DataConfig& data);

/// Same model with activations and weights stored in `layout`.
FrozenModel convert_model_layout(const FrozenModel& model, Layout layout, Variant variant);

// ---------------------------------------------------------------------------
// Quantization

/// Symmetric per-tensor: zero_point 0, scale max|w| / 127 (floor 1e-8).
QuantParams weight_quant_params(const Tensor& weights);
/// Asymmetric: scale (max - min) / 255 (floor 1e-8), zero_point round(-min / scale) - 128.
QuantParams activation_quant_params(double min, double max);

std::int8_t quantize_value(double x, const QuantParams& q);
double dequantize_value(std::int8_t q, const QuantParams& p);
Tensor quantize(const Tensor& t, const QuantParams& q);
Tensor dequantize(const Tensor& t, DType dtype = DType::f32);

/// Quantizes every weight and calibrates per-node activation ranges by
/// running `model` over `calibration` (raw 0..255 image batches in the
/// model's layout). Argmax outputs are left unquantized.
FrozenModel quantize_model(const FrozenModel& model, std::span<const Tensor> calibration);

// ---------------------------------------------------------------------------
// Execution

struct ExecOptions {
  int threads = 1;
  /// Requantize every node output carrying act_quant (dequantize -> float
  /// op -> requantize).
  bool quantize_activations = false;
};

/// Float copies of the weights (i8 tensors dequantized) for execute().
TensorMap float_weights(const FrozenModel& model);

using NodeObserver = std::function<void(const GraphNode&, const Tensor&)>;

/// Runs the model on a raw image batch in the model's layout and returns
/// the requested node outputs. `weights` comes from float_weights().
TensorMap execute(const FrozenModel& model, const TensorMap& weights, const Tensor& image,
                  const std::vector<std::string>& outputs, const ExecOptions& options = {},
                  const NodeObserver& observer = {});

// ---------------------------------------------------------------------------
// Container

std::vector<std::uint8_t> serialize_model(const FrozenModel& model);
FrozenModel deserialize_model(std::span<const std::uint8_t> bytes,
                              const std::string& what = "model");
void save_model(const FrozenModel& model, const std::filesystem::path& path);
FrozenModel load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

enum class BestCheckpoint { iou, acc };

struct FreezeOptions {
  BestCheckpoint which = BestCheckpoint::iou;
  /// Standard dataset used for calibration; data.yaml's dataset_location
  /// when empty.
  std::filesystem::path calibration_dataset;
  int calibration_samples = 32;
};

struct FreezeResult {
  std::vector<std::filesystem::path> models;
  std::filesystem::path nodes;
};

/// Writes model_{nchw,nhwc,optimized,quantized}.bnnf, nodes.yaml, data.yaml
/// and net.yaml into out_dir.
FreezeResult freeze(const std::filesystem::path& log_dir, const std::filesystem::path& out_dir,
                    const FreezeOptions& options = {});

}  // namespace bonnet
