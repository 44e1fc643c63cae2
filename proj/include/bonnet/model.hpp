// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bonnet/config.hpp"
#include "bonnet/ops.hpp"
#include "bonnet/tape.hpp"

namespace bonnet {

struct Sample;

/// One operator of a model. `inputs` name earlier nodes or entries of the
/// graph's parameter/buffer tables; the `input` node reads the external
/// image instead.
struct GraphNode {
  std::string name;
  OpSpec spec;
  std::vector<std::string> inputs;

  bool operator==(const GraphNode&) const = default;
};

/// Ordered operator graph with its tensors. Parameters are trainable;
/// buffers hold batch-norm running statistics.
struct ModelGraph {
  std::string architecture;
  int classes = 0;
  std::vector<GraphNode> nodes;
  TensorMap parameters;
  TensorMap buffers;
  NodesConfig names;

  const GraphNode& node(const std::string& name) const;
  bool has_node(const std::string& name) const;
  std::int64_t parameter_count() const;
  /// Throws ShapeError when a node reads an unknown name or a later node.
  void validate() const;
};

/// Registered architectures: name -> builder. "erfnet-mini" and
/// "simple-fcn" are shipped.
using ArchitectureBuilder =
    std::function<ModelGraph(const NetConfig&, int classes, std::uint64_t init_seed)>;
void register_architecture(const std::string& name, ArchitectureBuilder builder);
std::vector<std::string> architecture_names();

/// Builds the graph with freshly initialised parameters (seeded by
/// `init_seed`). Parameter shapes and the node list depend only on
/// (net, classes).
ModelGraph build_architecture(const NetConfig& net, int classes, std::uint64_t init_seed = 0);

/// Converts 8-bit RGB batches into the graph's (n, 3, h, w) input tensor of
/// raw 0..255 values; normalisation happens in the `input` node.
Tensor images_to_tensor(const std::vector<const Sample*>& samples, DType dtype);
/// (n, 1, h, w) class ids stored as reals.
Tensor labels_to_tensor(const std::vector<const Sample*>& samples, DType dtype);

/// Node name -> tape value of one recorded forward pass.
struct RecordedGraph {
  std::map<std::string, ValueId> values;
  ValueId at(const std::string& name) const { return values.at(name); }
};

/// Records the graph on `tape` up to and including node `last` (all nodes
/// when empty). Parameters become tape parameters, buffers constants.
RecordedGraph record(Tape& tape, const ModelGraph& graph, const Tensor& image,
                     const std::string& last = {});
/// Same, reading parameters from `parameters` instead of the graph's table.
RecordedGraph record(Tape& tape, const ModelGraph& graph, const TensorMap& parameters,
                     const Tensor& image, const std::string& last = {});

/// Forward evaluation without a tape. Returns the requested node values.
TensorMap run_graph(const ModelGraph& graph, const Tensor& image, const ExecContext& ctx,
                    const std::vector<std::string>& outputs);

/// Casts every parameter and buffer.
ModelGraph cast_graph(const ModelGraph& graph, DType dtype);

// ---------------------------------------------------------------------------
// Loss and class weighting

std::vector<double> class_weights(const std::vector<double>& frequencies, WeightingPolicy policy);

struct LossSpec {
  std::vector<double> class_weights;  // empty = all ones
  double focal_gamma = 0.0;
};

OpSpec loss_op(const LossSpec& spec);
/// Mean over pixels of w_y (1 - p_y)^gamma (-ln p_y).
double segmentation_loss(const Tensor& logits, const Tensor& labels, const LossSpec& spec);

// ---------------------------------------------------------------------------
// Metrics

/// Entry (i, j) counts pixels with ground truth i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0, std::optional<int> ignore_class = std::nullopt);

  void update(std::span<const std::int32_t> predicted, std::span<const std::uint8_t> truth);
  void update(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  int classes() const { return classes_; }
  std::uint64_t at(int truth, int predicted) const {
    return counts_[static_cast<std::size_t>(truth * classes_ + predicted)];
  }
  std::uint64_t total() const;
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  template <class P>
  void accumulate(std::span<const P> predicted, std::span<const std::uint8_t> truth);

  int classes_ = 0;
  std::optional<int> ignore_;
  std::vector<std::uint64_t> counts_;
};

/// Per-class values are nullopt when their denominator is zero; such classes
/// are left out of the means. Means are nullopt when no class is defined.
struct Metrics {
  std::optional<double> miou;
  std::optional<double> macc;
  std::vector<std::optional<double>> iou;
  std::vector<std::optional<double>> accuracy;

  bool defined() const { return miou.has_value(); }
};

Metrics metrics(const ConfusionMatrix& cm);

}  // namespace bonnet
