// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bonnet/ops.hpp"

namespace bonnet {

using ValueId = std::int32_t;

/// Records a forward computation for reverse-mode differentiation.
///
/// Values are either leaves (constants and trainable parameters) or the
/// outputs of recorded ops. With a segment size S > 0 the recorded ops are
/// grouped into consecutive segments of S; only the last op of each segment
/// (its checkpoint) and the leaves stay resident once the forward pass has
/// left the segment. Anything else is recomputed from the nearest resident
/// values when it is needed again.
class Tape {
 public:
  explicit Tape(ExecContext ctx = {}, int segment_size = 0);

  ValueId constant(Tensor value);
  ValueId parameter(const std::string& name, Tensor value);
  /// Runs the op immediately and records it.
  ValueId apply(const OpSpec& spec, std::span<const ValueId> inputs,
                std::string label = {});
  ValueId apply(const OpSpec& spec, std::initializer_list<ValueId> inputs,
                std::string label = {}) {
    return apply(spec, std::span<const ValueId>(inputs.begin(), inputs.size()),
                 std::move(label));
  }

  /// Value of `id`, recomputing it if it was discarded.
  const Tensor& value(ValueId id);

  const ExecContext& context() const { return ctx_; }
  int segment_size() const { return segment_size_; }
  std::size_t op_count() const { return op_ids_.size(); }
  std::size_t value_count() const { return values_.size(); }
  bool requires_grad(ValueId id) const { return at(id).requires_grad; }
  bool is_checkpoint(ValueId id) const;
  const std::string& label(ValueId id) const { return at(id).label; }

  /// name -> id for every trainable parameter.
  const std::map<std::string, ValueId>& parameters() const { return params_; }

  /// Batch statistics observed by train-mode batch norms, keyed by label
  /// (or "#<id>" when unlabelled).
  const std::map<std::string, BatchStats>& batch_stats() const { return stats_; }

  /// Op outputs currently held in memory (leaves are not counted).
  std::int64_t retained_activations() const { return retained_; }
  std::int64_t peak_retained_activations() const { return peak_retained_; }
  void reset_peak() { peak_retained_ = retained_; }

 private:
  friend TensorMap backward(Tape&, ValueId);
  friend TensorMap checkpointed_backward(Tape&, ValueId, int);

  struct Node {
    std::optional<OpSpec> spec;  // empty for leaves
    std::vector<ValueId> inputs;
    std::string label;
    std::int64_t op_index = -1;
    bool requires_grad = false;
    std::optional<Tensor> value;
  };

  const Node& at(ValueId id) const;
  Node& at(ValueId id);
  ValueId add_leaf(Tensor value, bool trainable, std::string label);
  void store(ValueId id, Tensor value);
  void discard(ValueId id);
  std::int64_t segment_of(const Node& n) const;
  bool resident(const Node& n) const;
  void trim();
  void set_segment_size(int segment_size);
  TensorMap run_backward(ValueId loss);

  ExecContext ctx_;
  int segment_size_ = 0;
  std::vector<Node> values_;
  std::vector<ValueId> op_ids_;
  std::map<std::string, ValueId> params_;
  std::map<std::string, BatchStats> stats_;
  std::int64_t active_segment_ = 0;
  std::int64_t retained_ = 0;
  std::int64_t peak_retained_ = 0;
};

/// Gradient of the scalar `loss` with respect to every trainable parameter,
/// keyed by parameter name. Uses the tape's own retention policy.
TensorMap backward(Tape& tape, ValueId loss);

/// Same gradients as backward(), computed with checkpoints every
/// `segment_size` ops; discarded activations are recomputed per segment.
TensorMap checkpointed_backward(Tape& tape, ValueId loss, int segment_size);

}  // namespace bonnet
