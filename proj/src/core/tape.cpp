// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "bonnet/tape.hpp"

#include <algorithm>
#include <memory>
#include <utility>

namespace bonnet {

Tape::Tape(ExecContext ctx, int segment_size) : ctx_(ctx), segment_size_(segment_size) {
  if (segment_size < 0) {
    throw InvalidArgument("tape segment size must be >= 0");
  }
}

const Tape::Node& Tape::at(ValueId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= values_.size()) {
    throw InvalidArgument("unknown tape value " + std::to_string(id));
  }
  return values_[static_cast<std::size_t>(id)];
}

Tape::Node& Tape::at(ValueId id) {
  return const_cast<Node&>(std::as_const(*this).at(id));
}

ValueId Tape::add_leaf(Tensor value, bool trainable, std::string label) {
  Node n;
  n.requires_grad = trainable;
  n.label = std::move(label);
  n.value = std::move(value);
  values_.push_back(std::move(n));
  return static_cast<ValueId>(values_.size() - 1);
}

ValueId Tape::constant(Tensor value) {
  return add_leaf(std::move(value), false, {});
}

ValueId Tape::parameter(const std::string& name, Tensor value) {
  if (params_.contains(name)) {
    throw InvalidArgument("duplicate parameter '" + name + "'");
  }
  const ValueId id = add_leaf(std::move(value), true, name);
  params_.emplace(name, id);
  return id;
}

std::int64_t Tape::segment_of(const Node& n) const {
  return segment_size_ > 0 ? n.op_index / segment_size_ : 0;
}

bool Tape::is_checkpoint(ValueId id) const {
  const Node& n = at(id);
  return n.spec && segment_size_ > 0 && n.op_index % segment_size_ == segment_size_ - 1;
}

bool Tape::resident(const Node& n) const {
  if (!n.spec || segment_size_ == 0) {
    return true;
  }
  return n.op_index % segment_size_ == segment_size_ - 1 || segment_of(n) == active_segment_;
}

void Tape::store(ValueId id, Tensor value) {
  Node& n = at(id);
  if (!n.value) {
    ++retained_;
    peak_retained_ = std::max(peak_retained_, retained_);
  }
  n.value = std::move(value);
}

void Tape::discard(ValueId id) {
  Node& n = at(id);
  if (n.spec && n.value) {
    n.value.reset();
    --retained_;
  }
}

void Tape::trim() {
  for (const ValueId id : op_ids_) {
    if (!resident(at(id))) {
      discard(id);
    }
  }
}

void Tape::set_segment_size(int segment_size) {
  segment_size_ = segment_size;
  active_segment_ = op_ids_.empty() ? 0 : segment_of(at(op_ids_.back()));
  trim();
}

const Tensor& Tape::value(ValueId id) {
  Node& n = at(id);
  if (n.value) {
    return *n.value;
  }
  std::vector<const Tensor*> inputs;
  inputs.reserve(n.inputs.size());
  for (const ValueId in : n.inputs) {
    inputs.push_back(&value(in));
  }
  store(id, forward(*n.spec, inputs, ctx_));
  return *at(id).value;
}

ValueId Tape::apply(const OpSpec& spec, std::span<const ValueId> inputs, std::string label) {
  std::vector<const Tensor*> args;
  bool requires_grad = false;
  for (const ValueId in : inputs) {
    args.push_back(&value(in));
    requires_grad = requires_grad || at(in).requires_grad;
  }
  BatchStats stats;
  const bool tracks_stats = spec.kind == OpKind::batch_norm && ctx_.mode == Mode::train;
  Tensor out = forward(spec, args, ctx_, tracks_stats ? &stats : nullptr);

  Node n;
  n.spec = spec;
  n.inputs.assign(inputs.begin(), inputs.end());
  n.label = std::move(label);
  n.op_index = static_cast<std::int64_t>(op_ids_.size());
  n.requires_grad = requires_grad;
  values_.push_back(std::move(n));
  const auto id = static_cast<ValueId>(values_.size() - 1);
  op_ids_.push_back(id);
  if (tracks_stats) {
    const Node& node = at(id);
    stats_[node.label.empty() ? "#" + std::to_string(id) : node.label] = std::move(stats);
  }
  active_segment_ = segment_of(at(id));
  store(id, std::move(out));
  trim();
  return id;
}

TensorMap Tape::run_backward(ValueId loss) {
  const Tensor& loss_value = value(loss);
  if (loss_value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + to_string(loss_value.dims()));
  }
  std::vector<std::optional<Tensor>> grads(values_.size());
  const auto accumulate = [&](ValueId id, Tensor g) {
    auto& slot = grads[static_cast<std::size_t>(id)];
    slot = slot ? add(*slot, g) : std::move(g);
  };
  {
    Tensor seed(loss_value.dims(), loss_value.dtype(), loss_value.layout());
    visit_float(seed.dtype(), [&](auto tag) { seed.data<decltype(tag)>()[0] = 1; });
    accumulate(loss, std::move(seed));
  }

  const Node& loss_node = at(loss);
  if (loss_node.spec && loss_node.requires_grad) {
    const std::int64_t last = loss_node.op_index;
    const std::int64_t S = segment_size_ > 0 ? segment_size_ : last + 1;
    for (std::int64_t seg = last / S; seg >= 0; --seg) {
      active_segment_ = seg;
      const std::int64_t lo = seg * S;
      const std::int64_t hi = std::min((seg + 1) * S - 1, last);
      for (std::int64_t k = hi; k >= lo; --k) {
        const ValueId id = op_ids_[static_cast<std::size_t>(k)];
        auto& g = grads[static_cast<std::size_t>(id)];
        if (!g || !at(id).requires_grad) {
          continue;
        }
        const OpSpec spec = *at(id).spec;
        if (!has_derivative(spec.kind)) {
          throw UnsupportedOpError("backward: " + std::string(to_string(spec.kind)) +
                                   " has no registered derivative");
        }
        const std::vector<ValueId> in_ids = at(id).inputs;
        std::vector<const Tensor*> inputs;
        const auto needs = std::make_unique<bool[]>(in_ids.size());
        for (std::size_t i = 0; i < in_ids.size(); ++i) {
          inputs.push_back(&value(in_ids[i]));
          needs[i] = at(in_ids[i]).requires_grad;
        }
        std::vector<Tensor> gi = bonnet::backward(
            spec, inputs, *g, std::span<const bool>(needs.get(), in_ids.size()), ctx_);
        g.reset();
        for (std::size_t i = 0; i < in_ids.size(); ++i) {
          if (needs[i] && !gi[i].empty()) {
            accumulate(in_ids[i], std::move(gi[i]));
          }
        }
      }
      if (segment_size_ > 0) {
        active_segment_ = seg - 1;
        trim();
      }
    }
  }

  TensorMap out;
  for (const auto& [name, id] : params_) {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g) {
      out.emplace(name, std::move(*g));
    } else {
      const Tensor& p = *at(id).value;
      out.emplace(name, Tensor(p.dims(), p.dtype(), p.layout()));
    }
  }
  return out;
}

TensorMap backward(Tape& tape, ValueId loss) {
  return tape.run_backward(loss);
}

TensorMap checkpointed_backward(Tape& tape, ValueId loss, int segment_size) {
  if (segment_size < 1) {
    throw InvalidArgument("checkpoint segment size must be >= 1, got " +
                          std::to_string(segment_size));
  }
  const int previous = tape.segment_size_;
  tape.set_segment_size(segment_size);
  TensorMap grads = tape.run_backward(loss);
  tape.segment_size_ = previous;
  return grads;
}

}  // namespace bonnet
