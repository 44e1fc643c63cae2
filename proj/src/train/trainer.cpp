// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "bonnet/trainer.hpp"

#include <cmath>
#include <cstring>
#include <exception>
#include <thread>

#include "bonnet/binary.hpp"
#include "bonnet/image.hpp"
#include "bonnet/tape.hpp"

namespace bonnet {

namespace {

DType to_dtype(Precision p) { return p == Precision::f64 ? DType::f64 : DType::f32; }

// Contiguous shards; the first n % k shards take one extra sample.
std::vector<std::pair<std::size_t, std::size_t>> shard_ranges(std::size_t n, std::size_t k) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t len = n / k + (i < n % k ? 1 : 0);
    out.emplace_back(begin, begin + len);
    begin += len;
  }
  return out;
}

}  // namespace

Trainer::Trainer(ModelGraph graph, const TrainConfig& config, LossSpec loss)
    : config_(config), loss_(std::move(loss)), dtype_(to_dtype(config.dtype)) {
  config_.validate();
  graph_ = cast_graph(graph, dtype_);
  graph_.validate();
  optimizer_ = OptimizerState::create(config_, graph_.parameters);
  lanes_.assign(static_cast<std::size_t>(config_.num_workers), graph_.parameters);
}

std::vector<Trainer::Shard> Trainer::run_workers(const std::vector<const Sample*>& batch,
                                                 std::vector<double>& weights) {
  if (batch.empty()) {
    throw InvalidArgument("training step needs a non-empty batch");
  }
  const std::size_t k = std::min(lanes_.size(), batch.size());
  const auto ranges = shard_ranges(batch.size(), k);
  std::vector<Shard> shards(k);
  std::vector<std::exception_ptr> errors(k);
  weights.assign(k, 0.0);

  auto work = [&](std::size_t w) {
    try {
      if (hook_) {
        hook_(static_cast<int>(w));
      }
      const auto [begin, end] = ranges[w];
      const std::vector<const Sample*> part(batch.begin() + static_cast<std::ptrdiff_t>(begin),
                                            batch.begin() + static_cast<std::ptrdiff_t>(end));
      const int segment = config_.checkpoint_gradients.value_or(0);
      Tape tape({Mode::train, samples_seen_ + static_cast<std::int64_t>(begin), 1}, segment);
      const RecordedGraph rec = record(tape, graph_, lanes_[w], images_to_tensor(part, dtype_),
                                       graph_.names.logits);
      const ValueId labels = tape.constant(labels_to_tensor(part, dtype_));
      const ValueId loss = tape.apply(loss_op(loss_), {rec.at(graph_.names.logits), labels});
      shards[w].loss = tape.value(loss).flat(0);
      shards[w].grads = segment > 0 ? checkpointed_backward(tape, loss, segment)
                                    : backward(tape, loss);
      shards[w].stats = tape.batch_stats();
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };

  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < k; ++w) {
    threads.emplace_back(work, w);
  }
  work(0);
  for (auto& t : threads) {
    t.join();
  }
  for (std::size_t w = 0; w < k; ++w) {
    if (errors[w]) {
      try {
        std::rethrow_exception(errors[w]);
      } catch (const std::exception& e) {
        throw TrainingError("worker " + std::to_string(w) + " failed at step " +
                            std::to_string(step_ + 1) + ": " + e.what());
      }
    }
    weights[w] = static_cast<double>(ranges[w].second - ranges[w].first) /
                 static_cast<double>(batch.size());
  }
  return shards;
}

TensorMap Trainer::gradients(const std::vector<const Sample*>& batch, double* loss) {
  std::vector<double> weights;
  auto shards = run_workers(batch, weights);
  std::vector<TensorMap> grads;
  double total = 0.0;
  for (std::size_t w = 0; w < shards.size(); ++w) {
    total += weights[w] * shards[w].loss;
    grads.push_back(std::move(shards[w].grads));
  }
  if (loss != nullptr) {
    *loss = total;
  }
  return average_gradients(grads, weights);
}

Trainer::StepResult Trainer::step(const std::vector<const Sample*>& batch) {
  std::vector<double> weights;
  auto shards = run_workers(batch, weights);
  double loss = 0.0;
  std::vector<TensorMap> grads;
  for (std::size_t w = 0; w < shards.size(); ++w) {
    loss += weights[w] * shards[w].loss;
    grads.push_back(std::move(shards[w].grads));
  }
  if (!std::isfinite(loss)) {
    throw TrainingError("non-finite loss at step " + std::to_string(step_ + 1));
  }
  const TensorMap avg = average_gradients(grads, weights);

  apply_update(graph_.parameters, avg, optimizer_);
  for (const auto& node : graph_.nodes) {
    if (node.spec.kind != OpKind::batch_norm) {
      continue;
    }
    std::vector<BatchStats> parts;
    for (const auto& s : shards) {
      if (auto it = s.stats.find(node.name); it != s.stats.end()) {
        parts.push_back(it->second);
      }
    }
    if (parts.empty()) {
      continue;
    }
    update_running_stats(graph_.buffers.at(node.inputs[3]), graph_.buffers.at(node.inputs[4]),
                         merge_batch_stats(parts), node.spec.decay);
  }
  for (auto& lane : lanes_) {
    lane = graph_.parameters;
  }
  ++step_;
  samples_seen_ += static_cast<std::int64_t>(batch.size());
  return {loss, step_};
}

Checkpoint Trainer::checkpoint(int epoch) const {
  Checkpoint c;
  c.architecture = graph_.architecture;
  c.classes = graph_.classes;
  c.step = step_;
  c.samples_seen = samples_seen_;
  c.epoch = epoch;
  c.parameters = graph_.parameters;
  c.buffers = graph_.buffers;
  c.optimizer = optimizer_;
  return c;
}

Trainer Trainer::resume(const Checkpoint& checkpoint, const NetConfig& net,
                        const TrainConfig& config, LossSpec loss) {
  Trainer t(restore_graph(net, checkpoint), config, std::move(loss));
  if (checkpoint.optimizer.kind != config.optimizer) {
    throw InvalidArgument("checkpoint optimizer '" +
                          std::string(to_string(checkpoint.optimizer.kind)) +
                          "' does not match train config '" +
                          std::string(to_string(config.optimizer)) + "'");
  }
  t.optimizer_ = checkpoint.optimizer;
  for (auto* table : {&t.optimizer_.first, &t.optimizer_.second}) {
    for (auto& [name, buf] : *table) {
      if (buf.dtype() != t.dtype_) {
        buf = buf.cast(t.dtype_);
      }
    }
  }
  t.step_ = checkpoint.step;
  t.samples_seen_ = checkpoint.samples_seen;
  return t;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'B', 'N', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_table(ByteWriter& w, const TensorMap& table) {
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, t] : table) {
    w.tensor(name, t);
  }
}

TensorMap read_table(ByteReader& r) {
  TensorMap out;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto [name, t] = r.tensor();
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(c.architecture);
  w.i32(c.classes);
  w.i64(c.step);
  w.i64(c.samples_seen);
  w.i32(c.epoch);
  w.u8(static_cast<std::uint8_t>(c.optimizer.kind));
  w.f64(c.optimizer.learn_rate);
  w.u32(static_cast<std::uint32_t>(c.optimizer.momentums.size()));
  for (const double m : c.optimizer.momentums) {
    w.f64(m);
  }
  w.i64(c.optimizer.step);
  write_table(w, c.parameters);
  write_table(w, c.buffers);
  write_table(w, c.optimizer.first);
  write_table(w, c.optimizer.second);
  w.seal();
  write_file(path, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  ByteReader r(bytes, path.string());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    r.fail("not a checkpoint file");
  }
  r.take(4);
  if (const std::uint32_t v = r.u32(); v != kCheckpointVersion) {
    throw VersionError(path.string() + ": checkpoint version " + std::to_string(v) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) +
                       ")");
  }
  ByteReader body(bytes, path.string());
  body.verify_crc();
  body.take(8);
  Checkpoint c;
  c.architecture = body.str();
  c.classes = body.i32();
  c.step = body.i64();
  c.samples_seen = body.i64();
  c.epoch = body.i32();
  const std::uint8_t kind = body.u8();
  if (kind > static_cast<std::uint8_t>(OptimizerKind::adam_like)) {
    body.fail("unknown optimizer kind " + std::to_string(kind));
  }
  c.optimizer.kind = static_cast<OptimizerKind>(kind);
  c.optimizer.learn_rate = body.f64();
  c.optimizer.momentums.resize(body.u32());
  for (auto& m : c.optimizer.momentums) {
    m = body.f64();
  }
  c.optimizer.step = body.i64();
  c.parameters = read_table(body);
  c.buffers = read_table(body);
  c.optimizer.first = read_table(body);
  c.optimizer.second = read_table(body);
  if (!body.done()) {
    body.fail("trailing bytes");
  }
  return c;
}

ModelGraph restore_graph(const NetConfig& net, const Checkpoint& checkpoint) {
  if (net.architecture != checkpoint.architecture) {
    throw InvalidArgument("checkpoint architecture '" + checkpoint.architecture +
                          "' does not match net config '" + net.architecture + "'");
  }
  ModelGraph g = build_architecture(net, checkpoint.classes);
  auto fill = [](TensorMap& dst, const TensorMap& src, const char* what) {
    if (dst.size() != src.size()) {
      throw ShapeError(std::string("checkpoint has ") + std::to_string(src.size()) + " " + what +
                       ", graph expects " + std::to_string(dst.size()));
    }
    for (auto& [name, t] : dst) {
      const auto it = src.find(name);
      if (it == src.end()) {
        throw ShapeError(std::string("checkpoint lacks ") + what + " '" + name + "'");
      }
      if (it->second.dims() != t.dims()) {
        throw ShapeError("checkpoint tensor '" + name + "' has dims " +
                         to_string(it->second.dims()) + ", graph expects " + to_string(t.dims()));
      }
      t = it->second;
    }
  };
  fill(g.parameters, checkpoint.parameters, "parameters");
  fill(g.buffers, checkpoint.buffers, "buffers");
  return g;
}

}  // namespace bonnet
