// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bonnet/config.hpp"
#include "bonnet/dataset.hpp"
#include "bonnet/model.hpp"

namespace bonnet {

/// Training aborted (non-finite loss, failed worker).
class TrainingError : public Error {
 public:
  using Error::Error;
};

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam_like;
  double learn_rate = 1e-3;
  std::vector<double> momentums{0.9, 0.999};
  std::int64_t step = 0;
  TensorMap first;   // momentum / first moment
  TensorMap second;  // adam_like only

  static OptimizerState create(const TrainConfig& config, const TensorMap& parameters);
};

/// One update of `parameters` in place. sgd_momentum: m = mu m + g,
/// p -= lr m. adam_like: bias-corrected two-moment rule with eps 1e-8.
void apply_update(TensorMap& parameters, const TensorMap& gradients, OptimizerState& state);

/// Elementwise weighted mean of K gradient sets (equal weights when
/// `weights` is empty). Throws ShapeError naming the mismatching parameter.
TensorMap average_gradients(std::span<const TensorMap> gradients,
                            std::span<const double> weights = {});

struct Checkpoint;

/// Bulk-synchronous data-parallel trainer. K worker lanes each hold a copy
/// of the parameters; every step they compute gradients on their shard of
/// the batch from the same snapshot, the coordinator averages them, applies
/// one update and publishes the new snapshot to every lane.
class Trainer {
 public:
  Trainer(ModelGraph graph, const TrainConfig& config, LossSpec loss);

  struct StepResult {
    double loss = 0.0;
    std::int64_t step = 0;
  };

  StepResult step(const std::vector<const Sample*>& batch);

  const ModelGraph& graph() const { return graph_; }
  const OptimizerState& optimizer() const { return optimizer_; }
  void set_learn_rate(double lr) { optimizer_.learn_rate = lr; }
  std::int64_t steps_done() const { return step_; }
  std::int64_t samples_seen() const { return samples_seen_; }
  int workers() const { return static_cast<int>(lanes_.size()); }
  const TensorMap& worker_parameters(int k) const { return lanes_.at(static_cast<std::size_t>(k)); }
  DType dtype() const { return dtype_; }

  /// Gradient of the batch loss at the current parameters without updating
  /// anything (same sharding and averaging as step()).
  TensorMap gradients(const std::vector<const Sample*>& batch, double* loss = nullptr);

  /// Test hook: called in each worker before its forward pass.
  void set_worker_hook(std::function<void(int worker)> hook) { hook_ = std::move(hook); }

  /// Snapshot of everything needed to resume bit-exactly.
  Checkpoint checkpoint(int epoch = 0) const;
  static Trainer resume(const Checkpoint& checkpoint, const NetConfig& net,
                        const TrainConfig& config, LossSpec loss);

 private:
  struct Shard {
    TensorMap grads;
    std::map<std::string, BatchStats> stats;
    double loss = 0.0;
  };
  std::vector<Shard> run_workers(const std::vector<const Sample*>& batch,
                                 std::vector<double>& weights);

  ModelGraph graph_;
  TrainConfig config_;
  LossSpec loss_;
  DType dtype_;
  OptimizerState optimizer_;
  std::vector<TensorMap> lanes_;
  std::int64_t step_ = 0;
  std::int64_t samples_seen_ = 0;
  std::function<void(int)> hook_;
};

/// Checkpoint file (magic "BNCK"): architecture, class count, counters,
/// parameters, buffers and optimizer state, trailing CRC-32.
struct Checkpoint {
  std::string architecture;
  int classes = 0;
  std::int64_t step = 0;
  std::int64_t samples_seen = 0;
  std::int32_t epoch = 0;
  TensorMap parameters;
  TensorMap buffers;
  OptimizerState optimizer;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads the parameters of `checkpoint` into a freshly built graph.
ModelGraph restore_graph(const NetConfig& net, const Checkpoint& checkpoint);

// ---------------------------------------------------------------------------

struct TrainLog {
  struct StepRecord {
    std::int64_t step;
    double loss;
    double lr;
  };
  struct ValidationRecord {
    int epoch;
    std::int64_t step;
    double lr;
    std::optional<double> miou;
    std::optional<double> macc;
  };
  std::vector<StepRecord> steps;
  std::vector<ValidationRecord> validations;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::filesystem::path> debug_images;
  std::optional<double> best_miou;
  std::optional<double> best_macc;
};

/// Evaluates `graph` (infer mode, at the precision of its parameters) over
/// one split. Samples are brought to the inference size first.
Metrics evaluate(const ModelGraph& graph, const StandardDataset& dataset, Split split,
                 int batch_size = 8);

/// Full training run. Writes into log_dir: data.yaml, net.yaml, train.yaml,
/// scalars.csv (step,loss,lr,miou,macc), best_iou/ and best_acc/ (each with
/// model.ckpt and metrics.yaml) and, when enabled, debug/epochNNN_<id>.png.
/// Validation runs before training (epoch 0) and after every epoch.
TrainLog fit(const StandardDataset& dataset, const NetConfig& net, const TrainConfig& train,
             const std::filesystem::path& log_dir);

}  // namespace bonnet
