// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

// The four yaml files shared between training and deployment:
// data.yaml, net.yaml, train.yaml and nodes.yaml.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bonnet/error.hpp"

namespace bonnet {

class ConfigError : public Error {
 public:
  enum class Kind { missing_file, parse, invariant, unknown_key, io };

  ConfigError(Kind kind, std::string field, const std::string& message)
      : Error(message), kind_(kind), field_(std::move(field)) {}

  Kind kind() const { return kind_; }
  /// Offending key (dotted path), empty when not applicable.
  const std::string& field() const { return field_; }

 private:
  Kind kind_;
  std::string field_;
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Shortest text that reads back to exactly `v`.
std::string format_real(double v);

/// "#RRGGBB" (upper case).
std::string to_hex(Rgb color);
/// Accepts "#RRGGBB" in either case.
std::optional<Rgb> parse_hex(std::string_view text);

struct ClassInfo {
  int id = 0;
  std::string name;
  Rgb color;
  bool operator==(const ClassInfo&) const = default;
};

struct DataConfig {
  std::vector<ClassInfo> classes{{0, "background", {0, 0, 0}}, {1, "object", {255, 0, 0}}};
  int inference_width = 64;
  int inference_height = 64;
  std::string dataset_location = "dataset";
  double split_train = 0.7;
  double split_valid = 0.15;
  double split_test = 0.15;

  std::size_t class_count() const { return classes.size(); }
  void validate() const;
  bool operator==(const DataConfig&) const = default;
};

struct NetConfig {
  std::string architecture = "erfnet-mini";
  std::vector<int> layers_per_stage{0, 3, 2};
  std::vector<int> kernels_per_layer{16, 32, 16};
  double dropout_keep = 0.9;
  double bn_decay = 0.9;

  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

enum class OptimizerKind { sgd_momentum, adam_like };
enum class WeightingPolicy { none, inverse_frequency, log_inverse };
enum class Precision { f32, f64 };

std::string_view to_string(OptimizerKind kind);
std::string_view to_string(WeightingPolicy policy);
std::string_view to_string(Precision precision);

/// Sampling ranges for paired image/label augmentation. Every range must
/// contain the identity transform.
struct AugmentSpec {
  bool enabled = true;
  double flip_probability = 0.5;
  std::array<double, 2> rotation_degrees{0.0, 0.0};
  std::array<double, 2> shear{0.0, 0.0};
  std::array<double, 2> stretch{1.0, 1.0};
  std::array<double, 2> gamma{1.0, 1.0};

  static AugmentSpec identity();
  void validate() const;
  bool operator==(const AugmentSpec&) const = default;
};

struct TrainConfig {
  double learn_rate = 1e-3;
  double lr_decay = 0.98;
  int batch_size = 8;
  int num_workers = 1;
  std::vector<double> momentums{0.9, 0.999};
  OptimizerKind optimizer = OptimizerKind::adam_like;
  WeightingPolicy weighting_policy = WeightingPolicy::log_inverse;
  double focal_gamma = 0.0;
  int cache_images = 4;
  AugmentSpec augmentation;
  bool save_debug_images = false;
  std::optional<int> checkpoint_gradients;
  int epochs = 30;
  std::uint64_t seed = 0;
  Precision dtype = Precision::f32;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct NodesConfig {
  std::string input = "input";
  std::string code = "code";
  std::string logits = "logits";
  std::string softmax = "softmax";
  std::string argmax = "argmax";

  void validate() const;
  bool operator==(const NodesConfig&) const = default;
};

DataConfig load_data_config(const std::filesystem::path& path);
NetConfig load_net_config(const std::filesystem::path& path);
TrainConfig load_train_config(const std::filesystem::path& path);
NodesConfig load_nodes_config(const std::filesystem::path& path);

/// Validates before writing; a saved file always reloads to an equal value.
void save_config(const DataConfig& config, const std::filesystem::path& path);
void save_config(const NetConfig& config, const std::filesystem::path& path);
void save_config(const TrainConfig& config, const std::filesystem::path& path);
void save_config(const NodesConfig& config, const std::filesystem::path& path);

/// Parsers over in-memory yaml text, used by the loaders and by tests.
DataConfig parse_data_config(const std::string& yaml);
NetConfig parse_net_config(const std::string& yaml);
TrainConfig parse_train_config(const std::string& yaml);
NodesConfig parse_nodes_config(const std::string& yaml);

std::string emit_config(const DataConfig& config);
std::string emit_config(const NetConfig& config);
std::string emit_config(const TrainConfig& config);
std::string emit_config(const NodesConfig& config);

}  // namespace bonnet
