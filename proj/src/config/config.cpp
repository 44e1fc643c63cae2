// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "bonnet/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace bonnet {

namespace {

using Kind = ConfigError::Kind;

[[noreturn]] void invariant(const std::string& field, const std::string& what) {
  throw ConfigError(Kind::invariant, field, field + ": " + what);
}


// Reads one yaml mapping, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class MapReader {
 public:
  MapReader(const YAML::Node& node, std::string prefix) : node_(node), prefix_(std::move(prefix)) {
    if (!node_.IsMap()) {
      throw ConfigError(Kind::parse, prefix_.empty() ? "<root>" : prefix_,
                        (prefix_.empty() ? std::string("document") : prefix_) +
                            ": expected a mapping");
    }
  }

  std::string path(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

  YAML::Node get(const std::string& key) {
    seen_.insert(key);
    return node_[key];
  }

  bool has(const std::string& key) const { return static_cast<bool>(node_[key]); }

  template <class T>
  void read(const std::string& key, T& out) {
    const YAML::Node n = get(key);
    if (!n) {
      return;
    }
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(Kind::parse, path(key), path(key) + ": cannot read value '" +
                                                    YAML::Dump(n) + "'");
    }
  }

  template <class T>
  void read_enum(const std::string& key, T& out,
                 std::initializer_list<std::pair<std::string_view, T>> names) {
    std::string text;
    if (!has(key)) {
      seen_.insert(key);
      return;
    }
    read(key, text);
    for (const auto& [name, value] : names) {
      if (name == text) {
        out = value;
        return;
      }
    }
    throw ConfigError(Kind::invariant, path(key), path(key) + ": unknown value '" + text + "'");
  }

  void finish() const {
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.contains(key)) {
        throw ConfigError(Kind::unknown_key, path(key), "unknown key '" + path(key) + "'");
      }
    }
  }

 private:
  YAML::Node node_;
  std::string prefix_;
  std::set<std::string> seen_;
};

YAML::Node parse_root(const std::string& text) {
  try {
    YAML::Node root = YAML::Load(text);
    if (!root || root.IsNull()) {
      return YAML::Node(YAML::NodeType::Map);
    }
    return root;
  } catch (const YAML::ParserException& e) {
    throw ConfigError(Kind::parse, "", std::string("yaml parse error: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError(Kind::missing_file, "", "cannot open config file " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) {
    throw ConfigError(Kind::io, "", "cannot write config file " + path.string());
  }
}

template <class Config, class Parser>
Config load_with_context(const std::filesystem::path& path, Parser parse) {
  const std::string text = read_file(path);
  try {
    return parse(text);
  } catch (const ConfigError& e) {
    throw ConfigError(e.kind(), e.field(), path.string() + ": " + e.what());
  }
}

YAML::Emitter& emit_real(YAML::Emitter& out, double v) {
  return out << format_real(v);
}

void emit_range(YAML::Emitter& out, const char* key, const std::array<double, 2>& r) {
  out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
  emit_real(out, r[0]);
  emit_real(out, r[1]);
  out << YAML::EndSeq;
}

std::array<double, 2> read_range(MapReader& m, const std::string& key, std::array<double, 2> fallback) {
  std::vector<double> v;
  if (!m.has(key)) {
    m.get(key);
    return fallback;
  }
  m.read(key, v);
  if (v.size() != 2) {
    invariant(m.path(key), "expected [min, max]");
  }
  return {v[0], v[1]};
}

void check_range_has(const std::string& field, const std::array<double, 2>& r, double identity) {
  if (!std::isfinite(r[0]) || !std::isfinite(r[1]) || r[0] > identity || r[1] < identity) {
    invariant(field, "range must contain " + format_real(identity));
  }
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, r.ptr);
  // Keep reals recognisable as reals when read back by other tools.
  if (s.find_first_of(".eEn") == std::string::npos) {
    s += ".0";
  }
  return s;
}

std::string to_hex(Rgb c) {
  static constexpr char kDigits[] = "0123456789ABCDEF";
  std::string s = "#";
  for (const std::uint8_t v : {c.r, c.g, c.b}) {
    s += kDigits[v >> 4];
    s += kDigits[v & 15];
  }
  return s;
}

std::optional<Rgb> parse_hex(std::string_view text) {
  if (text.size() != 7 || text[0] != '#') {
    return std::nullopt;
  }
  std::uint8_t v[3];
  for (int i = 0; i < 3; ++i) {
    const char* first = text.data() + 1 + 2 * i;
    const auto r = std::from_chars(first, first + 2, v[i], 16);
    if (r.ec != std::errc{} || r.ptr != first + 2) {
      return std::nullopt;
    }
  }
  return Rgb{v[0], v[1], v[2]};
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam_like ? "adam_like" : "sgd_momentum";
}

std::string_view to_string(WeightingPolicy policy) {
  switch (policy) {
    case WeightingPolicy::none:
      return "none";
    case WeightingPolicy::inverse_frequency:
      return "inverse_frequency";
    case WeightingPolicy::log_inverse:
      return "log_inverse";
  }
  return "none";
}

std::string_view to_string(Precision precision) {
  return precision == Precision::f64 ? "float64" : "float32";
}

// ---------------------------------------------------------------------------
// validation

void DataConfig::validate() const {
  if (classes.empty()) {
    invariant("classes", "at least one class is required");
  }
  std::set<std::tuple<int, int, int>> colors;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& c = classes[i];
    if (c.id != static_cast<int>(i)) {
      invariant("classes", "ids must be dense from 0 in order; entry " + std::to_string(i) +
                               " has id " + std::to_string(c.id));
    }
    if (c.name.empty()) {
      invariant("classes", "class " + std::to_string(c.id) + " has an empty name");
    }
    if (!colors.insert({c.color.r, c.color.g, c.color.b}).second) {
      invariant("classes", "color " + to_hex(c.color) + " is used twice");
    }
  }
  if (inference_width < 1) {
    invariant("inference_size.width", "must be >= 1");
  }
  if (inference_height < 1) {
    invariant("inference_size.height", "must be >= 1");
  }
  for (const auto& [name, f] : {std::pair{"split.train", split_train},
                                {"split.valid", split_valid},
                                {"split.test", split_test}}) {
    if (!(f >= 0.0 && f <= 1.0)) {
      invariant(name, "fraction must lie in [0, 1]");
    }
  }
  if (std::abs(split_train + split_valid + split_test - 1.0) > 1e-9) {
    invariant("split", "fractions must sum to 1");
  }
}

void NetConfig::validate() const {
  if (architecture.empty()) {
    invariant("architecture", "must name a registered architecture");
  }
  if (kernels_per_layer.empty()) {
    invariant("kernels_per_layer", "must list one count per stage");
  }
  if (kernels_per_layer.size() != layers_per_stage.size()) {
    invariant("kernels_per_layer", "length " + std::to_string(kernels_per_layer.size()) +
                                       " differs from layers_per_stage length " +
                                       std::to_string(layers_per_stage.size()));
  }
  for (const int k : kernels_per_layer) {
    if (k < 1) {
      invariant("kernels_per_layer", "counts must be >= 1");
    }
  }
  for (const int l : layers_per_stage) {
    if (l < 0) {
      invariant("layers_per_stage", "counts must be >= 0");
    }
  }
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    invariant("dropout_keep", "must lie in (0, 1]");
  }
  if (!(bn_decay >= 0.0 && bn_decay < 1.0)) {
    invariant("bn_decay", "must lie in [0, 1)");
  }
}

AugmentSpec AugmentSpec::identity() {
  AugmentSpec s;
  s.flip_probability = 0.0;
  return s;
}

void AugmentSpec::validate() const {
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    invariant("augmentation.flip_probability", "must lie in [0, 1]");
  }
  check_range_has("augmentation.rotation_degrees", rotation_degrees, 0.0);
  check_range_has("augmentation.shear", shear, 0.0);
  check_range_has("augmentation.stretch", stretch, 1.0);
  check_range_has("augmentation.gamma", gamma, 1.0);
  if (!(stretch[0] > 0.0)) {
    invariant("augmentation.stretch", "must be positive");
  }
  if (!(gamma[0] > 0.0)) {
    invariant("augmentation.gamma", "must be positive");
  }
}

void TrainConfig::validate() const {
  if (!(learn_rate > 0.0) || !std::isfinite(learn_rate)) {
    invariant("learn_rate", "must be positive");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
    invariant("lr_decay", "must lie in (0, 1]");
  }
  if (batch_size < 1) {
    invariant("batch_size", "must be >= 1");
  }
  if (num_workers < 1) {
    invariant("num_workers", "must be >= 1");
  }
  const std::size_t want = optimizer == OptimizerKind::adam_like ? 2 : 1;
  if (momentums.size() != want) {
    invariant("momentums", std::string(to_string(optimizer)) + " requires " +
                               std::to_string(want) + " momentum value(s), got " +
                               std::to_string(momentums.size()));
  }
  for (const double m : momentums) {
    if (!(m >= 0.0 && m < 1.0)) {
      invariant("momentums", "values must lie in [0, 1)");
    }
  }
  if (!(focal_gamma >= 0.0) || !std::isfinite(focal_gamma)) {
    invariant("focal_gamma", "must be >= 0");
  }
  if (cache_images < 1) {
    invariant("cache_images", "must be >= 1");
  }
  augmentation.validate();
  if (checkpoint_gradients && *checkpoint_gradients < 1) {
    invariant("checkpoint_gradients", "segment size must be >= 1");
  }
  if (epochs < 1) {
    invariant("epochs", "must be >= 1");
  }
}

void NodesConfig::validate() const {
  std::set<std::string> seen;
  for (const auto& [key, value] : {std::pair<const char*, const std::string&>{"input", input},
                                   {"code", code},
                                   {"logits", logits},
                                   {"softmax", softmax},
                                   {"argmax", argmax}}) {
    if (value.empty()) {
      invariant(key, "node name must not be empty");
    }
    if (!seen.insert(value).second) {
      invariant(key, "node name '" + value + "' is used twice");
    }
  }
}

// ---------------------------------------------------------------------------
// parsing

DataConfig parse_data_config(const std::string& yaml) {
  MapReader m(parse_root(yaml), "");
  DataConfig c;
  if (const YAML::Node classes = m.get("classes")) {
    if (!classes.IsSequence()) {
      throw ConfigError(Kind::parse, "classes", "classes: expected a list");
    }
    c.classes.clear();
    for (std::size_t i = 0; i < classes.size(); ++i) {
      MapReader e(classes[i], "classes[" + std::to_string(i) + "]");
      ClassInfo info;
      info.id = -1;
      std::string color;
      e.read("id", info.id);
      e.read("name", info.name);
      e.read("color", color);
      e.finish();
      const auto rgb = parse_hex(color);
      if (!rgb) {
        invariant(e.path("color"), "expected \"#RRGGBB\", got '" + color + "'");
      }
      info.color = *rgb;
      c.classes.push_back(std::move(info));
    }
  }
  if (const YAML::Node size = m.get("inference_size")) {
    MapReader s(size, "inference_size");
    s.read("width", c.inference_width);
    s.read("height", c.inference_height);
    s.finish();
  }
  m.read("dataset_location", c.dataset_location);
  if (const YAML::Node split = m.get("split")) {
    MapReader s(split, "split");
    s.read("train", c.split_train);
    s.read("valid", c.split_valid);
    s.read("test", c.split_test);
    s.finish();
  }
  m.finish();
  c.validate();
  return c;
}

NetConfig parse_net_config(const std::string& yaml) {
  MapReader m(parse_root(yaml), "");
  NetConfig c;
  m.read("architecture", c.architecture);
  m.read("layers_per_stage", c.layers_per_stage);
  m.read("kernels_per_layer", c.kernels_per_layer);
  m.read("dropout_keep", c.dropout_keep);
  m.read("bn_decay", c.bn_decay);
  m.finish();
  c.validate();
  return c;
}

TrainConfig parse_train_config(const std::string& yaml) {
  MapReader m(parse_root(yaml), "");
  TrainConfig c;
  m.read("learn_rate", c.learn_rate);
  m.read("lr_decay", c.lr_decay);
  m.read("batch_size", c.batch_size);
  m.read("num_workers", c.num_workers);
  m.read("momentums", c.momentums);
  m.read_enum("optimizer", c.optimizer,
              {{"sgd_momentum", OptimizerKind::sgd_momentum},
               {"adam_like", OptimizerKind::adam_like}});
  m.read_enum("weighting_policy", c.weighting_policy,
              {{"none", WeightingPolicy::none},
               {"inverse_frequency", WeightingPolicy::inverse_frequency},
               {"log_inverse", WeightingPolicy::log_inverse}});
  m.read("focal_gamma", c.focal_gamma);
  m.read("cache_images", c.cache_images);
  if (const YAML::Node aug = m.get("augmentation")) {
    MapReader a(aug, "augmentation");
    AugmentSpec& s = c.augmentation;
    a.read("enabled", s.enabled);
    a.read("flip_probability", s.flip_probability);
    s.rotation_degrees = read_range(a, "rotation_degrees", s.rotation_degrees);
    s.shear = read_range(a, "shear", s.shear);
    s.stretch = read_range(a, "stretch", s.stretch);
    s.gamma = read_range(a, "gamma", s.gamma);
    a.finish();
  }
  m.read("save_debug_images", c.save_debug_images);
  if (const YAML::Node cg = m.get("checkpoint_gradients"); cg && !cg.IsNull()) {
    int v = 0;
    m.read("checkpoint_gradients", v);
    c.checkpoint_gradients = v;
  }
  m.read("epochs", c.epochs);
  m.read("seed", c.seed);
  m.read_enum("dtype", c.dtype, {{"float32", Precision::f32}, {"float64", Precision::f64}});
  m.finish();
  c.validate();
  return c;
}

NodesConfig parse_nodes_config(const std::string& yaml) {
  MapReader m(parse_root(yaml), "");
  NodesConfig c;
  m.read("input", c.input);
  m.read("code", c.code);
  m.read("logits", c.logits);
  m.read("softmax", c.softmax);
  m.read("argmax", c.argmax);
  m.finish();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// emission

std::string emit_config(const DataConfig& c) {
  c.validate();
  YAML::Emitter out;
  out.SetOutputCharset(YAML::EmitNonAscii);
  out << YAML::BeginMap;
  out << YAML::Key << "classes" << YAML::Value << YAML::BeginSeq;
  for (const auto& cls : c.classes) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << cls.id;
    out << YAML::Key << "name" << YAML::Value << YAML::DoubleQuoted << cls.name;
    out << YAML::Key << "color" << YAML::Value << YAML::DoubleQuoted << to_hex(cls.color);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "inference_size" << YAML::Value << YAML::Flow << YAML::BeginMap
      << YAML::Key << "width" << YAML::Value << c.inference_width << YAML::Key << "height"
      << YAML::Value << c.inference_height << YAML::EndMap;
  out << YAML::Key << "dataset_location" << YAML::Value << YAML::DoubleQuoted
      << c.dataset_location;
  out << YAML::Key << "split" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "train" << YAML::Value;
  emit_real(out, c.split_train);
  out << YAML::Key << "valid" << YAML::Value;
  emit_real(out, c.split_valid);
  out << YAML::Key << "test" << YAML::Value;
  emit_real(out, c.split_test);
  out << YAML::EndMap << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string emit_config(const NetConfig& c) {
  c.validate();
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "architecture" << YAML::Value << c.architecture;
  out << YAML::Key << "layers_per_stage" << YAML::Value << YAML::Flow << c.layers_per_stage;
  out << YAML::Key << "kernels_per_layer" << YAML::Value << YAML::Flow << c.kernels_per_layer;
  out << YAML::Key << "dropout_keep" << YAML::Value;
  emit_real(out, c.dropout_keep);
  out << YAML::Key << "bn_decay" << YAML::Value;
  emit_real(out, c.bn_decay);
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string emit_config(const TrainConfig& c) {
  c.validate();
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "learn_rate" << YAML::Value;
  emit_real(out, c.learn_rate);
  out << YAML::Key << "lr_decay" << YAML::Value;
  emit_real(out, c.lr_decay);
  out << YAML::Key << "batch_size" << YAML::Value << c.batch_size;
  out << YAML::Key << "num_workers" << YAML::Value << c.num_workers;
  out << YAML::Key << "momentums" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const double m : c.momentums) {
    emit_real(out, m);
  }
  out << YAML::EndSeq;
  out << YAML::Key << "optimizer" << YAML::Value << std::string(to_string(c.optimizer));
  out << YAML::Key << "weighting_policy" << YAML::Value
      << std::string(to_string(c.weighting_policy));
  out << YAML::Key << "focal_gamma" << YAML::Value;
  emit_real(out, c.focal_gamma);
  out << YAML::Key << "cache_images" << YAML::Value << c.cache_images;
  out << YAML::Key << "augmentation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "enabled" << YAML::Value << c.augmentation.enabled;
  out << YAML::Key << "flip_probability" << YAML::Value;
  emit_real(out, c.augmentation.flip_probability);
  emit_range(out, "rotation_degrees", c.augmentation.rotation_degrees);
  emit_range(out, "shear", c.augmentation.shear);
  emit_range(out, "stretch", c.augmentation.stretch);
  emit_range(out, "gamma", c.augmentation.gamma);
  out << YAML::EndMap;
  out << YAML::Key << "save_debug_images" << YAML::Value << c.save_debug_images;
  out << YAML::Key << "checkpoint_gradients" << YAML::Value;
  if (c.checkpoint_gradients) {
    out << *c.checkpoint_gradients;
  } else {
    out << YAML::Null;
  }
  out << YAML::Key << "epochs" << YAML::Value << c.epochs;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "dtype" << YAML::Value << std::string(to_string(c.dtype));
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string emit_config(const NodesConfig& c) {
  c.validate();
  YAML::Emitter out;
  out.SetOutputCharset(YAML::EmitNonAscii);
  out << YAML::BeginMap;
  out << YAML::Key << "input" << YAML::Value << c.input;
  out << YAML::Key << "code" << YAML::Value << c.code;
  out << YAML::Key << "logits" << YAML::Value << c.logits;
  out << YAML::Key << "softmax" << YAML::Value << c.softmax;
  out << YAML::Key << "argmax" << YAML::Value << c.argmax;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

DataConfig load_data_config(const std::filesystem::path& path) {
  return load_with_context<DataConfig>(path, parse_data_config);
}
NetConfig load_net_config(const std::filesystem::path& path) {
  return load_with_context<NetConfig>(path, parse_net_config);
}
TrainConfig load_train_config(const std::filesystem::path& path) {
  return load_with_context<TrainConfig>(path, parse_train_config);
}
NodesConfig load_nodes_config(const std::filesystem::path& path) {
  return load_with_context<NodesConfig>(path, parse_nodes_config);
}

void save_config(const DataConfig& c, const std::filesystem::path& path) {
  write_file(path, emit_config(c));
}
void save_config(const NetConfig& c, const std::filesystem::path& path) {
  write_file(path, emit_config(c));
}
void save_config(const TrainConfig& c, const std::filesystem::path& path) {
  write_file(path, emit_config(c));
}
void save_config(const NodesConfig& c, const std::filesystem::path& path) {
  write_file(path, emit_config(c));
}

}  // namespace bonnet
