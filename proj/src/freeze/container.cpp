// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstring>
#include <set>

#include "bonnet/binary.hpp"
#include "bonnet/freezer.hpp"
#include "bonnet/image.hpp"

namespace bonnet {

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::nchw:
      return "nchw";
    case Variant::nhwc:
      return "nhwc";
    case Variant::optimized:
      return "optimized";
    case Variant::quantized:
      return "quantized";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view text) {
  for (const auto v : {Variant::nchw, Variant::nhwc, Variant::optimized, Variant::quantized}) {
    if (to_string(v) == text) {
      return v;
    }
  }
  return std::nullopt;
}

std::string model_file_name(Variant variant) {
  return "model_" + std::string(to_string(variant)) + ".bnnf";
}

const GraphNode& FrozenModel::node(const std::string& name) const {
  for (const auto& n : graph) {
    if (n.name == name) {
      return n;
    }
  }
  throw InvalidArgument("model has no node named '" + name + "'");
}

bool FrozenModel::has_node(const std::string& name) const {
  return std::any_of(graph.begin(), graph.end(), [&](const GraphNode& n) { return n.name == name; });
}

bool FrozenModel::operator==(const FrozenModel& o) const {
  if (variant != o.variant || layout != o.layout || input != o.input || classes != o.classes ||
      nodes != o.nodes || graph != o.graph || weights.size() != o.weights.size()) {
    return false;
  }
  for (const auto& [name, t] : weights) {
    const auto it = o.weights.find(name);
    if (it == o.weights.end() || !t.bit_equal(it->second) || t.quant() != it->second.quant()) {
      return false;
    }
  }
  return true;
}

void FrozenModel::validate() const {
  std::set<std::string> known;
  for (const auto& [name, t] : weights) {
    known.insert(name);
    if (t.layout() != layout) {
      throw FormatError("weight '" + name + "' is not stored in the model layout");
    }
    if (variant == Variant::quantized ? t.dtype() != DType::i8 || !t.quant()
                                      : t.dtype() != DType::f32) {
      throw FormatError("weight '" + name + "' has dtype " + std::string(to_string(t.dtype())) +
                        " in a " + std::string(to_string(variant)) + " model");
    }
  }
  for (const auto& n : graph) {
    switch (n.spec.kind) {
      case OpKind::dropout:
      case OpKind::focal_loss:
      case OpKind::reduce_sum:
      case OpKind::square:
        throw FormatError("frozen model contains training op '" + n.name + "' (" +
                          std::string(to_string(n.spec.kind)) + ")");
      default:
        break;
    }
    if (n.spec.kind != OpKind::input) {
      for (const auto& in : n.inputs) {
        if (!known.contains(in)) {
          throw FormatError("node '" + n.name + "' reads unknown value '" + in + "'");
        }
      }
    }
    if (variant == Variant::quantized && n.spec.kind != OpKind::argmax && !n.spec.act_quant) {
      throw FormatError("quantized node '" + n.name + "' has no activation quantization");
    }
    if (!known.insert(n.name).second) {
      throw FormatError("duplicate model name '" + n.name + "'");
    }
  }
  for (const auto* name : {&nodes.input, &nodes.code, &nodes.logits, &nodes.softmax, &nodes.argmax}) {
    if (!has_node(*name)) {
      throw FormatError("named node '" + *name + "' is missing from the model");
    }
  }
  if (input.n != 1 || input.c != 3 || input.h < 1 || input.w < 1) {
    throw FormatError("invalid model input dims " + to_string(input));
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'B', 'N', 'N', 'F'};
constexpr std::uint32_t kVersion = 1;

enum Tag : std::uint8_t {
  tag_name = 1,
  tag_inputs = 2,
  tag_kernel = 3,
  tag_stride = 4,
  tag_dilation = 5,
  tag_padding = 6,
  tag_fused_relu = 7,
  tag_eps = 8,
  tag_decay = 9,
  tag_out_size = 10,
  tag_normalize = 11,
  tag_act_quant = 12,
  tag_role = 13,
};

enum Role : std::uint8_t {
  role_input = 1,
  role_code = 2,
  role_logits = 4,
  role_softmax = 8,
  role_argmax = 16,
};

void attr(ByteWriter& w, Tag tag, const ByteWriter& value) {
  w.u8(tag);
  w.u32(static_cast<std::uint32_t>(value.bytes().size()));
  w.raw(value.bytes().data(), value.bytes().size());
}

std::uint8_t roles_of(const std::string& name, const NodesConfig& n) {
  std::uint8_t r = 0;
  r |= name == n.input ? role_input : 0;
  r |= name == n.code ? role_code : 0;
  r |= name == n.logits ? role_logits : 0;
  r |= name == n.softmax ? role_softmax : 0;
  r |= name == n.argmax ? role_argmax : 0;
  return r;
}

void write_node(ByteWriter& w, const GraphNode& node, const NodesConfig& names) {
  const OpSpec& s = node.spec;
  w.u8(static_cast<std::uint8_t>(s.kind));
  std::vector<std::pair<Tag, ByteWriter>> attrs;
  auto add = [&](Tag tag) -> ByteWriter& { return attrs.emplace_back(tag, ByteWriter{}).second; };
  add(tag_name).raw(node.name.data(), node.name.size());
  {
    ByteWriter& v = add(tag_inputs);
    v.u32(static_cast<std::uint32_t>(node.inputs.size()));
    for (const auto& in : node.inputs) {
      v.str(in);
    }
  }
  switch (s.kind) {
    case OpKind::conv2d:
    case OpKind::transposed_conv2d:
    case OpKind::max_pool2d: {
      ByteWriter& k = add(tag_kernel);
      k.i32(s.kernel_h);
      k.i32(s.kernel_w);
      add(tag_stride).i32(s.stride);
      add(tag_dilation).i32(s.dilation);
      add(tag_padding).u8(static_cast<std::uint8_t>(s.padding));
      add(tag_fused_relu).u8(s.fused_relu ? 1 : 0);
      break;
    }
    case OpKind::add:
    case OpKind::scale_shift:
      add(tag_fused_relu).u8(s.fused_relu ? 1 : 0);
      break;
    case OpKind::batch_norm:
      add(tag_eps).f64(s.eps);
      add(tag_decay).f64(s.decay);
      break;
    case OpKind::resize_bilinear: {
      ByteWriter& o = add(tag_out_size);
      o.i32(s.out_h);
      o.i32(s.out_w);
      break;
    }
    case OpKind::input: {
      ByteWriter& o = add(tag_normalize);
      o.f64(s.norm_scale);
      o.f64(s.norm_mean);
      break;
    }
    default:
      break;
  }
  if (s.act_quant) {
    ByteWriter& q = add(tag_act_quant);
    q.f64(s.act_quant->scale);
    q.i32(s.act_quant->zero_point);
  }
  if (const auto r = roles_of(node.name, names); r != 0) {
    add(tag_role).u8(r);
  }
  w.u32(static_cast<std::uint32_t>(attrs.size()));
  for (const auto& [tag, value] : attrs) {
    attr(w, tag, value);
  }
}

GraphNode read_node(ByteReader& r, NodesConfig& names, std::uint8_t& seen_roles) {
  GraphNode node;
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(OpKind::focal_loss)) {
    throw UnsupportedOpError("model uses unknown op kind " + std::to_string(kind));
  }
  node.spec.kind = static_cast<OpKind>(kind);
  const std::uint32_t count = r.u32();
  std::uint8_t roles = 0;
  for (std::uint32_t a = 0; a < count; ++a) {
    const std::uint8_t tag = r.u8();
    const std::uint32_t len = r.u32();
    ByteReader v(r.take(len), "node attribute");
    switch (tag) {
      case tag_name: {
        const auto raw = v.take(len);
        node.name.assign(reinterpret_cast<const char*>(raw.data()), raw.size());
        break;
      }
      case tag_inputs:
        node.inputs.resize(v.u32());
        for (auto& in : node.inputs) {
          in = v.str();
        }
        break;
      case tag_kernel:
        node.spec.kernel_h = v.i32();
        node.spec.kernel_w = v.i32();
        break;
      case tag_stride:
        node.spec.stride = v.i32();
        break;
      case tag_dilation:
        node.spec.dilation = v.i32();
        break;
      case tag_padding: {
        const auto p = v.u8();
        if (p > static_cast<std::uint8_t>(Padding::valid)) {
          v.fail("unknown padding " + std::to_string(p));
        }
        node.spec.padding = static_cast<Padding>(p);
        break;
      }
      case tag_fused_relu:
        node.spec.fused_relu = v.u8() != 0;
        break;
      case tag_eps:
        node.spec.eps = v.f64();
        break;
      case tag_decay:
        node.spec.decay = v.f64();
        break;
      case tag_out_size:
        node.spec.out_h = v.i32();
        node.spec.out_w = v.i32();
        break;
      case tag_normalize:
        node.spec.norm_scale = v.f64();
        node.spec.norm_mean = v.f64();
        break;
      case tag_act_quant: {
        QuantParams q;
        q.scale = v.f64();
        q.zero_point = v.i32();
        node.spec.act_quant = q;
        break;
      }
      case tag_role:
        roles = v.u8();
        break;
      default:
        continue;  // unknown attributes are skipped
    }
    if (!v.done()) {
      v.fail("attribute " + std::to_string(tag) + " has trailing bytes");
    }
  }
  if (node.name.empty()) {
    r.fail("node without a name");
  }
  if ((roles & seen_roles) != 0) {
    r.fail("node role assigned twice");
  }
  seen_roles |= roles;
  if (roles & role_input) names.input = node.name;
  if (roles & role_code) names.code = node.name;
  if (roles & role_logits) names.logits = node.name;
  if (roles & role_softmax) names.softmax = node.name;
  if (roles & role_argmax) names.argmax = node.name;
  return node;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const FrozenModel& m) {
  m.validate();
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.u8(static_cast<std::uint8_t>(m.variant));
  w.u8(static_cast<std::uint8_t>(m.layout));
  for (const auto v : {m.input.n, m.input.c, m.input.h, m.input.w}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(static_cast<std::uint32_t>(m.classes.size()));
  for (const auto& c : m.classes) {
    w.u32(static_cast<std::uint32_t>(c.id));
    w.str(c.name);
    w.u8(c.color.r);
    w.u8(c.color.g);
    w.u8(c.color.b);
  }
  w.u32(static_cast<std::uint32_t>(m.graph.size()));
  for (const auto& node : m.graph) {
    write_node(w, node, m.nodes);
  }
  w.u32(static_cast<std::uint32_t>(m.weights.size()));
  for (const auto& [name, t] : m.weights) {
    w.tensor(name, t);
  }
  w.seal();
  return w.bytes();
}

FrozenModel deserialize_model(std::span<const std::uint8_t> bytes, const std::string& what) {
  ByteReader head(bytes, what);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    head.fail("not a frozen model (bad magic)");
  }
  head.take(4);
  if (const std::uint32_t v = head.u32(); v != kVersion) {
    throw VersionError(what + ": frozen model version " + std::to_string(v) +
                       " is not supported (expected " + std::to_string(kVersion) + ")");
  }
  ByteReader r(bytes, what);
  r.verify_crc();
  r.take(8);
  FrozenModel m;
  const std::uint8_t variant = r.u8();
  if (variant > static_cast<std::uint8_t>(Variant::quantized)) {
    r.fail("unknown variant " + std::to_string(variant));
  }
  m.variant = static_cast<Variant>(variant);
  const std::uint8_t layout = r.u8();
  if (layout > static_cast<std::uint8_t>(Layout::nhwc)) {
    r.fail("unknown layout " + std::to_string(layout));
  }
  m.layout = static_cast<Layout>(layout);
  m.input.n = r.u32();
  m.input.c = r.u32();
  m.input.h = r.u32();
  m.input.w = r.u32();
  m.classes.resize(r.u32());
  for (auto& c : m.classes) {
    c.id = static_cast<int>(r.u32());
    c.name = r.str();
    c.color.r = r.u8();
    c.color.g = r.u8();
    c.color.b = r.u8();
  }
  const std::uint32_t node_count = r.u32();
  std::uint8_t roles = 0;
  for (std::uint32_t i = 0; i < node_count; ++i) {
    m.graph.push_back(read_node(r, m.nodes, roles));
  }
  if (roles != (role_input | role_code | role_logits | role_softmax | role_argmax)) {
    r.fail("model does not name all of input, code, logits, softmax and argmax");
  }
  const std::uint32_t tensor_count = r.u32();
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    auto [name, t] = r.tensor(m.layout);
    if (!m.weights.emplace(std::move(name), std::move(t)).second) {
      r.fail("duplicate tensor name");
    }
  }
  if (!r.done()) {
    r.fail("trailing bytes");
  }
  try {
    m.validate();
  } catch (const FormatError& e) {
    throw FormatError(what + ": " + e.what());
  }
  return m;
}

void save_model(const FrozenModel& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

FrozenModel load_model(const std::filesystem::path& path) {
  return deserialize_model(read_file(path), path.string());
}

}  // namespace bonnet
