// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <spdlog/spdlog.h>

#include "bonnet/dataset.hpp"
#include "bonnet/freezer.hpp"
#include "bonnet/trainer.hpp"

namespace bonnet {

namespace fs = std::filesystem;

namespace {

std::vector<Tensor> calibration_batches(const StandardDataset& ds, const DataConfig& data,
                                        int limit) {
  std::vector<std::string> ids = ds.ids(Split::train);
  if (ids.empty()) {
    ids = ds.ids(Split::valid);
  }
  if (ids.size() > static_cast<std::size_t>(limit)) {
    ids.resize(static_cast<std::size_t>(limit));
  }
  const Split split = ds.ids(Split::train).empty() ? Split::valid : Split::train;
  std::vector<Tensor> batches;
  constexpr std::size_t kBatch = 8;
  for (std::size_t begin = 0; begin < ids.size(); begin += kBatch) {
    std::vector<Sample> samples;
    for (std::size_t i = begin; i < std::min(ids.size(), begin + kBatch); ++i) {
      samples.push_back(fit_to_size(load_sample(ds, split, ids[i]), data.inference_width,
                                    data.inference_height));
    }
    std::vector<const Sample*> ptrs;
    for (const auto& s : samples) {
      ptrs.push_back(&s);
    }
    batches.push_back(images_to_tensor(ptrs, DType::f32));
  }
  return batches;
}

}  // namespace

FreezeResult freeze(const fs::path& log_dir, const fs::path& out_dir,
                    const FreezeOptions& options) {
  const char* which = options.which == BestCheckpoint::iou ? "best_iou" : "best_acc";
  const fs::path ckpt_path = log_dir / which / "model.ckpt";
  if (!fs::exists(ckpt_path)) {
    throw FreezeError("no " + std::string(which) + " checkpoint in log directory " +
                      log_dir.string());
  }
  const DataConfig data = load_data_config(log_dir / "data.yaml");
  const NetConfig net = load_net_config(log_dir / "net.yaml");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  ModelGraph graph = cast_graph(restore_graph(net, ckpt), DType::f32);
  if (fs::exists(log_dir / "nodes.yaml")) {
    graph.names = load_nodes_config(log_dir / "nodes.yaml");
  }
  if (ckpt.step == 0) {
    for (const auto& n : graph.nodes) {
      if (n.spec.kind == OpKind::batch_norm) {
        throw FreezeError("checkpoint in " + log_dir.string() +
                          " was never trained; batch norm running statistics are unset");
      }
    }
  }

  const ModelGraph stripped = strip_training_ops(graph);
  const FrozenModel nchw = make_frozen(stripped, Variant::nchw, data);
  const FrozenModel nhwc = convert_model_layout(nchw, Layout::nhwc, Variant::nhwc);
  const FrozenModel optimized = make_frozen(optimize_graph(stripped), Variant::optimized, data);

  fs::path dataset_root = options.calibration_dataset;
  if (dataset_root.empty()) {
    dataset_root = data.dataset_location;
  }
  if (!fs::exists(dataset_root / "manifest.yaml")) {
    throw FreezeError("calibration dataset '" + dataset_root.string() +
                      "' is not an imported dataset");
  }
  const StandardDataset ds = open_dataset(dataset_root);
  const auto batches = calibration_batches(ds, data, options.calibration_samples);
  const FrozenModel quantized = quantize_model(optimized, batches);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  }
  FreezeResult result;
  for (const FrozenModel* m : {&nchw, &nhwc, &optimized, &quantized}) {
    const fs::path path = out_dir / model_file_name(m->variant);
    save_model(*m, path);
    result.models.push_back(path);
  }
  result.nodes = out_dir / "nodes.yaml";
  save_config(graph.names, result.nodes);
  save_config(data, out_dir / "data.yaml");
  save_config(net, out_dir / "net.yaml");
  spdlog::info("froze {} (step {}) into {}", ckpt_path.string(), ckpt.step, out_dir.string());
  return result;
}

}  // namespace bonnet
