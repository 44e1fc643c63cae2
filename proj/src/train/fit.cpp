// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include "bonnet/colorize.hpp"
#include "bonnet/trainer.hpp"

namespace bonnet {

namespace {

constexpr int kDebugSamples = 4;

using MaskSink = std::function<void(const Sample&, const Image& mask)>;

ConfusionMatrix confusion(const ModelGraph& graph, const StandardDataset& dataset, Split split,
                          int batch_size, const MaskSink& sink) {
  if (batch_size <= 0) {
    throw InvalidArgument("evaluation batch size must be positive");
  }
  const DType dtype =
      graph.parameters.empty() ? DType::f32 : graph.parameters.begin()->second.dtype();
  const int w = dataset.data.inference_width;
  const int h = dataset.data.inference_height;
  ConfusionMatrix cm(graph.classes);
  const auto& ids = dataset.ids(split);
  for (std::size_t begin = 0; begin < ids.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(ids.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<Sample> samples;
    for (std::size_t i = begin; i < end; ++i) {
      samples.push_back(fit_to_size(load_sample(dataset, split, ids[i]), w, h));
    }
    std::vector<const Sample*> ptrs;
    for (const auto& s : samples) {
      ptrs.push_back(&s);
    }
    const TensorMap out = run_graph(graph, images_to_tensor(ptrs, dtype), {Mode::infer, 0, 1},
                                    {graph.names.argmax});
    const Tensor& mask = out.at(graph.names.argmax);
    const auto plane = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    for (std::size_t n = 0; n < samples.size(); ++n) {
      Image m(w, h, 1);
      for (std::size_t i = 0; i < plane; ++i) {
        m.pixels[i] = static_cast<std::uint8_t>(mask.flat(n * plane + i));
      }
      cm.update(std::span<const std::uint8_t>(m.pixels), samples[n].label.pixels);
      if (sink) {
        sink(samples[n], m);
      }
    }
  }
  return cm;
}

std::string optional_real(const std::optional<double>& v) {
  return v ? format_real(*v) : std::string();
}

void write_metrics(const Metrics& m, int epoch, std::int64_t step,
                   const std::vector<ClassInfo>& classes, const std::filesystem::path& path) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "epoch" << YAML::Value << epoch;
  out << YAML::Key << "step" << YAML::Value << step;
  out << YAML::Key << "miou" << YAML::Value << optional_real(m.miou);
  out << YAML::Key << "macc" << YAML::Value << optional_real(m.macc);
  out << YAML::Key << "classes" << YAML::Value << YAML::BeginSeq;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << classes[c].name;
    out << YAML::Key << "iou" << YAML::Value << optional_real(m.iou[c]);
    out << YAML::Key << "accuracy" << YAML::Value << optional_real(m.accuracy[c]);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  std::ofstream f(path);
  f << out.c_str() << '\n';
  if (!f) {
    throw IoError("cannot write " + path.string());
  }
}

}  // namespace

Metrics evaluate(const ModelGraph& graph, const StandardDataset& dataset, Split split,
                 int batch_size) {
  return metrics(confusion(graph, dataset, split, batch_size, {}));
}

TrainLog fit(const StandardDataset& dataset, const NetConfig& net, const TrainConfig& train,
             const std::filesystem::path& log_dir) {
  net.validate();
  train.validate();
  std::error_code ec;
  std::filesystem::create_directories(log_dir, ec);
  if (ec) {
    throw IoError("cannot create log directory " + log_dir.string() + ": " + ec.message());
  }

  const int classes = static_cast<int>(dataset.data.class_count());
  const LossSpec loss{class_weights(dataset.frequencies, train.weighting_policy),
                      train.focal_gamma};
  Trainer trainer(build_architecture(net, classes, hash_seed(train.seed, fnv1a("init"))), train,
                  loss);
  save_config(dataset.data, log_dir / "data.yaml");
  save_config(net, log_dir / "net.yaml");
  save_config(train, log_dir / "train.yaml");
  save_config(trainer.graph().names, log_dir / "nodes.yaml");

  std::ofstream csv(log_dir / "scalars.csv");
  if (!csv) {
    throw IoError("cannot write " + (log_dir / "scalars.csv").string());
  }
  csv << "step,loss,lr,miou,macc\n";

  TrainLog log;
  const int width = dataset.data.inference_width;
  const int height = dataset.data.inference_height;
  const std::uint64_t data_seed = hash_seed(train.seed, fnv1a("data"));
  double lr = train.learn_rate;

  auto validate = [&](int epoch) {
    int dumped = 0;
    MaskSink sink;
    if (train.save_debug_images) {
      std::filesystem::create_directories(log_dir / "debug");
      sink = [&](const Sample& s, const Image& mask) {
        if (dumped >= kDebugSamples) {
          return;
        }
        ++dumped;
        const auto path = log_dir / "debug" / fmt::format("epoch{:03d}_{}.png", epoch, s.id);
        write_png(colorize(mask, dataset.data.classes, &s.image, 0.5), path);
        log.debug_images.push_back(path);
      };
    }
    const Metrics m = metrics(confusion(trainer.graph(), dataset, Split::valid,
                                        train.batch_size, sink));
    log.validations.push_back({epoch, trainer.steps_done(), lr, m.miou, m.macc});
    csv << trainer.steps_done() << ",," << format_real(lr) << ',' << optional_real(m.miou) << ','
        << optional_real(m.macc) << '\n'
        << std::flush;
    spdlog::info("epoch {} step {}: miou {} macc {}", epoch, trainer.steps_done(),
                 m.miou ? fmt::format("{:.4f}", *m.miou) : "n/a",
                 m.macc ? fmt::format("{:.4f}", *m.macc) : "n/a");

    auto keep_best = [&](const std::optional<double>& value, std::optional<double>& best,
                         const char* dir) {
      if (!value || trainer.steps_done() == 0 || (best && *value <= *best)) {
        return;
      }
      best = value;
      const auto out = log_dir / dir;
      std::filesystem::create_directories(out);
      save_checkpoint(trainer.checkpoint(epoch), out / "model.ckpt");
      write_metrics(m, epoch, trainer.steps_done(), dataset.data.classes, out / "metrics.yaml");
      log.checkpoints.push_back(out / "model.ckpt");
    };
    keep_best(m.miou, log.best_miou, "best_iou");
    keep_best(m.macc, log.best_macc, "best_acc");
  };

  validate(0);
  BatchStream::Options options;
  options.batch_size = train.batch_size;
  options.capacity = train.cache_images;
  options.augment = train.augmentation;
  options.seed = data_seed;
  options.shuffle = true;
  for (int epoch = 1; epoch <= train.epochs; ++epoch) {
    trainer.set_learn_rate(lr);
    options.epoch = epoch;
    BatchStream stream(
        dataset.ids(Split::train),
        [&](const std::string& id) {
          return fit_to_size(load_sample(dataset, Split::train, id), width, height);
        },
        options);
    while (auto batch = stream.next()) {
      std::vector<const Sample*> ptrs;
      for (const auto& s : batch->samples) {
        ptrs.push_back(&s);
      }
      const auto r = trainer.step(ptrs);
      log.steps.push_back({r.step, r.loss, lr});
      csv << r.step << ',' << format_real(r.loss) << ',' << format_real(lr) << ",,\n";
      spdlog::debug("step {} loss {:.6f}", r.step, r.loss);
    }
    validate(epoch);
    lr *= train.lr_decay;
  }
  csv.flush();
  if (!csv) {
    throw IoError("cannot write " + (log_dir / "scalars.csv").string());
  }
  return log;
}

}  // namespace bonnet
