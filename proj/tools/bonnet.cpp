// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <csignal>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <pthread.h>
#include <spdlog/spdlog.h>

#include "bonnet/dataset.hpp"
#include "bonnet/freezer.hpp"
#include "bonnet/runtime.hpp"
#include "bonnet/service.hpp"
#include "bonnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace bonnet;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void setup_logging() {
  const char* env = std::getenv("BONNET_LOG");
  const std::string level = env != nullptr ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
}

Variant variant_arg(const std::string& s) {
  if (const auto v = parse_variant(s)) {
    return *v;
  }
  throw UsageError("unknown variant '" + s + "' (nchw, nhwc, optimized, quantized)");
}

Backend backend_arg(const std::string& s) {
  if (const auto b = parse_backend(s)) {
    return *b;
  }
  throw UsageError("unknown backend '" + s + "' (reference_float, quantized_int8)");
}

Device device_arg(const std::string& s) {
  if (const auto d = parse_device(s)) {
    return *d;
  }
  throw UsageError("unknown device '" + s + "' (cpu_single, cpu_parallel)");
}

// A dataset root, or a data.yaml whose dataset_location is one.
StandardDataset dataset_arg(const fs::path& path) {
  if (fs::is_directory(path)) {
    return open_dataset(path);
  }
  const DataConfig data = load_data_config(path);
  StandardDataset ds = open_dataset(data.dataset_location);
  ds.data = data;
  return ds;
}

struct Options {
  // dataset import
  fs::path images, labels, data, out;
  std::uint64_t seed = 0;
  // gen-toy
  int count = 200;
  int size = 64;
  // train
  fs::path net, train, log;
  std::optional<std::uint64_t> train_seed;
  // freeze
  std::string which = "iou";
  fs::path calibration;
  // infer / serve
  fs::path model, input, out_mask, out_overlay, input_dir, out_dir;
  std::string variant = "optimized";
  std::string backend = "reference_float";
  std::string device = "cpu_single";
  double alpha = 0.5;
  int port = 8080;
  std::string bind = "127.0.0.1";
  std::size_t max_body = 16u << 20;
  int concurrency = 4;
  // config randomize
  fs::path base;
};

int cmd_import(const Options& o) {
  const StandardDataset ds =
      import_dataset(o.images, o.labels, load_data_config(o.data), o.seed, o.out);
  fmt::print("imported into {}\n", o.out.string());
  for (int s = 0; s < 3; ++s) {
    const auto split = static_cast<Split>(s);
    fmt::print("  {:<5} {}\n", to_string(split), ds.ids(split).size());
  }
  for (std::size_t c = 0; c < ds.frequencies.size(); ++c) {
    fmt::print("  class {} ({}): {:.4f}\n", c, ds.data.classes[c].name, ds.frequencies[c]);
  }
  return 0;
}

int cmd_gen_toy(const Options& o) {
  if (o.count < 1 || o.size < 8) {
    throw UsageError("--count must be >= 1 and --size >= 8");
  }
  generate_toy_dataset(o.out, o.count, o.size, o.seed);
  fmt::print("wrote {} samples of {}x{} into {}\n", o.count, o.size, o.size, o.out.string());
  return 0;
}

int cmd_train(const Options& o) {
  const StandardDataset ds = dataset_arg(o.data);
  TrainConfig train = load_train_config(o.train);
  if (o.train_seed) {
    train.seed = *o.train_seed;
  }
  const TrainLog log = fit(ds, load_net_config(o.net), train, o.log);
  fmt::print("trained {} steps; best miou {}, best macc {}\n", log.steps.size(),
             log.best_miou ? fmt::format("{:.4f}", *log.best_miou) : "n/a",
             log.best_macc ? fmt::format("{:.4f}", *log.best_macc) : "n/a");
  return 0;
}

int cmd_freeze(const Options& o) {
  FreezeOptions opts;
  if (o.which == "iou") {
    opts.which = BestCheckpoint::iou;
  } else if (o.which == "acc") {
    opts.which = BestCheckpoint::acc;
  } else {
    throw UsageError("--which must be iou or acc");
  }
  opts.calibration_dataset = o.calibration;
  const FreezeResult r = freeze(o.log, o.out, opts);
  for (const auto& p : r.models) {
    fmt::print("wrote {}\n", p.string());
  }
  fmt::print("wrote {}\n", r.nodes.string());
  return 0;
}

int cmd_infer_image(const Options& o) {
  if (!(o.alpha >= 0.0 && o.alpha <= 1.0)) {
    throw UsageError("--alpha must be in [0, 1]");
  }
  const Session s =
      open_session(o.model, variant_arg(o.variant), backend_arg(o.backend), device_arg(o.device));
  const Image image = read_image(o.input);
  const Mask mask = s.infer(image);
  write_file(o.out_mask, encode_mask(mask));
  if (!o.out_overlay.empty()) {
    write_png(render_overlay(s, mask, &image, o.alpha), o.out_overlay);
  }
  fmt::print("preprocess {:.3f} ms, inference {:.3f} ms, postprocess {:.3f} ms\n",
             mask.timing.preprocess_ms, mask.timing.inference_ms, mask.timing.postprocess_ms);
  return 0;
}

int cmd_infer_seq(const Options& o) {
  const Session s =
      open_session(o.model, variant_arg(o.variant), backend_arg(o.backend), device_arg(o.device));
  std::vector<fs::path> frames;
  for (const auto& e : fs::directory_iterator(o.input_dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg" ||
                                ext == ".PNG" || ext == ".JPG" || ext == ".JPEG")) {
      frames.push_back(e.path());
    }
  }
  std::sort(frames.begin(), frames.end());
  if (frames.empty()) {
    throw Error("no frames in " + o.input_dir.string());
  }
  fs::create_directories(o.out_dir);
  StageTiming sum;
  for (const auto& f : frames) {
    const Mask mask = s.infer(read_image(f));
    fs::path out = o.out_dir / f.filename();
    out.replace_extension(".png");
    write_file(out, encode_mask(mask));
    sum.preprocess_ms += mask.timing.preprocess_ms;
    sum.inference_ms += mask.timing.inference_ms;
    sum.postprocess_ms += mask.timing.postprocess_ms;
  }
  const double n = static_cast<double>(frames.size());
  fmt::print("{} frames; mean preprocess {:.3f} ms, inference {:.3f} ms, postprocess {:.3f} ms\n",
             frames.size(), sum.preprocess_ms / n, sum.inference_ms / n, sum.postprocess_ms / n);
  return 0;
}

int cmd_serve(const Options& o) {
  ServeConfig c;
  c.model_dir = o.model;
  c.variant = variant_arg(o.variant);
  c.backend = backend_arg(o.backend);
  c.device = device_arg(o.device);
  c.bind = o.bind;
  c.port = o.port;
  c.max_body_bytes = o.max_body;
  c.concurrency = o.concurrency;
  if (c.port < 1 || c.port > 65535) {
    throw UsageError("--port must be in [1, 65535]");
  }
  if (c.max_body_bytes < (1u << 20)) {
    throw UsageError("--max-body must be at least 1 MiB");
  }

  // Termination signals are taken by a dedicated thread so the server can
  // stop gracefully outside signal context.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  InferenceService service(c);
  service.bind();
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {} received, shutting down", sig);
    service.stop();
  });
  service.run();
  if (waiter.joinable()) {
    // run() only returns after stop(); wake the waiter if it is still blocked.
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  }
  return 0;
}

int cmd_randomize(const Options& o) {
  TrainConfig t = o.base.empty() ? TrainConfig{} : load_train_config(o.base);
  Rng rng(hash_seed(o.seed, fnv1a("randomize")));
  t.learn_rate = std::pow(10.0, rng.uniform(-4.0, -2.0));
  t.lr_decay = rng.uniform(0.9, 1.0);
  const int sizes[] = {4, 8, 16};
  t.batch_size = sizes[rng.below(3)];
  t.focal_gamma = static_cast<double>(rng.below(3));
  t.seed = rng.next();
  save_config(t, o.out);
  fmt::print("wrote {} (learn_rate {:.3g}, lr_decay {:.3f}, batch_size {}, focal_gamma {})\n",
             o.out.string(), t.learn_rate, t.lr_decay, t.batch_size, t.focal_gamma);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Semantic segmentation training and deployment toolkit"};
  app.require_subcommand(1);
  Options o;
  std::function<int(const Options&)> action;

  auto* dataset = app.add_subcommand("dataset", "Dataset tools")->require_subcommand(1);
  auto* import = dataset->add_subcommand("import", "Import image/label folders");
  import->add_option("--images", o.images, "Image directory")->required();
  import->add_option("--labels", o.labels, "Label directory")->required();
  import->add_option("--data", o.data, "data.yaml")->required();
  import->add_option("--out", o.out, "Output dataset root")->required();
  import->add_option("--seed", o.seed, "Split seed")->required();
  import->callback([&] { action = cmd_import; });

  auto* toy = dataset->add_subcommand("gen-toy", "Generate the synthetic shapes corpus");
  toy->add_option("--out", o.out, "Output directory")->required();
  toy->add_option("--count", o.count, "Number of samples")->required();
  toy->add_option("--size", o.size, "Image side in pixels")->required();
  toy->add_option("--seed", o.seed, "Generator seed")->required();
  toy->callback([&] { action = cmd_gen_toy; });

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--data", o.data, "Dataset root or its data.yaml")->required();
  train->add_option("--net", o.net, "net.yaml")->required();
  train->add_option("--train", o.train, "train.yaml")->required();
  train->add_option("--log", o.log, "Log directory")->required();
  train->add_option("--seed", o.train_seed, "Override train.yaml seed");
  train->callback([&] { action = cmd_train; });

  auto* freeze_cmd = app.add_subcommand("freeze", "Export deployable models");
  freeze_cmd->add_option("--log", o.log, "Training log directory")->required();
  freeze_cmd->add_option("--which", o.which, "Checkpoint: iou or acc")
      ->check(CLI::IsMember({"iou", "acc"}));
  freeze_cmd->add_option("--out", o.out, "Output directory")->required();
  freeze_cmd->add_option("--dataset", o.calibration, "Calibration dataset root");
  freeze_cmd->callback([&] { action = cmd_freeze; });

  auto* infer = app.add_subcommand("infer", "Run inference")->require_subcommand(1);
  auto* image = infer->add_subcommand("image", "Segment one image");
  image->add_option("--model", o.model, "Frozen model directory")->required();
  image->add_option("--variant", o.variant, "nchw, nhwc, optimized or quantized");
  image->add_option("--backend", o.backend, "reference_float or quantized_int8");
  image->add_option("--device", o.device, "cpu_single or cpu_parallel");
  image->add_option("--input", o.input, "Input image")->required();
  image->add_option("--out-mask", o.out_mask, "Mask PNG")->required();
  image->add_option("--out-overlay", o.out_overlay, "Overlay PNG");
  image->add_option("--alpha", o.alpha, "Overlay opacity");
  image->callback([&] { action = cmd_infer_image; });

  auto* seq = infer->add_subcommand("seq", "Segment a directory of frames");
  seq->add_option("--model", o.model, "Frozen model directory")->required();
  seq->add_option("--variant", o.variant, "nchw, nhwc, optimized or quantized");
  seq->add_option("--backend", o.backend, "reference_float or quantized_int8");
  seq->add_option("--device", o.device, "cpu_single or cpu_parallel");
  seq->add_option("--input-dir", o.input_dir, "Frame directory")->required();
  seq->add_option("--out-dir", o.out_dir, "Mask directory")->required();
  seq->callback([&] { action = cmd_infer_seq; });

  auto* serve = app.add_subcommand("serve", "HTTP inference service");
  serve->add_option("--model", o.model, "Frozen model directory")->required();
  serve->add_option("--variant", o.variant, "nchw, nhwc, optimized or quantized");
  serve->add_option("--backend", o.backend, "reference_float or quantized_int8");
  serve->add_option("--device", o.device, "cpu_single or cpu_parallel");
  serve->add_option("--port", o.port, "TCP port")->required();
  serve->add_option("--bind", o.bind, "Bind address");
  serve->add_option("--max-body", o.max_body, "Request body cap in bytes");
  serve->add_option("--concurrency", o.concurrency, "Concurrent requests");
  serve->callback([&] { action = cmd_serve; });

  auto* config = app.add_subcommand("config", "Configuration helpers")->require_subcommand(1);
  auto* randomize = config->add_subcommand("randomize", "Draw a random train.yaml for search");
  randomize->add_option("--base", o.base, "Starting train.yaml");
  randomize->add_option("--seed", o.seed, "Draw seed")->required();
  randomize->add_option("--out", o.out, "Output train.yaml")->required();
  randomize->callback([&] { action = cmd_randomize; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }
  try {
    return action(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}
