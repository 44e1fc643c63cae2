// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "bonnet/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <json.hpp>

namespace bonnet {

void ServeConfig::validate() const {
  if (port < 0 || port > 65535) {
    throw InvalidArgument("port must be in [1, 65535] (0 for any free port), got " +
                          std::to_string(port));
  }
  if (max_body_bytes < (1u << 20)) {
    throw InvalidArgument("max_body_bytes must be at least 1 MiB");
  }
  if (concurrency < 1) {
    throw InvalidArgument("concurrency must be positive");
  }
  if (!(overlay_alpha >= 0.0 && overlay_alpha <= 1.0)) {
    throw InvalidArgument("overlay_alpha must be in [0, 1]");
  }
}

std::vector<std::uint8_t> encode_mask(const Mask& mask) { return encode_png(mask.labels); }

std::string describe_session(const Session& session) {
  const FrozenModel& m = session.model();
  nlohmann::ordered_json doc;
  doc["variant"] = to_string(m.variant);
  doc["backend"] = to_string(session.backend());
  doc["device"] = to_string(session.device());
  doc["layout"] = to_string(m.layout);
  doc["input"] = {{"width", m.input.w}, {"height", m.input.h}};
  doc["nodes"] = {{"input", m.nodes.input},     {"code", m.nodes.code},
                  {"logits", m.nodes.logits},   {"softmax", m.nodes.softmax},
                  {"argmax", m.nodes.argmax}};
  auto classes = nlohmann::ordered_json::array();
  for (const auto& c : m.classes) {
    classes.push_back({{"id", c.id}, {"name", c.name}, {"color", to_hex(c.color)}});
  }
  doc["classes"] = std::move(classes);
  return doc.dump(2) + "\n";
}

struct InferenceService::Impl {
  httplib::Server server;
  bool bound = false;
};

InferenceService::InferenceService(ServeConfig config)
    : InferenceService(config, std::make_shared<const Session>(open_session(
                                   config.model_dir, config.variant, config.backend,
                                   config.device))) {}

InferenceService::InferenceService(ServeConfig config, std::shared_ptr<const Session> session)
    : config_(std::move(config)), session_(std::move(session)), impl_(std::make_unique<Impl>()) {
  config_.validate();
  auto& srv = impl_->server;
  const int workers = config_.concurrency;
  srv.new_task_queue = [workers] { return new httplib::ThreadPool(static_cast<std::size_t>(workers)); };
  srv.set_payload_max_length(config_.max_body_bytes);

  srv.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok", "text/plain");
  });
  srv.Get("/info", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(describe_session(*session_), "application/json");
  });
  srv.Post("/infer", [this](const httplib::Request& req, httplib::Response& res) {
    Image image;
    try {
      image = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(req.body.data()),
                                     req.body.size()));
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(std::string("cannot decode image: ") + e.what() + "\n", "text/plain");
      return;
    }
    if (image.empty()) {
      res.status = 400;
      res.set_content("empty image\n", "text/plain");
      return;
    }
    const Mask mask = session_->infer(image);
    std::vector<std::uint8_t> png;
    if (req.has_param("overlay") && req.get_param_value("overlay") != "0") {
      png = encode_png(render_overlay(*session_, mask, &image, config_.overlay_alpha));
    } else {
      png = encode_mask(mask);
    }
    res.set_header("X-Inference-Ms", fmt::format("{:.3f}", mask.timing.inference_ms));
    res.set_header("X-Total-Ms", fmt::format("{:.3f}", mask.timing.total_ms()));
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  });
  srv.set_exception_handler(
      [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
          std::rethrow_exception(ep);
        } catch (const std::exception& e) {
          what = e.what();
        } catch (...) {
        }
        spdlog::error("request failed: {}", what);
        res.status = 500;
        res.set_content(what + "\n", "text/plain");
      });
  srv.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });
}

InferenceService::~InferenceService() { stop(); }

int InferenceService::bind() {
  if (impl_->bound) {
    return port_;
  }
  if (config_.port == 0) {
    port_ = impl_->server.bind_to_any_port(config_.bind);
  } else {
    port_ = impl_->server.bind_to_port(config_.bind, config_.port) ? config_.port : -1;
  }
  if (port_ < 0) {
    throw IoError("cannot bind " + config_.bind + ":" + std::to_string(config_.port));
  }
  impl_->bound = true;
  return port_;
}

void InferenceService::run() {
  bind();
  spdlog::info("serving {} ({}, {}) on {}:{}", config_.model_dir.string(),
               to_string(session_->model().variant), to_string(session_->backend()),
               config_.bind, port_);
  impl_->server.listen_after_bind();
}

void InferenceService::start() {
  bind();
  thread_ = std::thread([this] { run(); });
  impl_->server.wait_until_ready();
}

void InferenceService::stop() {
  if (impl_) {
    impl_->server.stop();
  }
  if (thread_.joinable()) {
    thread_.join();
  }
}

}  // namespace bonnet
