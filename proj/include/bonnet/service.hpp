// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

// HTTP inference endpoint: GET /health, GET /info, POST /infer[?overlay=1].

#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include "bonnet/runtime.hpp"

namespace bonnet {

struct ServeConfig {
  std::filesystem::path model_dir;
  Variant variant = Variant::optimized;
  Backend backend = Backend::reference_float;
  Device device = Device::cpu_single;
  std::string bind = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  std::size_t max_body_bytes = 16u << 20;
  int concurrency = 4;
  double overlay_alpha = 0.5;

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
};

/// PNG bytes of the single-channel id mask, shared by the CLI and service.
std::vector<std::uint8_t> encode_mask(const Mask& mask);

/// Information document served by GET /info.
std::string describe_session(const Session& session);

class InferenceService {
 public:
  /// Opens the session described by `config`.
  explicit InferenceService(ServeConfig config);
  InferenceService(ServeConfig config, std::shared_ptr<const Session> session);
  ~InferenceService();

  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  /// Binds the listening socket and returns the port.
  int bind();
  /// Serves until stop(); binds first if needed.
  void run();
  /// run() on a background thread.
  void start();
  /// Stops accepting, lets in-flight requests finish and joins.
  void stop();

  int port() const { return port_; }
  const Session& session() const { return *session_; }

 private:
  struct Impl;

  ServeConfig config_;
  std::shared_ptr<const Session> session_;
  std::unique_ptr<Impl> impl_;
  int port_ = -1;
  std::thread thread_;
};

}  // namespace bonnet
