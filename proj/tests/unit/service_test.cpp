// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "bonnet/dataset.hpp"
#include "bonnet/service.hpp"
#include "support.hpp"

namespace bonnet {
namespace {

DataConfig two_classes() {
  DataConfig d;
  d.classes = {{0, "bg", {0, 0, 0}}, {1, "thing", {0, 0, 255}}};
  d.inference_width = 16;
  d.inference_height = 16;
  return d;
}

// Writes a deployment directory with the optimized variant.
void write_model_dir(const std::filesystem::path& dir) {
  NetConfig n;
  n.layers_per_stage = {0, 1, 1};
  n.kernels_per_layer = {6, 8, 6};
  ModelGraph g = build_architecture(n, 2, 17);
  const ModelGraph s = strip_training_ops(g);
  save_model(make_frozen(optimize_graph(s), Variant::optimized, two_classes()),
             dir / model_file_name(Variant::optimized));
  save_config(NodesConfig{}, dir / "nodes.yaml");
}

std::string png_of(const Image& img) {
  const auto bytes = encode_png(img);
  return {bytes.begin(), bytes.end()};
}

Image random_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h, 3);
  for (auto& v : img.pixels) {
    v = static_cast<std::uint8_t>(rng.below(256));
  }
  return img;
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    write_model_dir(dir_.path());
    config_.model_dir = dir_.path();
    config_.port = 0;
    config_.max_body_bytes = 1u << 20;
    service_ = std::make_unique<InferenceService>(config_);
    service_->start();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", service_->port());
    client_->set_read_timeout(30, 0);
  }
  void TearDown() override { service_->stop(); }

  test::TempDir dir_;
  ServeConfig config_;
  std::unique_ptr<InferenceService> service_;
  std::unique_ptr<httplib::Client> client_;
};

TEST_F(ServiceTest, HealthAndInfo) {
  auto health = client_->Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(health->body, "ok");

  auto info = client_->Get("/info");
  ASSERT_TRUE(info);
  EXPECT_EQ(info->status, 200);
  EXPECT_EQ(info->get_header_value("Content-Type"), "application/json");
  EXPECT_NE(info->body.find("\"variant\": \"optimized\""), std::string::npos);
  EXPECT_NE(info->body.find("\"thing\""), std::string::npos);
  EXPECT_NE(info->body.find("\"argmax\""), std::string::npos);
}

TEST_F(ServiceTest, InferReturnsTheSessionMask) {
  const Image img = random_image(40, 24, 3);
  auto res = client_->Post("/infer", png_of(img), "image/png");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  EXPECT_TRUE(res->has_header("X-Inference-Ms"));
  EXPECT_TRUE(res->has_header("X-Total-Ms"));
  const auto expected = encode_mask(service_->session().infer(img));
  EXPECT_EQ(res->body, std::string(expected.begin(), expected.end()));
  const Image mask = decode_image(
      std::span(reinterpret_cast<const std::uint8_t*>(res->body.data()), res->body.size()));
  EXPECT_EQ(mask.width, 40);
  EXPECT_EQ(mask.height, 24);
  EXPECT_EQ(mask.channels, 1);
}

TEST_F(ServiceTest, OverlayIsRgbAtSourceSize) {
  const Image img = random_image(20, 20, 4);
  auto res = client_->Post("/infer?overlay=1", png_of(img), "image/png");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  const Image overlay = decode_image(
      std::span(reinterpret_cast<const std::uint8_t*>(res->body.data()), res->body.size()));
  EXPECT_EQ(overlay.channels, 3);
  EXPECT_EQ(overlay.width, 20);
}

TEST_F(ServiceTest, MalformedRequests) {
  std::string truncated = png_of(random_image(16, 16, 5));
  truncated.resize(truncated.size() / 2);
  auto bad = client_->Post("/infer", truncated, "image/png");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);

  auto empty = client_->Post("/infer", "", "image/png");
  ASSERT_TRUE(empty);
  EXPECT_EQ(empty->status, 400);

  auto big = client_->Post("/infer", std::string((1u << 20) + 1, 'x'), "image/png");
  ASSERT_TRUE(big);
  EXPECT_EQ(big->status, 413);

  auto missing = client_->Get("/nothing");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  auto health = client_->Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
}

TEST_F(ServiceTest, ConcurrentRequests) {
  std::vector<Image> images;
  std::vector<std::string> expected;
  for (std::uint64_t i = 0; i < 4; ++i) {
    images.push_back(random_image(16 + 4 * static_cast<int>(i), 16, 60 + i));
    const auto bytes = encode_mask(service_->session().infer(images.back()));
    expected.emplace_back(bytes.begin(), bytes.end());
  }
  std::vector<std::string> got(4);
  std::vector<int> status(4, 0);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", service_->port());
      c.set_read_timeout(30, 0);
      if (auto res = c.Post("/infer", png_of(images[i]), "image/png")) {
        status[i] = res->status;
        got[i] = res->body;
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  EXPECT_EQ(status, std::vector<int>(4, 200));
  EXPECT_EQ(got, expected);
}

TEST(ServeConfig, Validation) {
  ServeConfig c;
  EXPECT_NO_THROW(c.validate());
  c.port = 70000;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = ServeConfig{};
  c.max_body_bytes = 1000;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = ServeConfig{};
  c.concurrency = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(ServeConfig, StopWithoutStartIsHarmless) {
  test::TempDir dir;
  write_model_dir(dir.path());
  ServeConfig c;
  c.model_dir = dir.path();
  c.port = 0;
  InferenceService s(c);
  s.stop();
  EXPECT_GT(s.bind(), 0);
}

// ---------------------------------------------------------------------------

int cli(const std::string& args) {
  const std::string cmd = std::string(BONNET_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli("--help"), 0);
  EXPECT_EQ(cli(""), 2);
  EXPECT_EQ(cli("dataset import --images a --data b --out c --seed 1"), 2);
  EXPECT_EQ(cli("train --data a --net b --train c"), 2);
  EXPECT_EQ(cli("freeze --log a --which best --out b"), 2);
  EXPECT_EQ(cli("infer image --model m --input i --out-mask o --variant bogus"), 2);
  EXPECT_EQ(cli("freeze --log /nonexistent/log --which iou --out /tmp/never"), 1);
}

TEST(Cli, MaskMatchesService) {
  test::TempDir dir;
  write_model_dir(dir.path());
  const Image img = random_image(30, 22, 8);
  write_png(img, dir.path() / "in.png");
  ASSERT_EQ(cli("infer image --model " + dir.path().string() + " --input " +
                (dir.path() / "in.png").string() + " --out-mask " +
                (dir.path() / "mask.png").string()),
            0);

  ServeConfig c;
  c.model_dir = dir.path();
  c.port = 0;
  InferenceService s(c);
  s.start();
  httplib::Client client("127.0.0.1", s.port());
  auto res = client.Post("/infer", png_of(img), "image/png");
  s.stop();
  ASSERT_TRUE(res);
  const auto file = read_file(dir.path() / "mask.png");
  EXPECT_EQ(res->body, std::string(file.begin(), file.end()));
}

TEST(Cli, ToyGenerationAndImport) {
  test::TempDir dir;
  const auto root = dir.path().string();
  ASSERT_EQ(cli("dataset gen-toy --out " + root + "/toy --count 10 --size 32 --seed 4"), 0);
  ASSERT_EQ(cli("dataset import --images " + root + "/toy/img --labels " + root +
                "/toy/lbl --data " + root + "/toy/data.yaml --out " + root + "/ds --seed 2"),
            0);
  const StandardDataset ds = open_dataset(dir.path() / "ds");
  EXPECT_EQ(ds.ids(Split::train).size(), 8u);
  EXPECT_EQ(ds.ids(Split::valid).size(), 2u);
  EXPECT_EQ(ds.data.class_count(), 4u);
}

}  // namespace
}  // namespace bonnet
