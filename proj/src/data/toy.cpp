// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdio>

#include "bonnet/dataset.hpp"
#include "bonnet/error.hpp"

namespace bonnet {

DataConfig toy_data_config() {
  DataConfig d;
  d.classes = {{0, "background", {0, 0, 0}},
               {1, "circle", {255, 0, 0}},
               {2, "rectangle", {0, 255, 0}},
               {3, "triangle", {0, 0, 255}}};
  d.inference_width = 64;
  d.inference_height = 64;
  d.dataset_location = "toy";
  d.split_train = 0.8;
  d.split_valid = 0.2;
  d.split_test = 0.0;
  return d;
}

namespace {

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Shapes are tinted towards one primary per class; the background is a
// desaturated texture.
void render(Image& img, Image& lbl, int size, Rng& rng) {
  const double base = rng.uniform(70, 150);
  const double fx = rng.uniform(0.1, 0.5);
  const double fy = rng.uniform(0.1, 0.5);
  const double phase = rng.uniform(0, 6.283);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double wave = 18.0 * std::sin(fx * x + phase) * std::cos(fy * y);
      const double grain = rng.uniform(-12, 12);
      for (int c = 0; c < 3; ++c) {
        img.at(x, y, c) = clamp_byte(base + wave + grain + rng.uniform(-6, 6));
      }
    }
  }
  const int shapes = 1 + static_cast<int>(rng.below(3));
  for (int s = 0; s < shapes; ++s) {
    const int cls = 1 + static_cast<int>(rng.below(3));
    const double r = size * rng.uniform(0.09, 0.2);
    const double cx = rng.uniform(r, size - r);
    const double cy = rng.uniform(r, size - r);
    const double strong = rng.uniform(180, 250);
    const double weak = rng.uniform(20, 90);
    const double hw = r * rng.uniform(0.6, 1.0);
    const double hh = r * rng.uniform(0.6, 1.0);
    const double angle = rng.uniform(0, 6.283);
    std::array<double, 6> tri{};
    for (int k = 0; k < 3; ++k) {
      tri[2 * k] = cx + r * 1.2 * std::cos(angle + k * 2.0944);
      tri[2 * k + 1] = cy + r * 1.2 * std::sin(angle + k * 2.0944);
    }
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double px = x + 0.5;
        const double py = y + 0.5;
        bool inside = false;
        if (cls == 1) {
          inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
        } else if (cls == 2) {
          inside = std::abs(px - cx) <= hw && std::abs(py - cy) <= hh;
        } else {
          const double e0 = edge(tri[0], tri[1], tri[2], tri[3], px, py);
          const double e1 = edge(tri[2], tri[3], tri[4], tri[5], px, py);
          const double e2 = edge(tri[4], tri[5], tri[0], tri[1], px, py);
          inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        }
        if (!inside) {
          continue;
        }
        lbl.at(x, y) = static_cast<std::uint8_t>(cls);
        for (int c = 0; c < 3; ++c) {
          const double v = (c == cls - 1 ? strong : weak) + rng.uniform(-15, 15);
          img.at(x, y, c) = clamp_byte(v);
        }
      }
    }
  }
}

}  // namespace

void generate_toy_dataset(const std::filesystem::path& out, int count, int size,
                          std::uint64_t seed) {
  if (count < 1) {
    throw InvalidArgument("count must be >= 1");
  }
  if (size < 8) {
    throw InvalidArgument("size must be >= 8");
  }
  std::error_code ec;
  std::filesystem::create_directories(out / "img", ec);
  std::filesystem::create_directories(out / "lbl", ec);
  if (ec) {
    throw IoError("cannot create " + out.string() + ": " + ec.message());
  }
  DataConfig data = toy_data_config();
  data.inference_width = size;
  data.inference_height = size;
  for (int i = 0; i < count; ++i) {
    Rng rng(hash_seed(seed, i));
    Image img(size, size, 3);
    Image ids(size, size, 1);
    render(img, ids, size, rng);
    Image colored(size, size, 3);
    for (std::size_t p = 0; p < ids.pixels.size(); ++p) {
      const Rgb c = data.classes[ids.pixels[p]].color;
      colored.pixels[3 * p] = c.r;
      colored.pixels[3 * p + 1] = c.g;
      colored.pixels[3 * p + 2] = c.b;
    }
    char name[32];
    std::snprintf(name, sizeof name, "toy_%05d.png", i);
    write_png(img, out / "img" / name);
    write_png(colored, out / "lbl" / name);
  }
  save_config(data, out / "data.yaml");
}

}  // namespace bonnet
