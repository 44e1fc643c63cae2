// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "bonnet/dataset.hpp"

namespace bonnet {

AugmentParams AugmentParams::draw(const AugmentSpec& spec, Rng& rng) {
  AugmentParams p;
  if (!spec.enabled) {
    return p;
  }
  // Every draw happens regardless of the ranges so that the stream of
  // random numbers does not depend on which transforms are active.
  const double flip = rng.uniform();
  const double rot = rng.uniform();
  const double shear = rng.uniform();
  const double stretch = rng.uniform();
  const double gamma = rng.uniform();
  const auto lerp = [](const std::array<double, 2>& r, double u) {
    return r[0] == r[1] ? r[0] : r[0] + (r[1] - r[0]) * u;
  };
  p.flip = flip < spec.flip_probability;
  p.rotation_degrees = lerp(spec.rotation_degrees, rot);
  p.shear = lerp(spec.shear, shear);
  p.stretch = lerp(spec.stretch, stretch);
  p.gamma = lerp(spec.gamma, gamma);
  return p;
}

std::array<double, 2> AugmentParams::source_of(int x, int y, int w, int h) const {
  const double cx = 0.5 * w;
  const double cy = 0.5 * h;
  const double px = x + 0.5 - cx;
  const double py = y + 0.5 - cy;
  const double theta = rotation_degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  // Forward map is rotate(shear(scale(p))); invert it step by step.
  double u = cs * px + sn * py;
  double v = -sn * px + cs * py;
  u -= shear * v;
  u /= stretch;
  v /= stretch;
  double sx = u + cx;
  const double sy = v + cy;
  if (flip) {
    sx = w - sx;
  }
  return {sx, sy};
}

namespace {

bool is_geometric_identity(const AugmentParams& p) {
  return !p.flip && p.rotation_degrees == 0.0 && p.shear == 0.0 && p.stretch == 1.0;
}

double pixel_or_zero(const Image& img, int x, int y, int c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) {
    return 0.0;
  }
  return img.at(x, y, c);
}

}  // namespace

Sample apply_augment(const Sample& sample, const AugmentParams& p) {
  Sample out;
  out.id = sample.id;
  const int w = sample.image.width;
  const int h = sample.image.height;
  if (is_geometric_identity(p)) {
    out.image = sample.image;
    out.label = sample.label;
  } else {
    out.image = Image(w, h, sample.image.channels);
    out.label = Image(w, h, 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto [sx, sy] = p.source_of(x, y, w, h);
        const double lx = std::floor(sx);
        const double ly = std::floor(sy);
        if (lx >= 0 && ly >= 0 && lx < w && ly < h) {
          out.label.at(x, y) = sample.label.at(static_cast<int>(lx), static_cast<int>(ly));
        }
        const double fx = sx - 0.5;
        const double fy = sy - 0.5;
        const int x0 = static_cast<int>(std::floor(fx));
        const int y0 = static_cast<int>(std::floor(fy));
        const double ax = fx - x0;
        const double ay = fy - y0;
        for (int c = 0; c < sample.image.channels; ++c) {
          const double v = (1 - ay) * ((1 - ax) * pixel_or_zero(sample.image, x0, y0, c) +
                                       ax * pixel_or_zero(sample.image, x0 + 1, y0, c)) +
                           ay * ((1 - ax) * pixel_or_zero(sample.image, x0, y0 + 1, c) +
                                 ax * pixel_or_zero(sample.image, x0 + 1, y0 + 1, c));
          out.image.at(x, y, c) =
              static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
  }
  if (p.gamma != 1.0) {
    std::array<std::uint8_t, 256> table{};
    for (int v = 0; v < 256; ++v) {
      table[v] = static_cast<std::uint8_t>(
          std::clamp(std::lround(255.0 * std::pow(v / 255.0, p.gamma)), 0L, 255L));
    }
    for (auto& v : out.image.pixels) {
      v = table[v];
    }
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentSpec& spec, Rng& rng) {
  return apply_augment(sample, AugmentParams::draw(spec, rng));
}

}  // namespace bonnet
