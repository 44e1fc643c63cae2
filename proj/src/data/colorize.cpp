// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "bonnet/colorize.hpp"

#include <cmath>

#include "bonnet/error.hpp"

namespace bonnet {

Image colorize(const Image& mask, const std::vector<ClassInfo>& classes, const Image* image,
               double alpha) {
  if (mask.channels != 1) {
    throw ShapeError("colorize expects a single-channel mask");
  }
  if (image && (image->width != mask.width || image->height != mask.height ||
                image->channels != 3)) {
    throw ShapeError("colorize: overlay image must be RGB and match the mask size");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("colorize: alpha must lie in [0, 1]");
  }
  Image out(mask.width, mask.height, 3);
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
    const auto id = mask.pixels[i];
    if (id >= classes.size()) {
      throw DomainError("class id " + std::to_string(id) + " has no color");
    }
    const Rgb c = classes[id].color;
    const std::uint8_t rgb[3] = {c.r, c.g, c.b};
    for (int k = 0; k < 3; ++k) {
      if (!image) {
        out.pixels[3 * i + k] = rgb[k];
      } else {
        const double v = alpha * rgb[k] + (1.0 - alpha) * image->pixels[3 * i + k];
        out.pixels[3 * i + k] = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

}  // namespace bonnet
