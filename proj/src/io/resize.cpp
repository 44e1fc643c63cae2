// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <string>

#include "bonnet/error.hpp"
#include "bonnet/image.hpp"

namespace bonnet {

namespace {

void check_target(const Image& image, int width, int height) {
  if (width <= 0 || height <= 0) {
    throw InvalidArgument("resize target " + std::to_string(width) + "x" +
                          std::to_string(height) + " is not positive");
  }
  if (image.empty()) {
    throw InvalidArgument("cannot resize an empty image");
  }
}

}  // namespace

Image resize_bilinear(const Image& image, int width, int height) {
  check_target(image, width, height);
  if (width == image.width && height == image.height) {
    return image;
  }
  Image out(width, height, image.channels);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(x0, y0, c) * (1 - tx) + image.at(x1, y0, c) * tx;
        const double bottom = image.at(x0, y1, c) * (1 - tx) + image.at(x1, y1, c) * tx;
        out.at(x, y, c) = static_cast<std::uint8_t>(
            std::clamp(std::lround(top * (1 - ty) + bottom * ty), 0L, 255L));
      }
    }
  }
  return out;
}

Image resize_nearest(const Image& image, int width, int height) {
  check_target(image, width, height);
  if (width == image.width && height == image.height) {
    return image;
  }
  Image out(width, height, image.channels);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(static_cast<int>((2LL * y + 1) * image.height / (2LL * height)),
                            image.height - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(static_cast<int>((2LL * x + 1) * image.width / (2LL * width)),
                              image.width - 1);
      for (int c = 0; c < image.channels; ++c) {
        out.at(x, y, c) = image.at(sx, sy, c);
      }
    }
  }
  return out;
}

}  // namespace bonnet
