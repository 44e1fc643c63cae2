// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace bonnet {

/// 8-bit raster with interleaved channels (1 = gray / label ids, 3 = RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int width, int height, int channels, std::uint8_t fill = 0);

  bool empty() const { return width == 0 || height == 0; }
  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Decodes PNG or JPEG (detected by signature). Alpha is dropped; gray and
/// gray+alpha PNGs decode to one channel, everything else to RGB. Throws
/// FormatError on undecodable input.
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image(const std::filesystem::path& path);

/// Deterministic PNG encoding (no timestamps or text chunks).
std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const Image& image, const std::filesystem::path& path);

/// Half-pixel-centre resampling with edge clamping, rounded to nearest.
Image resize_bilinear(const Image& image, int width, int height);
/// Output pixel (x, y) copies source pixel floor((x + 0.5) * W / width), likewise for y.
Image resize_nearest(const Image& image, int width, int height);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace bonnet
