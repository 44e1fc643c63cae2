// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <jpeglib.h>

#include "bonnet/error.hpp"
#include "bonnet/image.hpp"
#include "support.hpp"

namespace bonnet {
namespace {

Image gradient_image(int w, int h, int channels) {
  Image img(w, h, channels);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>((i * 37) % 251);
  }
  return img;
}

TEST(Image, PngRoundTripRgbAndGray) {
  for (const int channels : {1, 3}) {
    const Image img = gradient_image(13, 7, channels);
    const auto bytes = encode_png(img);
    EXPECT_EQ(decode_image(bytes), img);
    EXPECT_EQ(encode_png(decode_image(bytes)), bytes);
  }
}

TEST(Image, FileRoundTrip) {
  test::TempDir dir;
  const Image img = gradient_image(5, 9, 3);
  write_png(img, dir.path() / "a.png");
  EXPECT_EQ(read_image(dir.path() / "a.png"), img);
  EXPECT_THROW(read_image(dir.path() / "missing.png"), IoError);
}

TEST(Image, TruncatedPngIsFormatError) {
  const auto bytes = encode_png(gradient_image(16, 16, 3));
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + bytes.size() / 2);
  EXPECT_THROW(decode_image(cut), FormatError);
  EXPECT_THROW(decode_image(std::vector<std::uint8_t>{1, 2, 3, 4}), FormatError);
  EXPECT_THROW(decode_image(std::vector<std::uint8_t>{}), FormatError);
}

std::vector<std::uint8_t> encode_jpeg(const Image& img) {
  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, 100, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<std::uint8_t*>(img.pixels.data()) +
                   static_cast<std::size_t>(cinfo.next_scanline) * img.width * 3;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  free(buffer);
  return out;
}

TEST(Image, JpegDecodes) {
  Image flat(16, 8, 3);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 16; ++x) {
      flat.at(x, y, 0) = 200;
      flat.at(x, y, 1) = 40;
      flat.at(x, y, 2) = 90;
    }
  }
  const auto bytes = encode_jpeg(flat);
  const Image back = decode_image(bytes);
  ASSERT_EQ(back.width, 16);
  ASSERT_EQ(back.height, 8);
  ASSERT_EQ(back.channels, 3);
  for (std::size_t i = 0; i < back.pixels.size(); ++i) {
    EXPECT_NEAR(back.pixels[i], flat.pixels[i], 3);
  }
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 20);
  EXPECT_THROW(decode_image(cut), FormatError);
}

TEST(Resize, NearestUpscaleReplicatesBlocks) {
  Image m(2, 2, 1);
  m.pixels = {0, 1, 2, 3};
  const Image up = resize_nearest(m, 4, 4);
  EXPECT_EQ(up.pixels, (std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3}));
  EXPECT_EQ(resize_nearest(up, 2, 2), m);
}

TEST(Resize, BilinearKeepsConstantsAndIdentity) {
  Image flat(5, 3, 3, 77);
  const Image r = resize_bilinear(flat, 11, 7);
  EXPECT_EQ(r, Image(11, 7, 3, 77));
  Image ramp(4, 1, 1);
  ramp.pixels = {0, 100, 200, 250};
  EXPECT_EQ(resize_bilinear(ramp, 4, 1), ramp);
  EXPECT_EQ(resize_bilinear(ramp, 2, 1).pixels, (std::vector<std::uint8_t>{50, 225}));
  EXPECT_THROW(resize_bilinear(ramp, 0, 1), InvalidArgument);
}

}  // namespace
}  // namespace bonnet
