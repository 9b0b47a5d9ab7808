#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trace/tensor.hpp"

namespace trace {

// Interleaved 8-bit image, row-major, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
  int width = 0, height = 0, channels = 0;
  std::vector<unsigned char> pixels;

  std::size_t expected_size() const {
    return static_cast<std::size_t>(width) * height * channels;
  }
};

// Decode PNG or JPEG (sniffed from the magic bytes) into `channels` planes.
ImageU8 decode_image(const std::vector<unsigned char>& bytes, int channels = 3);
ImageU8 read_image(const std::string& path, int channels = 3);

std::vector<unsigned char> encode_png(const ImageU8& img);
std::vector<unsigned char> encode_jpeg(const ImageU8& img, int quality);
void write_png(const std::string& path, const ImageU8& img);
void write_jpeg(const std::string& path, const ImageU8& img, int quality);

std::vector<unsigned char> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<unsigned char>& bytes);

// (C, H, W) in [0, 1] <-> 8-bit image (values clamped and rounded).
Tensor image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor& t);

// Binary (H, W) mask in {0, 1} <-> 8-bit gray (threshold 128 on load).
Tensor image_to_mask(const ImageU8& img);
ImageU8 mask_to_image(const Tensor& mask);

// Interpolating resizes for (C, H, W) tensors; nearest keeps masks binary.
Tensor resize_bilinear(const Tensor& t, int h, int w);
Tensor resize_nearest(const Tensor& t, int h, int w);

}  // namespace trace
