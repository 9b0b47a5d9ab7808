#include "trace/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <jpeglib.h>
#include <png.h>

#include "trace/kernels.hpp"

namespace trace {

namespace {

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  longjmp(err->jump, 1);
}

bool looks_like_png(const std::vector<unsigned char>& b) {
  return b.size() >= 8 && b[0] == 0x89 && b[1] == 'P' && b[2] == 'N' && b[3] == 'G';
}

bool looks_like_jpeg(const std::vector<unsigned char>& b) {
  return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

ImageU8 decode_png(const std::vector<unsigned char>& bytes, int channels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw std::invalid_argument(std::string("PNG decode failed: ") + image.message);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  ImageU8 out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::invalid_argument(std::string("PNG decode failed: ") + image.message);
  }
  return out;
}

ImageU8 decode_jpeg(const std::vector<unsigned char>& bytes, int channels) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::invalid_argument(std::string("JPEG decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  ImageU8 out;
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.channels = channels;
  out.pixels.resize(out.expected_size());
  const std::size_t stride = static_cast<std::size_t>(out.width) * channels;
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* row = out.pixels.data() + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

void check_image(const ImageU8& img, const char* what) {
  if (img.width <= 0 || img.height <= 0 || (img.channels != 1 && img.channels != 3))
    throw std::invalid_argument(std::string(what) + ": bad image dimensions");
  if (img.pixels.size() != img.expected_size())
    throw std::invalid_argument(std::string(what) + ": pixel buffer size mismatch");
}

}  // namespace

ImageU8 decode_image(const std::vector<unsigned char>& bytes, int channels) {
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("decode_image: channels must be 1 or 3");
  if (looks_like_png(bytes)) return decode_png(bytes, channels);
  if (looks_like_jpeg(bytes)) return decode_jpeg(bytes, channels);
  throw std::invalid_argument("decode_image: unrecognized image format");
}

ImageU8 read_image(const std::string& path, int channels) {
  return decode_image(read_file(path), channels);
}

std::vector<unsigned char> encode_png(const ImageU8& img) {
  check_image(img, "encode_png");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("PNG encode sizing failed: ") + image.message);
  std::vector<unsigned char> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("PNG encode failed: ") + image.message);
  out.resize(size);
  return out;
}

std::vector<unsigned char> encode_jpeg(const ImageU8& img, int quality) {
  check_image(img, "encode_jpeg");
  if (quality < 1 || quality > 100)
    throw std::invalid_argument("encode_jpeg: quality outside [1, 100]");
  jpeg_compress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  unsigned char* buf = nullptr;
  unsigned long buf_size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    free(buf);
    throw std::runtime_error(std::string("JPEG encode failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buf, &buf_size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = img.channels;
  cinfo.in_color_space = img.channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<unsigned char*>(img.pixels.data()) + cinfo.next_scanline * stride;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<unsigned char> out(buf, buf + buf_size);
  free(buf);
  return out;
}

void write_png(const std::string& path, const ImageU8& img) {
  write_file(path, encode_png(img));
}

void write_jpeg(const std::string& path, const ImageU8& img, int quality) {
  write_file(path, encode_jpeg(img, quality));
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

Tensor image_to_tensor(const ImageU8& img) {
  check_image(img, "image_to_tensor");
  Tensor t({img.channels, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        t.at(c, y, x) =
            img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] / 255.0;
  return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
  if (t.ndim() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
    throw std::invalid_argument("tensor_to_image: expected (1|3, H, W)");
  ImageU8 img;
  img.channels = t.dim(0);
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.pixels.resize(img.expected_size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        const double v = std::clamp(t.at(c, y, x), 0.0, 1.0);
        img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  return img;
}

Tensor image_to_mask(const ImageU8& img) {
  if (img.channels != 1) throw std::invalid_argument("image_to_mask: expected grayscale");
  Tensor m({img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) m[i] = img.pixels[i] >= 128 ? 1.0 : 0.0;
  return m;
}

ImageU8 mask_to_image(const Tensor& mask) {
  if (mask.ndim() != 2) throw std::invalid_argument("mask_to_image: expected (H, W)");
  ImageU8 img;
  img.channels = 1;
  img.height = mask.dim(0);
  img.width = mask.dim(1);
  img.pixels.resize(img.expected_size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    img.pixels[i] = mask[i] > 0.5 ? 255 : 0;
  return img;
}

Tensor resize_bilinear(const Tensor& t, int h, int w) {
  if (t.ndim() != 3) throw std::invalid_argument("resize_bilinear: expected (C, H, W)");
  Tensor in4({1, t.dim(0), t.dim(1), t.dim(2)});
  std::copy(t.data(), t.data() + t.size(), in4.data());
  Tensor out4;
  kernels::upsample_bilinear(in4, h, w, out4);
  Tensor out({t.dim(0), h, w});
  std::copy(out4.data(), out4.data() + out4.size(), out.data());
  return out;
}

Tensor resize_nearest(const Tensor& t, int h, int w) {
  const bool plane = t.ndim() == 2;
  if (!plane && t.ndim() != 3) throw std::invalid_argument("resize_nearest: expected 2D or 3D");
  const int c = plane ? 1 : t.dim(0);
  Tensor in4({1, c, plane ? t.dim(0) : t.dim(1), plane ? t.dim(1) : t.dim(2)});
  std::copy(t.data(), t.data() + t.size(), in4.data());
  Tensor out4;
  kernels::upsample_nearest(in4, h, w, out4);
  Tensor out(plane ? std::vector<int>{h, w} : std::vector<int>{c, h, w});
  std::copy(out4.data(), out4.data() + out4.size(), out.data());
  return out;
}

}  // namespace trace
