#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "test_util.hpp"
#include "trace/image_io.hpp"

using namespace trace;

namespace {

ImageU8 random_image(int w, int h, int c, Rng& rng) {
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.channels = c;
  img.pixels.resize(img.expected_size());
  for (auto& p : img.pixels) p = static_cast<unsigned char>(rng.below(256));
  return img;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("PNG round trip is lossless") {
  Rng rng(81);
  const ImageU8 img = random_image(13, 9, 3, rng);
  const ImageU8 back = decode_image(encode_png(img), 3);
  REQUIRE(back.width == 13);
  REQUIRE(back.height == 9);
  REQUIRE(back.channels == 3);
  CHECK(back.pixels == img.pixels);

  // Grayscale stays grayscale when asked for one channel.
  const ImageU8 gray = random_image(7, 5, 1, rng);
  const ImageU8 gback = decode_image(encode_png(gray), 1);
  CHECK(gback.channels == 1);
  CHECK(gback.pixels == gray.pixels);

  // Expanding grayscale to RGB replicates the plane.
  const ImageU8 expanded = decode_image(encode_png(gray), 3);
  REQUIRE(expanded.channels == 3);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
    CHECK(expanded.pixels[3 * i] == gray.pixels[i]);
    CHECK(expanded.pixels[3 * i + 1] == gray.pixels[i]);
    CHECK(expanded.pixels[3 * i + 2] == gray.pixels[i]);
  }
}

TEST_CASE("JPEG round trip is close and deterministic") {
  Rng rng(82);
  // Smooth gradient compresses gracefully; random noise would not.
  ImageU8 img;
  img.width = 32;
  img.height = 24;
  img.channels = 3;
  img.pixels.resize(img.expected_size());
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c)
        img.pixels[(static_cast<std::size_t>(y) * 32 + x) * 3 + c] =
            static_cast<unsigned char>((x * 8 + y * 3 + c * 40) % 256);

  const auto bytes = encode_jpeg(img, 90);
  const ImageU8 back = decode_image(bytes, 3);
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  double err = 0.0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    err += std::fabs(static_cast<double>(back.pixels[i]) - img.pixels[i]);
  err /= static_cast<double>(img.pixels.size());
  CHECK(err < 12.0);  // quality 90 on a smooth ramp

  CHECK(encode_jpeg(img, 90) == bytes);  // bit-stable encoder

  // Lower quality produces a smaller stream.
  CHECK(encode_jpeg(img, 30).size() < bytes.size());
}

TEST_CASE("magic-byte sniffing distinguishes PNG from JPEG") {
  Rng rng(83);
  const ImageU8 img = random_image(8, 8, 3, rng);
  CHECK(decode_image(encode_png(img), 3).pixels == img.pixels);
  CHECK(decode_image(encode_jpeg(img, 95), 3).width == 8);
  std::vector<unsigned char> garbage{0, 1, 2, 3, 4, 5, 6, 7};
  CHECK_THROWS(decode_image(garbage, 3));
  CHECK_THROWS(decode_image({}, 3));
}

TEST_CASE("file I/O round trip") {
  Rng rng(84);
  const ImageU8 img = random_image(6, 6, 3, rng);
  const std::string path = temp_path("trace_io_test.png");
  write_png(path, img);
  const ImageU8 back = read_image(path, 3);
  CHECK(back.pixels == img.pixels);

  const auto raw = read_file(path);
  CHECK(raw == encode_png(img));
  const std::string copy = temp_path("trace_io_copy.bin");
  write_file(copy, raw);
  CHECK(read_file(copy) == raw);
  std::remove(path.c_str());
  std::remove(copy.c_str());
  CHECK_THROWS(read_file(temp_path("does_not_exist_9_9.bin")));
}

TEST_CASE("image/tensor conversion is exact on the 8-bit lattice") {
  Rng rng(85);
  const ImageU8 img = random_image(10, 7, 3, rng);
  const Tensor t = image_to_tensor(img);
  REQUIRE(t.shape() == std::vector<int>{3, 7, 10});
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 10; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(t.at(c, y, x) ==
              doctest::Approx(img.pixels[(static_cast<std::size_t>(y) * 10 + x) * 3 + c] / 255.0)
                  .epsilon(1e-12));
  const ImageU8 back = tensor_to_image(t);
  CHECK(back.pixels == img.pixels);

  // Out-of-range tensor values clamp instead of wrapping.
  Tensor wild({1, 1, 2});
  wild.at(0, 0, 0) = -0.3;
  wild.at(0, 0, 1) = 1.7;
  const ImageU8 clamped = tensor_to_image(wild);
  CHECK(clamped.pixels[0] == 0);
  CHECK(clamped.pixels[1] == 255);
}

TEST_CASE("mask conversion thresholds at 128 and round trips binaries") {
  ImageU8 gray;
  gray.width = 3;
  gray.height = 1;
  gray.channels = 1;
  gray.pixels = {0, 127, 128};
  const Tensor mask = image_to_mask(gray);
  CHECK(mask.at(0, 0) == 0.0);
  CHECK(mask.at(0, 1) == 0.0);
  CHECK(mask.at(0, 2) == 1.0);

  Rng rng(86);
  const Tensor m = testutil::random_mask({9, 12}, rng);
  const Tensor back = image_to_mask(mask_to_image(m));
  CHECK(testutil::bit_equal(back, m));
}

TEST_CASE("resize: identity at equal size, nearest keeps masks binary") {
  Rng rng(87);
  const Tensor img = testutil::random_tensor({3, 9, 11}, rng, 0.0, 1.0);
  CHECK(testutil::bit_equal(resize_bilinear(img, 9, 11), img));
  CHECK(testutil::bit_equal(resize_nearest(img, 9, 11), img));

  const Tensor up = resize_bilinear(img, 18, 22);
  CHECK(up.shape() == std::vector<int>{3, 18, 22});
  for (std::size_t i = 0; i < up.size(); ++i) {
    CHECK(up[i] >= 0.0);
    CHECK(up[i] <= 1.0);  // interpolation cannot overshoot the input range
  }

  Tensor mask3({1, 6, 6});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) mask3.at(0, y, x) = (x < 3) ? 1.0 : 0.0;
  const Tensor mup = resize_nearest(mask3, 13, 17);
  for (std::size_t i = 0; i < mup.size(); ++i)
    CHECK((mup[i] == 0.0 || mup[i] == 1.0));
}
