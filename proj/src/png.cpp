#include "mdpet/png.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>

#include "mdpet/error.hpp"

namespace mdpet::png {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

Window window_of(std::span<const float> values) {
  if (values.empty()) throw ValidationError("window_of: empty image");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  Window w{*lo, *hi};
  if (!(w.high > w.low)) w.high = w.low + 1.0;
  return w;
}

std::vector<std::uint8_t> to_gray8(std::span<const float> values, const Window& window) {
  const double scale = 255.0 / (window.high - window.low);
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = quantize((values[i] - window.low) * scale);
  return out;
}

std::vector<std::uint8_t> signed_to_gray8(std::span<const float> values, const Window& window) {
  const double scale = 127.0 / (window.high - window.low);
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = quantize(128.0 + values[i] * scale);
  return out;
}

void write_gray8(const std::filesystem::path& path, std::size_t width, std::size_t height,
                 std::span<const std::uint8_t> pixels) {
  if (width == 0 || height == 0 || pixels.size() != width * height) {
    throw ShapeError("write_gray8: " + std::to_string(pixels.size()) + " pixels for a " +
                     std::to_string(width) + "x" + std::to_string(height) + " image");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  File file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialization failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_gray8(const std::filesystem::path& path, std::size_t& width,
                                     std::size_t& height) {
  File file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialization failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng failed reading " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError(path.string() + " is not an 8-bit grayscale PNG");
  }
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  std::vector<std::uint8_t> pixels(width * height);
  for (std::size_t y = 0; y < height; ++y) png_read_row(png, pixels.data() + y * width, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

}  // namespace mdpet::png
