#pragma once
// 8-bit grayscale PNG export of image panels.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace mdpet::png {

struct Window {
  double low = 0.0;
  double high = 1.0;
};

/// Min-max of values; a constant image gets a unit-width window.
Window window_of(std::span<const float> values);

/// Linear map of [low, high] to 0..255, clamped.
std::vector<std::uint8_t> to_gray8(std::span<const float> values, const Window& window);

/// Signed map with 0 at 128: v -> 128 + 127 * v / (high - low), clamped.
std::vector<std::uint8_t> signed_to_gray8(std::span<const float> values, const Window& window);

/// Throws std::runtime_error with the path on any libpng or I/O failure.
void write_gray8(const std::filesystem::path& path, std::size_t width, std::size_t height,
                 std::span<const std::uint8_t> pixels);

/// Decodes an 8-bit grayscale PNG written by write_gray8.
std::vector<std::uint8_t> read_gray8(const std::filesystem::path& path, std::size_t& width,
                                     std::size_t& height);

}  // namespace mdpet::png
