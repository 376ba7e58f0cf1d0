#include "mdpet/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "mdpet/error.hpp"

namespace mdpet::io {
namespace {

std::uint32_t to_little(std::uint32_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
  }
  return bits;
}

std::runtime_error io_error(const std::string& what, const std::filesystem::path& path) {
  return std::runtime_error(what + ": " + path.string());
}

}  // namespace

void append_f32(std::string& out, std::span<const float> values) {
  const std::size_t base = out.size();
  out.resize(base + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(out.data() + base + 4 * i, &bits, 4);
  }
}

void write_f32(const std::filesystem::path& path, std::span<const float> values) {
  std::string bytes;
  append_f32(bytes, values);
  write_text(path, bytes);
}

std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count) {
  const std::string bytes = read_text(path);
  if (bytes.size() != expected_count * 4) {
    throw ValidationError("tensor file " + path.string() + " holds " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(expected_count * 4));
  }
  std::vector<float> out(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    out[i] = std::bit_cast<float>(to_little(bits));
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw io_error("cannot create directory (" + ec.message() + ")", path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open for writing", path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw io_error("write failed", path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open for reading", path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char ch : read_text(path)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace mdpet::io
