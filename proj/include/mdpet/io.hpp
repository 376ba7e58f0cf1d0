#pragma once
// Raw little-endian float32 tensor files and small text-file helpers.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mdpet::io {

/// Headerless little-endian IEEE-754 float32, row-major.
void write_f32(const std::filesystem::path& path, std::span<const float> values);

/// Reads a raw f32 file; throws when its byte length is not expected_count * 4.
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);

/// Appends the little-endian bytes of values to out.
void append_f32(std::string& out, std::span<const float> values);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// FNV-1a over a file's bytes, for reproducibility checks.
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace mdpet::io
