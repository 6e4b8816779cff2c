#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lsn::io {

std::uint32_t crc32(std::span<const unsigned char> bytes);
std::uint32_t crc32(const std::string& text);

// Converts to float32 little-endian bytes.
std::vector<unsigned char> encode_f32(std::span<const double> values);
std::vector<double> decode_f32(std::span<const unsigned char> bytes);

std::vector<unsigned char> read_bytes(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over the target.
void write_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

std::string hex32(std::uint32_t value);

}  // namespace lsn::io
