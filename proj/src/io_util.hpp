#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <Eigen/Core>

namespace mpd::detail {

std::uint32_t crc32_of(const std::string& bytes);

/// Little-endian float32 encoding of `v` (values are narrowed).
std::string encode_f32(const double* v, std::size_t n);
/// Inverse of encode_f32; `bytes.size()` must equal 4 * n.
void decode_f32(const std::string& bytes, double* out, std::size_t n);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace mpd::detail
