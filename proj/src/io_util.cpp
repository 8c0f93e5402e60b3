#include "io_util.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <zlib.h>

namespace mpd::detail {

static_assert(std::endian::native == std::endian::little, "binary I/O assumes a little-endian host");

std::uint32_t crc32_of(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
    std::size_t left = bytes.size();
    // zlib takes uInt lengths; feed large buffers in pieces.
    while (left > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
        crc = crc32(crc, p, chunk);
        p += chunk;
        left -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string encode_f32(const double* v, std::size_t n) {
    std::string out(n * sizeof(float), '\0');
    for (std::size_t i = 0; i < n; ++i) {
        const float f = static_cast<float>(v[i]);
        std::memcpy(out.data() + i * sizeof(float), &f, sizeof(float));
    }
    return out;
}

void decode_f32(const std::string& bytes, double* out, std::size_t n) {
    if (bytes.size() != n * sizeof(float)) {
        throw std::length_error("float32 blob has the wrong size");
    }
    for (std::size_t i = 0; i < n; ++i) {
        float f = 0.0f;
        std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
        out[i] = static_cast<double>(f);
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

}  // namespace mpd::detail
