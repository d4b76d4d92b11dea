#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mpsink/error.hpp"

namespace mpsink::io {

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
    uLong c = crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
        c = crc32(c, bytes.data() + done, chunk);
        done += chunk;
    }
    return static_cast<std::uint32_t>(c);
}

inline std::uint32_t crc32_of(const std::string& s) {
    return crc32_of(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

inline std::string hex32(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

/// Little-endian float64 encoding of the values.
inline std::vector<unsigned char> encode_f64(std::span<const double> values) {
    std::vector<unsigned char> out(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) out[i * 8 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
    }
    return out;
}

inline std::vector<double> decode_f64(std::span<const unsigned char> bytes) {
    require(bytes.size() % 8 == 0, ErrorCode::Io, "float64 payload size is not a multiple of 8");
    std::vector<double> out(bytes.size() / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[i * 8 + static_cast<std::size_t>(b)];
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(!in.bad(), ErrorCode::Io, "read failed: " + path.string());
    return bytes;
}

inline void write_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    write_bytes(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

inline std::string read_text(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

/// Reads a raw float64 array and checks its length.
inline std::vector<double> read_f64_file(const std::filesystem::path& path, std::size_t expected) {
    const auto bytes = read_bytes(path);
    require(bytes.size() == expected * 8, ErrorCode::ShapeMismatch,
            path.string() + " holds " + std::to_string(bytes.size()) + " bytes, expected " +
                std::to_string(expected * 8));
    return decode_f64(bytes);
}

} // namespace mpsink::io
