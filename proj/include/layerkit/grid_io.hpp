#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "layerkit/errors.hpp"
#include "layerkit/grid.hpp"

namespace layerkit {

// Portable binary grid dump. 16-byte header: magic ("LGRD" for feature grids,
// "LMSK" for masks with c=1), then u32 h, u32 w, u32 c, then row-major
// little-endian IEEE-754 doubles.

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

inline void put_f64_le(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline std::string encode(const char magic[4], int h, int w, int c,
                          const std::vector<double>& values) {
    std::string out;
    out.reserve(16 + values.size() * 8);
    out.append(magic, 4);
    put_u32_le(out, static_cast<std::uint32_t>(h));
    put_u32_le(out, static_cast<std::uint32_t>(w));
    put_u32_le(out, static_cast<std::uint32_t>(c));
    for (double v : values) put_f64_le(out, v);
    return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace detail

inline std::string encode_grid(const FeatureGrid& g) {
    return detail::encode("LGRD", g.height, g.width, g.channels, g.values);
}

inline std::string encode_mask(const Mask& m) {
    return detail::encode("LMSK", m.height, m.width, 1, m.values);
}

inline void write_grid(const std::filesystem::path& path, const FeatureGrid& g) {
    detail::write_file(path, encode_grid(g));
}

inline void write_mask(const std::filesystem::path& path, const Mask& m) {
    detail::write_file(path, encode_mask(m));
}

inline FeatureGrid decode_grid(const std::string& bytes, const std::string& origin = "<memory>") {
    if (bytes.size() < 16 || bytes.compare(0, 4, "LGRD") != 0)
        throw IoError("not an LGRD file: " + origin);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    int h = static_cast<int>(detail::get_u32_le(p + 4));
    int w = static_cast<int>(detail::get_u32_le(p + 8));
    int c = static_cast<int>(detail::get_u32_le(p + 12));
    if (h < 1 || w < 1 || c < 1) throw IoError("bad LGRD header dims: " + origin);
    std::size_t need = 16 + static_cast<std::size_t>(h) * w * c * 8;
    if (bytes.size() != need) throw IoError("LGRD size mismatch: " + origin);
    FeatureGrid g(h, w, c);
    for (std::size_t i = 0; i < g.values.size(); ++i)
        g.values[i] = detail::get_f64_le(p + 16 + i * 8);
    return g;
}

inline Mask decode_mask(const std::string& bytes, const std::string& origin = "<memory>") {
    if (bytes.size() < 16 || bytes.compare(0, 4, "LMSK") != 0)
        throw IoError("not an LMSK file: " + origin);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    int h = static_cast<int>(detail::get_u32_le(p + 4));
    int w = static_cast<int>(detail::get_u32_le(p + 8));
    int c = static_cast<int>(detail::get_u32_le(p + 12));
    if (h < 1 || w < 1 || c != 1) throw IoError("bad LMSK header dims: " + origin);
    std::size_t need = 16 + static_cast<std::size_t>(h) * w * 8;
    if (bytes.size() != need) throw IoError("LMSK size mismatch: " + origin);
    Mask m(h, w);
    for (std::size_t i = 0; i < m.values.size(); ++i)
        m.values[i] = detail::get_f64_le(p + 16 + i * 8);
    if (!m.in_range()) throw IoError("LMSK values outside [0,1]: " + origin);
    return m;
}

inline FeatureGrid read_grid(const std::filesystem::path& path) {
    return decode_grid(detail::read_file(path), path.string());
}

inline Mask read_mask(const std::filesystem::path& path) {
    return decode_mask(detail::read_file(path), path.string());
}

// P5 PGM, maxval 255, values linearly mapped from [min, max]. Constant inputs
// map to 0. Multichannel grids are emitted as their channel mean.
inline void write_pgm(const std::filesystem::path& path, const FeatureGrid& g) {
    double lo = g.values[0], hi = g.values[0];
    std::vector<double> plane(static_cast<std::size_t>(g.height) * g.width, 0.0);
    for (int h = 0; h < g.height; ++h)
        for (int w = 0; w < g.width; ++w) {
            double s = 0.0;
            for (int c = 0; c < g.channels; ++c) s += g.at(h, w, c);
            s /= g.channels;
            plane[static_cast<std::size_t>(h) * g.width + w] = s;
        }
    lo = *std::min_element(plane.begin(), plane.end());
    hi = *std::max_element(plane.begin(), plane.end());
    std::string out = "P5\n" + std::to_string(g.width) + " " + std::to_string(g.height) + "\n255\n";
    double span = hi - lo;
    for (double v : plane) {
        int byte = span > 0.0 ? static_cast<int>(std::lround((v - lo) / span * 255.0)) : 0;
        out.push_back(static_cast<char>(std::clamp(byte, 0, 255)));
    }
    detail::write_file(path, out);
}

inline void write_pgm(const std::filesystem::path& path, const Mask& m) {
    write_pgm(path, m.as_grid());
}

// FNV-1a 64-bit content hash, used as the golden-file digest.
inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::uint64_t file_digest(const std::filesystem::path& path) {
    return fnv1a64(detail::read_file(path));
}

}  // namespace layerkit
