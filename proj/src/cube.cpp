#include "fuselab/cube.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fuselab {

namespace {

constexpr char kMagic[5] = {'F', 'C', 'U', 'B', 'E'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& buf, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

void atomic_write(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw FormatError("cannot open for writing: " + tmp);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw FormatError("short write: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

void write_cube(const ImageCube& cube, const std::string& path) {
    if (cube.height < 1 || cube.width < 1 || cube.bands < 1)
        throw FormatError("write_cube: degenerate extents");
    std::string out;
    out.append(kMagic, 5);
    out.push_back(static_cast<char>(kVersion));
    put_u32(out, static_cast<std::uint32_t>(cube.height));
    put_u32(out, static_cast<std::uint32_t>(cube.width));
    put_u32(out, static_cast<std::uint32_t>(cube.bands));
    const std::int32_t depth = cube.bit_depth_origin.value_or(-1);
    put_u32(out, static_cast<std::uint32_t>(depth));
    put_u32(out, static_cast<std::uint32_t>(cube.band_labels.size()));
    for (const auto& label : cube.band_labels) {
        put_u32(out, static_cast<std::uint32_t>(label.size()));
        out.append(label);
    }
    // f32 grid, little-endian; host is little-endian on every supported target
    static_assert(sizeof(float) == 4);
    const std::size_t bytes = cube.data.size() * 4;
    const std::size_t head = out.size();
    out.resize(head + bytes);
    std::memcpy(out.data() + head, cube.data.data(), bytes);
    atomic_write(path, out);
}

ImageCube read_cube(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    auto need = [&](std::size_t off, std::size_t n) {
        if (buf.size() < off + n)
            throw FormatError(path + ": truncated at byte offset " + std::to_string(buf.size()) +
                              " (needed " + std::to_string(off + n) + ")");
    };
    need(0, 6);
    if (std::memcmp(buf.data(), kMagic, 5) != 0)
        throw FormatError(path + ": bad magic at byte offset 0");
    if (static_cast<std::uint8_t>(buf[5]) != kVersion)
        throw FormatError(path + ": unsupported version at byte offset 5");

    std::size_t off = 6;
    need(off, 20);
    ImageCube cube;
    cube.height = get_u32(buf, off);
    cube.width = get_u32(buf, off + 4);
    cube.bands = get_u32(buf, off + 8);
    const auto depth = static_cast<std::int32_t>(get_u32(buf, off + 12));
    if (depth >= 0) cube.bit_depth_origin = depth;
    const std::uint32_t nlabels = get_u32(buf, off + 16);
    off += 20;
    for (std::uint32_t i = 0; i < nlabels; ++i) {
        need(off, 4);
        const std::uint32_t len = get_u32(buf, off);
        off += 4;
        need(off, len);
        cube.band_labels.emplace_back(buf.data() + off, len);
        off += len;
    }
    if (cube.height < 1 || cube.width < 1 || cube.bands < 1)
        throw FormatError(path + ": degenerate extents in header");
    const std::size_t n = static_cast<std::size_t>(cube.size());
    need(off, n * 4);
    cube.data.resize(n);
    std::memcpy(cube.data.data(), buf.data() + off, n * 4);
    return cube;
}

// ---------------------------------------------------------------------------
// minimal PNG writer (zlib-deflated, filter 0 scanlines)
// ---------------------------------------------------------------------------

namespace {

void png_chunk(std::string& out, const char type[4], const std::string& payload) {
    std::string len4;
    for (int i = 3; i >= 0; --i)
        len4.push_back(static_cast<char>((payload.size() >> (8 * i)) & 0xff));
    out += len4;
    std::string body(type, 4);
    body += payload;
    out += body;
    const auto crc = crc32(0, reinterpret_cast<const Bytef*>(body.data()),
                           static_cast<uInt>(body.size()));
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((crc >> (8 * i)) & 0xff));
}

void write_png(const std::string& path, std::int64_t w, std::int64_t h, int channels,
               const std::vector<std::uint8_t>& pixels) {
    std::string raw;
    raw.reserve(static_cast<std::size_t>(h * (w * channels + 1)));
    for (std::int64_t y = 0; y < h; ++y) {
        raw.push_back('\0');  // filter type 0
        raw.append(reinterpret_cast<const char*>(pixels.data() + y * w * channels),
                   static_cast<std::size_t>(w * channels));
    }
    uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
    std::string z(zlen, '\0');
    if (compress2(reinterpret_cast<Bytef*>(z.data()), &zlen,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  9) != Z_OK)
        throw FormatError("png deflate failed");
    z.resize(zlen);

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    for (int i = 3; i >= 0; --i) ihdr.push_back(static_cast<char>((w >> (8 * i)) & 0xff));
    for (int i = 3; i >= 0; --i) ihdr.push_back(static_cast<char>((h >> (8 * i)) & 0xff));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);               // gray / truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    png_chunk(out, "IHDR", ihdr);
    png_chunk(out, "IDAT", z);
    png_chunk(out, "IEND", "");
    atomic_write(path, out);
}

std::uint8_t to_srgb_byte(float v) {
    const double g = std::pow(std::clamp(static_cast<double>(v), 0.0, 1.0), 1.0 / 2.2);
    return static_cast<std::uint8_t>(std::lround(255.0 * g));
}

}  // namespace

void write_png_preview(const ImageCube& cube, const std::string& path) {
    const int channels = cube.bands >= 3 ? 3 : 1;
    std::vector<std::uint8_t> px(static_cast<std::size_t>(cube.height * cube.width * channels));
    for (std::int64_t y = 0; y < cube.height; ++y)
        for (std::int64_t x = 0; x < cube.width; ++x)
            for (int c = 0; c < channels; ++c)
                px[(y * cube.width + x) * channels + c] = to_srgb_byte(cube.at(y, x, c));
    write_png(path, cube.width, cube.height, channels, px);
}

void write_png_error_map(const ImageCube& cube, const std::string& path, double scale) {
    std::vector<std::uint8_t> px(static_cast<std::size_t>(cube.height * cube.width));
    for (std::int64_t y = 0; y < cube.height; ++y)
        for (std::int64_t x = 0; x < cube.width; ++x) {
            double v = 0.0;
            for (std::int64_t b = 0; b < cube.bands; ++b) v += cube.at(y, x, b);
            v /= static_cast<double>(cube.bands);
            px[y * cube.width + x] =
                static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v / scale, 0.0, 1.0)));
        }
    write_png(path, cube.width, cube.height, 1, px);
}

}  // namespace fuselab
