#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fuselab/errors.hpp"

namespace fuselab {

// H x W x Ch raster, row-major (y, x, band), values normalized to [0,1].
struct ImageCube {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::int64_t bands = 0;
    std::vector<float> data;                     // height*width*bands
    std::optional<int> bit_depth_origin;         // e.g. 11 for WorldView sensors
    std::vector<std::string> band_labels;        // optional, empty or size == bands

    ImageCube() = default;
    ImageCube(std::int64_t h, std::int64_t w, std::int64_t b)
        : height(h), width(w), bands(b), data(static_cast<std::size_t>(h * w * b), 0.0f) {}

    std::int64_t size() const { return height * width * bands; }
    float& at(std::int64_t y, std::int64_t x, std::int64_t b) {
        return data[(y * width + x) * bands + b];
    }
    float at(std::int64_t y, std::int64_t x, std::int64_t b) const {
        return data[(y * width + x) * bands + b];
    }

    // Peak value for PSNR/SSIM: (2^bits - 1) scaled into the [0,1] domain is
    // still 1.0, so the peak is 1.0 unless callers work in raw counts.
    double peak() const { return 1.0; }
};

// FCUBE container: magic "FCUBE", version byte, little-endian extents and
// f32 grid. See docs/formats.md.
ImageCube read_cube(const std::string& path);
void write_cube(const ImageCube& cube, const std::string& path);

// 8-bit grayscale/RGB PNG preview with gamma 2.2, for human inspection only.
// Cubes with >=3 bands use bands (0,1,2); single-band cubes come out gray.
void write_png_preview(const ImageCube& cube, const std::string& path);

// Fixed-scale error-map preview: values in [0, scale] map linearly to
// [0,255] gray, darker = smaller error.
void write_png_error_map(const ImageCube& cube, const std::string& path,
                         double scale = 0.25);

}  // namespace fuselab
