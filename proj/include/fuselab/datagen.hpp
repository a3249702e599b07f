#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fuselab/cube.hpp"

namespace fuselab {

// One training/eval example: PAN/RGB image A, low-res spectral image B, and
// ground truth X at A's resolution. B extents are exactly (H/4, W/4).
struct SampleTriple {
    ImageCube a;
    ImageCube b;
    ImageCube x;
    std::string id;
};

struct ManifestEntry {
    std::string id;
    std::string a_path;
    std::string b_path;
    std::string x_path;  // empty for full-resolution (no-GT) samples
    std::string split;   // "train" | "val" | "test"
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::int64_t patch = 0;
    std::int64_t bands = 0;
    std::int64_t pan_bands = 1;

    std::vector<ManifestEntry> split(const std::string& name) const;
    void save(const std::string& path) const;
    static DatasetManifest load(const std::string& path);
};

// Seeded smooth random field: a few low-frequency cosine modes plus
// piecewise-constant rectangles and mild per-band gain variation, clipped
// to [0,1].
ImageCube synth_scene(std::int64_t height, std::int64_t width, std::int64_t bands,
                      std::uint64_t seed);

enum class PanMode { Single, Rgb };

struct DegradeConfig {
    std::vector<double> pan_weights;  // length C, nonnegative, sums to 1
    double blur_sigma = 1.7;
    PanMode pan_mode = PanMode::Single;
    double noise_sigma = 0.0;         // optional additive Gaussian noise
    std::uint64_t seed = 0;
};

// Uniform weights over C bands.
std::vector<double> uniform_pan_weights(std::int64_t bands);

// Reduced-resolution (Wald-style) simulation: A as a weighted band average
// of X (three fixed RGB-like responses in Rgb mode), B as Gaussian blur with
// reflective borders followed by 4x decimation.
struct DegradedPair {
    ImageCube a;
    ImageCube b;
};
DegradedPair degrade_to_pair(const ImageCube& x, const DegradeConfig& cfg);

enum class UpsampleKind { Bicubic, Bilinear, Nearest };

// Separable interpolation by an integer factor (the model uses 4), bicubic
// kernel a = -0.5, reflective borders, clipped to [0,1].
ImageCube upsample_lowres(const ImageCube& b, std::int64_t factor = 4,
                          UpsampleKind kind = UpsampleKind::Bicubic);

// Gaussian blur + 4x decimation of a single cube (also used by the QNR
// suite to bring A to B's scale).
ImageCube blur_decimate(const ImageCube& x, double sigma, std::int64_t factor = 4);

// Aligned patch grid: GT/A windows of `patch` at stride `stride`, B windows
// of patch/4 at the matching low-res offsets. Optional seeded shuffle.
std::vector<SampleTriple> extract_patches(const SampleTriple& triple, std::int64_t patch,
                                          std::int64_t stride, std::uint64_t shuffle_seed = 0,
                                          bool shuffle = false);

}  // namespace fuselab
