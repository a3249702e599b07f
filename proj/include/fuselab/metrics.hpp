#pragma once

// Evaluation protocol: reduced-resolution reference indexes (PSNR, SAM,
// ERGAS, Q2ⁿ, SSIM), full-resolution no-reference indexes (D_λ, D_s, QNR)
// and absolute error maps.  All functions are pure; degenerate cases follow
// a skip-and-count convention with the counts surfaced to the caller.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fuselab/cube.hpp"
#include "fuselab/errors.hpp"

namespace fuselab {

// 10·log10(peak²/MSE) over all pixels and bands; +inf when O == X.
double psnr(const ImageCube& o, const ImageCube& x, double peak);

// Mean spectral angle in degrees; pixels where either spectrum has norm
// < 1e-12 are excluded and counted in *excluded (if given).
double sam_degrees(const ImageCube& o, const ImageCube& x, int* excluded = nullptr);

// (100/ratio)·sqrt((1/C)·Σ_b (RMSE_b/μ_b)²);  μ_b from the reference X.
double ergas(const ImageCube& o, const ImageCube& x, double ratio = 4.0);

// Hypercomplex (Cayley–Dickson) universal quality index, blockwise mean.
// Bands are zero-padded to the next power of two; the block is clamped to
// the image extents; zero-denominator blocks are skipped and counted.
double q2n(const ImageCube& o, const ImageCube& x, int block = 32, int shift = 32,
           int* skipped = nullptr);

// Mean SSIM over bands, 11-tap Gaussian window (σ = 1.5), K1=0.01, K2=0.03,
// valid-region convolution.  Requires extents ≥ 11.
double ssim(const ImageCube& o, const ImageCube& x, double peak);

// Per-pixel mean over bands of |O − X|, as a single-band cube.
ImageCube aem(const ImageCube& o, const ImageCube& x);

struct FullResScores {
    double d_lambda = 0.0;
    double d_s = 0.0;
    double qnr = 0.0;
    int skipped_blocks = 0;
};

// D_λ / D_s / QNR with unit exponents; Q is the scalar UQI on 32×32 blocks.
// A↓ is A degraded to B's scale with the Wald blur+decimate operator.
FullResScores qnr_suite(const ImageCube& o, const ImageCube& a, const ImageCube& b,
                        int ratio = 4);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population convention
};

MeanStd mean_std(const std::vector<double>& values);

struct ReducedResSample {
    std::string id;
    double psnr = 0.0;
    double sam = 0.0;
    double ergas = 0.0;
    double q2n = 0.0;
    double ssim = 0.0;
    int sam_excluded = 0;
    int q2n_skipped = 0;
};

struct ReducedResReport {
    std::vector<ReducedResSample> samples;
    MeanStd psnr, sam, ergas, q2n, ssim;

    void finalize();  // recompute aggregates from the per-sample rows
    nlohmann::json to_json() const;
    void write_csv(const std::filesystem::path& path) const;
};

struct FullResSample {
    std::string id;
    double d_lambda = 0.0;
    double d_s = 0.0;
    double qnr = 0.0;
    int skipped_blocks = 0;
};

struct FullResReport {
    std::vector<FullResSample> samples;
    MeanStd d_lambda, d_s, qnr;

    void finalize();
    nlohmann::json to_json() const;
    void write_csv(const std::filesystem::path& path) const;
};

}  // namespace fuselab
