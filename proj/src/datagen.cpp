#include "fuselab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "fuselab/rng.hpp"

namespace fuselab {

namespace {

constexpr double kPi = 3.14159265358979323846;

// reflect index into [0, n)
std::int64_t reflect(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    const std::int64_t period = 2 * (n - 1);
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

ImageCube synth_scene(std::int64_t height, std::int64_t width, std::int64_t bands,
                      std::uint64_t seed) {
    if (height < 16 || width < 16)
        throw ConfigError("synth_scene: extents must be >= 16");
    Rng rng(seed);

    // low-frequency cosine modes shared across bands
    struct Mode { double fx, fy, phase, amp; };
    std::vector<Mode> modes(5);
    for (auto& m : modes) {
        m.fx = rng.uniform(0.5, 3.0);
        m.fy = rng.uniform(0.5, 3.0);
        m.phase = rng.uniform(0.0, 2.0 * kPi);
        m.amp = rng.uniform(0.1, 0.3);
    }

    // piecewise-constant rectangles
    struct Rect { std::int64_t y0, x0, y1, x1; double delta; };
    std::vector<Rect> rects(4 + rng.below(4));
    for (auto& r : rects) {
        r.y0 = static_cast<std::int64_t>(rng.below(height));
        r.x0 = static_cast<std::int64_t>(rng.below(width));
        r.y1 = std::min<std::int64_t>(height, r.y0 + 4 + rng.below(height / 2));
        r.x1 = std::min<std::int64_t>(width, r.x0 + 4 + rng.below(width / 2));
        r.delta = rng.uniform(-0.15, 0.15);
    }

    std::vector<double> gain(bands), offset(bands);
    for (std::int64_t b = 0; b < bands; ++b) {
        gain[b] = rng.uniform(0.8, 1.2);
        offset[b] = rng.uniform(-0.05, 0.05);
    }

    ImageCube cube(height, width, bands);
    for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t x = 0; x < width; ++x) {
            double base = 0.5;
            for (const auto& m : modes)
                base += m.amp * std::cos(2.0 * kPi * (m.fx * x / double(width) +
                                                      m.fy * y / double(height)) +
                                         m.phase);
            for (const auto& r : rects)
                if (y >= r.y0 && y < r.y1 && x >= r.x0 && x < r.x1) base += r.delta;
            for (std::int64_t b = 0; b < bands; ++b)
                cube.at(y, x, b) = clamp01(0.5 + gain[b] * (base - 0.5) + offset[b]);
        }
    return cube;
}

std::vector<double> uniform_pan_weights(std::int64_t bands) {
    return std::vector<double>(bands, 1.0 / static_cast<double>(bands));
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double s = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        s += k[i + radius];
    }
    for (auto& v : k) v /= s;
    return k;
}

ImageCube gaussian_blur(const ImageCube& x, double sigma) {
    const auto k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    ImageCube tmp(x.height, x.width, x.bands), out(x.height, x.width, x.bands);
    for (std::int64_t y = 0; y < x.height; ++y)                       // horizontal
        for (std::int64_t c = 0; c < x.width; ++c)
            for (std::int64_t b = 0; b < x.bands; ++b) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[i + radius] * x.at(y, reflect(c + i, x.width), b);
                tmp.at(y, c, b) = static_cast<float>(acc);
            }
    for (std::int64_t y = 0; y < x.height; ++y)                       // vertical
        for (std::int64_t c = 0; c < x.width; ++c)
            for (std::int64_t b = 0; b < x.bands; ++b) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[i + radius] * tmp.at(reflect(y + i, x.height), c, b);
                out.at(y, c, b) = static_cast<float>(acc);
            }
    return out;
}

// three fixed RGB-like responses over the band axis (Gaussian bumps at
// 1/4, 1/2, 3/4 of the spectrum), each normalized to sum 1
std::vector<std::vector<double>> rgb_responses(std::int64_t bands) {
    std::vector<std::vector<double>> w(3, std::vector<double>(bands));
    const double centers[3] = {0.75, 0.5, 0.25};  // R, G, B over band index
    for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::int64_t b = 0; b < bands; ++b) {
            const double t = bands == 1 ? 0.5 : static_cast<double>(b) / (bands - 1);
            w[c][b] = std::exp(-0.5 * std::pow((t - centers[c]) / 0.18, 2.0));
            s += w[c][b];
        }
        for (auto& v : w[c]) v /= s;
    }
    return w;
}

}  // namespace

ImageCube blur_decimate(const ImageCube& x, double sigma, std::int64_t factor) {
    if (x.height % factor != 0 || x.width % factor != 0)
        throw ConfigError("blur_decimate: extents must be divisible by the factor");
    ImageCube blurred = gaussian_blur(x, sigma);
    ImageCube out(x.height / factor, x.width / factor, x.bands);
    out.bit_depth_origin = x.bit_depth_origin;
    const std::int64_t off = factor / 2;  // sample near the cell center
    for (std::int64_t y = 0; y < out.height; ++y)
        for (std::int64_t c = 0; c < out.width; ++c)
            for (std::int64_t b = 0; b < x.bands; ++b)
                out.at(y, c, b) = blurred.at(y * factor + off, c * factor + off, b);
    return out;
}

DegradedPair degrade_to_pair(const ImageCube& x, const DegradeConfig& cfg) {
    if (x.height % 4 != 0 || x.width % 4 != 0)
        throw ConfigError("degrade_to_pair: extents must be divisible by 4");

    std::vector<std::vector<double>> responses;
    if (cfg.pan_mode == PanMode::Single) {
        if (static_cast<std::int64_t>(cfg.pan_weights.size()) != x.bands)
            throw ConfigError("degrade_to_pair: pan_weights length " +
                              std::to_string(cfg.pan_weights.size()) + " != bands " +
                              std::to_string(x.bands));
        double s = 0.0;
        for (double w : cfg.pan_weights) {
            if (w < 0.0) throw ConfigError("degrade_to_pair: negative pan weight");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw ConfigError("degrade_to_pair: pan weights sum to " + std::to_string(s) +
                              ", expected 1");
        responses.push_back(cfg.pan_weights);
    } else {
        responses = rgb_responses(x.bands);
    }

    DegradedPair pair;
    pair.a = ImageCube(x.height, x.width, static_cast<std::int64_t>(responses.size()));
    for (std::int64_t y = 0; y < x.height; ++y)
        for (std::int64_t c = 0; c < x.width; ++c)
            for (std::size_t r = 0; r < responses.size(); ++r) {
                double acc = 0.0;
                for (std::int64_t b = 0; b < x.bands; ++b)
                    acc += responses[r][b] * x.at(y, c, b);
                pair.a.at(y, c, static_cast<std::int64_t>(r)) = clamp01(acc);
            }

    pair.b = blur_decimate(x, cfg.blur_sigma, 4);

    if (cfg.noise_sigma > 0.0) {
        Rng rng(cfg.seed);
        for (auto& v : pair.a.data) v = clamp01(v + cfg.noise_sigma * rng.normal());
        for (auto& v : pair.b.data) v = clamp01(v + cfg.noise_sigma * rng.normal());
    }
    pair.a.bit_depth_origin = x.bit_depth_origin;
    pair.b.bit_depth_origin = x.bit_depth_origin;
    return pair;
}

namespace {

double cubic_weight(double t) {  // Keys kernel, a = -0.5
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
}

}  // namespace

ImageCube upsample_lowres(const ImageCube& b, std::int64_t factor, UpsampleKind kind) {
    const std::int64_t oh = b.height * factor, ow = b.width * factor;
    ImageCube tmp(b.height, ow, b.bands);  // horizontal pass
    ImageCube out(oh, ow, b.bands);
    out.bit_depth_origin = b.bit_depth_origin;
    out.band_labels = b.band_labels;

    auto interp_1d = [&](auto sample, std::int64_t n, double src) -> double {
        switch (kind) {
            case UpsampleKind::Nearest:
                return sample(reflect(static_cast<std::int64_t>(std::floor(src + 0.5)), n));
            case UpsampleKind::Bilinear: {
                const auto i0 = static_cast<std::int64_t>(std::floor(src));
                const double t = src - i0;
                return (1.0 - t) * sample(reflect(i0, n)) + t * sample(reflect(i0 + 1, n));
            }
            case UpsampleKind::Bicubic:
            default: {
                const auto i0 = static_cast<std::int64_t>(std::floor(src));
                double acc = 0.0;
                for (std::int64_t i = i0 - 1; i <= i0 + 2; ++i)
                    acc += cubic_weight(src - i) * sample(reflect(i, n));
                return acc;
            }
        }
    };

    for (std::int64_t y = 0; y < b.height; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            const double src = (x + 0.5) / factor - 0.5;  // center-aligned
            for (std::int64_t c = 0; c < b.bands; ++c)
                tmp.at(y, x, c) = static_cast<float>(
                    interp_1d([&](std::int64_t i) { return double(b.at(y, i, c)); }, b.width,
                              src));
        }
    for (std::int64_t y = 0; y < oh; ++y) {
        const double src = (y + 0.5) / factor - 0.5;
        for (std::int64_t x = 0; x < ow; ++x)
            for (std::int64_t c = 0; c < b.bands; ++c)
                out.at(y, x, c) = clamp01(
                    interp_1d([&](std::int64_t i) { return double(tmp.at(i, x, c)); }, b.height,
                              src));
    }
    return out;
}

std::vector<SampleTriple> extract_patches(const SampleTriple& triple, std::int64_t patch,
                                          std::int64_t stride, std::uint64_t shuffle_seed,
                                          bool shuffle) {
    if (patch % 4 != 0) throw ConfigError("extract_patches: patch must be divisible by 4");
    if (stride % 4 != 0) throw ConfigError("extract_patches: stride must be divisible by 4");
    if (patch > triple.x.height || patch > triple.x.width)
        throw ConfigError("extract_patches: patch exceeds image extents");

    std::vector<SampleTriple> out;
    for (std::int64_t y = 0; y + patch <= triple.x.height; y += stride)
        for (std::int64_t x = 0; x + patch <= triple.x.width; x += stride) {
            SampleTriple p;
            p.id = triple.id + "_y" + std::to_string(y) + "_x" + std::to_string(x);
            auto crop = [](const ImageCube& src, std::int64_t y0, std::int64_t x0,
                           std::int64_t n) {
                ImageCube dst(n, n, src.bands);
                dst.bit_depth_origin = src.bit_depth_origin;
                for (std::int64_t yy = 0; yy < n; ++yy)
                    for (std::int64_t xx = 0; xx < n; ++xx)
                        for (std::int64_t b = 0; b < src.bands; ++b)
                            dst.at(yy, xx, b) = src.at(y0 + yy, x0 + xx, b);
                return dst;
            };
            p.a = crop(triple.a, y, x, patch);
            p.x = crop(triple.x, y, x, patch);
            p.b = crop(triple.b, y / 4, x / 4, patch / 4);
            out.push_back(std::move(p));
        }

    if (shuffle) {  // Fisher-Yates with our own RNG, portable order
        Rng rng(shuffle_seed);
        for (std::size_t i = out.size(); i > 1; --i)
            std::swap(out[i - 1], out[rng.below(i)]);
    }
    return out;
}

std::vector<ManifestEntry> DatasetManifest::split(const std::string& name) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == name) out.push_back(e);
    return out;
}

void DatasetManifest::save(const std::string& path) const {
    nlohmann::json j;
    j["patch"] = patch;
    j["bands"] = bands;
    j["pan_bands"] = pan_bands;
    j["samples"] = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json s{{"id", e.id}, {"a", e.a_path}, {"b", e.b_path}, {"split", e.split}};
        if (!e.x_path.empty()) s["x"] = e.x_path;
        j["samples"].push_back(std::move(s));
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        f << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest parse error in " + path + ": " + e.what());
    }
    DatasetManifest m;
    m.patch = j.value("patch", 0);
    m.bands = j.value("bands", 0);
    m.pan_bands = j.value("pan_bands", 1);
    std::unordered_set<std::string> seen;
    for (const auto& s : j.at("samples")) {
        ManifestEntry e;
        e.id = s.at("id");
        e.a_path = s.at("a");
        e.b_path = s.at("b");
        e.x_path = s.value("x", "");
        e.split = s.at("split");
        if (!seen.insert(e.a_path).second)
            throw FormatError("manifest lists path twice: " + e.a_path);
        m.entries.push_back(std::move(e));
    }
    return m;
}

}  // namespace fuselab
