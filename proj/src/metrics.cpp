#include "fuselab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "fuselab/datagen.hpp"

namespace fuselab {

namespace {

void require_same_shape(const ImageCube& o, const ImageCube& x, const char* op) {
    if (o.height != x.height || o.width != x.width || o.bands != x.bands)
        throw ShapeError(std::string(op) + ": cube shapes differ");
}

std::string fmt_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

nlohmann::json json_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

// -------- Cayley–Dickson arithmetic on power-of-two length vectors --------

using HyperNum = std::vector<double>;

HyperNum cd_conj(const HyperNum& a) {
    HyperNum r = a;
    for (std::size_t i = 1; i < r.size(); ++i) r[i] = -r[i];
    return r;
}

// (a,b)(c,d) = (ac − d*b, da + bc*)
HyperNum cd_mul(const HyperNum& x, const HyperNum& y) {
    const std::size_t n = x.size();
    if (n == 1) return {x[0] * y[0]};
    const std::size_t h = n / 2;
    HyperNum a(x.begin(), x.begin() + h), b(x.begin() + h, x.end());
    HyperNum c(y.begin(), y.begin() + h), d(y.begin() + h, y.end());
    HyperNum ac = cd_mul(a, c), dsb = cd_mul(cd_conj(d), b);
    HyperNum da = cd_mul(d, a), bcs = cd_mul(b, cd_conj(c));
    HyperNum out(n);
    for (std::size_t i = 0; i < h; ++i) out[i] = ac[i] - dsb[i];
    for (std::size_t i = 0; i < h; ++i) out[h + i] = da[i] + bcs[i];
    return out;
}

double cd_norm(const HyperNum& a) {
    double s = 0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

int next_power_of_two(int n) {
    int p = 1;
    while (p < n) p *= 2;
    return p;
}

// scalar universal quality index on one block given raw samples
struct UqiAccum {
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    std::int64_t n = 0;
    void add(double a, double b) {
        sa += a;
        sb += b;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
        n += 1;
    }
    // returns false when the denominator vanishes (degenerate block)
    bool value(double& q) const {
        const double ma = sa / double(n), mb = sb / double(n);
        const double va = saa / double(n) - ma * ma;
        const double vb = sbb / double(n) - mb * mb;
        const double cab = sab / double(n) - ma * mb;
        const double denom = (va + vb) * (ma * ma + mb * mb);
        if (denom == 0.0) return false;
        q = 4.0 * cab * ma * mb / denom;
        return true;
    }
};

// blockwise scalar UQI between two single-band planes (block clamped)
double uqi_blocks(const std::vector<double>& a, const std::vector<double>& b, int height,
                  int width, int block, int* skipped) {
    const int bh = std::min(block, height), bw = std::min(block, width);
    double total = 0;
    int used = 0, skip = 0;
    for (int y0 = 0; y0 + bh <= height; y0 += bh)
        for (int x0 = 0; x0 + bw <= width; x0 += bw) {
            UqiAccum acc;
            for (int y = y0; y < y0 + bh; ++y)
                for (int x = x0; x < x0 + bw; ++x)
                    acc.add(a[y * width + x], b[y * width + x]);
            double q;
            if (acc.value(q)) {
                total += q;
                used += 1;
            } else {
                skip += 1;
            }
        }
    if (skipped) *skipped += skip;
    if (used == 0) throw MetricUndefinedError("uqi: every block degenerate");
    return total / double(used);
}

std::vector<double> band_plane(const ImageCube& c, int band) {
    std::vector<double> out(std::size_t(c.height) * c.width);
    for (std::int64_t y = 0; y < c.height; ++y)
        for (std::int64_t x = 0; x < c.width; ++x) out[y * c.width + x] = c.at(y, x, band);
    return out;
}

std::vector<double> band_mean_plane(const ImageCube& c) {
    std::vector<double> out(std::size_t(c.height) * c.width, 0.0);
    for (std::int64_t y = 0; y < c.height; ++y)
        for (std::int64_t x = 0; x < c.width; ++x) {
            double s = 0;
            for (std::int64_t b = 0; b < c.bands; ++b) s += c.at(y, x, b);
            out[y * c.width + x] = s / double(c.bands);
        }
    return out;
}

}  // namespace

double psnr(const ImageCube& o, const ImageCube& x, double peak) {
    require_same_shape(o, x, "psnr");
    if (!(peak > 0)) throw ConfigError("psnr: peak must be positive");
    double mse = 0;
    for (std::size_t i = 0; i < o.data.size(); ++i) {
        const double d = double(o.data[i]) - double(x.data[i]);
        mse += d * d;
    }
    mse /= double(o.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double sam_degrees(const ImageCube& o, const ImageCube& x, int* excluded) {
    require_same_shape(o, x, "sam");
    if (o.bands < 2) throw ConfigError("sam: needs at least 2 bands");
    double total = 0;
    std::int64_t used = 0, skip = 0;
    for (std::int64_t y = 0; y < o.height; ++y)
        for (std::int64_t px = 0; px < o.width; ++px) {
            double dot = 0, no = 0, nx = 0;
            for (std::int64_t b = 0; b < o.bands; ++b) {
                const double ov = o.at(y, px, b), xv = x.at(y, px, b);
                dot += ov * xv;
                no += ov * ov;
                nx += xv * xv;
            }
            no = std::sqrt(no);
            nx = std::sqrt(nx);
            if (no < 1e-12 || nx < 1e-12) {
                skip += 1;
                continue;
            }
            const double c = std::clamp(dot / (no * nx), -1.0, 1.0);
            total += std::acos(c);
            used += 1;
        }
    if (excluded) *excluded = int(skip);
    if (used == 0) throw MetricUndefinedError("sam: every pixel spectrum degenerate");
    return total / double(used) * (180.0 / 3.14159265358979323846);
}

double ergas(const ImageCube& o, const ImageCube& x, double ratio) {
    require_same_shape(o, x, "ergas");
    if (!(ratio > 0)) throw ConfigError("ergas: ratio must be positive");
    const double npix = double(o.height) * double(o.width);
    double acc = 0;
    for (std::int64_t b = 0; b < o.bands; ++b) {
        double mu = 0, se = 0;
        for (std::int64_t y = 0; y < o.height; ++y)
            for (std::int64_t px = 0; px < o.width; ++px) {
                const double xv = x.at(y, px, b);
                const double d = o.at(y, px, b) - xv;
                mu += xv;
                se += d * d;
            }
        mu /= npix;
        if (mu == 0.0)
            throw MetricUndefinedError("ergas: reference band " + std::to_string(b) +
                                       " has zero mean");
        const double rmse = std::sqrt(se / npix);
        acc += (rmse / mu) * (rmse / mu);
    }
    return (100.0 / ratio) * std::sqrt(acc / double(o.bands));
}

double q2n(const ImageCube& o, const ImageCube& x, int block, int shift, int* skipped) {
    require_same_shape(o, x, "q2n");
    if (block < 1 || shift < 1) throw ConfigError("q2n: block and shift must be >= 1");
    // Bands occupy the imaginary components of the hypercomplex embedding
    // (real part zero), which makes the index exactly invariant to band
    // permutations applied identically to both cubes.
    const int cpad = next_power_of_two(int(o.bands) + 1);
    const int bh = int(std::min<std::int64_t>(block, o.height));
    const int bw = int(std::min<std::int64_t>(block, o.width));
    const int sh = std::min(shift, bh), sw = std::min(shift, bw);

    double total = 0;
    int used = 0, skip = 0;
    for (std::int64_t y0 = 0; y0 + bh <= o.height; y0 += sh)
        for (std::int64_t x0 = 0; x0 + bw <= o.width; x0 += sw) {
            const double n = double(bh) * double(bw);
            // blockwise hypercomplex statistics
            HyperNum m1(cpad, 0.0), m2(cpad, 0.0), cross(cpad, 0.0);
            double p1 = 0, p2 = 0;  // E|z|² accumulators
            HyperNum z1(cpad), z2(cpad);
            for (std::int64_t y = y0; y < y0 + bh; ++y)
                for (std::int64_t px = x0; px < x0 + bw; ++px) {
                    std::fill(z1.begin(), z1.end(), 0.0);
                    std::fill(z2.begin(), z2.end(), 0.0);
                    for (std::int64_t b = 0; b < o.bands; ++b) {
                        z1[b + 1] = o.at(y, px, b);
                        z2[b + 1] = x.at(y, px, b);
                    }
                    HyperNum prod = cd_mul(z1, cd_conj(z2));
                    for (int i = 0; i < cpad; ++i) {
                        m1[i] += z1[i];
                        m2[i] += z2[i];
                        cross[i] += prod[i];
                    }
                    p1 += cd_norm(z1) * cd_norm(z1);
                    p2 += cd_norm(z2) * cd_norm(z2);
                }
            for (int i = 0; i < cpad; ++i) {
                m1[i] /= n;
                m2[i] /= n;
                cross[i] /= n;
            }
            const double nm1 = cd_norm(m1), nm2 = cd_norm(m2);
            const double var1 = p1 / n - nm1 * nm1;
            const double var2 = p2 / n - nm2 * nm2;
            HyperNum mprod = cd_mul(m1, cd_conj(m2));
            HyperNum cov(cpad);
            for (int i = 0; i < cpad; ++i) cov[i] = cross[i] - mprod[i];
            const double denom1 = var1 + var2;
            const double denom2 = nm1 * nm1 + nm2 * nm2;
            if (denom1 == 0.0 || denom2 == 0.0) {
                skip += 1;
                continue;
            }
            total += (2.0 * cd_norm(cov) / denom1) * (2.0 * nm1 * nm2 / denom2);
            used += 1;
        }
    if (skipped) *skipped = skip;
    if (used == 0) throw MetricUndefinedError("q2n: every block degenerate");
    return total / double(used);
}

double ssim(const ImageCube& o, const ImageCube& x, double peak) {
    require_same_shape(o, x, "ssim");
    if (!(peak > 0)) throw ConfigError("ssim: peak must be positive");
    constexpr int W = 11;
    if (o.height < W || o.width < W)
        throw MetricUndefinedError("ssim: extents must be at least 11");

    double win[W];
    double wsum = 0;
    for (int i = 0; i < W; ++i) {
        const double d = i - (W - 1) / 2.0;
        win[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        wsum += win[i];
    }
    for (double& w : win) w /= wsum;

    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);

    double total = 0;
    std::int64_t count = 0;
    for (std::int64_t band = 0; band < o.bands; ++band)
        for (std::int64_t y0 = 0; y0 + W <= o.height; ++y0)
            for (std::int64_t x0 = 0; x0 + W <= o.width; ++x0) {
                double mo = 0, mx = 0, soo = 0, sxx = 0, sox = 0;
                for (int dy = 0; dy < W; ++dy)
                    for (int dx = 0; dx < W; ++dx) {
                        const double w = win[dy] * win[dx];
                        const double ov = o.at(y0 + dy, x0 + dx, band);
                        const double xv = x.at(y0 + dy, x0 + dx, band);
                        mo += w * ov;
                        mx += w * xv;
                        soo += w * ov * ov;
                        sxx += w * xv * xv;
                        sox += w * ov * xv;
                    }
                const double vo = soo - mo * mo;
                const double vx = sxx - mx * mx;
                const double cox = sox - mo * mx;
                total += ((2 * mo * mx + c1) * (2 * cox + c2)) /
                         ((mo * mo + mx * mx + c1) * (vo + vx + c2));
                count += 1;
            }
    return total / double(count);
}

ImageCube aem(const ImageCube& o, const ImageCube& x) {
    require_same_shape(o, x, "aem");
    ImageCube out;
    out.height = o.height;
    out.width = o.width;
    out.bands = 1;
    out.data.resize(std::size_t(o.height) * o.width);
    for (std::int64_t y = 0; y < o.height; ++y)
        for (std::int64_t px = 0; px < o.width; ++px) {
            double s = 0;
            for (std::int64_t b = 0; b < o.bands; ++b)
                s += std::abs(o.at(y, px, b) - x.at(y, px, b));
            out.data[std::size_t(y * o.width + px)] = float(s / double(o.bands));
        }
    return out;
}

FullResScores qnr_suite(const ImageCube& o, const ImageCube& a, const ImageCube& b, int ratio) {
    if (o.height != a.height || o.width != a.width)
        throw ShapeError("qnr: fused output and guide extents differ");
    if (o.bands != b.bands) throw ShapeError("qnr: fused output and low-res band counts differ");
    if (o.height != b.height * ratio || o.width != b.width * ratio)
        throw ShapeError("qnr: low-res extents inconsistent with the scale ratio");

    FullResScores out;

    // spectral distortion: inter-band Q drift between O and B
    if (o.bands >= 2) {
        double acc = 0;
        int pairs = 0;
        for (std::int64_t i = 0; i < o.bands; ++i)
            for (std::int64_t j = i + 1; j < o.bands; ++j) {
                const double qo =
                    uqi_blocks(band_plane(o, int(i)), band_plane(o, int(j)), int(o.height),
                               int(o.width), 32, &out.skipped_blocks);
                const double qb =
                    uqi_blocks(band_plane(b, int(i)), band_plane(b, int(j)), int(b.height),
                               int(b.width), 32, &out.skipped_blocks);
                acc += std::abs(qo - qb);
                pairs += 1;
            }
        out.d_lambda = acc / double(pairs);
    }

    // spatial distortion: per-band Q against the guide at each scale
    const ImageCube a_low = blur_decimate(a, 1.7, ratio);
    const auto a_plane = band_mean_plane(a);
    const auto a_low_plane = band_mean_plane(a_low);
    double acc = 0;
    for (std::int64_t band = 0; band < o.bands; ++band) {
        const double q_hi = uqi_blocks(band_plane(o, int(band)), a_plane, int(o.height),
                                       int(o.width), 32, &out.skipped_blocks);
        const double q_lo = uqi_blocks(band_plane(b, int(band)), a_low_plane, int(b.height),
                                       int(b.width), 32, &out.skipped_blocks);
        acc += std::abs(q_hi - q_lo);
    }
    out.d_s = acc / double(o.bands);
    out.qnr = (1.0 - out.d_lambda) * (1.0 - out.d_s);
    return out;
}

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd r;
    if (values.empty()) return r;
    for (double v : values) r.mean += v;
    r.mean /= double(values.size());
    double acc = 0;
    for (double v : values) acc += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(acc / double(values.size()));  // population convention
    return r;
}

namespace {

template <typename Row, typename Get>
MeanStd aggregate(const std::vector<Row>& rows, Get get) {
    std::vector<double> vals;
    vals.reserve(rows.size());
    for (const auto& r : rows) vals.push_back(get(r));
    return mean_std(vals);
}

}  // namespace

void ReducedResReport::finalize() {
    psnr = aggregate(samples, [](const ReducedResSample& s) { return s.psnr; });
    sam = aggregate(samples, [](const ReducedResSample& s) { return s.sam; });
    ergas = aggregate(samples, [](const ReducedResSample& s) { return s.ergas; });
    q2n = aggregate(samples, [](const ReducedResSample& s) { return s.q2n; });
    ssim = aggregate(samples, [](const ReducedResSample& s) { return s.ssim; });
}

nlohmann::json ReducedResReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : samples)
        rows.push_back({{"id", s.id},
                        {"psnr", json_metric(s.psnr)},
                        {"sam", s.sam},
                        {"ergas", s.ergas},
                        {"q2n", s.q2n},
                        {"ssim", s.ssim},
                        {"sam_excluded", s.sam_excluded},
                        {"q2n_skipped", s.q2n_skipped}});
    return {{"samples", rows},
            {"aggregate",
             {{"psnr", {{"mean", json_metric(psnr.mean)}, {"std", json_metric(psnr.std)}}},
              {"sam", {{"mean", sam.mean}, {"std", sam.std}}},
              {"ergas", {{"mean", ergas.mean}, {"std", ergas.std}}},
              {"q2n", {{"mean", q2n.mean}, {"std", q2n.std}}},
              {"ssim", {{"mean", ssim.mean}, {"std", ssim.std}}}}}};
}

void ReducedResReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("report: cannot open " + path.string());
    os << "id,psnr,sam,ergas,q2n,ssim,sam_excluded,q2n_skipped\n";
    for (const auto& s : samples)
        os << s.id << ',' << fmt_metric(s.psnr) << ',' << fmt_metric(s.sam) << ','
           << fmt_metric(s.ergas) << ',' << fmt_metric(s.q2n) << ',' << fmt_metric(s.ssim)
           << ',' << s.sam_excluded << ',' << s.q2n_skipped << '\n';
    os << "mean," << fmt_metric(psnr.mean) << ',' << fmt_metric(sam.mean) << ','
       << fmt_metric(ergas.mean) << ',' << fmt_metric(q2n.mean) << ',' << fmt_metric(ssim.mean)
       << ",,\n";
    os << "std," << fmt_metric(psnr.std) << ',' << fmt_metric(sam.std) << ','
       << fmt_metric(ergas.std) << ',' << fmt_metric(q2n.std) << ',' << fmt_metric(ssim.std)
       << ",,\n";
}

void FullResReport::finalize() {
    d_lambda = aggregate(samples, [](const FullResSample& s) { return s.d_lambda; });
    d_s = aggregate(samples, [](const FullResSample& s) { return s.d_s; });
    qnr = aggregate(samples, [](const FullResSample& s) { return s.qnr; });
}

nlohmann::json FullResReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : samples)
        rows.push_back({{"id", s.id},
                        {"d_lambda", s.d_lambda},
                        {"d_s", s.d_s},
                        {"qnr", s.qnr},
                        {"skipped_blocks", s.skipped_blocks}});
    return {{"samples", rows},
            {"aggregate",
             {{"d_lambda", {{"mean", d_lambda.mean}, {"std", d_lambda.std}}},
              {"d_s", {{"mean", d_s.mean}, {"std", d_s.std}}},
              {"qnr", {{"mean", qnr.mean}, {"std", qnr.std}}}}}};
}

void FullResReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("report: cannot open " + path.string());
    os << "id,d_lambda,d_s,qnr,skipped_blocks\n";
    for (const auto& s : samples)
        os << s.id << ',' << fmt_metric(s.d_lambda) << ',' << fmt_metric(s.d_s) << ','
           << fmt_metric(s.qnr) << ',' << s.skipped_blocks << '\n';
    os << "mean," << fmt_metric(d_lambda.mean) << ',' << fmt_metric(d_s.mean) << ','
       << fmt_metric(qnr.mean) << ",\n";
    os << "std," << fmt_metric(d_lambda.std) << ',' << fmt_metric(d_s.std) << ','
       << fmt_metric(qnr.std) << ",\n";
}

}  // namespace fuselab
