#include "fuselab/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <atomic>
#include <thread>
#include <vector>

#include "fuselab/checkpoint.hpp"
#include "fuselab/conv.hpp"
#include "fuselab/datagen.hpp"
#include "fuselab/metrics.hpp"
#include "fuselab/rng.hpp"

namespace fuselab {

namespace fs = std::filesystem;

namespace {

void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known,
                    const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
}

template <typename T>
Tensor<T> cube_to_tensor(const ImageCube& c) {
    std::vector<T> v(c.data.begin(), c.data.end());
    return Tensor<T>({1, c.height, c.width, c.bands}, std::move(v));
}

template <typename T>
ImageCube tensor_to_cube(const Tensor<T>& t) {
    if (t.shape().size() != 4 || t.shape()[0] != 1)
        throw ShapeError("tensor_to_cube: expected (1,H,W,C), got " + shape_str(t.shape()));
    ImageCube c(t.shape()[1], t.shape()[2], t.shape()[3]);
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] = float(t.data()[i]);
    return c;
}

void write_resolved_config(const RunConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    const fs::path tmp = dir / "resolved_config.json.tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        os << cfg.to_json().dump(2) << '\n';
    }
    fs::rename(tmp, dir / "resolved_config.json");
}

template <typename F>
void dispatch_precision(const std::string& precision, F&& f) {
    if (precision == "f32")
        f(float{});
    else if (precision == "f64")
        f(double{});
    else
        throw ConfigError("precision must be \"f32\" or \"f64\", got \"" + precision + "\"");
}

DegradeConfig degrade_config_for(const RunConfig& cfg, std::uint64_t seed) {
    DegradeConfig dc;
    dc.pan_weights = uniform_pan_weights(cfg.model.C);
    dc.pan_mode = cfg.model.c == 3 ? PanMode::Rgb : PanMode::Single;
    dc.noise_sigma = cfg.gen.noise_sigma;
    dc.seed = seed;
    return dc;
}

template <typename T>
std::vector<TrainSample<T>> load_split(const DatasetManifest& manifest, const fs::path& base,
                                       const std::string& split) {
    std::vector<TrainSample<T>> out;
    for (const auto& e : manifest.split(split)) {
        if (e.x_path.empty())
            throw ConfigError("train: sample " + e.id + " has no ground truth");
        auto a = read_cube((base / e.a_path).string());
        auto b = read_cube((base / e.b_path).string());
        auto x = read_cube((base / e.x_path).string());
        out.push_back({cube_to_tensor<T>(a), cube_to_tensor<T>(upsample_lowres(b)),
                       cube_to_tensor<T>(x)});
    }
    return out;
}

template <typename T>
void restore_net(U2Net<T>& net, const Checkpoint<T>& ck) {
    for (const auto& [name, t] : ck.tensors) {
        if (name.rfind("opt.", 0) == 0) continue;
        auto& p = net.params().get(name);
        if (p.shape() != t.shape())
            throw ConfigError("checkpoint incompatible: shape mismatch for " + name);
        p.mutable_data() = t.data();
    }
}

// Checkpoint configs echo the training epochs; model compatibility is what
// eval/infer actually require.
void require_model_match(const nlohmann::json& ck_config, const ModelConfig& model) {
    if (!ck_config.contains("model") || ck_config["model"] != model.to_json())
        throw ConfigError(
            "checkpoint incompatible: its model config does not match the requested one");
}

// Run fn(i) for i in [0, n) across worker_threads() threads, results keyed
// by index so aggregation order stays fixed.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    const int workers = std::min<std::int64_t>(worker_threads(), n);
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<std::int64_t> next{0};
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::int64_t i = next++; i < n; i = next++) fn(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace

// ---------------------------------------------------------------- configs

void GenConfig::validate() const {
    if (scenes < 1) throw ConfigError("gen: scenes must be >= 1");
    if (scene_size < 16) throw ConfigError("gen: scene_size must be >= 16");
    if (patch < 8 || patch > scene_size) throw ConfigError("gen: patch must be in [8, scene_size]");
    if (stride < 1) throw ConfigError("gen: stride must be >= 1");
    if (patch % 4 != 0 || stride % 4 != 0)
        throw ConfigError("gen: patch and stride must be divisible by 4");
    if (noise_sigma < 0) throw ConfigError("gen: noise_sigma must be >= 0");
    if (train_split < 0 || val_split < 0 || std::abs(train_split + val_split - 1.0) > 1e-9)
        throw ConfigError("gen: split ratios must be nonnegative and sum to 1");
}

nlohmann::json GenConfig::to_json() const {
    return {{"scenes", scenes},       {"scene_size", scene_size},
            {"patch", patch},         {"stride", stride},
            {"noise_sigma", noise_sigma}, {"train_split", train_split},
            {"val_split", val_split}};
}

GenConfig GenConfig::from_json(const nlohmann::json& j) {
    reject_unknown(j, {"scenes", "scene_size", "patch", "stride", "noise_sigma", "train_split",
                       "val_split"},
                   "gen config");
    GenConfig g;
    g.scenes = j.value("scenes", g.scenes);
    g.scene_size = j.value("scene_size", g.scene_size);
    g.patch = j.value("patch", g.patch);
    g.stride = j.value("stride", g.stride);
    g.noise_sigma = j.value("noise_sigma", g.noise_sigma);
    g.train_split = j.value("train_split", g.train_split);
    g.val_split = j.value("val_split", g.val_split);
    g.validate();
    return g;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    gen.validate();
    if (precision != "f32" && precision != "f64")
        throw ConfigError("precision must be \"f32\" or \"f64\"");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

nlohmann::json RunConfig::to_json() const {
    return {{"model", model.to_json()},
            {"train", train.to_json()},
            {"gen", gen.to_json()},
            {"precision", precision},
            {"dataset_dir", dataset_dir},
            {"checkpoint", checkpoint},
            {"out_dir", out_dir},
            {"eval_split", eval_split},
            {"oracle_inject", oracle_inject}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    reject_unknown(j,
                   {"preset", "model", "train", "gen", "precision", "dataset_dir", "checkpoint",
                    "out_dir", "eval_split", "oracle_inject"},
                   "run config");
    RunConfig c;
    if (j.contains("preset")) c.apply_preset(j["preset"].get<std::string>());
    // user keys override the preset; unknown keys are still rejected
    nlohmann::json mj = c.model.to_json();
    if (j.contains("model")) mj.update(j["model"]);
    c.model = ModelConfig::from_json(mj);
    nlohmann::json tj = c.train.to_json();
    if (j.contains("train")) tj.update(j["train"]);
    c.train = TrainConfig::from_json(tj);
    if (j.contains("gen")) c.gen = GenConfig::from_json(j["gen"]);
    c.precision = j.value("precision", c.precision);
    c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.eval_split = j.value("eval_split", c.eval_split);
    c.oracle_inject = j.value("oracle_inject", c.oracle_inject);
    c.validate();
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::apply_preset(const std::string& name) {
    if (name == "wv-like") {
        model.c = 1;
        model.C = 8;
        model.S = 32;
        model.Sprime = 16;
        train.lr0 = 1e-3;
        train.epochs = 360;
        train.batch_size = 16;
        train.halve_every = 100;
    } else if (name == "cave-like") {
        model.c = 3;
        model.C = 31;
        model.S = 64;
        model.Sprime = 16;
        train.lr0 = 3e-4;
        train.epochs = 500;
        train.batch_size = 8;
        train.halve_every = 50;
    } else {
        throw ConfigError("unknown preset \"" + name + "\" (expected wv-like or cave-like)");
    }
}

int worker_threads() {
    const char* env = std::getenv("FUSELAB_THREADS");
    if (!env || !*env) return 1;
    const long n = std::strtol(env, nullptr, 10);
    if (n < 1) throw ConfigError("FUSELAB_THREADS must be a positive integer");
    return int(n);
}

// ---------------------------------------------------------------- commands

void cmd_gen(const RunConfig& cfg) {
    cfg.validate();
    const fs::path out = cfg.out_dir;
    fs::create_directories(out / "data");

    DatasetManifest manifest;
    manifest.patch = cfg.gen.patch;
    manifest.bands = cfg.model.C;
    manifest.pan_bands = cfg.model.c;

    std::vector<SampleTriple> all;
    for (int s = 0; s < cfg.gen.scenes; ++s) {
        auto scene =
            synth_scene(cfg.gen.scene_size, cfg.gen.scene_size, cfg.model.C, cfg.train.seed + s);
        auto [a, b] = degrade_to_pair(scene, degrade_config_for(cfg, cfg.train.seed + s));
        SampleTriple triple{std::move(a), std::move(b), std::move(scene),
                            "scene" + std::to_string(s)};
        auto patches = extract_patches(triple, cfg.gen.patch, cfg.gen.stride);
        for (auto& p : patches) all.push_back(std::move(p));
    }

    // deterministic shuffled split
    std::vector<std::size_t> order(all.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(cfg.train.seed ^ 0x5eedULL);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const std::size_t n_train = std::size_t(std::llround(cfg.gen.train_split * double(all.size())));

    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto& t = all[order[k]];
        ManifestEntry e;
        e.id = t.id;
        e.split = k < n_train ? "train" : "val";
        e.a_path = "data/" + t.id + "_a.fcube";
        e.b_path = "data/" + t.id + "_b.fcube";
        e.x_path = "data/" + t.id + "_x.fcube";
        write_cube(t.a, (out / e.a_path).string());
        write_cube(t.b, (out / e.b_path).string());
        write_cube(t.x, (out / e.x_path).string());
        manifest.entries.push_back(std::move(e));
    }
    manifest.save((out / "manifest.json").string());
    write_resolved_config(cfg, out);
}

void cmd_train(const RunConfig& cfg, bool resume) {
    cfg.validate();
    if (cfg.dataset_dir.empty()) throw ConfigError("train: dataset_dir is required");
    const fs::path base = cfg.dataset_dir;
    auto manifest = DatasetManifest::load((base / "manifest.json").string());
    if (manifest.bands != cfg.model.C || manifest.pan_bands != cfg.model.c)
        throw ConfigError("train: dataset band counts do not match the model config");

    dispatch_precision(cfg.precision, [&](auto tag) {
        using T = decltype(tag);
        auto samples = load_split<T>(manifest, base, "train");
        U2Net<T> net(cfg.model);
        fit(net, samples, cfg.train, cfg.out_dir, resume);
    });
    write_resolved_config(cfg, cfg.out_dir);
}

void cmd_eval(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.dataset_dir.empty()) throw ConfigError("eval: dataset_dir is required");
    if (cfg.checkpoint.empty()) throw ConfigError("eval: checkpoint is required");
    const fs::path base = cfg.dataset_dir;
    const fs::path out = cfg.out_dir;
    fs::create_directories(out / "aem");
    auto manifest = DatasetManifest::load((base / "manifest.json").string());
    auto entries = manifest.split(cfg.eval_split);
    if (entries.empty())
        throw ConfigError("eval: no samples in split \"" + cfg.eval_split + "\"");

    // forward passes (serial), then metric evaluation (parallel over samples)
    struct EvalItem {
        ManifestEntry entry;
        ImageCube a, b, o;
        ImageCube x;  // empty bands when no ground truth
    };
    std::vector<EvalItem> items;
    dispatch_precision(cfg.precision, [&](auto tag) {
        using T = decltype(tag);
        auto ck = load_checkpoint<T>(cfg.checkpoint);
        require_model_match(ck.config, cfg.model);
        U2Net<T> net(cfg.model);
        restore_net(net, ck);
        for (const auto& e : entries) {
            EvalItem item;
            item.entry = e;
            item.a = read_cube((base / e.a_path).string());
            item.b = read_cube((base / e.b_path).string());
            if (!e.x_path.empty()) item.x = read_cube((base / e.x_path).string());
            if (cfg.oracle_inject) {
                if (item.x.bands == 0)
                    throw ConfigError("eval: oracle injection needs ground truth");
                item.o = item.x;
            } else {
                auto o = net.forward(cube_to_tensor<T>(item.a),
                                     cube_to_tensor<T>(upsample_lowres(item.b)));
                item.o = tensor_to_cube(o.detach());
            }
            items.push_back(std::move(item));
        }
    });

    const bool reduced = !items.empty() && items.front().x.bands != 0;
    for (const auto& it : items)
        if ((it.x.bands != 0) != reduced)
            throw ConfigError("eval: split mixes samples with and without ground truth");

    if (reduced) {
        ReducedResReport report;
        report.samples.resize(items.size());
        parallel_for(std::int64_t(items.size()), [&](std::int64_t i) {
            const auto& it = items[std::size_t(i)];
            ReducedResSample row;
            row.id = it.entry.id;
            row.psnr = psnr(it.o, it.x, it.x.peak());
            row.sam = sam_degrees(it.o, it.x, &row.sam_excluded);
            row.ergas = ergas(it.o, it.x);
            row.q2n = q2n(it.o, it.x, 32, 32, &row.q2n_skipped);
            row.ssim = ssim(it.o, it.x, it.x.peak());
            report.samples[std::size_t(i)] = std::move(row);
            auto map = aem(it.o, it.x);
            write_cube(map, (out / "aem" / (it.entry.id + "_aem.fcube")).string());
            write_png_error_map(map, (out / "aem" / (it.entry.id + "_aem.png")).string());
        });
        report.finalize();
        report.write_csv(out / "reduced_report.csv");
        std::ofstream(out / "reduced_report.json") << report.to_json().dump(2) << '\n';
    } else {
        FullResReport report;
        report.samples.resize(items.size());
        parallel_for(std::int64_t(items.size()), [&](std::int64_t i) {
            const auto& it = items[std::size_t(i)];
            auto scores = qnr_suite(it.o, it.a, it.b);
            report.samples[std::size_t(i)] = {it.entry.id, scores.d_lambda, scores.d_s,
                                              scores.qnr, scores.skipped_blocks};
        });
        report.finalize();
        report.write_csv(out / "full_report.csv");
        std::ofstream(out / "full_report.json") << report.to_json().dump(2) << '\n';
    }
    write_resolved_config(cfg, out);
}

void cmd_infer(const RunConfig& cfg, const std::string& a_path, const std::string& b_path) {
    cfg.validate();
    if (cfg.checkpoint.empty()) throw ConfigError("infer: checkpoint is required");
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    auto a = read_cube(a_path);
    auto b = read_cube(b_path);
    dispatch_precision(cfg.precision, [&](auto tag) {
        using T = decltype(tag);
        auto ck = load_checkpoint<T>(cfg.checkpoint);
        require_model_match(ck.config, cfg.model);
        U2Net<T> net(cfg.model);
        restore_net(net, ck);
        auto o = net.forward(cube_to_tensor<T>(a), cube_to_tensor<T>(upsample_lowres(b)));
        auto cube = tensor_to_cube(o.detach());
        write_cube(cube, (out / "fused.fcube").string());
        write_png_preview(cube, (out / "fused.png").string());
    });
    write_resolved_config(cfg, out);
}

// ---------------------------------------------------------------- verify

namespace {

struct SuiteResult {
    std::string name;
    bool pass = false;
    std::string detail;
    std::uint64_t seed = 0;
};

Tensor<double> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>(std::move(shape), std::move(v));
}

SuiteResult verify_gradients() {
    SuiteResult r{"gradient.primitives", true, "", 1};
    Rng rng(r.seed);
    auto check = [&](const char* op, double err, double tol) {
        if (err > tol) {
            r.pass = false;
            if (!r.detail.empty()) r.detail += "; ";
            r.detail += std::string(op) + " rel err " + std::to_string(err);
        }
    };
    {
        auto a = rand_tensor({3, 4}, rng);
        auto b = rand_tensor({4, 2}, rng);
        check("matmul", finite_diff_check(
                            [&](const Tensor<double>& x) { return sum(matmul(x, b)); }, a),
              1e-4);
    }
    {
        auto x = rand_tensor({4, 5}, rng);
        auto w = rand_tensor({4, 5}, rng);
        check("softmax_rows", finite_diff_check(
                                  [&](const Tensor<double>& t) {
                                      return sum(mul(softmax_rows(t), w.detach()));
                                  },
                                  x),
              1e-4);
    }
    {
        auto x = rand_tensor({1, 6, 6, 2}, rng);
        auto k = rand_tensor({3, 3, 2, 3}, rng, -0.5, 0.5);
        auto bias = rand_tensor({3}, rng, -0.1, 0.1);
        check("conv2d", finite_diff_check(
                            [&](const Tensor<double>& t) {
                                return sum(conv2d(t, k.detach(), bias.detach(), 1, 1));
                            },
                            x),
              1e-4);
    }
    {
        auto x = rand_tensor({2, 7}, rng, 0.1, 2.0);  // keep away from the kink
        check("lrelu", finite_diff_check(
                           [&](const Tensor<double>& t) {
                               return sum(mul(lrelu(t, 0.2), lrelu(scale(t, -1.0), 0.2)));
                           },
                           x),
              1e-4);
    }
    {
        auto x = rand_tensor({2, 3, 4}, rng);
        auto w = rand_tensor({4, 5}, rng);
        auto b = rand_tensor({5}, rng);
        check("fully_connected",
              finite_diff_check(
                  [&](const Tensor<double>& t) {
                      return sum(fully_connected(t, w.detach(), b.detach()));
                  },
                  x),
              1e-4);
    }
    if (r.pass) r.detail = "all primitive gradients within 1e-4";
    return r;
}

SuiteResult verify_attention() {
    SuiteResult r{"attention.invariants", true, "", 2};
    Rng rng(r.seed);
    for (int trial = 0; trial < 100 && r.pass; ++trial) {
        const int hw = 2 + int(rng.below(8));
        const int sp = 1 + int(rng.below(4));
        const int heads = 1 + int(rng.below(3));
        auto cspa = spatial_self_correlation(rand_tensor({hw, sp, heads}, rng),
                                             rand_tensor({hw, sp, heads}, rng));
        auto cspe = spectral_self_correlation(rand_tensor({hw, sp, heads}, rng),
                                              rand_tensor({hw, sp, heads}, rng));
        auto rows_ok = [](const Tensor<double>& m, int n, int nh) {
            for (int h = 0; h < nh; ++h)
                for (int row = 0; row < n; ++row) {
                    double s = 0;
                    for (int col = 0; col < n; ++col) {
                        const double v = m.data()[(row * n + col) * nh + h];
                        if (v < 0.0 || v > 1.0) return false;
                        s += v;
                    }
                    if (std::abs(s - 1.0) > 1e-6) return false;
                }
            return true;
        };
        if (!rows_ok(cspa, hw, heads) || !rows_ok(cspe, sp, heads)) {
            r.pass = false;
            r.detail = "row-stochasticity violated at trial " + std::to_string(trial);
        }
        // constant spatial input -> uniform Cspa
        auto cu = spatial_self_correlation(Tensor<double>::full({hw, sp, heads}, 0.37),
                                           Tensor<double>::full({hw, sp, heads}, 0.37));
        for (double v : cu.data())
            if (std::abs(v - 1.0 / hw) > 1e-6) {
                r.pass = false;
                r.detail = "constant input not uniform at trial " + std::to_string(trial);
            }
    }
    if (r.pass) r.detail = "100 instances row-stochastic; constant input uniform";
    return r;
}

SuiteResult verify_residual() {
    SuiteResult r{"residual.identity", true, "", 3};
    Rng rng(r.seed);
    for (int trial = 0; trial < 20 && r.pass; ++trial) {
        ModelConfig mc;
        mc.c = 1 + int(rng.below(2)) * 2;  // 1 or 3
        mc.C = 2 + int(rng.below(6));
        mc.S = 8;
        mc.Sprime = 4;
        mc.seed = rng.below(1'000'000);
        mc.zero_head_init = true;
        const std::int64_t hw = 8 + 4 * std::int64_t(rng.below(3));
        U2Net<double> net(mc);
        auto a = rand_tensor({1, hw, hw, mc.c}, rng, 0.0, 1.0);
        auto bu = rand_tensor({1, hw, hw, mc.C}, rng, 0.0, 1.0);
        auto o = net.forward(a, bu);
        if (o.data() != bu.data()) {
            r.pass = false;
            r.detail = "O != B^U at trial " + std::to_string(trial);
        }
    }
    if (r.pass) r.detail = "20 shape/seed combinations bit-exact";
    return r;
}

SuiteResult verify_ssio() {
    SuiteResult r{"ssio.oracle", true, "", 4};
    Rng rng(r.seed);
    for (int trial = 0; trial < 100 && r.pass; ++trial) {
        const int hw = 1 + int(rng.below(16));
        const int sp = 1 + int(rng.below(4));
        const int heads = 1 + int(rng.below(2));
        auto ta = rand_tensor({hw, sp, heads}, rng);
        auto tb = rand_tensor({hw, sp, heads}, rng);
        auto tc = rand_tensor({hw, sp, heads}, rng);
        auto td = rand_tensor({hw, sp, heads}, rng);
        auto tfus = ssio_fuse(spatial_self_correlation(ta, tb),
                              spectral_self_correlation(tc, td), tb, tc);
        // triple-loop reference
        auto at = [&](const Tensor<double>& m, int row, int col, int h) {
            return m.data()[(row * sp + col) * heads + h];
        };
        for (int h = 0; h < heads && r.pass; ++h) {
            std::vector<double> cspa(std::size_t(hw) * hw), cspe(std::size_t(sp) * sp);
            for (int row = 0; row < hw; ++row) {
                std::vector<double> l(hw);
                double mx = -1e300;
                for (int col = 0; col < hw; ++col) {
                    double d = 0;
                    for (int k = 0; k < sp; ++k) d += at(ta, row, k, h) * at(tb, col, k, h);
                    l[col] = d / std::sqrt(double(sp));
                    mx = std::max(mx, l[col]);
                }
                double s = 0;
                for (double lv : l) s += std::exp(lv - mx);
                for (int col = 0; col < hw; ++col)
                    cspa[std::size_t(row) * hw + col] = std::exp(l[col] - mx) / s;
            }
            const double divisor = std::sqrt(double(sp) * sp * sp) / hw;
            for (int row = 0; row < sp; ++row) {
                std::vector<double> l(sp);
                double mx = -1e300;
                for (int col = 0; col < sp; ++col) {
                    double d = 0;
                    for (int k = 0; k < hw; ++k) d += at(tc, k, row, h) * at(td, k, col, h);
                    l[col] = d / divisor;
                    mx = std::max(mx, l[col]);
                }
                double s = 0;
                for (double lv : l) s += std::exp(lv - mx);
                for (int col = 0; col < sp; ++col)
                    cspe[std::size_t(row) * sp + col] = std::exp(l[col] - mx) / s;
            }
            for (int row = 0; row < hw && r.pass; ++row)
                for (int col = 0; col < sp; ++col) {
                    double left = 0, right = 0;
                    for (int k = 0; k < hw; ++k)
                        left += cspa[std::size_t(row) * hw + k] * at(tc, k, col, h);
                    for (int k = 0; k < sp; ++k)
                        right += at(tb, row, k, h) * cspe[std::size_t(k) * sp + col];
                    const double want = left * right;
                    const double got = tfus.data()[(row * sp + col) * heads + h];
                    if (std::abs(got - want) > 1e-6) {
                        r.pass = false;
                        r.detail = "mismatch at trial " + std::to_string(trial);
                        break;
                    }
                }
        }
    }
    if (r.pass) r.detail = "100 instances within 1e-6 of the triple-loop reference";
    return r;
}

SuiteResult verify_metrics() {
    SuiteResult r{"metrics.oracles", true, "", 6};
    Rng rng(r.seed);
    auto fail = [&](const std::string& what) {
        r.pass = false;
        if (!r.detail.empty()) r.detail += "; ";
        r.detail += what;
    };
    ImageCube x(16, 16, 4), o(16, 16, 4);
    for (auto& v : x.data) v = float(rng.uniform(0.05, 0.95));
    for (auto& v : o.data) v = float(rng.uniform(0.05, 0.95));

    // closed-form anchors
    ImageCube twox = x;
    for (auto& v : twox.data) v *= 2.0f;
    if (sam_degrees(twox, x) > 1e-5) fail("SAM(X,2X) != 0");
    if (ergas(x, x) != 0.0) fail("ERGAS(X,X) != 0");
    if (!std::isinf(psnr(x, x, 1.0))) fail("PSNR(X,X) not inf");
    if (std::abs(q2n(x, x) - 1.0) > 1e-9) fail("Q2n(X,X) != 1");
    if (std::abs(ssim(x, x, 1.0) - 1.0) > 1e-9) fail("SSIM(X,X) != 1");

    // brute-force cross-checks
    double mse = 0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double d = double(o.data[i]) - double(x.data[i]);
        mse += d * d;
    }
    mse /= double(x.data.size());
    if (std::abs(psnr(o, x, 1.0) - 10.0 * std::log10(1.0 / mse)) > 1e-6)
        fail("PSNR oracle mismatch");

    const ImageCube scene = synth_scene(32, 32, 4, 777);
    DegradeConfig dc;
    dc.pan_weights = uniform_pan_weights(4);
    auto [a, b] = degrade_to_pair(scene, dc);
    auto fused = upsample_lowres(b, 4, UpsampleKind::Nearest);
    auto scores = qnr_suite(fused, a, b);
    if (std::abs(scores.qnr - (1.0 - scores.d_lambda) * (1.0 - scores.d_s)) > 1e-12)
        fail("QNR factorization violated");
    if (scores.d_lambda > 1e-3) fail("self-consistent D_lambda not ~0");

    if (r.pass) r.detail = "anchors and oracles within tolerance";
    return r;
}

}  // namespace

nlohmann::json cmd_verify(const RunConfig& cfg) {
    // honor an injected-fault request (used to prove the suites have teeth)
    if (const char* fault = std::getenv("FUSELAB_FAULT")) fault_injection() = fault;

    std::vector<SuiteResult> suites;
    suites.push_back(verify_gradients());
    suites.push_back(verify_attention());
    suites.push_back(verify_residual());
    suites.push_back(verify_ssio());
    suites.push_back(verify_metrics());
    fault_injection().clear();

    bool all = true;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : suites) {
        all = all && s.pass;
        rows.push_back(
            {{"name", s.name}, {"pass", s.pass}, {"detail", s.detail}, {"seed", s.seed}});
    }
    nlohmann::json verdict = {{"pass", all}, {"suites", rows}};

    fs::create_directories(cfg.out_dir);
    std::ofstream(fs::path(cfg.out_dir) / "verify.json") << verdict.dump(2) << '\n';
    return verdict;
}

}  // namespace fuselab
