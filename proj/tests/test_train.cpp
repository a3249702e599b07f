#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fuselab/model.hpp"
#include "fuselab/train.hpp"

using namespace fuselab;
using TD = Tensor<double>;
namespace fs = std::filesystem;

namespace {

TD random_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return TD(std::move(shape), std::move(v));
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.c = 1;
    cfg.C = 2;
    cfg.S = 8;
    cfg.Sprime = 4;
    cfg.seed = 7;
    return cfg;
}

std::vector<TrainSample<double>> tiny_dataset(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainSample<double>> set;
    for (int i = 0; i < n; ++i)
        set.push_back({random_tensor({1, 8, 8, 1}, rng), random_tensor({1, 8, 8, 2}, rng),
                       random_tensor({1, 8, 8, 2}, rng)});
    return set;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string(std::istreambuf_iterator<char>(is), {});
}

fs::path fresh_dir(const std::string& name) {
    fs::path d = fs::temp_directory_path() / ("fuselab_train_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("l1_loss is the batch mean of per-sample l1 norms") {
    TD pred({2, 1, 1, 2}, {1.0, 2.0, 3.0, 4.0});
    TD target({2, 1, 1, 2}, {0.0, 0.0, 0.0, 0.0});
    // sample norms 3 and 7 -> mean 5
    CHECK(l1_loss(pred, target).item() == doctest::Approx(5.0).epsilon(1e-12));
    CHECK_THROWS_AS(l1_loss(pred, TD::zeros({2, 1, 1, 3})), ShapeError);
}

TEST_CASE("zero-head model's first loss equals mean l1(bu, x)") {
    ModelConfig cfg = tiny_config();
    cfg.zero_head_init = true;
    U2Net<double> net(cfg);
    auto set = tiny_dataset(3, 21);
    double expect = 0;
    for (const auto& s : set)
        for (std::size_t i = 0; i < s.bu.data().size(); ++i)
            expect += std::abs(s.bu.data()[i] - s.x.data()[i]);
    expect /= 3.0;
    auto a = traindetail::make_batch<double>(set, {0, 1, 2}, 0, 3, &TrainSample<double>::a);
    auto bu = traindetail::make_batch<double>(set, {0, 1, 2}, 0, 3, &TrainSample<double>::bu);
    auto x = traindetail::make_batch<double>(set, {0, 1, 2}, 0, 3, &TrainSample<double>::x);
    CHECK(l1_loss(net.forward(a, bu), x).item() == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("lr_at staircase") {
    TrainConfig c;
    c.lr0 = 0.0003;
    c.halve_every = 50;
    CHECK(lr_at(c, 0) == doctest::Approx(0.0003));
    CHECK(lr_at(c, 49) == doctest::Approx(0.0003));
    CHECK(lr_at(c, 50) == doctest::Approx(0.00015));
    CHECK(lr_at(c, 149) == doctest::Approx(0.000075));
    c.lr0 = 0.001;
    c.halve_every = 100;
    CHECK(lr_at(c, 250) == doctest::Approx(0.00025));
}

TEST_CASE("adam first step moves each weight by ~lr in the gradient direction") {
    ParamStore<double> params;
    auto& w = params.add("w", TD({3}, {1.0, 2.0, 3.0}));
    w.zero_grad();
    // plant gradients directly on the leaf
    const_cast<std::vector<double>&>(w.grad()) = {4.0, -0.5, 1e-3};
    AdamState<double> st;
    TrainConfig cfg;
    adam_step(params, st, cfg, 0.01);
    // mhat = g, vhat = g^2 -> step = lr * g / (|g| + eps) ~= lr * sign(g)
    CHECK(w.data()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(w.data()[1] == doctest::Approx(2.0 + 0.01).epsilon(1e-6));
    CHECK(w.data()[2] == doctest::Approx(3.0 - 0.01).epsilon(1e-4));
    CHECK(st.t == 1);
}

TEST_CASE("adam: zero gradient is a no-op, lr=0 leaves weights fixed") {
    ParamStore<double> params;
    auto& w = params.add("w", TD({2}, {5.0, -5.0}));
    w.zero_grad();
    AdamState<double> st;
    TrainConfig cfg;
    adam_step(params, st, cfg, 0.1);
    CHECK(w.data() == std::vector<double>{5.0, -5.0});

    const_cast<std::vector<double>&>(w.grad()) = {1.0, 1.0};
    adam_step(params, st, cfg, 0.0);
    CHECK(w.data() == std::vector<double>{5.0, -5.0});
}

TEST_CASE("adam rejects non-finite gradients and missing gradients") {
    ParamStore<double> params;
    auto& w = params.add("w", TD({2}, {0.0, 0.0}));
    AdamState<double> st;
    TrainConfig cfg;
    CHECK_THROWS_AS(adam_step(params, st, cfg, 0.1), ContractError);
    w.zero_grad();
    const_cast<std::vector<double>&>(w.grad())[0] = std::nan("");
    CHECK_THROWS_AS(adam_step(params, st, cfg, 0.1), NumericError);
}

TEST_CASE("adam result is independent of parameter registration order") {
    auto run = [](bool reversed) {
        ParamStore<double> params;
        if (reversed) {
            params.add("b", TD({1}, {2.0})).zero_grad();
            params.add("a", TD({1}, {1.0})).zero_grad();
        } else {
            params.add("a", TD({1}, {1.0})).zero_grad();
            params.add("b", TD({1}, {2.0})).zero_grad();
        }
        const_cast<std::vector<double>&>(params.get("a").grad())[0] = 0.3;
        const_cast<std::vector<double>&>(params.get("b").grad())[0] = -0.7;
        AdamState<double> st;
        TrainConfig cfg;
        for (int i = 0; i < 3; ++i) adam_step(params, st, cfg, 0.05);
        return std::pair{params.get("a").data()[0], params.get("b").data()[0]};
    };
    CHECK(run(false) == run(true));
}

TEST_CASE("global-norm clipping caps the applied gradient") {
    auto run = [](double clip) {
        ParamStore<double> params;
        auto& w = params.add("w", TD({2}, {0.0, 0.0}));
        w.zero_grad();
        const_cast<std::vector<double>&>(w.grad()) = {3.0, 4.0};  // norm 5
        AdamState<double> st;
        TrainConfig cfg;
        cfg.clip_norm = clip;
        adam_step(params, st, cfg, 0.01);
        return w.data();
    };
    // scaling both gradients preserves sign pattern; Adam's normalization makes
    // the first step nearly scale-free, so compare against the unclipped run
    auto clipped = run(1.0), unclipped = run(0.0);
    for (int i = 0; i < 2; ++i)
        CHECK(clipped[i] == doctest::Approx(unclipped[i]).epsilon(1e-6));
    // but a clip larger than the norm must change nothing at all
    CHECK(run(10.0) == unclipped);
}

TEST_CASE("checkpoint round trip is bit-exact and rejects corruption") {
    auto dir = fresh_dir("ck");
    Checkpoint<double> ck;
    ck.config = {{"model", {{"S", 8}}}};
    ck.step = 123;
    ck.epoch = 4;
    ck.rng_state = Rng(9).save_state();
    Rng rng(3);
    ck.tensors.emplace_back("w", random_tensor({2, 3}, rng, -1, 1));
    ck.tensors.emplace_back("opt.m.w", random_tensor({2, 3}, rng, -1, 1));
    const fs::path p = dir / "t.u2ck";
    save_checkpoint(p, ck);
    auto back = load_checkpoint<double>(p);
    CHECK(back.config == ck.config);
    CHECK(back.step == 123);
    CHECK(back.epoch == 4);
    CHECK(back.rng_state == ck.rng_state);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].first == "w");
    CHECK(back.tensors[0].second.data() == ck.tensors[0].second.data());
    CHECK(back.tensors[1].second.shape() == Shape{2, 3});

    // truncation
    auto bytes = slurp(p);
    std::ofstream(dir / "trunc.u2ck", std::ios::binary) << bytes.substr(0, bytes.size() - 7);
    CHECK_THROWS_AS(load_checkpoint<double>(dir / "trunc.u2ck"), FormatError);
    // dtype mismatch
    CHECK_THROWS_AS(load_checkpoint<float>(p), FormatError);
    // bad magic
    std::ofstream(dir / "bad.u2ck", std::ios::binary) << "NOPE" << bytes.substr(4);
    CHECK_THROWS_AS(load_checkpoint<double>(dir / "bad.u2ck"), FormatError);
}

TEST_CASE("fit reduces loss and writes history plus checkpoints") {
    auto dir = fresh_dir("fit");
    U2Net<double> net(tiny_config());
    auto set = tiny_dataset(4, 100);
    TrainConfig cfg;
    cfg.lr0 = 1e-3;
    cfg.epochs = 15;
    cfg.batch_size = 4;
    cfg.halve_every = 10;
    cfg.seed = 5;
    auto r = fit(net, set, cfg, dir);
    CHECK(r.epochs_run == 15);
    CHECK(r.steps == 15);
    CHECK(r.epoch_losses.back() < r.epoch_losses.front());
    CHECK(fs::exists(dir / "loss_history.csv"));
    CHECK(fs::exists(dir / "checkpoint_latest.u2ck"));
    CHECK(fs::exists(dir / "checkpoint_final.u2ck"));
    // csv has header + one row per step, and lr halves at epoch 10
    auto csv = slurp(dir / "loss_history.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 16);
    CHECK(csv.find("10,11,0.00050000000000000001,") != std::string::npos);
}

TEST_CASE("fit is deterministic: same seeds give bit-identical outputs") {
    auto run = [](const std::string& tag) {
        auto dir = fresh_dir(tag);
        U2Net<double> net(tiny_config());
        auto set = tiny_dataset(4, 100);
        TrainConfig cfg;
        cfg.epochs = 5;
        cfg.batch_size = 2;
        cfg.seed = 3;
        fit(net, set, cfg, dir);
        return std::pair{slurp(dir / "loss_history.csv"), slurp(dir / "checkpoint_final.u2ck")};
    };
    auto a = run("det_a"), b = run("det_b");
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("resume continues bit-exactly from the latest checkpoint") {
    auto make_cfg = [](int epochs) {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = 2;
        cfg.seed = 11;
        return cfg;
    };
    auto set = tiny_dataset(4, 55);

    auto dir_full = fresh_dir("resume_full");
    {
        U2Net<double> net(tiny_config());
        fit(net, set, make_cfg(6), dir_full);
    }

    auto dir_split = fresh_dir("resume_split");
    {
        U2Net<double> net(tiny_config());
        TrainConfig first = make_cfg(6);
        first.epochs = 3;  // simulate an interruption after three epochs
        fit(net, set, first, dir_split);
    }
    // the simulated interruption recorded epochs=3 in its config echo; a real
    // interruption would already carry the full target, so patch it back
    {
        auto ck = load_checkpoint<double>(dir_split / "checkpoint_latest.u2ck");
        ck.config["train"]["epochs"] = 6;
        save_checkpoint(dir_split / "checkpoint_latest.u2ck", ck);
        U2Net<double> net(tiny_config());
        fit(net, set, make_cfg(6), dir_split, /*resume=*/true);
    }
    CHECK(slurp(dir_full / "checkpoint_final.u2ck") ==
          slurp(dir_split / "checkpoint_final.u2ck"));
    CHECK(slurp(dir_full / "loss_history.csv") == slurp(dir_split / "loss_history.csv"));
}

TEST_CASE("resume rejects a checkpoint from a different configuration") {
    auto dir = fresh_dir("resume_bad");
    auto set = tiny_dataset(2, 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    {
        U2Net<double> net(tiny_config());
        fit(net, set, cfg, dir);
        fs::copy_file(dir / "checkpoint_final.u2ck", dir / "checkpoint_latest.u2ck",
                      fs::copy_options::overwrite_existing);
    }
    U2Net<double> net(tiny_config());
    TrainConfig other = cfg;
    other.lr0 = 5e-4;
    CHECK_THROWS_AS(fit(net, set, other, dir, /*resume=*/true), ConfigError);
}
