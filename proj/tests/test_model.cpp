#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fuselab/datagen.hpp"
#include "fuselab/model.hpp"

using namespace fuselab;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return TD(std::move(shape), std::move(v));
}

ModelConfig tiny_config(Variant v = Variant::Full) {
    ModelConfig cfg;
    cfg.c = 1;
    cfg.C = 3;
    cfg.S = 8;
    cfg.Sprime = 4;
    cfg.variant = v;
    cfg.seed = 42;
    return cfg;
}

// straight-line Eq. (1)-(3) composition, no shared kernels with the library
void ssio_oracle(const std::vector<double>& ta, const std::vector<double>& tb,
                 const std::vector<double>& tc, const std::vector<double>& td, int hw, int sp,
                 int heads, std::vector<double>& tfus_out) {
    tfus_out.assign(hw * sp * heads, 0.0);
    auto at = [&](const std::vector<double>& m, int r, int c, int i) {
        return m[(r * sp + c) * heads + i];
    };
    for (int i = 0; i < heads; ++i) {
        // Cspa = softmax(Ta Tb^T / sqrt(S'))
        std::vector<double> cspa(hw * hw);
        for (int r = 0; r < hw; ++r) {
            double mx = -1e300;
            std::vector<double> logits(hw);
            for (int c = 0; c < hw; ++c) {
                double dot = 0;
                for (int k = 0; k < sp; ++k) dot += at(ta, r, k, i) * at(tb, c, k, i);
                logits[c] = dot / std::sqrt(double(sp));
                mx = std::max(mx, logits[c]);
            }
            double s = 0;
            for (int c = 0; c < hw; ++c) s += std::exp(logits[c] - mx);
            for (int c = 0; c < hw; ++c) cspa[r * hw + c] = std::exp(logits[c] - mx) / s;
        }
        // Cspe = softmax(Tc^T Td / (sqrt(S'^3)/HW))
        std::vector<double> cspe(sp * sp);
        const double divisor = std::sqrt(double(sp) * sp * sp) / hw;
        for (int r = 0; r < sp; ++r) {
            double mx = -1e300;
            std::vector<double> logits(sp);
            for (int c = 0; c < sp; ++c) {
                double dot = 0;
                for (int k = 0; k < hw; ++k) dot += at(tc, k, r, i) * at(td, k, c, i);
                logits[c] = dot / divisor;
                mx = std::max(mx, logits[c]);
            }
            double s = 0;
            for (int c = 0; c < sp; ++c) s += std::exp(logits[c] - mx);
            for (int c = 0; c < sp; ++c) cspe[r * sp + c] = std::exp(logits[c] - mx) / s;
        }
        // Tfus = (Cspa Tc) ⊙ (Tb Cspe)
        for (int r = 0; r < hw; ++r)
            for (int c = 0; c < sp; ++c) {
                double left = 0, right = 0;
                for (int k = 0; k < hw; ++k) left += cspa[r * hw + k] * at(tc, k, c, i);
                for (int k = 0; k < sp; ++k) right += at(tb, r, k, i) * cspe[k * sp + c];
                tfus_out[(r * sp + c) * heads + i] = left * right;
            }
    }
}

}  // namespace

TEST_CASE("spatial self-correlation: uniform, hand case, zero logits") {
    // identical rows -> every head uniform 1/HW
    TD ta({3, 2, 1}, {1, 2, 1, 2, 1, 2});
    auto cspa = spatial_self_correlation(ta, ta);
    CHECK(cspa.shape() == Shape{3, 3, 1});
    for (double v : cspa.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-9));

    // HW=2, S'=1: logits [[1,0],[0,0]] -> rows [e/(e+1), 1/(e+1)], [1/2,1/2]
    TD t2({2, 1, 1}, {1, 0});
    auto c2 = spatial_self_correlation(t2, t2);
    const double e = std::exp(1.0);
    CHECK(c2.data()[0] == doctest::Approx(e / (e + 1)).epsilon(1e-12));
    CHECK(c2.data()[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-12));
    CHECK(c2.data()[2] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(c2.data()[3] == doctest::Approx(0.5).epsilon(1e-12));

    // zero input -> uniform
    TD z = TD::zeros({4, 2, 2});
    auto cz = spatial_self_correlation(z, z);
    for (double v : cz.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("spectral self-correlation: uniform, divisor, zero") {
    // identical columns -> uniform 1/S'
    TD tc({3, 2, 1}, {5, 5, 5, 5, 5, 5});
    auto cspe = spectral_self_correlation(tc, tc);
    CHECK(cspe.shape() == Shape{2, 2, 1});
    for (double v : cspe.data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-9));

    // S'=2, HW=1, Tc=Td=[[1,0]]: logits [[1,0],[0,0]] / (2*sqrt(2))
    TD t({1, 2, 1}, {1, 0});
    auto c = spectral_self_correlation(t, t);
    const double l = 1.0 / (2.0 * std::sqrt(2.0));  // 0.35355...
    const double r0 = std::exp(l) / (std::exp(l) + 1.0);
    CHECK(c.data()[0] == doctest::Approx(r0).epsilon(1e-12));
    CHECK(c.data()[1] == doctest::Approx(1 - r0).epsilon(1e-12));
    CHECK(c.data()[2] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(c.data()[3] == doctest::Approx(0.5).epsilon(1e-12));

    TD z = TD::zeros({4, 3, 2});
    auto cz = spectral_self_correlation(z, z);
    for (double v : cz.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("ssio_fuse identities and brute-force oracle") {
    Rng rng(17);
    // Cspa = I, Cspe = I -> Tfus = Tc ⊙ Tb
    {
        int hw = 3, sp = 3, heads = 2;
        std::vector<double> eye_hw(hw * hw * heads, 0.0), eye_sp(sp * sp * heads, 0.0);
        for (int i = 0; i < heads; ++i)
            for (int r = 0; r < hw; ++r) eye_hw[(r * hw + r) * heads + i] = 1.0;
        for (int i = 0; i < heads; ++i)
            for (int r = 0; r < sp; ++r) eye_sp[(r * sp + r) * heads + i] = 1.0;
        auto tb = random_tensor({hw, sp, heads}, rng);
        auto tc = random_tensor({hw, sp, heads}, rng);
        auto out = ssio_fuse(TD({hw, hw, heads}, eye_hw), TD({sp, sp, heads}, eye_sp), tb, tc);
        for (int i = 0; i < out.size(); ++i)
            CHECK(out.data()[i] == doctest::Approx(tb.data()[i] * tc.data()[i]).epsilon(1e-9));

        // Tb all-ones, Cspe = I -> Tfus = Cspa · Tc
        auto cspa = spatial_self_correlation(random_tensor({hw, sp, heads}, rng),
                                             random_tensor({hw, sp, heads}, rng));
        auto ones = TD::full({hw, sp, heads}, 1.0);
        auto out2 = ssio_fuse(cspa, TD({sp, sp, heads}, eye_sp), ones, tc);
        for (int i = 0; i < heads; ++i)
            for (int r = 0; r < hw; ++r)
                for (int c2 = 0; c2 < sp; ++c2) {
                    double acc = 0;
                    for (int k = 0; k < hw; ++k)
                        acc += cspa.data()[(r * hw + k) * heads + i] *
                               tc.data()[(k * sp + c2) * heads + i];
                    CHECK(out2.data()[(r * sp + c2) * heads + i] ==
                          doctest::Approx(acc).epsilon(1e-9));
                }
    }

    // full Eq.(1)-(3) pipeline vs the straight-line oracle
    for (int trial = 0; trial < 100; ++trial) {
        int hw = 1 + int(rng.below(16)), sp = 1 + int(rng.below(4)), heads = 1 + int(rng.below(3));
        auto ta = random_tensor({hw, sp, heads}, rng);
        auto tb = random_tensor({hw, sp, heads}, rng);
        auto tc = random_tensor({hw, sp, heads}, rng);
        auto td = random_tensor({hw, sp, heads}, rng);
        auto cspa = spatial_self_correlation(ta, tb);
        auto cspe = spectral_self_correlation(tc, td);
        auto tfus = ssio_fuse(cspa, cspe, tb, tc);
        std::vector<double> ref;
        ssio_oracle(ta.data(), tb.data(), tc.data(), td.data(), hw, sp, heads, ref);
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(tfus.data()[i] == doctest::Approx(ref[i]).epsilon(1e-6));
    }
}

TEST_CASE("attention matrices are row-stochastic") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        int hw = 2 + int(rng.below(8)), sp = 1 + int(rng.below(4)), heads = 1 + int(rng.below(3));
        auto cspa = spatial_self_correlation(random_tensor({hw, sp, heads}, rng, -3, 3),
                                             random_tensor({hw, sp, heads}, rng, -3, 3));
        for (int i = 0; i < heads; ++i)
            for (int r = 0; r < hw; ++r) {
                double s = 0;
                for (int c = 0; c < hw; ++c) {
                    double v = cspa.data()[(r * hw + c) * heads + i];
                    CHECK(v >= 0.0);
                    CHECK(v <= 1.0);
                    s += v;
                }
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
    }
}

TEST_CASE("s2block shape contract and permutation equivariance") {
    auto cfg = tiny_config();
    U2Net<double> net(cfg);
    Rng rng(3);
    auto fspa = random_tensor({1, 4, 4, 8}, rng);
    auto fspe = random_tensor({1, 4, 4, 8}, rng);
    auto out = net.s2block_forward(fspa, fspe, 1);
    CHECK(out.shape() == fspa.shape());

    // permuting HW positions of both inputs permutes the output identically
    std::vector<int> perm(16);
    for (int i = 0; i < 16; ++i) perm[i] = i;
    for (std::size_t i = 16; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    auto apply_perm = [&](const TD& t) {
        std::vector<double> v(t.size());
        for (int p = 0; p < 16; ++p)
            for (int c = 0; c < 8; ++c) v[perm[p] * 8 + c] = t.data()[p * 8 + c];
        return TD({1, 4, 4, 8}, v);
    };
    auto out_p = net.s2block_forward(apply_perm(fspa), apply_perm(fspe), 1);
    auto expect = apply_perm(out);
    for (int i = 0; i < out_p.size(); ++i)
        CHECK(out_p.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-9));
}

TEST_CASE("resblock and mlp residual identities via zeroed weights") {
    auto cfg = tiny_config();
    U2Net<double> net(cfg);
    // zero the stage-1 mlp: fused output must pass through unchanged
    for (auto& [name, t] : net.params().items())
        if (name.find("stage1.mlp") != std::string::npos)
            std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    Rng rng(8);
    auto fspe = random_tensor({1, 4, 4, 8}, rng);
    // with a zeroed s2.out map the whole block collapses to zero
    for (auto& [name, t] : net.params().items())
        if (name.find("stage1.s2.out") != std::string::npos)
            std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    auto fused = net.s2block_forward(fspe, fspe, 1);
    for (double v : fused.data()) CHECK(v == 0.0);
}

TEST_CASE("u2net forward shapes for pansharpening and HISR") {
    {
        ModelConfig cfg = tiny_config();
        cfg.c = 1;
        cfg.C = 8;
        U2Net<double> net(cfg);
        Rng rng(1);
        auto a = random_tensor({1, 16, 16, 1}, rng, 0, 1);
        auto bu = random_tensor({1, 16, 16, 8}, rng, 0, 1);
        CHECK(net.forward(a, bu).shape() == Shape{1, 16, 16, 8});
    }
    {
        ModelConfig cfg = tiny_config();
        cfg.c = 3;
        cfg.C = 31;
        U2Net<double> net(cfg);
        Rng rng(2);
        auto a = random_tensor({1, 8, 8, 3}, rng, 0, 1);
        auto bu = random_tensor({1, 8, 8, 31}, rng, 0, 1);
        CHECK(net.forward(a, bu).shape() == Shape{1, 8, 8, 31});
    }
    // error paths
    ModelConfig cfg = tiny_config();
    U2Net<double> net(cfg);
    Rng rng(3);
    CHECK_THROWS_AS(net.forward(random_tensor({1, 6, 6, 1}, rng),
                                random_tensor({1, 6, 6, 3}, rng)),
                    ConfigError);
    CHECK_THROWS_AS(net.forward(random_tensor({1, 8, 8, 2}, rng),
                                random_tensor({1, 8, 8, 3}, rng)),
                    ShapeError);
}

TEST_CASE("residual identity with zero head") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ModelConfig cfg = tiny_config();
        cfg.seed = seed;
        cfg.zero_head_init = true;
        U2Net<double> net(cfg);
        Rng rng(seed + 100);
        auto a = random_tensor({1, 8, 8, 1}, rng, 0, 1);
        auto bu = random_tensor({1, 8, 8, 3}, rng, 0, 1);
        auto o = net.forward(a, bu);
        CHECK(o.data() == bu.data());  // bit-exact
    }
}

TEST_CASE("variants produce identically shaped outputs") {
    Rng rng(4);
    auto a = random_tensor({1, 8, 8, 1}, rng, 0, 1);
    auto bu = random_tensor({1, 8, 8, 3}, rng, 0, 1);
    for (Variant v : {Variant::Full, Variant::V1, Variant::V2, Variant::V3, Variant::V4}) {
        U2Net<double> net(tiny_config(v));
        CHECK(net.forward(a, bu).shape() == Shape{1, 8, 8, 3});
    }
}

TEST_CASE("determinism: same seed, same parameters and outputs") {
    auto cfg = tiny_config();
    U2Net<double> n1(cfg), n2(cfg);
    REQUIRE(n1.params().items().size() == n2.params().items().size());
    for (std::size_t i = 0; i < n1.params().items().size(); ++i) {
        CHECK(n1.params().items()[i].first == n2.params().items()[i].first);
        CHECK(n1.params().items()[i].second.data() == n2.params().items()[i].second.data());
    }
    Rng rng(9);
    auto a = random_tensor({1, 8, 8, 1}, rng, 0, 1);
    auto bu = random_tensor({1, 8, 8, 3}, rng, 0, 1);
    CHECK(n1.forward(a, bu).data() == n2.forward(a, bu).data());
}

TEST_CASE("param_count: seed invariance, heavyweight class, monotonicity") {
    ModelConfig cfg;
    cfg.c = 1;
    cfg.C = 8;
    cfg.S = 32;
    cfg.Sprime = 16;
    cfg.seed = 1;
    auto n1 = U2Net<float>::param_count(cfg);
    cfg.seed = 999;
    auto n2 = U2Net<float>::param_count(cfg);
    CHECK(n1 == n2);
    CHECK(n1 >= 500000);  // heavyweight class

    ModelConfig big = cfg;
    big.S = 64;
    CHECK(U2Net<float>::param_count(big) > n1);
}

TEST_CASE("end-to-end gradient vs finite differences (tiny config)") {
    ModelConfig cfg = tiny_config();
    cfg.seed = 11;
    Rng rng(12);
    auto a = random_tensor({1, 8, 8, 1}, rng, 0, 1);
    auto bu = random_tensor({1, 8, 8, 3}, rng, 0, 1);
    auto x = random_tensor({1, 8, 8, 3}, rng, 0, 1);

    U2Net<double> net(cfg);
    auto loss_of = [&]() {
        auto o = net.forward(a, bu);
        return scale(sum(abs(sub(o, x))), 1.0);
    };
    auto loss = loss_of();
    backward(loss);

    // sample 1% of parameters and compare with central differences
    Rng pick(99);
    int checked = 0;
    for (auto& [name, t] : net.params().items()) {
        if (pick.uniform() > 0.02) continue;
        const auto idx = static_cast<std::int64_t>(pick.below(t.size()));
        REQUIRE(t.has_grad());
        const double analytic = t.grad()[idx];
        const double h = 1e-5;
        const double orig = t.data()[idx];
        t.mutable_data()[idx] = orig + h;
        const double fp = loss_of().item();
        t.mutable_data()[idx] = orig - h;
        const double fm = loss_of().item();
        t.mutable_data()[idx] = orig;
        const double numeric = (fp - fm) / (2 * h);
        const double diff = std::abs(analytic - numeric);
        if (diff > 1e-9) {
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            CHECK(diff / denom <= 1e-3);
        }
        if (++checked >= 12) break;
    }
    CHECK(checked > 0);
}
