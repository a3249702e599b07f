#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fuselab/rng.hpp"
#include "fuselab/tensor.hpp"

using namespace fuselab;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return TD(std::move(shape), std::move(v));
}

// triple-loop reference, no shared code with matmul()
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
    std::vector<double> c(m * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

}  // namespace

TEST_CASE("matmul identity, oracle, zero") {
    TD I({2, 2}, {1, 0, 0, 1});
    TD b({2, 2}, {5, 6, 7, 8});
    CHECK(matmul(I, b).data() == std::vector<double>{5, 6, 7, 8});

    TD a({2, 2}, {1, 2, 3, 4});
    auto c = matmul(a, b);
    CHECK(c.data() == std::vector<double>{19, 22, 43, 50});
    CHECK(c.data() == matmul_oracle(a.data(), b.data(), 2, 2, 2));

    TD z = TD::zeros({2, 2});
    auto zb = matmul(z, b);
    for (double v : zb.data()) CHECK(v == 0.0);

    TD bad({3, 2}, std::vector<double>(6, 0.0));
    CHECK_THROWS_AS(matmul(a, bad), ShapeError);
}

TEST_CASE("matmul oracle on random shapes + linearity") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        int m = 1 + int(rng.below(5)), k = 1 + int(rng.below(5)), n = 1 + int(rng.below(5));
        auto a = random_tensor({m, k}, rng);
        auto b = random_tensor({k, n}, rng);
        auto c = matmul(a, b);
        auto ref = matmul_oracle(a.data(), b.data(), m, k, n);
        for (int i = 0; i < m * n; ++i) CHECK(c.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));

        double alpha = rng.uniform(-2.0, 2.0);
        auto lhs = matmul(scale(a, alpha), b);
        auto rhs = scale(c, alpha);
        for (int i = 0; i < m * n; ++i)
            CHECK(lhs.data()[i] == doctest::Approx(rhs.data()[i]).epsilon(1e-6));
    }
}

TEST_CASE("softmax_rows values and stochasticity") {
    TD x({1, 3}, {0, 0, 0});
    auto sx = softmax_rows(x);
    for (double v : sx.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    TD y({1, 2}, {std::log(2.0), 0.0});
    auto sy = softmax_rows(y);
    CHECK(sy.data()[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
    CHECK(sy.data()[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    TD c({1, 4}, {5, 5, 5, 5});
    auto sc = softmax_rows(c);
    for (double v : sc.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    TD cs({1, 4}, {1005, 1005, 1005, 1005});  // shift invariance at large scale
    auto scs = softmax_rows(cs);
    for (double v : scs.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    Rng rng(3);
    auto r = random_tensor({6, 9}, rng, -50, 50);
    auto s = softmax_rows(r);
    for (int i = 0; i < 6; ++i) {
        double row = 0;
        for (int j = 0; j < 9; ++j) {
            double v = s.data()[i * 9 + j];
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            row += v;
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("fully_connected identity, hand case, zero input") {
    TD x({1, 2}, {1, 2});
    TD I({2, 2}, {1, 0, 0, 1});
    TD b0({2}, {0, 0});
    CHECK(fully_connected(x, I, b0).data() == std::vector<double>{1, 2});

    TD w({2, 1}, {1, 1});
    TD b({1}, {3});
    CHECK(fully_connected(x, w, b).data() == std::vector<double>{6});

    TD z = TD::zeros({3, 2});
    TD wb({2, 2}, {1, 2, 3, 4});
    TD bias({2}, {0.5, -0.5});
    auto out = fully_connected(z, wb, bias);
    for (int r = 0; r < 3; ++r) {
        CHECK(out.data()[r * 2 + 0] == 0.5);
        CHECK(out.data()[r * 2 + 1] == -0.5);
    }
    CHECK_THROWS_AS(fully_connected(x, TD({3, 1}, {1, 1, 1}), b), ShapeError);
}

TEST_CASE("lrelu values") {
    TD x({3}, {2.0, -1.0, 0.0});
    auto y = lrelu(x, 0.2);
    CHECK(y.data()[0] == 2.0);
    CHECK(y.data()[1] == doctest::Approx(-0.2));
    CHECK(y.data()[2] == 0.0);
}

TEST_CASE("reshape round trip and index relocation") {
    Rng rng(11);
    auto x = random_tensor({4, 5, 3}, rng);  // H x W x S
    auto m = reshape(x, {20, 3});
    auto back = reshape(m, {4, 5, 3});
    CHECK(back.data() == x.data());  // bit-exact

    // head split: (HW)xS -> (HW)xS'xN contiguous column blocks of width S'
    TD f({2, 4}, {0, 1, 2, 3, 10, 11, 12, 13});
    auto heads = permute(reshape(f, {2, 2, 2}), {0, 2, 1});  // (HW, N, S') -> (HW, S', N)
    // head 0 of row 0 should be columns {0,1}
    CHECK(heads.data()[0] == 0);  // (hw=0, s'=0, n=0)
    CHECK(heads.data()[1] == 2);  // (hw=0, s'=0, n=1)
    CHECK(heads.data()[2] == 1);  // (hw=0, s'=1, n=0)

    // 2x3 -> 3x2 relocates (0,2) -> (1,0) in row-major order
    TD g({2, 3}, {0, 1, 2, 3, 4, 5});
    auto r2 = reshape(g, {3, 2});
    CHECK(r2.data()[1 * 2 + 0] == 2.0);

    CHECK_THROWS_AS(reshape(g, {4, 2}), ShapeError);
}

TEST_CASE("permute round trip") {
    Rng rng(5);
    auto x = random_tensor({2, 3, 4}, rng);
    auto p = permute(x, {2, 0, 1});
    CHECK(p.shape() == Shape{4, 2, 3});
    auto back = permute(p, {1, 2, 0});
    CHECK(back.data() == x.data());
}

TEST_CASE("backward basics") {
    TD x({2}, {1, 2}, true);
    auto loss = sum(x);
    backward(loss);
    CHECK(x.grad() == std::vector<double>{1, 1});

    x.zero_grad();
    auto l2 = sum(mul(x, x));
    backward(l2);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));

    // repeated backward accumulates on leaves
    backward(l2);
    CHECK(x.grad()[0] == doctest::Approx(4.0));

    // detached tensor receives no grad
    TD y({2}, {3, 4}, true);
    auto yd = y.detach();
    auto l3 = sum(mul(yd, yd));
    backward(l3);
    CHECK_FALSE(y.has_grad());

    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
}

TEST_CASE("finite_diff_check on primitive ops") {
    Rng rng(23);

    // sum of squares: tight analytic agreement
    auto sq = [](const TD& t) { return sum(mul(t, t)); };
    CHECK(finite_diff_check(sq, random_tensor({6}, rng)) <= 1e-7);

    // l1 away from kinks
    auto l1 = [](const TD& t) { return sum(abs(t)); };
    std::vector<double> v(8);
    for (auto& e : v) e = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.2, 1.0);
    CHECK(finite_diff_check(l1, TD({8}, v)) <= 1e-4);

    // softmax-then-sum is constant; gradient ~0, absolute agreement
    auto sm = [](const TD& t) { return sum(softmax_rows(t)); };
    CHECK(finite_diff_check(sm, random_tensor({2, 4}, rng)) <= 1e-6);

    // matmul
    auto b = random_tensor({3, 2}, rng);
    auto mm = [&](const TD& t) { return sum(mul(matmul(t, b), matmul(t, b))); };
    CHECK(finite_diff_check(mm, random_tensor({2, 3}, rng)) <= 1e-4);

    // fully connected (w and b as the differentiated input)
    auto xin = random_tensor({3, 4}, rng);
    auto bias = random_tensor({2}, rng);
    auto fcw = [&](const TD& w) { return sum(mul(fully_connected(xin, w, bias), fully_connected(xin, w, bias))); };
    CHECK(finite_diff_check(fcw, random_tensor({4, 2}, rng)) <= 1e-4);

    // lrelu away from the kink
    auto lr = [](const TD& t) { return sum(mul(lrelu(t, 0.2), lrelu(t, 0.2))); };
    std::vector<double> lv(6);
    for (auto& e : lv) e = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.2, 1.0);
    CHECK(finite_diff_check(lr, TD({6}, lv)) <= 1e-4);

    // softmax with non-trivial downstream weighting
    auto wgt = random_tensor({2, 4}, rng);
    auto smw = [&](const TD& t) { return sum(mul(softmax_rows(t), wgt)); };
    CHECK(finite_diff_check(smw, random_tensor({2, 4}, rng)) <= 1e-6);

    // bmm with transposes
    auto b3 = random_tensor({2, 3, 2}, rng);
    auto bm = [&](const TD& t) { return sum(mul(bmm(t, b3, false, true), bmm(t, b3, false, true))); };
    CHECK(finite_diff_check(bm, random_tensor({2, 4, 2}, rng)) <= 1e-4);

    // permute + reshape composition
    auto pr = [](const TD& t) {
        auto p = permute(t, {1, 0, 2});
        return sum(mul(reshape(p, {12}), reshape(p, {12})));
    };
    CHECK(finite_diff_check(pr, random_tensor({2, 3, 2}, rng)) <= 1e-7);
}

TEST_CASE("debug mode rejects non-finite softmax input") {
    debug_checks() = true;
    TD bad({1, 2}, {std::numeric_limits<double>::infinity(), 0.0});
    CHECK_THROWS_AS(softmax_rows(bad), NumericError);
    debug_checks() = false;
}
