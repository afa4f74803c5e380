#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "advsyn/ops.hpp"
#include "advsyn/tape.hpp"
#include "oracles.hpp"

using namespace advsyn;
using Catch::Approx;

namespace {

Tensor run_conv(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad) {
    Tape t;
    return t.value(conv2d(t, t.constant(x), t.constant(k), t.constant(b), stride, pad));
}

Tensor run_tconv(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad) {
    Tape t;
    return t.value(conv2d_transpose(t, t.constant(x), t.constant(k), t.constant(b), stride, pad));
}

}  // namespace

TEST_CASE("conv2d hand example", "[ops][conv]") {
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor k({1, 1, 2, 2}, {1, 0, 0, 1});
    Tensor b({1}, {0});
    Tensor y = run_conv(x, k, b, 1, 0);
    REQUIRE(y.shape() == std::vector<int>{1, 1, 1, 1});
    CHECK(y[0] == 5.0);
}

TEST_CASE("conv2d identity kernel preserves input", "[ops][conv]") {
    Rng rng(3);
    Tensor x = oracles::random_tensor({2, 1, 5, 7}, rng);
    Tensor k({1, 1, 1, 1}, {1.0});
    Tensor b({1}, {0.0});
    Tensor y = run_conv(x, k, b, 1, 0);
    REQUIRE(y.shape() == x.shape());
    for (int64_t i = 0; i < x.size(); ++i) REQUIRE(y[i] == x[i]);
}

TEST_CASE("conv2d stride-2 shape arithmetic at full resolution", "[ops][conv]") {
    Tensor x({1, 1, 128, 128});
    Tensor k({64, 1, 4, 4});
    Tensor b({64});
    Tensor y = run_conv(x, k, b, 2, 1);
    CHECK(y.shape() == std::vector<int>{1, 64, 64, 64});
}

TEST_CASE("conv2d matches naive reference on random cases", "[ops][conv][oracle]") {
    Rng rng(11);
    for (int c = 0; c < 20; ++c) {
        const int n = 1 + static_cast<int>(rng.below(2));
        const int ci = 1 + static_cast<int>(rng.below(8));
        const int co = 1 + static_cast<int>(rng.below(6));
        const int h = 4 + static_cast<int>(rng.below(13));
        const int w = 4 + static_cast<int>(rng.below(13));
        const int k = 1 + static_cast<int>(rng.below(4));
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = static_cast<int>(rng.below(2));
        Tensor x = oracles::random_tensor({n, ci, h, w}, rng);
        Tensor ker = oracles::random_tensor({co, ci, k, k}, rng);
        Tensor b = oracles::random_tensor({co}, rng);
        Tensor fast = run_conv(x, ker, b, stride, pad);
        Tensor ref = oracles::naive_conv2d(x, ker, b, stride, pad);
        REQUIRE(fast.shape() == ref.shape());
        for (int64_t i = 0; i < fast.size(); ++i) {
            REQUIRE(std::abs(fast[i] - ref[i]) <= 1e-12);
        }
    }
}

TEST_CASE("conv2d rejects bad geometry with a named dimension", "[ops][conv][errors]") {
    Tape t;
    Tape::Id x = t.constant(Tensor({1, 3, 8, 8}));
    Tape::Id k = t.constant(Tensor({4, 2, 3, 3}));
    Tape::Id b = t.constant(Tensor({4}));
    CHECK_THROWS_WITH(conv2d(t, x, k, b, 1, 1),
                      Catch::Matchers::ContainsSubstring("input-channel"));
    Tape::Id k2 = t.constant(Tensor({4, 3, 3, 3}));
    CHECK_THROWS_AS(conv2d(t, x, k2, b, 0, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(t, x, k2, b, -2, 1), ShapeError);
    Tape::Id kbig = t.constant(Tensor({4, 3, 11, 11}));
    CHECK_THROWS_AS(conv2d(t, x, kbig, b, 1, 1), ShapeError);
}

TEST_CASE("conv2d_transpose hand example", "[ops][tconv]") {
    Tensor x({1, 1, 1, 1}, {2});
    Tensor k({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor b({1}, {0});
    Tensor y = run_tconv(x, k, b, 2, 0);
    REQUIRE(y.shape() == std::vector<int>{1, 1, 2, 2});
    CHECK(y[0] == 2.0);
    CHECK(y[1] == 4.0);
    CHECK(y[2] == 6.0);
    CHECK(y[3] == 8.0);
}

TEST_CASE("conv2d_transpose doubles spatial size with k4 s2 p1", "[ops][tconv]") {
    Tensor x({1, 8, 32, 32});
    Tensor k({8, 4, 4, 4});
    Tensor b({4});
    Tensor y = run_tconv(x, k, b, 2, 1);
    CHECK(y.shape() == std::vector<int>{1, 4, 64, 64});
}

TEST_CASE("conv2d_transpose zero kernel yields bias", "[ops][tconv]") {
    Rng rng(5);
    Tensor x = oracles::random_tensor({2, 3, 4, 4}, rng);
    Tensor k({3, 2, 4, 4});
    Tensor b({2}, {0.5, -0.25});
    Tensor y = run_tconv(x, k, b, 2, 1);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 2; ++c)
            for (int h = 0; h < y.dim(2); ++h)
                for (int w = 0; w < y.dim(3); ++w) REQUIRE(y.at4(n, c, h, w) == b[c]);
}

TEST_CASE("conv2d_transpose matches naive reference on random cases", "[ops][tconv][oracle]") {
    Rng rng(13);
    for (int c = 0; c < 20; ++c) {
        const int n = 1 + static_cast<int>(rng.below(2));
        const int ci = 1 + static_cast<int>(rng.below(6));
        const int co = 1 + static_cast<int>(rng.below(6));
        const int h = 2 + static_cast<int>(rng.below(7));
        const int w = 2 + static_cast<int>(rng.below(7));
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int k = stride + static_cast<int>(rng.below(3));
        const int pad = static_cast<int>(rng.below(2));
        if ((h - 1) * stride - 2 * pad + k < 1 || (w - 1) * stride - 2 * pad + k < 1) continue;
        Tensor x = oracles::random_tensor({n, ci, h, w}, rng);
        Tensor ker = oracles::random_tensor({ci, co, k, k}, rng);
        Tensor b = oracles::random_tensor({co}, rng);
        Tensor fast = run_tconv(x, ker, b, stride, pad);
        Tensor ref = oracles::naive_conv2d_transpose(x, ker, b, stride, pad);
        REQUIRE(fast.shape() == ref.shape());
        for (int64_t i = 0; i < fast.size(); ++i) {
            REQUIRE(std::abs(fast[i] - ref[i]) <= 1e-12);
        }
    }
}

TEST_CASE("conv then tconv with matching geometry restores spatial dims", "[ops][property]") {
    Rng rng(17);
    for (int c = 0; c < 10; ++c) {
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int k = stride + 1 + static_cast<int>(rng.below(2));
        const int pad = static_cast<int>(rng.below(static_cast<uint64_t>(k / 2) + 1));
        const int h = k + stride * (1 + static_cast<int>(rng.below(6)));
        const int ci = 1 + static_cast<int>(rng.below(3));
        const int cm = 1 + static_cast<int>(rng.below(3));
        Tensor x = oracles::random_tensor({1, ci, h, h}, rng);
        Tensor kd = oracles::random_tensor({cm, ci, k, k}, rng);
        Tensor bd = Tensor::zeros({cm});
        Tensor mid = run_conv(x, kd, bd, stride, pad);
        Tensor ku = oracles::random_tensor({cm, ci, k, k}, rng);
        Tensor bu = Tensor::zeros({ci});
        // restore only works when the conv geometry tiles exactly
        if ((h + 2 * pad - k) % stride != 0) continue;
        Tensor back = run_tconv(mid, ku, bu, stride, pad);
        REQUIRE(back.dim(2) == h);
        REQUIRE(back.dim(3) == h);
    }
}

TEST_CASE("dense hand examples", "[ops][dense]") {
    Tape t;
    {
        Tape::Id x = t.constant(Tensor({1, 2}, {1, 2}));
        Tape::Id w = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
        Tape::Id b = t.constant(Tensor({2}, {0, 0}));
        const Tensor& y = t.value(dense(t, x, w, b));
        CHECK(y[0] == 1.0);
        CHECK(y[1] == 2.0);
    }
    {
        Tape::Id x = t.constant(Tensor({1, 2}, {1, 2}));
        Tape::Id w = t.constant(Tensor({2, 1}, {3, 4}));
        Tape::Id b = t.constant(Tensor({1}, {1}));
        const Tensor& y = t.value(dense(t, x, w, b));
        CHECK(y[0] == 12.0);
    }
    {
        Tape::Id x = t.constant(Tensor({2, 3}));
        Tape::Id w = t.constant(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
        Tape::Id b = t.constant(Tensor({2}, {0.5, -1.5}));
        const Tensor& y = t.value(dense(t, x, w, b));
        for (int i = 0; i < 2; ++i) {
            CHECK(y.at2(i, 0) == 0.5);
            CHECK(y.at2(i, 1) == -1.5);
        }
    }
    Tape::Id x = t.constant(Tensor({1, 3}));
    Tape::Id w = t.constant(Tensor({2, 1}));
    Tape::Id b = t.constant(Tensor({1}));
    CHECK_THROWS_AS(dense(t, x, w, b), ShapeError);
}

TEST_CASE("activation examples", "[ops][activation]") {
    Tape t;
    Tape::Id x = t.constant(Tensor({3}, {-1, 0, 3}));
    const Tensor& lr = t.value(leaky_relu(t, x, 0.2));
    CHECK(lr[0] == Approx(-0.2));
    CHECK(lr[1] == 0.0);
    CHECK(lr[2] == 3.0);

    Tape::Id z = t.constant(Tensor({1}, {0.0}));
    CHECK(t.value(tanh_op(t, z))[0] == 0.0);
    CHECK(t.value(sigmoid_op(t, z))[0] == 0.5);

    Tape::Id l3 = t.constant(Tensor({1}, {std::log(3.0)}));
    CHECK(t.value(sigmoid_op(t, l3))[0] == Approx(0.75).margin(1e-12));

    CHECK_THROWS_AS(leaky_relu(t, x, 0.0), ConfigError);
    CHECK_THROWS_AS(leaky_relu(t, x, 1.5), ConfigError);
}

TEST_CASE("activation ranges", "[ops][activation]") {
    Rng rng(23);
    Tape t;
    Tape::Id x = t.constant(oracles::random_tensor({1000}, rng));
    const Tensor& s = t.value(sigmoid_op(t, x));
    const Tensor& th = t.value(tanh_op(t, x));
    for (int64_t i = 0; i < 1000; ++i) {
        REQUIRE(s[i] > 0.0);
        REQUIRE(s[i] < 1.0);
        REQUIRE(th[i] > -1.0);
        REQUIRE(th[i] < 1.0);
    }
}

TEST_CASE("maxpool2d examples", "[ops][maxpool]") {
    Tape t;
    {
        Tape::Id x = t.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
        const Tensor& y = t.value(maxpool2d(t, x, 2, 2));
        REQUIRE(y.size() == 1);
        CHECK(y[0] == 4.0);
    }
    {
        std::vector<double> ramp(16);
        for (int i = 0; i < 16; ++i) ramp[static_cast<size_t>(i)] = i;
        Tape::Id x = t.constant(Tensor({1, 1, 4, 4}, ramp));
        const Tensor& y = t.value(maxpool2d(t, x, 2, 2));
        REQUIRE(y.shape() == std::vector<int>{1, 1, 2, 2});
        CHECK(y[0] == 5.0);
        CHECK(y[1] == 7.0);
        CHECK(y[2] == 13.0);
        CHECK(y[3] == 15.0);
    }
    {
        // trailing remainder truncated
        Tape::Id x = t.constant(Tensor({1, 1, 5, 5}));
        const Tensor& y = t.value(maxpool2d(t, x, 2, 2));
        CHECK(y.shape() == std::vector<int>{1, 1, 2, 2});
    }
    Tape::Id small = t.constant(Tensor({1, 1, 2, 2}));
    CHECK_THROWS_AS(maxpool2d(t, small, 3, 1), ShapeError);
}

TEST_CASE("maxpool2d ties route gradient to first element", "[ops][maxpool]") {
    Tape t;
    Tape::Id x = t.leaf(Tensor::full({1, 1, 2, 2}, 3.0), true);
    Tape::Id y = maxpool2d(t, x, 2, 2);
    CHECK(t.value(y)[0] == 3.0);
    t.backward(y);
    const Tensor& g = t.grad(x);
    CHECK(g[0] == 1.0);
    CHECK(g[1] == 0.0);
    CHECK(g[2] == 0.0);
    CHECK(g[3] == 0.0);
}

TEST_CASE("global_avg_pool examples", "[ops][gap]") {
    Tape t;
    {
        Tape::Id x = t.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
        CHECK(t.value(global_avg_pool(t, x))[0] == 2.5);
    }
    {
        Tape::Id x = t.constant(Tensor::full({2, 3, 4, 4}, -0.75));
        const Tensor& y = t.value(global_avg_pool(t, x));
        for (int64_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == -0.75);
    }
    {
        // channel 0 mean 0, channel 1 mean 1
        Tensor x({1, 2, 2, 2}, {-1, 1, -2, 2, 1, 1, 1, 1});
        Tape::Id id = t.constant(x);
        const Tensor& y = t.value(global_avg_pool(t, id));
        CHECK(y[0] == 0.0);
        CHECK(y[1] == 1.0);
    }
}

TEST_CASE("batchnorm train normalizes by batch statistics", "[ops][batchnorm]") {
    // one channel, batch with mean 5 and population variance 4
    Tensor x({1, 1, 2, 2}, {3, 3, 7, 7});
    auto state = BatchNormState::init(1);
    Tape t;
    Tape::Id xid = t.constant(x);
    Tape::Id gamma = t.constant(Tensor({1}, {1.0}));
    Tape::Id beta = t.constant(Tensor({1}, {0.0}));
    const double eps = 1e-5;
    const Tensor& y = t.value(batchnorm(t, xid, gamma, beta, state, Mode::train, 0.9, eps));
    const double denom = std::sqrt(2.0 * 2.0 + eps);
    CHECK(y[0] == Approx((3.0 - 5.0) / denom).epsilon(1e-12));
    CHECK(y[1] == Approx((3.0 - 5.0) / denom).epsilon(1e-12));
    CHECK(y[3] == Approx(2.0 / denom).epsilon(1e-12));
    // running stats moved toward the batch
    CHECK(state.running_mean[0] == Approx(0.9 * 0.0 + 0.1 * 5.0));
    CHECK(state.running_var[0] == Approx(0.9 * 1.0 + 0.1 * 4.0));
}

TEST_CASE("batchnorm gamma zero gives beta", "[ops][batchnorm]") {
    Rng rng(29);
    Tensor x = oracles::random_tensor({2, 3, 4, 4}, rng);
    auto state = BatchNormState::init(3);
    Tape t;
    Tape::Id y = batchnorm(t, t.constant(x), t.constant(Tensor::zeros({3})),
                           t.constant(Tensor::full({3}, 0.25)), state, Mode::train);
    for (int64_t i = 0; i < t.value(y).size(); ++i) REQUIRE(t.value(y)[i] == 0.25);
}

TEST_CASE("batchnorm infer with identity stats is near-identity", "[ops][batchnorm]") {
    Rng rng(31);
    Tensor x = oracles::random_tensor({2, 2, 3, 3}, rng);
    auto state = BatchNormState::init(2);  // mean 0, var 1
    Tape t;
    Tape::Id y = batchnorm(t, t.constant(x), t.constant(Tensor::full({2}, 1.0)),
                           t.constant(Tensor::zeros({2})), state, Mode::infer);
    for (int64_t i = 0; i < x.size(); ++i) {
        REQUIRE(t.value(y)[i] == Approx(x[i]).epsilon(1e-5));
    }
    // infer mode must leave the running stats untouched
    CHECK(state.running_mean[0] == 0.0);
    CHECK(state.running_var[0] == 1.0);
}

TEST_CASE("dropout contracts", "[ops][dropout]") {
    Rng rng(37);
    Tensor x = oracles::random_tensor({32, 32}, rng);
    Rng drop(1);
    {
        Tape t;
        Tape::Id xid = t.constant(x);
        CHECK(dropout(t, xid, 0.0, drop, Mode::train) == xid);
        CHECK(dropout(t, xid, 0.5, drop, Mode::infer) == xid);
        CHECK_THROWS_AS(dropout(t, xid, 1.0, drop, Mode::train), ConfigError);
        CHECK_THROWS_AS(dropout(t, xid, -0.1, drop, Mode::train), ConfigError);
    }
    {
        // inverted dropout keeps the expectation: average over many draws
        Tensor ones = Tensor::full({100}, 1.0);
        Rng drng(77);
        double acc = 0.0;
        const int trials = 10000;
        for (int k = 0; k < trials; ++k) {
            Tape t;
            Tape::Id y = dropout(t, t.constant(ones), 0.5, drng, Mode::train);
            acc += t.value(y).sum() / 100.0;
        }
        CHECK(acc / trials == Approx(1.0).margin(0.01));
    }
}

TEST_CASE("backward on sum gives all-ones gradient", "[tape]") {
    Rng rng(41);
    Tensor x = oracles::random_tensor({3, 4}, rng);
    Tape t;
    Tape::Id xid = t.leaf(x, true);
    Tape::Id loss = oracles::sum_all(t, xid);
    t.backward(loss);
    const Tensor& g = t.grad(xid);
    for (int64_t i = 0; i < g.size(); ++i) REQUIRE(g[i] == 1.0);
}

TEST_CASE("d/dw sigmoid(w*x) at w=0,x=1 is 0.25", "[tape]") {
    Tape t;
    Tape::Id w = t.leaf(Tensor({1, 1}, {0.0}), true);
    Tape::Id x = t.constant(Tensor({1, 1}, {1.0}));
    Tape::Id b = t.constant(Tensor({1}, {0.0}));
    Tape::Id y = sigmoid_op(t, dense(t, x, w, b));
    t.backward(y);
    CHECK(t.grad(w)[0] == Approx(0.25).margin(1e-15));
}

TEST_CASE("backward rejects non-scalar loss and foreign ids", "[tape][errors]") {
    Tape t;
    Tape::Id x = t.leaf(Tensor({2, 2}), true);
    CHECK_THROWS_AS(t.backward(x), ShapeError);
    CHECK_THROWS_AS(t.value(999), Error);
    CHECK_THROWS_AS(t.grad(x), Error);  // backward not run yet
}

TEST_CASE("untouched leaves get zero gradient", "[tape]") {
    Tape t;
    Tape::Id used = t.leaf(Tensor({2}, {1.0, 2.0}), true);
    Tape::Id unused = t.leaf(Tensor({3}, {1.0, 1.0, 1.0}), true);
    Tape::Id loss = oracles::sum_all(t, used);
    t.backward(loss);
    const Tensor& g = t.grad(unused);
    for (int64_t i = 0; i < g.size(); ++i) REQUIRE(g[i] == 0.0);
}

TEST_CASE("tape replay gives identical losses and gradients", "[tape][property]") {
    Rng rng(43);
    Tensor x = oracles::random_tensor({2, 3, 6, 6}, rng);
    Tensor k = oracles::random_tensor({2, 3, 3, 3}, rng);
    Tensor b = oracles::random_tensor({2}, rng);

    auto run = [&](Tensor* grad_out) {
        Tape t;
        Tape::Id xid = t.constant(x);
        Tape::Id kid = t.leaf(k, true);
        Tape::Id bid = t.leaf(b, true);
        Tape::Id y = sigmoid_op(t, conv2d(t, xid, kid, bid, 1, 1));
        Tape::Id loss = oracles::sum_all(t, y);
        t.backward(loss);
        if (grad_out) *grad_out = t.grad(kid);
        return t.value(loss)[0];
    };
    Tensor g1, g2;
    const double l1 = run(&g1);
    const double l2 = run(&g2);
    REQUIRE(l1 == l2);
    REQUIRE(g1.size() == g2.size());
    for (int64_t i = 0; i < g1.size(); ++i) REQUIRE(g1[i] == g2[i]);
}
