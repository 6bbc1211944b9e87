#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numeric>
#include <random>

#include "eqemu/autodiff.hpp"
#include "eqemu/gradcheck.hpp"
#include "eqemu/spectral.hpp"
#include "test_support.hpp"

namespace eqemu::ad {
namespace {

using Tf = Tensor<float>;
using Td = Tensor<double>;

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

Td random_tensor(Shape shape, std::uint64_t seed, bool param = false) {
    auto v = randn(numel(shape), seed);
    return param ? Td::parameter(std::move(shape), std::move(v)) : Td::constant(std::move(shape), std::move(v));
}

double max_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

TEST(GradCheck, EveryRegisteredOpPasses) {
    for (const auto& res : check_all_ops(3, 1e-4)) {
        EXPECT_TRUE(res.passed) << res.name << " max error " << res.max_error;
        EXPECT_EQ(res.seeds, 3u);
    }
}

TEST(GradCheck, InjectedFaultIsCaughtAndNamed) {
    const auto cases = registered_op_cases();
    for (const char* op : {"conv1d", "spectral_conv", "attention", "film"}) {
        ScopedFault fault(op, 1.1);
        bool caught = false;
        for (const auto& res : check_all_ops(1, 1e-4))
            if (!res.passed && res.name.rfind(op, 0) == 0) caught = true;
        EXPECT_TRUE(caught) << op;
    }
    // Fault is gone once the guard is destroyed.
    for (const auto& res : check_all_ops(1, 1e-4)) EXPECT_TRUE(res.passed) << res.name;
}

TEST(Backward, AccumulatesAcrossCalls) {
    auto x = Td::parameter({3}, {1.0, -2.0, 0.5});
    backward(sum(scale(x, 2.0)));
    backward(sum(scale(x, 3.0)));
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 5.0);
    x.zero_grad();
    EXPECT_TRUE(x.grad().empty());
}

TEST(Backward, SharedSubgraphVisitedOnce) {
    // y = x*x + x reaches x along three paths; dy/dx = 2x + 1.
    auto x = Td::parameter({4}, {0.0, 1.0, -1.5, 2.0});
    auto y = sum(add(mul(x, x), x));
    backward(y);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x.data()[i] + 1);
}

TEST(Backward, LinearityOfAdjoints) {
    auto w = random_tensor({3, 4, 3}, 1, true);
    auto x = random_tensor({2, 4, 16}, 2);
    auto t1 = random_tensor({2, 3, 16}, 3);
    auto loss1 = [&] { return mae(conv1d(x, w, Td{}, 1), t1); };
    auto loss2 = [&] { return sum(mul(conv1d(x, w, Td{}, 1), conv1d(x, w, Td{}, 1))); };
    backward(loss1());
    std::vector<double> g1(w.grad().begin(), w.grad().end());
    w.zero_grad();
    backward(loss2());
    std::vector<double> g2(w.grad().begin(), w.grad().end());
    w.zero_grad();
    backward(add(loss1(), loss2()));
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(w.grad()[i], g1[i] + g2[i], 1e-10);
}

TEST(Backward, NoGraphWithoutGradInputs) {
    auto a = random_tensor({2, 3}, 4);
    auto y = silu(a);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node().parents.empty());
}

TEST(Conv1d, IdentityKernelCopiesInput) {
    auto x = random_tensor({2, 3, 16}, 5);
    std::vector<double> w(3 * 3 * 3, 0.0);
    for (std::size_t c = 0; c < 3; ++c) w[(c * 3 + c) * 3 + 1] = 1.0;  // centre tap
    auto y = conv1d(x, Td::constant({3, 3, 3}, w), Td{}, 1);
    EXPECT_EQ(max_diff(y.data(), x.data()), 0.0);
}

TEST(Conv1d, PeriodicShiftTap) {
    auto x = random_tensor({1, 1, 8}, 6);
    auto y = conv1d(x, Td::constant({1, 1, 3}, {0.0, 0.0, 1.0}), Td{}, 1);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(y.data()[j], x.data()[(j + 1) % 8]);
}

TEST(Conv1d, StrideTwoThenTransposeRestoresShape) {
    auto x = random_tensor({2, 4, 160}, 7);
    auto down = conv1d(x, random_tensor({6, 4, 3}, 8), random_tensor({6}, 9), 2);
    EXPECT_EQ(down.shape(), (Shape{2, 6, 80}));
    auto down2 = conv1d(down, random_tensor({8, 6, 3}, 10), Td{}, 2);
    EXPECT_EQ(down2.shape(), (Shape{2, 8, 40}));
    auto up = conv_transpose1d(down2, random_tensor({8, 6, 4}, 11), Td{}, 2);
    auto up2 = conv_transpose1d(up, random_tensor({6, 4, 4}, 12), Td{}, 2);
    EXPECT_EQ(up2.shape(), x.shape());
}

TEST(Conv1d, TransposeIsAdjoint) {
    // <conv(x), y> == <x, conv_transpose(y)>; [Cout, Cin, K] reads as [Cin', Cout', K].
    auto x = random_tensor({2, 3, 16}, 13);
    auto y = random_tensor({2, 5, 8}, 14);
    auto w = random_tensor({5, 3, 3}, 15);
    auto cx = conv1d(x, w, Td{}, 2);
    auto ty = conv_transpose1d(y, w, Td{}, 2);
    const double lhs = std::inner_product(cx.data().begin(), cx.data().end(), y.data().begin(), 0.0);
    const double rhs = std::inner_product(x.data().begin(), x.data().end(), ty.data().begin(), 0.0);
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
}

Tf identity_spectral_weights(std::size_t c, std::size_t k) {
    std::vector<float> w(c * c * k * 2, 0.0f);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t m = 0; m < k; ++m) w[((i * c + i) * k + m) * 2] = 1.0f;
    return Tf::constant({c, c, k, 2}, w);
}

TEST(SpectralConv, IdentityOnAllModesReproducesInput) {
    for (std::size_t n : {32u, 160u}) {
        auto xd = random_tensor({2, 3, n}, 16);
        auto x = to_float(xd);
        auto y = spectral_conv(x, identity_spectral_weights(3, n / 2 + 1));
        float err = 0;
        for (std::size_t i = 0; i < x.numel(); ++i) err = std::max(err, std::abs(y.data()[i] - x.data()[i]));
        EXPECT_LT(err, 1e-5f) << n;  // f32 DFT with |x| ~ 3
    }
    auto xd = random_tensor({2, 3, 160}, 17);
    auto y = spectral_conv(xd, to_double(identity_spectral_weights(3, 81)));
    EXPECT_LT(max_diff(y.data(), xd.data()), 1e-10);
}

TEST(SpectralConv, ZeroWeightsGiveZero) {
    auto y = spectral_conv(random_tensor({2, 3, 32}, 18), Td::zeros({3, 4, 8, 2}));
    EXPECT_EQ(y.shape(), (Shape{2, 4, 32}));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(SpectralConv, PerSampleWeightsMatchSharedWhenEqual) {
    auto x = random_tensor({2, 3, 16}, 19);
    auto w = random_tensor({3, 2, 5, 2}, 20);
    std::vector<double> both(w.data().begin(), w.data().end());
    both.insert(both.end(), w.data().begin(), w.data().end());
    auto a = spectral_conv(x, w);
    auto b = spectral_conv(x, Td::constant({2, 3, 2, 5, 2}, both));
    EXPECT_LT(max_diff(a.data(), b.data()), 1e-12);
}

TEST(LowRankWeights, ZeroFactorsGiveBase) {
    auto base = random_tensor({3, 2, 4, 2}, 21);
    auto w = lowrank_spectral_weights(base, Td::zeros({2, 4, 3}), Td::zeros({2, 4, 2}), random_tensor({2, 4, 4, 2}, 22));
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < base.numel(); ++i) EXPECT_EQ(w.data()[b * base.numel() + i], base.data()[i]);
}

TEST(SpectralGate, UnitGateIsIdentity) {
    auto x = random_tensor({2, 3, 32}, 23);
    std::vector<double> ones(2 * 3 * 10, 1.0);
    auto y = spectral_gate(x, Td::constant({2, 3, 10}, ones));
    EXPECT_LT(max_diff(y.data(), x.data()), 1e-14);
}

TEST(SpectralGate, LowPassMaskMatchesFftTruncation) {
    const Grid1D g(32);
    auto x = random_tensor({1, 1, 32}, 24);
    // keep modes 0..3, zero modes 4..16 (gate covers all modes)
    std::vector<double> mask(17, 0.0);
    for (std::size_t m = 0; m < 4; ++m) mask[m] = 1.0;
    auto y = spectral_gate(x, Td::constant({1, 1, 17}, mask));
    RealFft fft(32);
    std::vector<std::complex<double>> spec(17);
    fft.forward(x.data(), spec);
    for (std::size_t m = 4; m < 17; ++m) spec[m] = 0.0;
    std::vector<double> oracle(32);
    fft.inverse(spec, oracle);
    EXPECT_LT(max_diff(y.data(), oracle), 1e-12);
}

TEST(Film, IdentityAndPureShift) {
    auto x = random_tensor({2, 3, 8}, 25);
    auto beta = random_tensor({2, 3}, 26);
    auto y = film(x, Td::constant({2, 3}, std::vector<double>(6, 1.0)), Td::zeros({2, 3}));
    EXPECT_EQ(max_diff(y.data(), x.data()), 0.0);
    auto z = film(x, Td::zeros({2, 3}), beta);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(z.data()[r * 8 + j], beta.data()[r]);
}

TEST(Attention, SingleTokenBroadcastsValue) {
    auto q = random_tensor({2, 4, 10}, 27);
    auto k = random_tensor({2, 1, 4}, 28);
    auto v = random_tensor({2, 1, 4}, 29);
    auto y = attention(q, k, v, 2);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t p = 0; p < 10; ++p) EXPECT_NEAR(y.data()[(b * 4 + c) * 10 + p], v.data()[b * 4 + c], 1e-15);
}

TEST(Attention, EquivariantToSpatialPermutation) {
    const std::size_t n = 12;
    auto q = random_tensor({1, 4, n}, 30);
    auto k = random_tensor({1, 4, 4}, 31);
    auto v = random_tensor({1, 4, 4}, 32);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
    std::vector<double> qp(q.numel());
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t p = 0; p < n; ++p) qp[c * n + p] = q.data()[c * n + perm[p]];
    auto y = attention(q, k, v, 2);
    auto yp = attention(Td::constant({1, 4, n}, qp), k, v, 2);
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t p = 0; p < n; ++p) EXPECT_NEAR(yp.data()[c * n + p], y.data()[c * n + perm[p]], 1e-14);
}

TEST(Mlp, ZeroFinalLayerOutputsBias) {
    auto x = random_tensor({3, 7}, 33);
    auto h = silu(linear(x, random_tensor({5, 7}, 34), random_tensor({5}, 35)));
    auto bias = random_tensor({2}, 36);
    auto y = linear(h, Td::zeros({2, 5}), bias);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t o = 0; o < 2; ++o) EXPECT_EQ(y.data()[r * 2 + o], bias.data()[o]);
}

TEST(Activations, ValuesAtZero) {
    auto z = Td::constant({1}, {0.0});
    EXPECT_EQ(silu(z).item(), 0.0);
    EXPECT_EQ(gelu(z).item(), 0.0);
    EXPECT_NEAR(silu(Td::constant({1}, {2.0})).item(), 2.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(Mae, IdentitiesAndSignGradient) {
    auto t = random_tensor({4, 5}, 37);
    EXPECT_EQ(mae(t, t).item(), 0.0);
    auto p = Td::parameter({4, 5}, std::vector<double>(t.data().begin(), t.data().end()));
    for (auto& v : p.mutable_data()) v += 1.0;
    auto loss = mae(p, t);
    EXPECT_NEAR(loss.item(), 1.0, 1e-15);
    backward(loss);
    for (double g : p.grad()) EXPECT_DOUBLE_EQ(g, 1.0 / 20.0);
}

TEST(PdeRhs, MatchesSpectralOracle) {
    const Grid1D g(64, 2.0);
    const auto poly = testing::TrigPoly::random(6, 38, g.length());
    const auto u = poly.sample(g);
    PhysicalCoeffs a;
    a.values = {0.1, -0.3, 0.7, -1.1, 0.02, -0.004, -1e-4};
    const auto oracle = rhs(u, a, g, false);
    auto y = pde_rhs(Td::constant({1, 64}, u), {a.values}, g.length());
    EXPECT_LT(max_diff(y.data(), oracle), 1e-11 * std::max(1.0, testing::max_abs(oracle)));
}

TEST(Precision, FloatAndDoubleAgree) {
    auto xd = random_tensor({2, 3, 32}, 39);
    auto wd = random_tensor({3, 4, 6, 2}, 40);
    auto yd = spectral_conv(xd, wd);
    auto yf = spectral_conv(to_float(xd), to_float(wd));
    for (std::size_t i = 0; i < yd.numel(); ++i) EXPECT_NEAR(yf.data()[i], yd.data()[i], 1e-4);
}

}  // namespace
}  // namespace eqemu::ad
