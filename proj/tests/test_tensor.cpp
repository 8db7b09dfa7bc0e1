#include "locdep/ops.hpp"
#include "locdep/rng.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace locdep;

namespace {

Tensor from_array(const oracle::Array4& a, bool rg = false) {
    return Tensor(Shape{a.n, a.c, a.h, a.w}, a.v, rg);
}

oracle::Array4 random_array(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, std::uint64_t seed) {
    oracle::Array4 a(n, c, h, w);
    a.v = oracle::random_vector(a.v.size(), seed);
    return a;
}

double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double max_rel_err(std::span<const double> a, const std::vector<double>& n) {
    double m = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
        m = std::max(m, std::abs(a[i] - n[i]) / std::max({std::abs(a[i]), std::abs(n[i]), 1e-8}));
    }
    return m;
}

// Analytic gradient of sum(f(x) * proj) w.r.t. x, compared to finite differences.
template <typename F>
double op_gradient_error(Tensor x, const Tensor& proj, F f) {
    {
        Graph g;
        g.backward(sum(mul(f(x), proj)));
    }
    auto eval = [&] { return sum(mul(f(x), proj)).item(); };
    const auto num = oracle::numeric_gradient(x.values(), eval);
    return max_rel_err(x.grad(), num);
}

} // namespace

TEST(Tensor, ConstructionAndShape) {
    Tensor t(Shape{2, 3}, 1.5);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.dim(1), 3);
    EXPECT_DOUBLE_EQ(t.at(1, 2), 1.5);
    EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    EXPECT_THROW(Tensor(Shape{2, -1}), ShapeError);
    EXPECT_THROW(Tensor(Shape{2}).item(), ShapeError);
    EXPECT_THROW(t.reshaped(Shape{4}), ShapeError);
}

TEST(Tensor, CopiesShareStorageClonesDoNot) {
    Tensor a(Shape{2}, 1.0);
    Tensor b = a;
    b[0] = 5.0;
    EXPECT_DOUBLE_EQ(a[0], 5.0);
    Tensor c = a.clone();
    c[1] = 7.0;
    EXPECT_DOUBLE_EQ(a[1], 1.0);
    EXPECT_FALSE(c.same_storage(a));
}

TEST(Backward, SumGivesOnes) {
    Tensor x(Shape{2, 3}, std::vector<double>{1, -2, 3, 4, 5, -6}, true);
    Graph g;
    g.backward(sum(x));
    for (double v : x.grad()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Backward, HalfSquaredNormGivesInput) {
    Tensor x(Shape{4}, std::vector<double>{0.5, -1.25, 3.0, 2.0}, true);
    Graph g;
    g.backward(scale(sum(mul(x, x)), 0.5));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x[i]);
}

TEST(Backward, ErrorPaths) {
    Tensor x(Shape{3}, 1.0, true);
    {
        Graph g;
        EXPECT_THROW(g.backward(mul(x, x)), GraphError); // non-scalar
    }
    {
        Graph g;
        EXPECT_THROW(g.backward(sum(Tensor(Shape{3}, 1.0))), GraphError); // detached
    }
    {
        Graph g;
        const Tensor loss = sum(x);
        g.backward(loss);
        EXPECT_THROW(g.backward(loss), GraphError); // twice
        g.reset();
        x.zero_grad();
        const Tensor again = sum(x);
        EXPECT_NO_THROW(g.backward(again));
    }
    Tensor outside;
    {
        Graph g;
        outside = sum(x);
    }
    Graph other;
    EXPECT_THROW(other.backward(outside), GraphError); // recorded elsewhere
}

TEST(Backward, NoGraphMeansNoRecording) {
    Tensor x(Shape{3}, 1.0, true);
    const Tensor y = sum(x);
    EXPECT_FALSE(y.requires_grad());
    Graph g;
    EXPECT_EQ(g.size(), 0u);
}

TEST(Backward, LeafGradientsAccumulateUntilZeroed) {
    Tensor x(Shape{2}, 1.0, true);
    for (int i = 0; i < 2; ++i) {
        Graph g;
        g.backward(sum(x));
    }
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    x.zero_grad();
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Conv2d, IdentityKernel) {
    const auto in = random_array(2, 1, 5, 5, 1);
    const Tensor out = conv2d(from_array(in), Tensor(Shape{1, 1, 1, 1}, 1.0), Padding::Same);
    EXPECT_EQ(out.values(), in.v);
}

TEST(Conv2d, SameAndValidShapes) {
    const Tensor x(Shape{2, 3, 9, 7});
    const Tensor w(Shape{4, 3, 3, 3});
    EXPECT_EQ(conv2d(x, w, Padding::Same).shape(), (Shape{2, 4, 9, 7}));
    EXPECT_EQ(conv2d(x, w, Padding::Valid).shape(), (Shape{2, 4, 7, 5}));
    EXPECT_EQ(conv2d(x, w, Padding::Same, 2).shape(), (Shape{2, 4, 5, 4}));
    EXPECT_THROW(conv2d(x, Tensor(Shape{4, 2, 3, 3}), Padding::Same), ShapeError);
    EXPECT_THROW(conv2d(x, Tensor(Shape{4, 3, 2, 2}), Padding::Same), ShapeError);
    EXPECT_THROW(conv2d(Tensor(Shape{1, 3, 2, 2}), w, Padding::Valid), ShapeError);
}

class ConvOracle : public ::testing::TestWithParam<std::tuple<int, int, bool>> {};

TEST_P(ConvOracle, MatchesNaiveLoops) {
    const auto [k, stride, same] = GetParam();
    const std::uint64_t seed = static_cast<std::uint64_t>(k * 100 + stride * 10 + same);
    const auto in = random_array(2, 3, 8, 7, seed);
    const auto w = random_array(4, 3, k, k, seed + 1);
    const auto b = oracle::random_vector(4, seed + 2);
    const std::int64_t pad = same ? k / 2 : 0;
    const auto expect = oracle::conv2d(in, w, b, pad, stride);
    const Tensor got = conv2d(from_array(in), from_array(w), Tensor(Shape{4}, b), same ? Padding::Same : Padding::Valid,
                              stride);
    ASSERT_EQ(got.shape(), (Shape{expect.n, expect.c, expect.h, expect.w}));
    EXPECT_LT(max_abs_diff(got.data(), expect.v), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Kernels, ConvOracle,
                         ::testing::Combine(::testing::Values(1, 3, 5), ::testing::Values(1, 2),
                                            ::testing::Bool()));

TEST(Conv2d, GradientsMatchFiniteDifferences) {
    SplitMix64 rng(3);
    for (auto padding : {Padding::Same, Padding::Valid}) {
        for (std::int64_t stride : {1, 2}) {
            const auto in = random_array(2, 2, 6, 6, 10 + stride);
            Tensor x = from_array(in, true);
            Tensor w = from_array(random_array(3, 2, 3, 3, 20 + stride), true);
            Tensor b(Shape{3}, oracle::random_vector(3, 30), true);
            const Tensor probe = conv2d(x, w, b, padding, stride);
            const Tensor proj(probe.shape(), oracle::random_vector(probe.numel(), 40));
            auto loss = [&] { return sum(mul(conv2d(x, w, b, padding, stride), proj)); };
            {
                Graph g;
                g.backward(loss());
            }
            for (Tensor* t : {&x, &w, &b}) {
                const auto num = oracle::numeric_gradient(t->values(), [&] { return loss().item(); });
                EXPECT_LT(max_rel_err(t->grad(), num), 1e-6);
            }
        }
    }
}

TEST(ConvTranspose, StridedStampExample) {
    const Tensor x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    const Tensor w = Tensor::ones(Shape{1, 1, 2, 2});
    const Tensor out = conv2d_transpose(x, w, Padding::Valid, 2);
    ASSERT_EQ(out.shape(), (Shape{1, 1, 4, 4}));
    const std::vector<double> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    EXPECT_EQ(out.values(), expect);
}

TEST(ConvTranspose, IdentityKernel) {
    const auto in = random_array(1, 2, 4, 4, 5);
    Tensor w(Shape{2, 2, 1, 1});
    w.at(0, 0, 0, 0) = 1.0;
    w.at(1, 1, 0, 0) = 1.0;
    EXPECT_EQ(conv2d_transpose(from_array(in), w, Padding::Same, 1).values(), in.v);
}

TEST(ConvTranspose, MatchesExpandThenSum) {
    for (std::int64_t stride : {1, 2}) {
        for (auto padding : {Padding::Same, Padding::Valid}) {
            const auto in = random_array(2, 3, 4, 5, 50 + stride);
            const auto w = random_array(3, 2, 3, 3, 60 + stride);
            const auto b = oracle::random_vector(2, 70);
            const Tensor got = conv2d_transpose(from_array(in), from_array(w), Tensor(Shape{2}, b), padding, stride);
            const std::int64_t crop = padding == Padding::Same ? 1 : 0;
            const std::int64_t oh = padding == Padding::Same ? 4 * stride : 3 * stride + 3;
            const std::int64_t ow = padding == Padding::Same ? 5 * stride : 4 * stride + 3;
            const auto expect = oracle::conv2d_transpose(in, w, b, stride, crop, oh, ow);
            ASSERT_EQ(got.shape(), (Shape{2, 2, oh, ow}));
            EXPECT_LT(max_abs_diff(got.data(), expect.v), 1e-12);
        }
    }
}

TEST(ConvTranspose, IsAdjointOfConv) {
    // <conv(x), y> == <x, conv_transpose(y)> for matching stride and padding.
    for (std::int64_t stride : {1, 2}) {
        const auto xa = random_array(1, 2, 8, 8, 80);
        const Tensor w = from_array(random_array(3, 2, 3, 3, 81));
        const Tensor cx = conv2d(from_array(xa), w, Padding::Same, stride);
        const Tensor y(cx.shape(), oracle::random_vector(cx.numel(), 82));
        const Tensor w_t = [&] {
            Tensor t(Shape{3, 2, 3, 3});
            t.values() = w.values(); // [Cout,Cin] of conv is [Cin,Cout] of the transpose
            return t;
        }();
        const Tensor ty = conv2d_transpose(y, w_t, Padding::Same, stride);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < cx.numel(); ++i) lhs += cx[i] * y[i];
        for (std::size_t i = 0; i < xa.v.size(); ++i) rhs += xa.v[i] * ty[i];
        EXPECT_NEAR(lhs, rhs, 1e-10);
    }
}

TEST(ConvTranspose, RestoresShapeAfterConv) {
    const Tensor x(Shape{1, 2, 16, 16});
    const Tensor down = conv2d(x, Tensor(Shape{3, 2, 3, 3}), Padding::Same, 2);
    const Tensor up = conv2d_transpose(down, Tensor(Shape{3, 2, 3, 3}), Padding::Same, 2);
    EXPECT_EQ(up.shape(), x.shape());
}

TEST(ConvTranspose, GradientsMatchFiniteDifferences) {
    Tensor x = from_array(random_array(2, 2, 3, 3, 90), true);
    Tensor w = from_array(random_array(2, 3, 3, 3, 91), true);
    Tensor b(Shape{3}, oracle::random_vector(3, 92), true);
    const Tensor proj(Shape{2, 3, 6, 6}, oracle::random_vector(2 * 3 * 36, 93));
    auto loss = [&] { return sum(mul(conv2d_transpose(x, w, b, Padding::Same, 2), proj)); };
    {
        Graph g;
        g.backward(loss());
    }
    for (Tensor* t : {&x, &w, &b}) {
        const auto num = oracle::numeric_gradient(t->values(), [&] { return loss().item(); });
        EXPECT_LT(max_rel_err(t->grad(), num), 1e-6);
    }
}

TEST(AddLocationMap, ZeroMapIsIdentity) {
    const auto in = random_array(2, 3, 4, 4, 100);
    EXPECT_EQ(add_location_map(from_array(in), Tensor(Shape{4, 4})).values(), in.v);
}

TEST(AddLocationMap, PointPerturbationHitsEveryChannel) {
    const auto in = random_array(2, 3, 4, 4, 101);
    Tensor map(Shape{4, 4});
    map.at(1, 2) = 0.75;
    const Tensor out = add_location_map(from_array(in), map);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < 4; ++y)
                for (std::int64_t x = 0; x < 4; ++x) {
                    const double shift = (y == 1 && x == 2) ? 0.75 : 0.0;
                    EXPECT_DOUBLE_EQ(out.at(n, c, y, x), in.at(n, c, y, x) + shift);
                }
}

TEST(AddLocationMap, GradientIsBroadcastCount) {
    Tensor x = from_array(random_array(2, 3, 4, 4, 102), true);
    Tensor map(Shape{4, 4}, oracle::random_vector(16, 103), true);
    Graph g;
    g.backward(sum(add_location_map(x, map)));
    for (double v : map.grad()) EXPECT_DOUBLE_EQ(v, 6.0);
}

TEST(AddLocationMap, GradientIsChannelAndBatchSumOfUpstream) {
    Tensor x = from_array(random_array(2, 3, 4, 4, 104), true);
    Tensor map(Shape{4, 4}, oracle::random_vector(16, 105), true);
    const auto up = random_array(2, 3, 4, 4, 106);
    Graph g;
    g.backward(sum(mul(add_location_map(x, map), from_array(up))));
    for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t q = 0; q < 4; ++q) {
            double s = 0.0;
            for (std::int64_t n = 0; n < 2; ++n)
                for (std::int64_t c = 0; c < 3; ++c) s += up.at(n, c, y, q);
            EXPECT_NEAR(map.grad()[static_cast<std::size_t>(y * 4 + q)], s, 1e-14);
        }
}

TEST(AddLocationMap, SpatialMismatchThrows) {
    EXPECT_THROW(add_location_map(Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{4, 5})), ShapeError);
    EXPECT_THROW(add_location_map(Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{16})), ShapeError);
}

TEST(Elementwise, ClosedForms) {
    const Tensor zero(Shape{1}, 0.0);
    EXPECT_DOUBLE_EQ(activate(zero, Activation::Sigmoid)[0], 0.5);
    EXPECT_DOUBLE_EQ(activate(zero, Activation::Tanh)[0], 0.0);
    EXPECT_DOUBLE_EQ(activate(Tensor(Shape{1}, -2.0), Activation::ReLU)[0], 0.0);
    EXPECT_DOUBLE_EQ(activate(Tensor(Shape{1}, 2.0), Activation::ReLU)[0], 2.0);
    EXPECT_DOUBLE_EQ(sigmoid(-800.0), 0.0);
    EXPECT_DOUBLE_EQ(sigmoid(800.0), 1.0);
}

TEST(Elementwise, DerivativesMatchFiniteDifferences) {
    for (auto kind : {Activation::Sigmoid, Activation::Tanh, Activation::ReLU, Activation::Identity}) {
        auto values = oracle::random_vector(2 * 4 * 8 * 8, 110, -3.0, 3.0);
        if (kind == Activation::ReLU) {
            for (double& v : values) {
                if (std::abs(v) < 1e-3) v = 0.5; // keep away from the kink
            }
        }
        Tensor x(Shape{2, 4, 8, 8}, values, true);
        const Tensor proj(Shape{2, 4, 8, 8}, oracle::random_vector(x.numel(), 111));
        EXPECT_LT(op_gradient_error(x, proj, [&](const Tensor& t) { return activate(t, kind); }), 1e-6)
            << "activation " << static_cast<int>(kind);
    }
}

TEST(Ops, AddMulScaleGradients) {
    Tensor a(Shape{2, 3}, oracle::random_vector(6, 120), true);
    Tensor b(Shape{2, 3}, oracle::random_vector(6, 121), true);
    Graph g;
    g.backward(sum(mul(add(a, scale(b, 3.0)), b)));
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_NEAR(a.grad()[i], b[i], 1e-15);
        EXPECT_NEAR(b.grad()[i], a[i] + 6.0 * b[i], 1e-14);
    }
    EXPECT_THROW(add(a, Tensor(Shape{3, 2})), ShapeError);
    EXPECT_THROW(mul(a, Tensor(Shape{6})), ShapeError);
}

TEST(Ops, ConcatAndSliceChannelsRoundTrip) {
    const Tensor a = from_array(random_array(2, 2, 3, 3, 130));
    const Tensor b = from_array(random_array(2, 3, 3, 3, 131));
    const Tensor cat = concat_channels({a, b});
    EXPECT_EQ(cat.shape(), (Shape{2, 5, 3, 3}));
    EXPECT_EQ(slice_channels(cat, 0, 2).values(), a.values());
    EXPECT_EQ(slice_channels(cat, 2, 3).values(), b.values());
    EXPECT_THROW(slice_channels(cat, 4, 2), ShapeError);
    EXPECT_THROW(concat_channels({a, Tensor(Shape{2, 1, 4, 3})}), ShapeError);
}

TEST(Ops, ConcatSliceGradients) {
    Tensor a = from_array(random_array(2, 2, 3, 3, 132), true);
    Tensor b = from_array(random_array(2, 1, 3, 3, 133), true);
    const Tensor proj = from_array(random_array(2, 2, 3, 3, 134));
    Graph g;
    g.backward(sum(mul(slice_channels(concat_channels({a, b}), 1, 2), proj)));
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t y = 0; y < 3; ++y)
            for (std::int64_t x = 0; x < 3; ++x) {
                EXPECT_DOUBLE_EQ(a.grad()[static_cast<std::size_t>(((n * 2 + 0) * 3 + y) * 3 + x)], 0.0);
                EXPECT_DOUBLE_EQ(a.grad()[static_cast<std::size_t>(((n * 2 + 1) * 3 + y) * 3 + x)],
                                 proj.at(n, 0, y, x));
                EXPECT_DOUBLE_EQ(b.grad()[static_cast<std::size_t>((n * 3 + y) * 3 + x)], proj.at(n, 1, y, x));
            }
}

TEST(ChannelBias, AddsPerChannel) {
    Tensor x(Shape{1, 2, 2, 2});
    const Tensor out = add_channel_bias(x, Tensor(Shape{2}, std::vector<double>{1.0, -2.0}));
    for (std::int64_t y = 0; y < 2; ++y)
        for (std::int64_t q = 0; q < 2; ++q) {
            EXPECT_DOUBLE_EQ(out.at(0, 0, y, q), 1.0);
            EXPECT_DOUBLE_EQ(out.at(0, 1, y, q), -2.0);
        }
    EXPECT_THROW(add_channel_bias(x, Tensor(Shape{3})), ShapeError);
}

TEST(Bce, HalfEverywhereIsFourLn2) {
    const Tensor p(Shape{1, 1, 2, 2}, 0.5);
    EXPECT_NEAR(bce_loss(p, p).item(), 4.0 * std::numbers::ln2, 1e-15);
}

TEST(Bce, LimitIsTargetEntropy) {
    const Tensor t(Shape{1, 1, 1, 3}, std::vector<double>{0.0, 0.3, 1.0});
    const double entropy = -(0.3 * std::log(0.3) + 0.7 * std::log(0.7));
    EXPECT_NEAR(bce_loss(t, t).item(), entropy, 1e-6);
}

TEST(Bce, MatchesScalarLoopAndAveragesOverBatch) {
    const auto pred = oracle::random_vector(16, 140, 0.01, 0.99);
    const auto target = oracle::random_vector(16, 141, 0.0, 1.0);
    EXPECT_NEAR(bce_loss(Tensor(Shape{1, 1, 4, 4}, pred), Tensor(Shape{1, 1, 4, 4}, target)).item(),
                oracle::bce(pred, target, 1.0), 1e-12);
    EXPECT_NEAR(bce_loss(Tensor(Shape{2, 1, 2, 4}, pred), Tensor(Shape{2, 1, 2, 4}, target)).item(),
                oracle::bce(pred, target, 2.0), 1e-12);
}

TEST(Bce, ClampKeepsLossFinite) {
    const Tensor p(Shape{1, 2}, std::vector<double>{0.0, 1.0});
    const Tensor t(Shape{1, 2}, std::vector<double>{1.0, 0.0});
    const double loss = bce_loss(p, t).item();
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_NEAR(loss, -2.0 * std::log(kBceEpsilon), 1e-6);
}

TEST(Bce, GradientMatchesFiniteDifferences) {
    Tensor p(Shape{2, 1, 4, 4}, oracle::random_vector(32, 150, 0.05, 0.95), true);
    const Tensor t(Shape{2, 1, 4, 4}, oracle::random_vector(32, 151, 0.0, 1.0));
    {
        Graph g;
        g.backward(bce_loss(p, t));
    }
    const auto num = oracle::numeric_gradient(p.values(), [&] { return bce_loss(p, t).item(); });
    EXPECT_LT(max_rel_err(p.grad(), num), 1e-6);
    EXPECT_THROW(bce_loss(p, Tensor(Shape{2, 1, 4, 5})), ShapeError);
}

TEST(Determinism, SameInputsSameBits) {
    const auto in = random_array(2, 3, 8, 8, 160);
    const Tensor w = from_array(random_array(4, 3, 3, 3, 161));
    const Tensor a = activate(conv2d(from_array(in), w, Padding::Same), Activation::Tanh);
    const Tensor b = activate(conv2d(from_array(in), w, Padding::Same), Activation::Tanh);
    EXPECT_EQ(a.values(), b.values());
}

TEST(Elementwise, VectorizedTranscendentalsMatchLibm) {
    std::vector<double> xs{0.0, -0.0, 1e-300, -1e-12, 1e-6, 1.0 / 64.0, -1.0 / 64.0, 0.0157, 0.5, -3.0, 19.0, -40.0, 800.0, -800.0};
    for (double v : oracle::random_vector(2000, 170, -10.0, 10.0)) xs.push_back(v);
    for (double v : oracle::random_vector(2000, 171, -0.05, 0.05)) xs.push_back(v);
    const Tensor x(Shape{static_cast<std::int64_t>(xs.size())}, xs);
    const Tensor th = activate(x, Activation::Tanh);
    const Tensor sg = activate(x, Activation::Sigmoid);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double t = std::tanh(xs[i]);
        EXPECT_LE(std::abs(th[i] - t), 4e-15 * std::abs(t)) << xs[i];
        const double s = 1.0 / (1.0 + std::exp(-xs[i]));
        EXPECT_LE(std::abs(sg[i] - s), 4e-16 * s) << xs[i];
    }
}

TEST(Activations, ResultDoesNotDependOnPosition) {
    const auto v = oracle::random_vector(37, 77, -3.0, 3.0);
    for (Activation a : {Activation::Sigmoid, Activation::Tanh}) {
        const Tensor ref = activate(Tensor(Shape{37}, v), a);
        for (std::size_t shift = 1; shift < 9; ++shift) {
            std::vector<double> padded(shift, 0.25);
            padded.insert(padded.end(), v.begin(), v.end());
            const Tensor moved = activate(Tensor(Shape{static_cast<std::int64_t>(padded.size())}, padded), a);
            for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(moved[shift + i], ref[i]) << shift << " " << i;
        }
    }
}
