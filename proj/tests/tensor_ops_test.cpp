#include <gtest/gtest.h>

#include "oracles.hpp"
#include "posegraph/tensor_ops.hpp"

using namespace posegraph;

namespace {

KernelStack random_kernels(Rng& rng, std::size_t out, std::size_t in, std::size_t kh, std::size_t kw)
{
    KernelStack k(out, in, kh, kw);
    for (double& w : k.weights)
        w = uniform(rng, -1.0, 1.0);
    for (double& b : k.bias)
        b = uniform(rng, -1.0, 1.0);
    return k;
}

} // namespace

TEST(Conv2dValid, OnesWithScaleKernel)
{
    KernelStack k(1, 1, 1, 1);
    k.weights[0] = 2.0;
    const ImagePlane out = conv2d_valid(ImagePlane(3, 3, 1, 1.0), k);
    EXPECT_EQ(out, ImagePlane(3, 3, 1, 2.0));
}

TEST(Conv2dValid, AveragingKernelOnRamp)
{
    ImagePlane ramp(5, 5, 1);
    for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x)
            ramp.at(y, x) = static_cast<double>(y * 5 + x);
    KernelStack k(1, 1, 3, 3);
    std::fill(k.weights.begin(), k.weights.end(), 1.0 / 9.0);
    const ImagePlane out = conv2d_valid(ramp, k);
    ASSERT_EQ(out.height(), 3u);
    double mean = 0.0;
    for (std::size_t y = 1; y <= 3; ++y)
        for (std::size_t x = 1; x <= 3; ++x)
            mean += ramp.at(y, x) / 9.0;
    EXPECT_NEAR(out.at(1, 1), mean, 1e-12);
}

TEST(Conv2dValid, ZeroKernelGivesBias)
{
    Rng rng(3);
    KernelStack k(2, 3, 3, 3);
    k.bias = {0.25, -4.0};
    const ImagePlane out = conv2d_valid(oracle::random_plane(rng, 6, 7, 3), k);
    for (std::size_t y = 0; y < out.height(); ++y)
        for (std::size_t x = 0; x < out.width(); ++x) {
            EXPECT_EQ(out(0, y, x), 0.25);
            EXPECT_EQ(out(1, y, x), -4.0);
        }
}

TEST(Conv2dValid, IdentityKernelIsIdentity)
{
    Rng rng(5);
    const ImagePlane in = oracle::random_plane(rng, 7, 4, 3);
    KernelStack k(3, 3, 1, 1);
    for (std::size_t c = 0; c < 3; ++c)
        k.weight(c, c, 0, 0) = 1.0;
    EXPECT_EQ(conv2d_valid(in, k), in);
}

TEST(Conv2dValid, MatchesOracleOnRandomInstances)
{
    Rng rng(11);
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t kh = 1 + uniform_index(rng, 4), kw = 1 + uniform_index(rng, 4);
        const std::size_t h = kh + uniform_index(rng, 6), w = kw + uniform_index(rng, 6);
        const std::size_t in = 1 + uniform_index(rng, 3), out = 1 + uniform_index(rng, 3);
        const std::size_t stride = 1 + uniform_index(rng, 2);
        const ImagePlane x = oracle::random_plane(rng, h, w, in);
        const KernelStack k = random_kernels(rng, out, in, kh, kw);
        const ImagePlane got = conv2d_valid(x, k, stride);
        const ImagePlane want = oracle::conv_valid(x, k, stride);
        ASSERT_LT(oracle::max_rel_diff(got, want), 1e-10) << "trial " << trial;
    }
}

TEST(Conv2dValid, ShapeMismatchNamesBothShapes)
{
    KernelStack k(1, 2, 3, 3);
    try {
        conv2d_valid(ImagePlane(5, 5, 3), k);
        FAIL() << "expected a contract violation";
    } catch (const ContractViolation& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("3x5x5"), std::string::npos) << msg;
        EXPECT_NE(msg.find("1x2x3x3"), std::string::npos) << msg;
    }
    EXPECT_THROW(conv2d_valid(ImagePlane(2, 5, 2), k), ContractViolation);
}

TEST(Conv2dValid, BackwardMatchesFiniteDifferences)
{
    Rng rng(17);
    const ImagePlane x = oracle::random_plane(rng, 7, 6, 2);
    const KernelStack k = random_kernels(rng, 3, 2, 3, 2);
    const ImagePlane gOut = oracle::random_plane(rng, 3, 3, 3); // stride 2 output
    auto loss = [&](const ImagePlane& in, const KernelStack& ks) {
        const ImagePlane y = conv2d_valid(in, ks, 2);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i)
            s += y.data()[i] * gOut.data()[i];
        return s;
    };
    KernelStack gk(3, 2, 3, 2);
    ImagePlane gx(7, 6, 2);
    conv2d_valid_backward(x, k, 2, gOut, gk, &gx);
    const double h = 1e-6;
    for (std::size_t i = 0; i < k.weights.size(); ++i) {
        KernelStack kp = k, km = k;
        kp.weights[i] += h;
        km.weights[i] -= h;
        EXPECT_NEAR(gk.weights[i], (loss(x, kp) - loss(x, km)) / (2 * h), 1e-7);
    }
    for (std::size_t m = 0; m < 3; ++m) {
        KernelStack kp = k, km = k;
        kp.bias[m] += h;
        km.bias[m] -= h;
        EXPECT_NEAR(gk.bias[m], (loss(x, kp) - loss(x, km)) / (2 * h), 1e-7);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        ImagePlane xp = x, xm = x;
        xp.data()[i] += h;
        xm.data()[i] -= h;
        EXPECT_NEAR(gx.data()[i], (loss(xp, k) - loss(xm, k)) / (2 * h), 1e-7);
    }
}

// ---------------------------------------------------------------------------

TEST(Conv2dSameCentered, DeltaPriorIsIdentity)
{
    Rng rng(2);
    const ImagePlane a = oracle::random_plane(rng, 6, 9);
    ImagePlane delta(5, 3, 1);
    delta.at(2, 1) = 1.0;
    EXPECT_EQ(conv2d_same_centered(a, delta), a);
}

TEST(Conv2dSameCentered, DeltaInputTranslatesPrior)
{
    Rng rng(4);
    const ImagePlane prior = oracle::random_plane(rng, 5, 5, 1, 0.0, 1.0);
    ImagePlane a(7, 8, 1);
    a.at(1, 6) = 1.0;
    const ImagePlane out = conv2d_same_centered(a, prior);
    for (long y = 0; y < 7; ++y)
        for (long x = 0; x < 8; ++x) {
            const long py = y - 1 + 2, px = x - 6 + 2;
            const double want = (py >= 0 && py < 5 && px >= 0 && px < 5) ? prior.at(py, px) : 0.0;
            EXPECT_EQ(out.at(y, x), want) << y << "," << x;
        }
}

TEST(Conv2dSameCentered, MatchesOracleOnRandomInstances)
{
    Rng rng(23);
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t h = 1 + uniform_index(rng, 9), w = 1 + uniform_index(rng, 9);
        const std::size_t ph = 2 * uniform_index(rng, 4) + 1, pw = 2 * uniform_index(rng, 4) + 1;
        const ImagePlane a = oracle::random_plane(rng, h, w);
        const ImagePlane p = oracle::random_plane(rng, ph, pw);
        ASSERT_LT(oracle::max_rel_diff(conv2d_same_centered(a, p), oracle::conv_same(a, p)), 1e-10)
            << "trial " << trial;
    }
    const ImagePlane a = oracle::random_plane(rng, 9, 9), p = oracle::random_plane(rng, 5, 5);
    EXPECT_LT(oracle::max_rel_diff(conv2d_same_centered(a, p), oracle::conv_same(a, p)), 1e-10);
}

TEST(Conv2dSameCentered, IsTrueConvolutionNotCorrelation)
{
    // Prior mass at offset (+1, +2): the output moves down and right.
    ImagePlane prior(3, 5, 1);
    prior.at(2, 4) = 1.0;
    ImagePlane a(5, 5, 1);
    a.at(2, 2) = 1.0;
    const ImagePlane out = conv2d_same_centered(a, prior);
    EXPECT_EQ(out.at(3, 4), 1.0);
    EXPECT_DOUBLE_EQ(out.sum(), 1.0);
}

TEST(Conv2dSameCentered, LinearInBothArguments)
{
    Rng rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        const ImagePlane a = oracle::random_plane(rng, 7, 6), b = oracle::random_plane(rng, 7, 6);
        const ImagePlane p = oracle::random_plane(rng, 3, 5), q = oracle::random_plane(rng, 3, 5);
        const double alpha = uniform(rng, -2, 2), beta = uniform(rng, -2, 2);
        ImagePlane mix(7, 6, 1), pmix(3, 5, 1);
        for (std::size_t i = 0; i < mix.size(); ++i)
            mix.data()[i] = alpha * a.data()[i] + beta * b.data()[i];
        for (std::size_t i = 0; i < pmix.size(); ++i)
            pmix.data()[i] = alpha * p.data()[i] + beta * q.data()[i];

        const ImagePlane fa = conv2d_same_centered(a, p), fb = conv2d_same_centered(b, p);
        ImagePlane want(7, 6, 1);
        for (std::size_t i = 0; i < want.size(); ++i)
            want.data()[i] = alpha * fa.data()[i] + beta * fb.data()[i];
        EXPECT_LT(oracle::max_rel_diff(conv2d_same_centered(mix, p), want), 1e-10);

        const ImagePlane ga = conv2d_same_centered(a, p), gb = conv2d_same_centered(a, q);
        for (std::size_t i = 0; i < want.size(); ++i)
            want.data()[i] = alpha * ga.data()[i] + beta * gb.data()[i];
        EXPECT_LT(oracle::max_rel_diff(conv2d_same_centered(a, pmix), want), 1e-10);
    }
}

TEST(Conv2dSameCentered, MassBoundedByProductOfMasses)
{
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const ImagePlane a = oracle::random_plane(rng, 8, 8, 1, 0.0, 1.0);
        const ImagePlane p = oracle::random_plane(rng, 5, 5, 1, 0.0, 1.0);
        EXPECT_LE(conv2d_same_centered(a, p).sum(), a.sum() * p.sum() * (1 + 1e-12));
    }
    // Mass well inside the bounds: equality.
    ImagePlane a(11, 11, 1);
    a.at(5, 5) = 0.75;
    a.at(4, 6) = 0.5;
    const ImagePlane p = oracle::random_plane(rng, 5, 5, 1, 0.0, 1.0);
    EXPECT_NEAR(conv2d_same_centered(a, p).sum(), a.sum() * p.sum(), 1e-12);
}

TEST(Conv2dSameCentered, EvenPriorRejected)
{
    EXPECT_THROW(conv2d_same_centered(ImagePlane(5, 5, 1), ImagePlane(4, 3, 1)), ContractViolation);
    EXPECT_THROW(conv2d_same_centered(ImagePlane(5, 5, 1), ImagePlane(3, 2, 1)), ContractViolation);
}

// ---------------------------------------------------------------------------

TEST(Maxpool, SingleWindow)
{
    const ImagePlane in(2, 2, 1, {1, 2, 3, 4});
    const PoolResult r = maxpool(in, 2);
    EXPECT_EQ(r.output, ImagePlane(1, 1, 1, 4.0));
    EXPECT_EQ(r.argmax.indices, std::vector<std::size_t>{3});
}

TEST(Maxpool, ConstantInputPicksFirstIndexOfEachWindow)
{
    const PoolResult r = maxpool(ImagePlane(4, 4, 1, 7.0), 2);
    EXPECT_EQ(r.output, ImagePlane(2, 2, 1, 7.0));
    EXPECT_EQ(r.argmax.indices, (std::vector<std::size_t>{0, 2, 8, 10}));
}

TEST(Maxpool, MatchesOracleOnRandomInstances)
{
    Rng rng(37);
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t h = 1 + uniform_index(rng, 9), w = 1 + uniform_index(rng, 9);
        const std::size_t window = 1 + uniform_index(rng, 3);
        ImagePlane in = oracle::random_plane(rng, h, w, 2);
        // Plant some ties.
        for (double& v : in.data())
            if (uniform(rng) < 0.3)
                v = 0.5;
        const PoolResult got = maxpool(in, window);
        const auto [want, idx] = oracle::maxpool(in, window);
        ASSERT_EQ(got.output, want) << "trial " << trial;
        ASSERT_EQ(got.argmax.indices, idx) << "trial " << trial;
    }
    const ImagePlane in = oracle::random_plane(rng, 8, 8);
    EXPECT_EQ(maxpool(in, 2).output, oracle::maxpool(in, 2).first);
}

TEST(Maxpool, EdgeReplicationKeepsBorderPeaks)
{
    ImagePlane in(3, 3, 1, 0.0);
    in.at(2, 2) = 9.0;
    const PoolResult r = maxpool(in, 2);
    ASSERT_EQ(r.output.height(), 2u);
    EXPECT_EQ(r.output.at(1, 1), 9.0);
    EXPECT_EQ(r.argmax.indices[3], 8u);
}

TEST(Maxpool, BoundedByInput)
{
    Rng rng(41);
    for (int trial = 0; trial < 30; ++trial) {
        const ImagePlane in = oracle::random_plane(rng, 8, 6, 1, 0.0, 1.0);
        const ImagePlane out = maxpool(in, 2).output;
        const double inMax = *std::max_element(in.data().begin(), in.data().end());
        for (double v : out.data())
            EXPECT_LE(v, inMax);
        EXPECT_LE(out.sum(), in.sum());
    }
}

TEST(Maxpool, BackwardRoutesToWinners)
{
    const ImagePlane in(2, 4, 1, {1, 5, 2, 2, 3, 0, 8, 1});
    const PoolResult r = maxpool(in, 2);
    const ImagePlane g = maxpool_backward(ImagePlane(1, 2, 1, {10.0, 20.0}), r.argmax);
    EXPECT_EQ(g, ImagePlane(2, 4, 1, {0, 10, 0, 0, 0, 0, 20, 0}));
}

// ---------------------------------------------------------------------------

TEST(UpsampleNearest, ReplicatesBlocks)
{
    const ImagePlane in(1, 2, 1, {1, 2});
    EXPECT_EQ(upsample_nearest(in, 2), ImagePlane(2, 4, 1, {1, 1, 2, 2, 1, 1, 2, 2}));
    EXPECT_EQ(upsample_nearest(in, 1), in);
}

TEST(UpsampleNearest, PoolingAfterUpsamplingRecoversInput)
{
    Rng rng(43);
    for (std::size_t f = 1; f <= 4; ++f) {
        const ImagePlane in = oracle::random_plane(rng, 5, 3, 2);
        EXPECT_EQ(maxpool(upsample_nearest(in, f), f).output, in);
    }
}

TEST(Resize, UnitScaleIsIdentityAndHalfScaleHalvesSides)
{
    Rng rng(47);
    const ImagePlane img = oracle::random_plane(rng, 200, 200, 3, 0.0, 1.0);
    EXPECT_EQ(resize_by_scale(img, 1.0), img);
    const ImagePlane half = resize_by_scale(img, 0.5);
    EXPECT_EQ(half.height(), 100u);
    EXPECT_EQ(half.width(), 100u);
}

TEST(Resize, BilinearIsExactOnAffineImages)
{
    ImagePlane img(20, 30, 1);
    for (std::size_t y = 0; y < 20; ++y)
        for (std::size_t x = 0; x < 30; ++x)
            img.at(y, x) = 0.5 + 0.25 * static_cast<double>(y) - 0.125 * static_cast<double>(x);
    EXPECT_NEAR(sample_bilinear(img, 0, 3.3, 7.6), 0.5 + 0.25 * 3.3 - 0.125 * 7.6, 1e-12);
    EXPECT_EQ(sample_bilinear(img, 0, -0.5, 3.0, -1.0), -1.0);
}

TEST(Resize, SmoothImageMeanPreserved)
{
    ImagePlane img(200, 240, 1);
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            img.at(y, x) = 0.5 + 0.3 * std::sin(0.05 * static_cast<double>(x)) * std::cos(0.03 * static_cast<double>(y));
    const double mean = img.sum() / static_cast<double>(img.size());
    for (double s : {0.5, 0.621, 0.822, 1.25}) {
        const ImagePlane r = resize_by_scale(img, s);
        EXPECT_NEAR(r.sum() / static_cast<double>(r.size()), mean, 0.02 * mean) << "scale " << s;
    }
}

TEST(Blur, ConstantStaysConstantAndSymmetricSumIsReversalInvariant)
{
    const ImagePlane flat(12, 9, 2, 0.3);
    const ImagePlane b = blur_normalized(flat, 2.0, 4);
    for (double v : b.data())
        EXPECT_NEAR(v, 0.3, 1e-15);

    Rng rng(53);
    ImagePlane a = oracle::random_plane(rng, 7, 5);
    std::vector<double> rev(a.data().begin(), a.data().end());
    std::reverse(rev.begin(), rev.end());
    EXPECT_EQ(symmetric_sum(a.data()), symmetric_sum(rev));
}
