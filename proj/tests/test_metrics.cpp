#include <gtest/gtest.h>

#include "oracles.hpp"
#include "uevs/metrics.hpp"

using namespace uevs;

namespace {

EventStack flat(std::vector<float> cells, int c = 1, int h = 1) {
    EventStack s;
    s.channels = c;
    s.height = h;
    s.width = int(cells.size()) / (c * h);
    s.cells = std::move(cells);
    return s;
}

} // namespace

TEST(Mse, HandFixtures) {
    EXPECT_NEAR(mse(flat({0, 1}), flat({0.5f, 1})), 0.125, 1e-12);
    EXPECT_EQ(mse(flat({0, 0.5f, 1}), flat({0, 0.5f, 1})), 0.0);
    EXPECT_NEAR(mse(flat({0, 0, 0, 0}), flat({1, 1, 0.5f, 0})), (1 + 1 + 0.25) / 4, 1e-12);
    EXPECT_EQ(mse(flat({0, 1}), flat({0.5f, 1})), mse(flat({0.5f, 1}), flat({0, 1})));
    EXPECT_THROW(mse(flat({0, 1}), flat({0, 1, 1})), ShapeError);
}

TEST(Psnr, HandFixtures) {
    EXPECT_NEAR(psnr(flat({0, 1}), flat({0.5f, 1})), 10 * std::log10(8.0), 1e-9);
    EXPECT_NEAR(psnr_from_mse(0.125), 9.0309, 1e-4);
    EXPECT_EQ(psnr(flat({0, 1}), flat({0, 1})), 99.0);
    EXPECT_NEAR(psnr_from_mse(1.0), 0.0, 1e-12);
    EXPECT_NEAR(psnr_from_mse(0.01), 20.0, 1e-9);
}

TEST(Psnr, StrictlyDecreasingInMse) {
    double prev = psnr_from_mse(1e-9);
    for (double m = 1e-8; m <= 1.0; m *= 1.7) {
        const double p = psnr_from_mse(m);
        EXPECT_LT(p, prev);
        prev = p;
    }
}

TEST(Ssim, IdenticalAndConstantStacks) {
    Rng rng(1);
    auto a = oracle::random_stack(rng, 2, 16, 16, 0.7);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    auto half = flat(std::vector<float>(11 * 11, 0.5f), 1, 11);
    EXPECT_NEAR(ssim(half, half), 1.0, 1e-12);
    auto small = flat(std::vector<float>(10 * 10, 0.5f), 1, 10);
    EXPECT_THROW(ssim(small, small), ShapeError);
}

TEST(Ssim, MatchesBruteForceReference) {
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
        const int c = 1 + int(uniform_index(rng, 3));
        const int h = 11 + int(uniform_index(rng, 10)), w = 11 + int(uniform_index(rng, 10));
        const double density = uniform01(rng);
        auto a = oracle::random_stack(rng, c, h, w, density);
        auto b = uniform01(rng) < 0.3 ? a : oracle::random_stack(rng, c, h, w, uniform01(rng));
        for (float& v : b.cells)
            if (uniform01(rng) < 0.1) v = kNoEvent;
        const double got = ssim(a, b), want = oracle::ssim_reference(a, b);
        EXPECT_NEAR(got, want, 1e-6) << "pair " << i;
        EXPECT_GE(got, -1.0);
        EXPECT_LE(got, 1.0);
    }
}

TEST(Imperceptibility, SelfComparisonAndLengthCheck) {
    Rng rng(5);
    Dataset d;
    d.class_names = {"a"};
    for (int i = 0; i < 3; ++i) d.samples.push_back({oracle::random_stream(rng, 12, 12, 50, 0, 1000), 0});
    auto r = imperceptibility(d, d, 4);
    EXPECT_EQ(r.mse, 0.0);
    EXPECT_EQ(r.psnr_db, 99.0);
    EXPECT_NEAR(r.ssim, 1.0, 1e-12);
    EXPECT_EQ(r.pairs, 3u);
    EXPECT_EQ(r.channels, 4);
    auto shorter = d;
    shorter.samples.pop_back();
    EXPECT_THROW(imperceptibility(d, shorter, 4), Error);
}
