#include "slq/errors.hpp"
#include "slq/noise.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace slq;

TEST(TimeGridTest, Basics) {
    const TimeGrid g = make_time_grid(1.0, 4);
    EXPECT_DOUBLE_EQ(g.tau, 0.25);
    const double expect[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (std::size_t n = 0; n <= 4; ++n) EXPECT_DOUBLE_EQ(g.node(n), expect[n]);
    EXPECT_NEAR(make_time_grid(0.5, 5).tau, 0.1, 1e-16);
    EXPECT_THROW(make_time_grid(1.0, 0), ConfigError);
    EXPECT_THROW(make_time_grid(-1.0, 3), ConfigError);
    EXPECT_THROW(make_time_grid(3.0, 2), ConfigError);
}

TEST(Philox, KnownAnswers) {
    using C = std::array<std::uint32_t, 4>;
    using K = std::array<std::uint32_t, 2>;
    EXPECT_EQ(philox4x32(C{0, 0, 0, 0}, K{0, 0}),
              (C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
    EXPECT_EQ(philox4x32(C{~0u, ~0u, ~0u, ~0u}, K{~0u, ~0u}),
              (C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
    EXPECT_EQ(philox4x32(C{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                         K{0xa4093822u, 0x299f31d0u}),
              (C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Philox, KeyedNormalIsDeterministicAndDistinct) {
    EXPECT_EQ(keyed_normal(5, 10, 3), keyed_normal(5, 10, 3));
    EXPECT_NE(keyed_normal(5, 10, 3), keyed_normal(5, 10, 4));
    EXPECT_NE(keyed_normal(5, 10, 3), keyed_normal(6, 10, 3));
    EXPECT_TRUE(std::isfinite(keyed_normal(0, 0, 0)));
}

TEST(TreeDriver, SingleStep) {
    const TimeGrid g = make_time_grid(1.0, 1);
    const WienerDriver d = WienerDriver::tree(g);
    ASSERT_TRUE(d.is_tree());
    EXPECT_EQ(d.scenarios(0), 1u);
    EXPECT_EQ(d.scenarios(1), 2u);
    const auto& inc = d.increments(1);
    ASSERT_EQ(inc.size(), 2u);
    EXPECT_DOUBLE_EQ(inc[0], 1.0);
    EXPECT_DOUBLE_EQ(inc[1], -1.0);
}

TEST(TreeDriver, MomentsAndLayout) {
    const TimeGrid g = make_time_grid(1.0, 6);
    const WienerDriver d = WienerDriver::tree(g);
    for (std::size_t k = 1; k <= 6; ++k) {
        const auto& inc = d.increments(k);
        ASSERT_EQ(inc.size(), std::size_t{1} << k);
        const double mean = std::accumulate(inc.begin(), inc.end(), 0.0) / inc.size();
        double sq = 0.0;
        for (double x : inc) sq += x * x;
        EXPECT_NEAR(mean, 0.0, 1e-15);
        EXPECT_NEAR(sq / inc.size(), g.tau, 1e-15);
        const std::size_t half = inc.size() / 2;
        for (std::size_t c = 0; c < inc.size(); ++c) {
            EXPECT_EQ(inc[c] > 0.0, c < half);
            EXPECT_EQ(d.parent(k, c), c % half);
        }
    }
    EXPECT_EQ(WienerDriver::tree(make_time_grid(1.0, 2)).scenarios(2), 4u);
}

TEST(TreeDriver, DepthCap) {
    EXPECT_THROW(WienerDriver::tree(make_time_grid(1.0, 17)), ResourceError);
    EXPECT_THROW(WienerDriver::tree(make_time_grid(1.0, 5), 4), ResourceError);
}

TEST(TreeDriver, BrownianIsSumOfIncrementsAlongPath) {
    const TimeGrid g = make_time_grid(1.0, 5);
    const WienerDriver d = WienerDriver::tree(g);
    const auto w = d.brownian(5);
    for (std::size_t leaf = 0; leaf < w.size(); ++leaf) {
        double s = 0.0;
        for (std::size_t k = 1; k <= 5; ++k) s += ((leaf >> (k - 1)) & 1u) ? -std::sqrt(g.tau) : std::sqrt(g.tau);
        EXPECT_NEAR(w[leaf], s, 1e-14);
    }
}

TEST(GaussianDriver, Deterministic) {
    const TimeGrid g = make_time_grid(1.0, 8);
    const auto a = WienerDriver::gaussian(g, 1000, 42);
    const auto b = WienerDriver::gaussian(g, 1000, 42);
    const auto c = WienerDriver::gaussian(g, 1000, 42, 3);
    const auto e = WienerDriver::gaussian(g, 1000, 43);
    for (std::size_t k = 1; k <= 8; ++k) {
        EXPECT_EQ(a.increments(k), b.increments(k));
        EXPECT_EQ(a.increments(k), c.increments(k));
        EXPECT_NE(a.increments(k), e.increments(k));
    }
    EXPECT_EQ(a.seed(), 42u);
    EXPECT_EQ(a.n_paths(), 1000u);
}

TEST(GaussianDriver, SampleMeanAndVariance) {
    const TimeGrid g = make_time_grid(1.0, 1);
    const std::size_t P = 100000;
    const auto d = WienerDriver::gaussian(g, P, 1);
    const auto& inc = d.increments(1);
    const double mean = std::accumulate(inc.begin(), inc.end(), 0.0) / P;
    EXPECT_LE(std::abs(mean), 4.0 * std::sqrt(g.tau / P));
    double sq = 0.0;
    for (double x : inc) sq += (x - mean) * (x - mean);
    EXPECT_NEAR(sq / (P - 1), g.tau, 5.0 * g.tau * std::sqrt(2.0 / P));
}

TEST(GaussianDriver, KolmogorovSmirnovDiagnostic) {
    const TimeGrid g = make_time_grid(1.0, 4);
    const auto d = WienerDriver::gaussian(g, 10000, 11);
    std::vector<double> z = d.increments(2);
    for (double& x : z) x /= std::sqrt(g.tau);
    std::sort(z.begin(), z.end());
    double dmax = 0.0;
    const double n = static_cast<double>(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double cdf = 0.5 * std::erfc(-z[i] / std::sqrt(2.0));
        dmax = std::max({dmax, std::abs(cdf - i / n), std::abs(cdf - (i + 1) / n)});
    }
    // Critical value at the 0.001 level.
    if (dmax > 1.95 / std::sqrt(n)) {
        std::cout << "KS diagnostic above the 0.001 critical value: " << dmax << '\n';
    }
    RecordProperty("ks_statistic", std::to_string(dmax));
}

TEST(CommonPath, PairwiseSums) {
    const TimeGrid g = make_time_grid(1.0, 8);
    const auto fine = WienerDriver::gaussian(g, 500, 9);
    const auto coarse = refine_common_path(fine);
    EXPECT_EQ(coarse.grid().N, 4u);
    EXPECT_DOUBLE_EQ(coarse.grid().tau, 0.25);
    EXPECT_EQ(coarse.seed(), fine.seed());
    for (std::size_t k = 1; k <= 4; ++k) {
        for (std::size_t p = 0; p < 500; ++p) {
            EXPECT_EQ(coarse.increments(k)[p], fine.increments(2 * k - 1)[p] + fine.increments(2 * k)[p]);
        }
    }
    const auto twice = refine_common_path(coarse);
    for (std::size_t p = 0; p < 500; ++p) {
        const double direct = (fine.increments(1)[p] + fine.increments(2)[p]) +
                              (fine.increments(3)[p] + fine.increments(4)[p]);
        EXPECT_EQ(twice.increments(1)[p], direct);
    }
    EXPECT_THROW(refine_common_path(WienerDriver::gaussian(make_time_grid(1.0, 3), 5, 1)), ConfigError);
    EXPECT_THROW(refine_common_path(WienerDriver::tree(make_time_grid(1.0, 2))), ConfigError);
}

TEST(CommonPath, CoarseVariance) {
    const TimeGrid g = make_time_grid(1.0, 2);
    const auto coarse = refine_common_path(WienerDriver::gaussian(g, 200000, 3));
    const auto& inc = coarse.increments(1);
    double sq = 0.0;
    for (double x : inc) sq += x * x;
    EXPECT_NEAR(sq / inc.size(), 2.0 * g.tau, 0.01);
}

TEST(TreeCondExp, BasicsAndTower) {
    EXPECT_EQ(tree_condexp({1.0, 3.0}, 1, 0), std::vector<double>{2.0});
    std::vector<double> v(32);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(1.0 + 3.0 * i);
    EXPECT_EQ(tree_condexp(v, 5, 5), v);
    for (std::size_t m = 0; m <= 5; ++m) {
        for (std::size_t n = 0; n <= m; ++n) {
            const auto a = tree_condexp(tree_condexp(v, 5, m), m, n);
            const auto b = tree_condexp(v, 5, n);
            ASSERT_EQ(a.size(), b.size());
            for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
        }
    }
    EXPECT_THROW(tree_condexp(v, 5, 6), ConfigError);
}

TEST(TreeCondExp, AveragesDescendants) {
    // Level-2 node c has descendants c, c+4 at level 3.
    std::vector<double> v = {0, 1, 2, 3, 4, 5, 6, 7};
    const auto r = tree_condexp(v, 3, 2);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(r[c], 0.5 * (v[c] + v[c + 4]));
}

TEST(ReplayTree, PathsFollowLeaves) {
    const TimeGrid g = make_time_grid(1.0, 4);
    const auto tree = WienerDriver::tree(g);
    const auto rep = WienerDriver::replay_tree(g);
    EXPECT_FALSE(rep.is_tree());
    EXPECT_EQ(rep.n_paths(), 16u);
    for (std::size_t k = 1; k <= 4; ++k) {
        for (std::size_t p = 0; p < 16; ++p) {
            EXPECT_EQ(rep.increments(k)[p], tree.increments(k)[p % (std::size_t{1} << k)]);
        }
    }
}
