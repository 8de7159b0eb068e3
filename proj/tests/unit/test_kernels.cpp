#include "slq/kernels.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <vector>

using slq::simd::KernelTable;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

class KernelEquivalence : public ::testing::Test {
protected:
    void SetUp() override {
        avx_ = slq::simd::avx2_table();
        if (avx_ == nullptr) GTEST_SKIP() << "AVX2 kernels not available on this machine";
    }
    const KernelTable& ref_ = slq::simd::scalar_table();
    const KernelTable* avx_ = nullptr;
};

}  // namespace

TEST(Kernels, ActiveTableIsConsistent) {
    const auto& k = slq::simd::active();
    if (slq::simd::avx2_table() != nullptr && std::getenv("SLQ_SIMD") == nullptr) {
        EXPECT_EQ(k.isa, slq::simd::Isa::Avx2);
    }
    EXPECT_EQ(slq::simd::isa_name(slq::simd::Isa::Scalar), "scalar");
}

TEST(Kernels, ScalarDotMatchesNaiveSum) {
    std::mt19937_64 rng(1);
    for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 100u}) {
        auto x = random_vec(n, rng);
        auto y = random_vec(n, rng);
        long double naive = 0.0L;
        for (std::size_t i = 0; i < n; ++i) naive += static_cast<long double>(x[i]) * y[i];
        EXPECT_NEAR(slq::simd::scalar_table().dot(x.data(), y.data(), n), static_cast<double>(naive),
                    1e-13);
    }
}

TEST_F(KernelEquivalence, ElementwiseBitIdentical) {
    std::mt19937_64 rng(42);
    for (std::size_t n = 0; n <= 67; ++n) {
        auto x = random_vec(n, rng);
        auto u = random_vec(n, rng);
        auto d = random_vec(n, rng, 0.3);
        auto z = random_vec(n, rng);
        std::vector<double> a(n), b(n);

        ref_.forward_combine(a.data(), x.data(), u.data(), d.data(), 0.01, 0.7, n);
        avx_->forward_combine(b.data(), x.data(), u.data(), d.data(), 0.01, 0.7, n);
        EXPECT_TRUE(same_bits(a, b)) << "forward_combine n=" << n;

        ref_.one_plus_mul(a.data(), x.data(), d.data(), n);
        avx_->one_plus_mul(b.data(), x.data(), d.data(), n);
        EXPECT_TRUE(same_bits(a, b)) << "one_plus_mul n=" << n;

        ref_.axpby(a.data(), 0.3, x.data(), -1.7, u.data(), n);
        avx_->axpby(b.data(), 0.3, x.data(), -1.7, u.data(), n);
        EXPECT_TRUE(same_bits(a, b)) << "axpby n=" << n;

        ref_.lincomb3(a.data(), 0.3, x.data(), -1.7, u.data(), 2.5, z.data(), n);
        avx_->lincomb3(b.data(), 0.3, x.data(), -1.7, u.data(), 2.5, z.data(), n);
        EXPECT_TRUE(same_bits(a, b)) << "lincomb3 n=" << n;

        a = z;
        b = z;
        ref_.axpy(a.data(), -0.37, x.data(), n);
        avx_->axpy(b.data(), -0.37, x.data(), n);
        EXPECT_TRUE(same_bits(a, b)) << "axpy n=" << n;

        ref_.scale(a.data(), 1.0 / 3.0, n);
        avx_->scale(b.data(), 1.0 / 3.0, n);
        EXPECT_TRUE(same_bits(a, b)) << "scale n=" << n;

        ref_.add_constant(a.data(), 0.125, n);
        avx_->add_constant(b.data(), 0.125, n);
        EXPECT_TRUE(same_bits(a, b)) << "add_constant n=" << n;
    }
}

TEST_F(KernelEquivalence, ReductionsBitIdentical) {
    std::mt19937_64 rng(7);
    for (std::size_t n = 0; n <= 67; ++n) {
        auto x = random_vec(n, rng, 1e3);
        auto y = random_vec(n, rng, 1e-3);
        EXPECT_TRUE(same_bits(ref_.dot(x.data(), y.data(), n), avx_->dot(x.data(), y.data(), n)))
            << "dot n=" << n;
        EXPECT_TRUE(same_bits(ref_.sum(x.data(), n), avx_->sum(x.data(), n))) << "sum n=" << n;
    }
    auto big_x = random_vec(100003, rng);
    auto big_y = random_vec(100003, rng);
    EXPECT_TRUE(same_bits(ref_.dot(big_x.data(), big_y.data(), big_x.size()),
                          avx_->dot(big_x.data(), big_y.data(), big_x.size())));
}

TEST_F(KernelEquivalence, UnalignedPointers) {
    std::mt19937_64 rng(9);
    auto x = random_vec(64, rng);
    auto y = random_vec(64, rng);
    for (std::size_t off = 0; off < 4; ++off) {
        const std::size_t n = 64 - off - 3;
        EXPECT_TRUE(same_bits(ref_.dot(x.data() + off, y.data() + 3, n),
                              avx_->dot(x.data() + off, y.data() + 3, n)));
        std::vector<double> a(64, 0.0), b(64, 0.0);
        ref_.axpby(a.data() + off, 2.0, x.data() + 1, 0.5, y.data() + off, n);
        avx_->axpby(b.data() + off, 2.0, x.data() + 1, 0.5, y.data() + off, n);
        EXPECT_TRUE(same_bits(a, b));
    }
}
