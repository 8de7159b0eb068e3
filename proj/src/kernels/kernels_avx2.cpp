// Compiled with -mavx2 only (no -mfma): every lane performs the same
// multiply and add roundings as the scalar reference.

#include "kernels_impl.hpp"

#include <immintrin.h>

namespace slq::simd::avx2 {

namespace {
constexpr std::size_t kWidth = 4;
}

void forward_combine(double* out, const double* x, const double* u, const double* delta,
                     double tau, double s, std::size_t n) {
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d vt = _mm256_set1_pd(tau);
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + kWidth <= n; i += kWidth) {
        const __m256d d = _mm256_loadu_pd(delta + i);
        const __m256d a = _mm256_mul_pd(_mm256_add_pd(one, d), _mm256_loadu_pd(x + i));
        const __m256d t = _mm256_add_pd(a, _mm256_mul_pd(vt, _mm256_loadu_pd(u + i)));
        _mm256_storeu_pd(out + i, _mm256_add_pd(t, _mm256_mul_pd(vs, d)));
    }
    for (; i < n; ++i) {
        const double t = (1.0 + delta[i]) * x[i] + tau * u[i];
        out[i] = t + s * delta[i];
    }
}

void one_plus_mul(double* out, const double* x, const double* delta, std::size_t n) {
    const __m256d one = _mm256_set1_pd(1.0);
    std::size_t i = 0;
    for (; i + kWidth <= n; i += kWidth) {
        const __m256d f = _mm256_add_pd(one, _mm256_loadu_pd(delta + i));
        _mm256_storeu_pd(out + i, _mm256_mul_pd(f, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) out[i] = (1.0 + delta[i]) * x[i];
}

void axpby(double* out, double a, const double* x, double b, const double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vb = _mm256_set1_pd(b);
    std::size_t i = 0;
    for (; i + kWidth <= n; i += kWidth) {
        const __m256d p = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        const __m256d q = _mm256_mul_pd(vb, _mm256_loadu_pd(y + i));
        _mm256_storeu_pd(out + i, _mm256_add_pd(p, q));
    }
    for (; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void lincomb3(double* out, double a, const double* x, double b, const double* y, double c,
              const double* z, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vb = _mm256_set1_pd(b);
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + kWidth <= n; i += kWidth) {
        const __m256d p = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        const __m256d q = _mm256_mul_pd(vb, _mm256_loadu_pd(y + i));
        const __m256d r = _mm256_mul_pd(vc, _mm256_loadu_pd(z + i));
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_add_pd(p, q), r));
    }
    for (; i < n; ++i) {
        const double t = a * x[i] + b * y[i];
        out[i] = t + c * z[i];
    }
}

void axpy(double* y, double a, const double* x, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + kWidth <= n; i += kWidth) {
        const __m256d p = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), p));
    }
    for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void scale(double* x, double a, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + kWidth <= n; i += kWidth) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) x[i] = a * x[i];
}

void add_constant(double* x, double c, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + kWidth <= n; i += kWidth) {
        _mm256_storeu_pd(x + i, _mm256_add_pd(_mm256_loadu_pd(x + i), vc));
    }
    for (; i < n; ++i) x[i] = x[i] + c;
}

double dot(const double* x, const double* y, std::size_t n) {
    __m256d lo = _mm256_setzero_pd();
    __m256d hi = _mm256_setzero_pd();
    const std::size_t full = n - n % kLanes;
    for (std::size_t i = 0; i < full; i += kLanes) {
        lo = _mm256_add_pd(lo, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
        hi = _mm256_add_pd(hi,
                           _mm256_mul_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
    }
    alignas(32) double acc[kLanes];
    _mm256_store_pd(acc, lo);
    _mm256_store_pd(acc + 4, hi);
    for (std::size_t l = 0; full + l < n; ++l) acc[l] = acc[l] + x[full + l] * y[full + l];
    return fold_lanes(acc);
}

double sum(const double* x, std::size_t n) {
    __m256d lo = _mm256_setzero_pd();
    __m256d hi = _mm256_setzero_pd();
    const std::size_t full = n - n % kLanes;
    for (std::size_t i = 0; i < full; i += kLanes) {
        lo = _mm256_add_pd(lo, _mm256_loadu_pd(x + i));
        hi = _mm256_add_pd(hi, _mm256_loadu_pd(x + i + 4));
    }
    alignas(32) double acc[kLanes];
    _mm256_store_pd(acc, lo);
    _mm256_store_pd(acc + 4, hi);
    for (std::size_t l = 0; full + l < n; ++l) acc[l] = acc[l] + x[full + l];
    return fold_lanes(acc);
}

}  // namespace slq::simd::avx2
