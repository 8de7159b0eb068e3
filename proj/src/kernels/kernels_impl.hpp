#pragma once

#include <cstddef>

namespace slq::simd {

inline constexpr std::size_t kLanes = 8;

// Canonical fold of the 8 partial sums: lanes l and l+4 first, then a
// balanced pairwise sum. Both variants call this on identical partials.
inline double fold_lanes(const double* acc) {
    const double t0 = acc[0] + acc[4];
    const double t1 = acc[1] + acc[5];
    const double t2 = acc[2] + acc[6];
    const double t3 = acc[3] + acc[7];
    return (t0 + t1) + (t2 + t3);
}

namespace scalar {
void forward_combine(double* out, const double* x, const double* u, const double* delta,
                     double tau, double s, std::size_t n);
void one_plus_mul(double* out, const double* x, const double* delta, std::size_t n);
void axpby(double* out, double a, const double* x, double b, const double* y, std::size_t n);
void lincomb3(double* out, double a, const double* x, double b, const double* y, double c,
              const double* z, std::size_t n);
void axpy(double* y, double a, const double* x, std::size_t n);
void scale(double* x, double a, std::size_t n);
void add_constant(double* x, double c, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace scalar

namespace avx2 {
void forward_combine(double* out, const double* x, const double* u, const double* delta,
                     double tau, double s, std::size_t n);
void one_plus_mul(double* out, const double* x, const double* delta, std::size_t n);
void axpby(double* out, double a, const double* x, double b, const double* y, std::size_t n);
void lincomb3(double* out, double a, const double* x, double b, const double* y, double c,
              const double* z, std::size_t n);
void axpy(double* y, double a, const double* x, std::size_t n);
void scale(double* x, double a, std::size_t n);
void add_constant(double* x, double c, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace avx2

}  // namespace slq::simd
