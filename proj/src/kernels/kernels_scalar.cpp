#include "kernels_impl.hpp"

namespace slq::simd::scalar {

void forward_combine(double* out, const double* x, const double* u, const double* delta,
                     double tau, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double t = (1.0 + delta[i]) * x[i] + tau * u[i];
        out[i] = t + s * delta[i];
    }
}

void one_plus_mul(double* out, const double* x, const double* delta, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = (1.0 + delta[i]) * x[i];
}

void axpby(double* out, double a, const double* x, double b, const double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void lincomb3(double* out, double a, const double* x, double b, const double* y, double c,
              const double* z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double t = a * x[i] + b * y[i];
        out[i] = t + c * z[i];
    }
}

void axpy(double* y, double a, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

void scale(double* x, double a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = a * x[i];
}

void add_constant(double* x, double c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = x[i] + c;
}

double dot(const double* x, const double* y, std::size_t n) {
    double acc[kLanes] = {};
    const std::size_t full = n - n % kLanes;
    for (std::size_t i = 0; i < full; i += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) acc[l] = acc[l] + x[i + l] * y[i + l];
    }
    for (std::size_t l = 0; full + l < n; ++l) acc[l] = acc[l] + x[full + l] * y[full + l];
    return fold_lanes(acc);
}

double sum(const double* x, std::size_t n) {
    double acc[kLanes] = {};
    const std::size_t full = n - n % kLanes;
    for (std::size_t i = 0; i < full; i += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) acc[l] = acc[l] + x[i + l];
    }
    for (std::size_t l = 0; full + l < n; ++l) acc[l] = acc[l] + x[full + l];
    return fold_lanes(acc);
}

}  // namespace slq::simd::scalar
