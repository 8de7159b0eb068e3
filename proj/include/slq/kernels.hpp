#pragma once

// Row kernels for the scenario-parallel inner loops.
//
// Every kernel has a scalar reference implementation and, on x86-64, an AVX2
// variant chosen at runtime. Element-wise kernels evaluate exactly the same
// sequence of IEEE operations per element in both variants, and reductions
// use one canonical 8-lane accumulation order, so the two variants are
// bit-identical. Code that needs reproducible output can therefore ignore
// which variant is active.

#include <cstddef>
#include <string_view>

namespace slq::simd {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
    Isa isa;

    // out[i] = ((1 + delta[i]) * x[i] + tau * u[i]) + s * delta[i]
    void (*forward_combine)(double* out, const double* x, const double* u, const double* delta,
                            double tau, double s, std::size_t n);
    // out[i] = (1 + delta[i]) * x[i]
    void (*one_plus_mul)(double* out, const double* x, const double* delta, std::size_t n);
    // out[i] = a * x[i] + b * y[i]
    void (*axpby)(double* out, double a, const double* x, double b, const double* y,
                  std::size_t n);
    // out[i] = (a * x[i] + b * y[i]) + c * z[i]
    void (*lincomb3)(double* out, double a, const double* x, double b, const double* y, double c,
                     const double* z, std::size_t n);
    // y[i] = y[i] + a * x[i]
    void (*axpy)(double* y, double a, const double* x, std::size_t n);
    // x[i] = a * x[i]
    void (*scale)(double* x, double a, std::size_t n);
    // x[i] = x[i] + c
    void (*add_constant)(double* x, double c, std::size_t n);
    // sum_i x[i] * y[i] in the canonical 8-lane order
    double (*dot)(const double* x, const double* y, std::size_t n);
    // sum_i x[i] in the canonical 8-lane order
    double (*sum)(const double* x, std::size_t n);
};

/// Reference implementation, always available.
const KernelTable& scalar_table();

/// AVX2 table, or nullptr when not compiled in or unsupported by the CPU.
const KernelTable* avx2_table();

/// Best table for this CPU. SLQ_SIMD=scalar in the environment forces the
/// reference kernels.
const KernelTable& active();

std::string_view isa_name(Isa isa);

}  // namespace slq::simd
