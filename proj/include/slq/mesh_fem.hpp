#pragma once

// P1 finite elements on (0,1) with homogeneous Dirichlet data. Only the
// d = n_elems - 1 interior unknowns are stored.

#include "slq/types.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

namespace slq {

using RealFunction = std::function<double(double)>;

struct Mesh1D {
    std::size_t n_elems = 0;
    double h = 0.0;
    std::vector<double> nodes;  // interior nodes j*h, j = 1..d

    [[nodiscard]] std::size_t dofs() const { return nodes.size(); }
};

/// Symmetric tridiagonal matrix; off[j] couples unknowns j and j+1.
struct SymTridiag {
    std::vector<double> diag;
    std::vector<double> off;

    [[nodiscard]] std::size_t size() const { return diag.size(); }
    [[nodiscard]] Matrix dense() const;
};

/// LDL^T factorization of a symmetric positive definite tridiagonal matrix.
class TridiagonalFactor {
public:
    explicit TridiagonalFactor(const SymTridiag& m);

    /// Solves in place for every column of `rows` (one right-hand side per scenario).
    void solve_rows(Slice& rows) const;
    [[nodiscard]] Vector solve(const Vector& rhs) const;

private:
    std::vector<double> lower_;  // unit lower bidiagonal entries
    std::vector<double> dinv_;   // reciprocal pivots
};

/// y = m * x for every scenario column.
void apply_tridiag_rows(const SymTridiag& m, const Slice& in, Slice& out);

class FemSpace {
public:
    explicit FemSpace(std::size_t n_elems);

    [[nodiscard]] const Mesh1D& mesh() const { return mesh_; }
    [[nodiscard]] std::size_t dim() const { return mesh_.dofs(); }
    [[nodiscard]] double h() const { return mesh_.h; }

    [[nodiscard]] const SymTridiag& mass() const { return mass_; }
    [[nodiscard]] const SymTridiag& stiffness() const { return stiffness_; }

    /// Generalized eigenvalues of A v = lambda M v, ascending.
    [[nodiscard]] const Vector& eigenvalues() const { return eigenvalues_; }
    /// Columns are M-orthonormal eigenvectors, sign fixed by a positive first entry.
    [[nodiscard]] const Matrix& eigenvectors() const { return eigenvectors_; }

    /// Cached factorization of M + tau*A.
    [[nodiscard]] const TridiagonalFactor& shifted_factor(double tau) const;
    [[nodiscard]] const TridiagonalFactor& mass_factor() const { return mass_factor_; }

    [[nodiscard]] Vector apply_mass(const Vector& v) const;
    [[nodiscard]] Vector apply_stiffness(const Vector& v) const;

    /// Eigen-coefficients c_i = v_i^T M x, and the inverse map x = V c.
    [[nodiscard]] Vector to_modal(const Vector& x) const;
    [[nodiscard]] Vector from_modal(const Vector& c) const;

private:
    struct FactorCache {
        std::mutex mutex;
        std::map<double, std::unique_ptr<TridiagonalFactor>> factors;
    };

    Mesh1D mesh_;
    SymTridiag mass_;
    SymTridiag stiffness_;
    TridiagonalFactor mass_factor_;
    Vector eigenvalues_;
    Matrix eigenvectors_;
    std::shared_ptr<FactorCache> cache_;
};

std::shared_ptr<const FemSpace> build_fem_space(std::size_t n_elems);

/// Element-wise 5-point Gauss-Legendre integral of f over (0,1).
double integrate(const FemSpace& space, const RealFunction& f);

FemFunction l2_project(const FemSpace& space, const RealFunction& f);

/// Energy projection; `df` is the derivative of `f`, and f(0) = f(1) = 0.
FemFunction ritz_project(const FemSpace& space, const RealFunction& f, const RealFunction& df);

/// -M^{-1} A v.
FemFunction discrete_laplacian_apply(const FemSpace& space, const FemFunction& v);

/// (M + tau A)^{-1} M v, the V_h form of (1 - tau Delta_h)^{-1}.
FemFunction a0_apply(const FemSpace& space, double tau, const FemFunction& v);

/// Applies a0 to every scenario column in place.
void a0_apply_rows(const FemSpace& space, double tau, Slice& rows);

double l2_inner(const FemSpace& space, const FemFunction& u, const FemFunction& v);
double l2_norm(const FemSpace& space, const FemFunction& v);
double h1_seminorm(const FemSpace& space, const FemFunction& v);

/// Value of the P1 function at x (boundary values are zero).
double evaluate(const FemSpace& space, const FemFunction& v, double x);

/// Nodal interpolation of a coarse V_h function onto a nested finer mesh.
FemFunction prolongate(const FemSpace& coarse, const FemSpace& fine, const FemFunction& v);
Matrix prolongation_matrix(const FemSpace& coarse, const FemSpace& fine);

}  // namespace slq
