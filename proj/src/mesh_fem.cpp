#include "slq/mesh_fem.hpp"

#include "slq/errors.hpp"
#include "slq/kernels.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <string>

namespace slq {

namespace {

// 5-point Gauss-Legendre rule on [-1, 1].
constexpr std::array<double, 5> kGaussNodes = {
    -0.9061798459386639927976, -0.5384693101056830910363, 0.0, 0.5384693101056830910363,
    0.9061798459386639927976};
constexpr std::array<double, 5> kGaussWeights = {
    0.2369268850561890875143, 0.4786286704993664680413, 0.5688888888888888888889,
    0.4786286704993664680413, 0.2369268850561890875143};

void check_dim(const FemSpace& space, Eigen::Index n, const char* what) {
    if (static_cast<std::size_t>(n) != space.dim()) {
        throw DimensionError(std::string(what) + ": expected " + std::to_string(space.dim()) +
                             " coefficients, got " + std::to_string(n));
    }
}

}  // namespace

Matrix SymTridiag::dense() const {
    const auto n = static_cast<Eigen::Index>(diag.size());
    Matrix m = Matrix::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        m(j, j) = diag[j];
        if (j + 1 < n) {
            m(j, j + 1) = off[j];
            m(j + 1, j) = off[j];
        }
    }
    return m;
}

TridiagonalFactor::TridiagonalFactor(const SymTridiag& m) {
    const std::size_t n = m.size();
    lower_.assign(n > 0 ? n - 1 : 0, 0.0);
    dinv_.assign(n, 0.0);
    double pivot = n > 0 ? m.diag[0] : 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (!(pivot > 0.0) || !std::isfinite(pivot)) {
            throw NumericError("tridiagonal LDL^T: non-positive pivot at row " + std::to_string(j));
        }
        dinv_[j] = 1.0 / pivot;
        if (j + 1 < n) {
            lower_[j] = m.off[j] / pivot;
            pivot = m.diag[j + 1] - lower_[j] * m.off[j];
        }
    }
}

void TridiagonalFactor::solve_rows(Slice& rows) const {
    const auto& k = simd::active();
    const std::size_t n = dinv_.size();
    const auto cols = static_cast<std::size_t>(rows.cols());
    if (static_cast<std::size_t>(rows.rows()) != n) throw DimensionError("solve_rows: row count");
    for (std::size_t j = 1; j < n; ++j) {
        k.axpy(rows.row(j).data(), -lower_[j - 1], rows.row(j - 1).data(), cols);
    }
    for (std::size_t j = 0; j < n; ++j) k.scale(rows.row(j).data(), dinv_[j], cols);
    for (std::size_t j = n - 1; j-- > 0;) {
        k.axpy(rows.row(j).data(), -lower_[j], rows.row(j + 1).data(), cols);
    }
}

Vector TridiagonalFactor::solve(const Vector& rhs) const {
    Slice rows = rhs;
    solve_rows(rows);
    return Vector(rows.col(0));
}

void apply_tridiag_rows(const SymTridiag& m, const Slice& in, Slice& out) {
    const auto& k = simd::active();
    const std::size_t n = m.size();
    const auto cols = static_cast<std::size_t>(in.cols());
    out.resize(in.rows(), in.cols());
    if (n == 1) {
        k.axpby(out.row(0).data(), m.diag[0], in.row(0).data(), 0.0, in.row(0).data(), cols);
        return;
    }
    for (std::size_t j = 0; j < n; ++j) {
        double* o = out.row(j).data();
        if (j == 0) {
            k.axpby(o, m.diag[0], in.row(0).data(), m.off[0], in.row(1).data(), cols);
        } else if (j + 1 == n) {
            k.axpby(o, m.diag[j], in.row(j).data(), m.off[j - 1], in.row(j - 1).data(), cols);
        } else {
            k.lincomb3(o, m.diag[j], in.row(j).data(), m.off[j - 1], in.row(j - 1).data(),
                       m.off[j], in.row(j + 1).data(), cols);
        }
    }
}

namespace {

SymTridiag assemble_mass(std::size_t d, double h) {
    return SymTridiag{std::vector<double>(d, 4.0 * h / 6.0),
                      std::vector<double>(d > 0 ? d - 1 : 0, h / 6.0)};
}

SymTridiag assemble_stiffness(std::size_t d, double h) {
    return SymTridiag{std::vector<double>(d, 2.0 / h),
                      std::vector<double>(d > 0 ? d - 1 : 0, -1.0 / h)};
}

Mesh1D make_mesh(std::size_t n_elems) {
    if (n_elems < 2) {
        throw InvalidMeshError("mesh needs at least 2 elements, got " + std::to_string(n_elems));
    }
    Mesh1D mesh;
    mesh.n_elems = n_elems;
    mesh.h = 1.0 / static_cast<double>(n_elems);
    mesh.nodes.resize(n_elems - 1);
    for (std::size_t j = 0; j + 1 < n_elems; ++j) {
        mesh.nodes[j] = static_cast<double>(j + 1) * mesh.h;
    }
    return mesh;
}

}  // namespace

FemSpace::FemSpace(std::size_t n_elems)
    : mesh_(make_mesh(n_elems)),
      mass_(assemble_mass(mesh_.dofs(), mesh_.h)),
      stiffness_(assemble_stiffness(mesh_.dofs(), mesh_.h)),
      mass_factor_(mass_),
      cache_(std::make_shared<FactorCache>()) {
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(stiffness_.dense(), mass_.dense());
    if (solver.info() != Eigen::Success) {
        throw NumericError("generalized eigensolver failed");
    }
    eigenvalues_ = solver.eigenvalues();
    eigenvectors_ = solver.eigenvectors();
    for (Eigen::Index i = 0; i < eigenvectors_.cols(); ++i) {
        if (eigenvectors_(0, i) < 0.0) eigenvectors_.col(i) *= -1.0;
    }
}

const TridiagonalFactor& FemSpace::shifted_factor(double tau) const {
    std::lock_guard lock(cache_->mutex);
    auto it = cache_->factors.find(tau);
    if (it == cache_->factors.end()) {
        SymTridiag shifted = mass_;
        for (std::size_t j = 0; j < shifted.diag.size(); ++j) {
            shifted.diag[j] += tau * stiffness_.diag[j];
        }
        for (std::size_t j = 0; j < shifted.off.size(); ++j) {
            shifted.off[j] += tau * stiffness_.off[j];
        }
        it = cache_->factors.emplace(tau, std::make_unique<TridiagonalFactor>(shifted)).first;
    }
    return *it->second;
}

Vector FemSpace::apply_mass(const Vector& v) const {
    check_dim(*this, v.size(), "apply_mass");
    Slice in = v;
    Slice out;
    apply_tridiag_rows(mass_, in, out);
    return Vector(out.col(0));
}

Vector FemSpace::apply_stiffness(const Vector& v) const {
    check_dim(*this, v.size(), "apply_stiffness");
    Slice in = v;
    Slice out;
    apply_tridiag_rows(stiffness_, in, out);
    return Vector(out.col(0));
}

Vector FemSpace::to_modal(const Vector& x) const {
    return eigenvectors_.transpose() * apply_mass(x);
}

Vector FemSpace::from_modal(const Vector& c) const {
    check_dim(*this, c.size(), "from_modal");
    return eigenvectors_ * c;
}

std::shared_ptr<const FemSpace> build_fem_space(std::size_t n_elems) {
    return std::make_shared<const FemSpace>(n_elems);
}

double integrate(const FemSpace& space, const RealFunction& f) {
    const double h = space.h();
    double total = 0.0;
    for (std::size_t e = 0; e < space.mesh().n_elems; ++e) {
        const double mid = (static_cast<double>(e) + 0.5) * h;
        for (std::size_t q = 0; q < kGaussNodes.size(); ++q) {
            total += 0.5 * h * kGaussWeights[q] * f(mid + 0.5 * h * kGaussNodes[q]);
        }
    }
    return total;
}

FemFunction l2_project(const FemSpace& space, const RealFunction& f) {
    const std::size_t d = space.dim();
    const double h = space.h();
    Vector load = Vector::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t e = 0; e < space.mesh().n_elems; ++e) {
        const double left = static_cast<double>(e) * h;
        for (std::size_t q = 0; q < kGaussNodes.size(); ++q) {
            const double s = 0.5 * (1.0 + kGaussNodes[q]);  // local coordinate in [0,1]
            const double w = 0.5 * h * kGaussWeights[q] * f(left + s * h);
            // element e carries hat e-1 (falling) and hat e (rising), interior only
            if (e >= 1) load[static_cast<Eigen::Index>(e - 1)] += w * (1.0 - s);
            if (e < d) load[static_cast<Eigen::Index>(e)] += w * s;
        }
    }
    return space.mass_factor().solve(load);
}

FemFunction ritz_project(const FemSpace& space, const RealFunction& f, const RealFunction& df) {
    (void)f;
    const std::size_t d = space.dim();
    const double h = space.h();
    Vector load = Vector::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t e = 0; e < space.mesh().n_elems; ++e) {
        const double left = static_cast<double>(e) * h;
        double slope_integral = 0.0;
        for (std::size_t q = 0; q < kGaussNodes.size(); ++q) {
            const double s = 0.5 * (1.0 + kGaussNodes[q]);
            slope_integral += 0.5 * h * kGaussWeights[q] * df(left + s * h);
        }
        if (e >= 1) load[static_cast<Eigen::Index>(e - 1)] -= slope_integral / h;
        if (e < d) load[static_cast<Eigen::Index>(e)] += slope_integral / h;
    }
    return TridiagonalFactor(space.stiffness()).solve(load);
}

FemFunction discrete_laplacian_apply(const FemSpace& space, const FemFunction& v) {
    return -space.mass_factor().solve(space.apply_stiffness(v));
}

FemFunction a0_apply(const FemSpace& space, double tau, const FemFunction& v) {
    check_dim(space, v.size(), "a0_apply");
    Slice rows = v;
    a0_apply_rows(space, tau, rows);
    return Vector(rows.col(0));
}

void a0_apply_rows(const FemSpace& space, double tau, Slice& rows) {
    if (!(tau > 0.0)) throw ConfigError("a0_apply: tau must be positive");
    Slice mv;
    apply_tridiag_rows(space.mass(), rows, mv);
    space.shifted_factor(tau).solve_rows(mv);
    rows.swap(mv);
}

double l2_inner(const FemSpace& space, const FemFunction& u, const FemFunction& v) {
    check_dim(space, u.size(), "l2_inner");
    return u.dot(space.apply_mass(v));
}

double l2_norm(const FemSpace& space, const FemFunction& v) {
    return std::sqrt(std::max(0.0, l2_inner(space, v, v)));
}

double h1_seminorm(const FemSpace& space, const FemFunction& v) {
    check_dim(space, v.size(), "h1_seminorm");
    return std::sqrt(std::max(0.0, v.dot(space.apply_stiffness(v))));
}

double evaluate(const FemSpace& space, const FemFunction& v, double x) {
    check_dim(space, v.size(), "evaluate");
    const double h = space.h();
    const auto n = static_cast<double>(space.mesh().n_elems);
    if (x <= 0.0 || x >= 1.0) return 0.0;
    const double pos = x / h;
    const auto e = static_cast<std::size_t>(std::min(std::floor(pos), n - 1.0));
    const double s = pos - static_cast<double>(e);
    const double left = e >= 1 ? v[static_cast<Eigen::Index>(e - 1)] : 0.0;
    const double right = e < space.dim() ? v[static_cast<Eigen::Index>(e)] : 0.0;
    return (1.0 - s) * left + s * right;
}

Matrix prolongation_matrix(const FemSpace& coarse, const FemSpace& fine) {
    const std::size_t nc = coarse.mesh().n_elems;
    const std::size_t nf = fine.mesh().n_elems;
    if (nf % nc != 0) throw InvalidMeshError("prolongation needs nested meshes");
    Matrix p = Matrix::Zero(static_cast<Eigen::Index>(fine.dim()),
                            static_cast<Eigen::Index>(coarse.dim()));
    for (std::size_t i = 0; i < fine.dim(); ++i) {
        const double x = fine.mesh().nodes[i];
        for (std::size_t j = 0; j < coarse.dim(); ++j) {
            const double hat = 1.0 - std::abs(x - coarse.mesh().nodes[j]) / coarse.h();
            if (hat > 0.0) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = hat;
        }
    }
    return p;
}

FemFunction prolongate(const FemSpace& coarse, const FemSpace& fine, const FemFunction& v) {
    check_dim(coarse, v.size(), "prolongate");
    return prolongation_matrix(coarse, fine) * v;
}

}  // namespace slq
