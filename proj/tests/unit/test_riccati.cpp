#include "slq/errors.hpp"
#include "slq/riccati.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace slq;

namespace {

constexpr double kPi = std::numbers::pi;

// Nodal-coordinate operator of the per-mode solution: V diag(p) V^T M.
Matrix nodal_operator(const FemSpace& space, const Vector& p) {
    const Matrix& V = space.eigenvectors();
    return V * p.asDiagonal() * V.transpose() * space.mass().dense();
}

}  // namespace

TEST(Riccati, TerminalCondition) {
    FemSpace s(10);
    for (double alpha : {0.0, 0.4, 3.0}) {
        const auto sol = solve_riccati(s, 1.0, alpha, 64);
        for (Eigen::Index i = 0; i < sol.p.rows(); ++i) EXPECT_EQ(sol.p(i, sol.p.cols() - 1), alpha);
    }
}

TEST(Riccati, ZeroModeAgainstEulerReference) {
    // p' = p^2 - p - 1, p(1) = 0
    auto f = [](double, double p) { return p * p - p - 1.0; };
    const double ref = oracle::euler_richardson<double>(f, 1.0, 0.0, 1000000);
    const auto p = solve_mode_riccati(0.0, 1.0, 0.0, 1024);
    EXPECT_NEAR(p.front(), ref, 1e-9);
    EXPECT_NEAR(p.front(), oracle::riccati_closed_form(0.0, 1.0, 0.0, 0.0), 1e-12);
}

TEST(Riccati, ModesMatchClosedForm) {
    FemSpace s(32);
    for (double alpha : {0.0, 1.0}) {
        const auto sol = solve_riccati(s, 1.0, alpha, 1024);
        for (Eigen::Index i = 0; i < sol.lambda.size(); ++i) {
            for (std::size_t j : {std::size_t{0}, std::size_t{700}, sol.nodes() - 1}) {
                const double exact = oracle::riccati_closed_form(sol.lambda(i), 1.0, alpha, sol.time(j));
                EXPECT_NEAR(sol.p(i, static_cast<Eigen::Index>(j)), exact, 1e-10 * std::max(1.0, exact))
                    << "mode " << i << " node " << j;
            }
        }
    }
}

TEST(Riccati, LargeLambdaAsymptotics) {
    for (double lambda : {60.0, 200.0, 5000.0}) {
        const auto p = solve_mode_riccati(lambda, 1.0, 0.0, 1024);
        EXPECT_LT(std::abs(p.front() * 2.0 * lambda - 1.0), 0.2) << lambda;
    }
}

TEST(Riccati, BoundsAlongTrajectories) {
    for (double alpha : {0.0, 0.3, 2.0}) {
        FemSpace s(16);
        const auto sol = solve_riccati(s, 1.5, alpha, 256);
        for (Eigen::Index i = 0; i < sol.p.rows(); ++i) {
            const double cap = std::max(alpha, riccati_stationary(sol.lambda(i)));
            EXPECT_GE(sol.p.row(i).minCoeff(), 0.0);
            EXPECT_LE(sol.p.row(i).maxCoeff(), cap * (1.0 + 1e-12));
        }
    }
}

TEST(Riccati, ModeResidualOnNonStiffModes) {
    FemSpace s(8);
    const auto sol = solve_riccati(s, 1.0, 1.0, 4096);
    const double h = sol.half_step();
    int checked = 0;
    for (Eigen::Index i = 0; i < sol.p.rows(); ++i) {
        const double lam = sol.lambda(i);
        if (lam * h > 0.02) continue;
        ++checked;
        for (Eigen::Index j = 2; j + 2 < sol.p.cols(); j += 37) {
            // fourth-order central difference on the half-step nodes
            const double deriv =
                (sol.p(i, j - 2) - 8.0 * sol.p(i, j - 1) + 8.0 * sol.p(i, j + 1) - sol.p(i, j + 2)) / (12.0 * h);
            const double p = sol.p(i, j);
            const double rhs = p * p + (2.0 * lam - 1.0) * p - 1.0;
            EXPECT_LE(std::abs(deriv - rhs), 1e-7 * std::max(1.0, std::abs(rhs))) << i << " " << j;
        }
    }
    EXPECT_GE(checked, 3);
}

TEST(Riccati, BoundedUnderRefinement) {
    const double pbar = riccati_stationary(kPi * kPi);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t n : {8u, 16u, 32u, 64u}) {
        FemSpace s(n);
        const double top1 = solve_riccati(s, 1.0, 1.0, 256).p.maxCoeff();
        EXPECT_LE(top1, prev);
        prev = top1;
        // Without terminal weight the maximum p_1(0) creeps up towards the
        // continuous value as lambda_1 decreases, but stays below it.
        const double top0 = solve_riccati(s, 1.0, 0.0, 256).p.maxCoeff();
        EXPECT_LE(top0, pbar);
    }
}

TEST(Riccati, DenseMatchesPerMode) {
    for (std::size_t n : {2u, 4u, 8u}) {
        FemSpace s(n);
        const std::size_t K = 8192;
        const auto dense = solve_riccati_dense(s, 1.0, 0.7, K);
        const auto sol = solve_riccati(s, 1.0, 0.7, K);
        EXPECT_EQ((dense[K] - 0.7 * Matrix::Identity(s.dim(), s.dim())).cwiseAbs().maxCoeff(), 0.0);
        for (std::size_t j = 0; j <= K; j += 512) {
            const Matrix& P = dense[j];
            const Matrix ref = nodal_operator(s, sol.p.col(static_cast<Eigen::Index>(2 * j)));
            EXPECT_LE((P - ref).cwiseAbs().maxCoeff(), 1e-9) << "d=" << s.dim() << " j=" << j;
            // self-adjoint with respect to M
            const Matrix MP = s.mass().dense() * P;
            EXPECT_LE((MP - MP.transpose()).cwiseAbs().maxCoeff(), 1e-10);
        }
    }
    EXPECT_THROW(solve_riccati_dense(FemSpace(66), 1.0, 0.0, 4), ResourceError);
}

TEST(Offset, ZeroNoiseGivesZeroOffset) {
    auto space = build_fem_space(12);
    const auto sol = solve_riccati_system(*space, zero_data(), 1.0, 1.0, 128);
    EXPECT_EQ(sol.phi.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(sol.value_integral[0], 0.0);
}

TEST(Offset, LinearInNoise) {
    auto space = build_fem_space(12);
    const auto a = solve_riccati_system(*space, default_data(1.0, 1.0), 1.0, 0.0, 128);
    const auto b = solve_riccati_system(*space, default_data(1.0, 2.5), 1.0, 0.0, 128);
    EXPECT_LE((b.phi - 2.5 * a.phi).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE(a.phi.col(a.phi.cols() - 1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Offset, SingleModeAgainstEulerReference) {
    auto space = build_fem_space(8);
    const DataSpec spec = default_data();
    const auto sol = solve_riccati_system(*space, spec, 1.0, 1.0, 512);
    const auto sig = modal_sigma(*space, spec);
    const double lam = space->eigenvalues()(0);
    using Y = Eigen::Vector2d;
    auto f = [&](double t, const Y& y) {
        const double s1 = sig(t)(0);
        return Y(y(0) * y(0) + (2.0 * lam - 1.0) * y(0) - 1.0, (lam + y(0)) * y(1) - y(0) * s1);
    };
    const Y ref = oracle::euler_richardson<Y>(f, 1.0, Y(1.0, 0.0), 1000000);
    EXPECT_NEAR(sol.p(0, 0), ref(0), 1e-9);
    EXPECT_NEAR(sol.phi(0, 0), ref(1), 1e-8);
    // the other modes carry no noise
    EXPECT_LE(sol.phi.bottomRows(sol.phi.rows() - 1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Feedback, BasicCases) {
    auto space = build_fem_space(6);
    const auto zero = solve_riccati_system(*space, zero_data(), 1.0, 1.0, 64);
    EXPECT_EQ(feedback_control(zero, *space, Vector::Zero(5), 0.3).cwiseAbs().maxCoeff(), 0.0);
    const auto sol = solve_riccati_system(*space, default_data(), 1.0, 0.0, 64);
    const Vector x = Vector::LinSpaced(5, 1.0, -1.0);
    EXPECT_LE(feedback_control(sol, *space, x, 1.0).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_THROW(feedback_control(sol, *space, x, 1.5), ConfigError);
    EXPECT_THROW(feedback_control(sol, *space, x, -0.1), ConfigError);
}

TEST(Feedback, MatchesDenseIntegrator) {
    for (std::size_t n : {2u, 4u}) {
        auto space = build_fem_space(n);
        const std::size_t K = 2048;
        const auto sol = solve_riccati_system(*space, zero_data(), 1.0, 0.5, K);
        const auto dense = solve_riccati_dense(*space, 1.0, 0.5, K);
        const Vector x = Vector::LinSpaced(static_cast<Eigen::Index>(space->dim()), 0.5, 1.5);
        for (std::size_t j = 0; j <= K; j += 256) {
            const double t = static_cast<double>(j) / K;
            const Vector u = feedback_control(sol, *space, x, t);
            EXPECT_LE((u + dense[j] * x).cwiseAbs().maxCoeff(), 1e-9);
        }
    }
}

TEST(ValueFunction, ZeroData) {
    auto space = build_fem_space(8);
    const auto sol = solve_riccati_system(*space, zero_data(), 1.0, 1.0, 64);
    EXPECT_EQ(value_function(sol, *space, Vector::Zero(7)), 0.0);
}

TEST(ValueFunction, ShortHorizonTaylor) {
    auto space = build_fem_space(16);
    const DataSpec spec = default_data();
    const FemFunction x0 = ritz_project(*space, spec.x0, spec.dx0);
    const double nx = l2_norm(*space, x0);
    double prev_rel = 0.0;
    for (double T : {1e-3, 5e-4}) {
        const auto sol = solve_riccati_system(*space, spec, T, 0.0, 256);
        const double v = value_function(sol, *space, x0);
        const double lead = 0.5 * T * nx * nx;
        const double rel = std::abs(v - lead) / lead;
        EXPECT_LT(rel, 20.0 * T);
        if (prev_rel > 0.0) {
            EXPECT_NEAR(prev_rel / rel, 2.0, 0.1);
        }
        prev_rel = rel;
    }
}

TEST(ValueFunction, MatchesMomentCost) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ua(0.0, 2.0), ut(0.3, 1.5), us(0.2, 3.0);
    auto space = build_fem_space(16);
    for (int k = 0; k < 5; ++k) {
        const double alpha = ua(rng), T = ut(rng), scale = us(rng);
        const DataSpec spec = k % 2 == 0 ? default_data(1.0, scale) : oracle::rich_data();
        const auto sol = solve_riccati_system(*space, spec, T, alpha, 1024);
        const FemFunction x0 = ritz_project(*space, spec.x0, spec.dx0);
        const double v = value_function(sol, *space, x0);
        const double c = cost_from_moments(sol, *space, x0);
        EXPECT_NEAR(c, v, 1e-6 * std::abs(v)) << "alpha=" << alpha << " T=" << T;
    }
}

TEST(Moments, ZeroDataStaysZero) {
    auto space = build_fem_space(8);
    const auto sol = solve_riccati_system(*space, zero_data(), 1.0, 1.0, 64);
    const auto traj = closed_loop_moments(sol, *space, Vector::Zero(7), true);
    EXPECT_EQ(traj.m.cwiseAbs().maxCoeff(), 0.0);
    for (const auto& S : traj.S) EXPECT_EQ(S.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(traj.cost(), 0.0);
}

TEST(Moments, ZeroFeedbackClosedForm) {
    FemSpace s(6);
    const std::size_t K = 256;
    const double T = 0.5;
    const auto d = static_cast<Eigen::Index>(s.dim());
    const Matrix zero = Matrix::Zero(d, static_cast<Eigen::Index>(2 * K + 1));
    ModalLoop loop{s.eigenvalues(), &zero, &zero, &zero, T, K};
    const Vector m0 = Vector::LinSpaced(d, 1.0, 0.2);
    Matrix S0 = m0 * m0.transpose();
    S0.diagonal().array() += 0.1;
    const auto r = integrate_moments(loop, m0, S0, 0, nullptr, false);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double lam = s.eigenvalues()(i);
        const double expect = S0(i, i) * std::exp((1.0 - 2.0 * lam) * T);
        EXPECT_NEAR(r.S_final(i, i), expect, 1e-12 * std::max(1.0, S0(i, i)));
        EXPECT_NEAR(r.m_final(i), m0(i) * std::exp(-lam * T), 1e-12);
    }
}

TEST(Moments, CovarianceStaysPositive) {
    auto space = build_fem_space(10);
    const DataSpec spec = oracle::rich_data();
    const auto sol = solve_riccati_system(*space, spec, 1.0, 1.0, 256);
    const FemFunction x0 = ritz_project(*space, spec.x0, spec.dx0);
    const auto traj = closed_loop_moments(sol, *space, x0, true);
    for (std::size_t k = 0; k < traj.S.size(); k += 16) {
        const Matrix& S = traj.S[k];
        EXPECT_LE((S - S.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        const Matrix cov = S - traj.m.col(static_cast<Eigen::Index>(k)) * traj.m.col(static_cast<Eigen::Index>(k)).transpose();
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cov + cov.transpose()));
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    }
}

TEST(Riccati, InputValidation) {
    FemSpace s(4);
    EXPECT_THROW(solve_riccati(s, 1.0, 1.0, 0), ConfigError);
    EXPECT_THROW(solve_riccati(s, 1.0, -1.0, 4), ConfigError);
    EXPECT_THROW(solve_mode_riccati(1.0, 0.0, 0.0, 4), ConfigError);
}

TEST(Feedback, RolloutIsTheForwardSchemeUnderFeedback) {
    auto space = build_fem_space(6);
    const DataSpec spec = default_data();
    const auto sol = solve_riccati_system(*space, spec, 1.0, 0.7, 64);
    const auto data = make_problem(space, make_time_grid(1.0, 4), 0.7, spec);
    const auto drv = WienerDriver::tree(data.grid);
    const auto fb = feedback_rollout(sol, data, drv);
    const auto x = solve_forward(data, drv, fb.control);
    for (std::size_t n = 0; n <= 4; ++n) {
        EXPECT_LE((x.at(n) - fb.state.at(n)).cwiseAbs().maxCoeff(), 1e-14);
    }
    for (std::size_t n = 0; n < 4; ++n) {
        for (Eigen::Index c = 0; c < fb.control.at(n).cols(); ++c) {
            const FemFunction u = feedback_control(sol, *space, fb.state.at(n).col(c), data.grid.node(n));
            EXPECT_LE((fb.control.at(n).col(c) - u).cwiseAbs().maxCoeff(), 1e-14);
        }
    }
    const auto other = make_problem(space, make_time_grid(2.0, 4), 0.7, spec);
    EXPECT_THROW(feedback_rollout(sol, other, WienerDriver::tree(other.grid)), ConfigError);
}
