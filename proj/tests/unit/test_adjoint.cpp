#include "slq/adjoint.hpp"
#include "slq/errors.hpp"
#include "slq/optimizer.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace slq;

namespace {

double max_abs(const Slice& s) { return s.size() == 0 ? 0.0 : s.cwiseAbs().maxCoeff(); }

ProblemData tiny(std::size_t n_elems, std::size_t N, double T, double alpha, const DataSpec& spec) {
    return make_problem(build_fem_space(n_elems), make_time_grid(T, N), alpha, spec);
}

// Level-n projection of level-(n+1) values on a tree, column by column.
Slice tree_mean(const Slice& w) {
    const Eigen::Index half = w.cols() / 2;
    return 0.5 * (w.leftCols(half) + w.rightCols(half));
}

}  // namespace

TEST(Adjoint, ZeroStateGivesZero) {
    const auto data = tiny(5, 4, 1.0, 1.0, default_data());
    const auto drv = WienerDriver::tree(data.grid);
    const auto x = AdaptedProcess::zeros(drv, data.dim(), 0, 4);
    const auto out = implicit_euler_bsde(data, drv, x, CondExpEstimator::tree_exact());
    for (std::size_t n = 0; n < 4; ++n) {
        EXPECT_EQ(max_abs(out.q.at(n)), 0.0);
        EXPECT_EQ(max_abs(out.y0.at(n)), 0.0);
        EXPECT_EQ(max_abs(out.zbar0.at(n)), 0.0);
    }
}

TEST(Adjoint, SingleStepHandExample) {
    for (double alpha : {0.0, 1.0, 2.5}) {
        const auto data = tiny(2, 1, 1.0, alpha, default_data());
        const auto drv = WienerDriver::tree(data.grid);
        const double x = 0.7;
        const auto state = forward_sweep(data.fem(), drv, Vector::Constant(1, x), nullptr, nullptr);
        const auto q = k_htau(data, drv, state, CondExpEstimator::tree_exact());
        EXPECT_NEAR(q.at(0)(0, 0), -(1.0 + alpha) * (1.0 / 13.0) * (x / 13.0), 1e-15);
    }
}

TEST(Adjoint, RecursionMatchesProductFormula) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n_elems = 2 + trial % 3;  // d = 1..3
        const std::size_t N = 1 + trial % 5;        // N = 1..5
        const double alpha = 0.5 * (trial % 4);
        const auto data = tiny(n_elems, N, 0.3 + 0.035 * trial, alpha, oracle::rich_data());
        const auto drv = WienerDriver::tree(data.grid);
        const auto x = oracle::random_process(drv, data.dim(), 0, N, rng);
        const auto o = oracle::dense_ops(n_elems, data.grid.tau);
        const auto out = implicit_euler_bsde(data, drv, x, CondExpEstimator::tree_exact());
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t c = 0; c < drv.scenarios(n); ++c) {
                const auto col = static_cast<Eigen::Index>(c);
                const Vector k = oracle::k_formula(o, x, alpha, N, n, c);
                const Vector y = oracle::y0_formula(o, x, alpha, N, n, c);
                EXPECT_LE((out.q.at(n).col(col) - k).cwiseAbs().maxCoeff(), 1e-12) << trial;
                EXPECT_LE((out.y0.at(n).col(col) - y).cwiseAbs().maxCoeff(), 1e-12) << trial;
            }
        }
    }
}

TEST(Adjoint, DeterministicDriverBackwardSolves) {
    const auto data = tiny(7, 5, 1.0, 0.8, oracle::rich_data());
    std::vector<std::vector<double>> inc(5, std::vector<double>(2, 0.0));
    const auto drv = WienerDriver::from_increments(data.grid, inc);
    const auto x = forward_sweep(data.fem(), drv, data.x0, nullptr, &data.sigma);
    // Only the constant feature: with Delta = 0 every other feature is degenerate.
    CondExpEstimator est = CondExpEstimator::regression(CondExpEstimator::Basis::StateModes, 0.0);
    est.n_modes = 0;
    est.brownian_feature = false;
    est.min_samples_per_feature = 1;
    const auto out = implicit_euler_bsde(data, drv, x, est);
    const auto o = oracle::dense_ops(7, data.grid.tau);
    const double tau = data.grid.tau;
    Vector y = -data.alpha * x.at(5).col(0);
    for (std::size_t n = 5; n-- > 0;) {
        const Vector rhs = o.M * (y - tau * x.at(n + 1).col(0));
        y = (o.M + tau * o.A).ldlt().solve(rhs);
        for (Eigen::Index p = 0; p < 2; ++p) {
            EXPECT_LE((out.y0.at(n).col(p) - y).cwiseAbs().maxCoeff(), 1e-12);
            EXPECT_LE(max_abs(out.zbar0.at(n)), 1e-12);
        }
    }
}

TEST(Adjoint, MartingaleIdentityOnTree) {
    std::mt19937_64 rng(77);
    const auto data = tiny(5, 6, 1.0, 1.0, oracle::rich_data());
    const auto drv = WienerDriver::tree(data.grid);
    const auto x = oracle::random_process(drv, data.dim(), 0, 6, rng);
    const auto out = implicit_euler_bsde(data, drv, x, CondExpEstimator::tree_exact());
    const auto o = oracle::dense_ops(5, data.grid.tau);
    const double tau = data.grid.tau;
    for (std::size_t n = 0; n < 6; ++n) {
        const Slice ey = tree_mean(out.y0.at(n + 1));
        const Slice ex = tree_mean(x.at(n + 1));
        const Slice r = o.M * ey - (o.M + tau * o.A) * out.y0.at(n) + tau * (o.M * out.zbar0.at(n)) -
                        tau * (o.M * ex);
        EXPECT_LE(max_abs(r), 1e-10);
        // Zbar0 from its defining conditional expectation
        Slice w = out.y0.at(n + 1) - tau * x.at(n + 1);
        const auto& inc = drv.increments(n + 1);
        for (Eigen::Index c = 0; c < w.cols(); ++c) w.col(c) *= inc[static_cast<std::size_t>(c)];
        EXPECT_LE(max_abs(out.zbar0.at(n) - tree_mean(w) / tau), 1e-12);
    }
}

TEST(Adjoint, GapShrinksWithTau) {
    // max_n E|Y0 - K X|^2 for the uncontrolled state. Without terminal weight
    // the maximum sits at t_0, where the A0 damping does not hide the rate.
    auto gap = [](std::size_t N) {
        const auto data = make_problem(build_fem_space(8), make_time_grid(1.0, N), 0.0, default_data());
        const auto drv = WienerDriver::tree(data.grid);
        const auto x = solve_forward(data, drv, zero_control(data, drv));
        const auto out = implicit_euler_bsde(data, drv, x, CondExpEstimator::tree_exact());
        double worst = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const Slice d = out.y0.at(n) - out.q.at(n);
            worst = std::max(worst, level_inner(data.fem(), d, d));
        }
        return worst;
    };
    const double g4 = gap(4), g6 = gap(6), g8 = gap(8), g12 = gap(12);
    EXPECT_GT(g4, 1e-14);
    EXPECT_GE(g4 / g8, 1.6);
    EXPECT_LE(g4 / g8, 2.6);
    EXPECT_GE(g6 / g12, 1.6);
    EXPECT_LE(g6 / g12, 2.6);
}

TEST(Adjoint, DualityWithLOnTrees) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 6; ++trial) {
        const std::size_t N = 2 + trial % 4;
        const auto data = tiny(3 + trial % 3, N, 1.0, 0.7, oracle::rich_data());
        const auto drv = WienerDriver::tree(data.grid);
        const auto u = oracle::random_process(drv, data.dim(), 0, N - 1, rng);
        const auto xi = oracle::random_process(drv, data.dim(), 1, N, rng);
        const auto lu = apply_L(data, drv, u);
        const double lhs = x_inner(data, lu, xi);
        const auto ls = apply_L_adjoint(data, drv, xi, CondExpEstimator::tree_exact());
        const double rhs = u_inner(data, u, ls);
        EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));

        const Slice eta = xi.at(N);
        const double lhs_hat = level_inner(data.fem(), lu.at(N), eta);
        const auto lh = apply_Lhat_adjoint(data, drv, eta, CondExpEstimator::tree_exact());
        EXPECT_NEAR(lhs_hat, u_inner(data, u, lh), 1e-12 * std::max(1.0, std::abs(lhs_hat)));

        const auto o = oracle::dense_ops(data.fem().mesh().n_elems, data.grid.tau);
        for (std::size_t j = 0; j < N; ++j) {
            for (std::size_t c = 0; c < drv.scenarios(j); ++c) {
                const auto col = static_cast<Eigen::Index>(c);
                EXPECT_LE((ls.at(j).col(col) - oracle::l_adjoint(o, xi, N, j, c)).cwiseAbs().maxCoeff(), 1e-12);
                EXPECT_LE((lh.at(j).col(col) - oracle::lhat_adjoint(o, eta, N, j, c)).cwiseAbs().maxCoeff(),
                          1e-12);
            }
        }
    }
}

TEST(Adjoint, LhatSingleStep) {
    const auto data = tiny(2, 1, 1.0, 0.0, default_data());
    const auto drv = WienerDriver::tree(data.grid);
    Slice eta(1, 2);
    eta << 3.0, -1.0;
    const auto lh = apply_Lhat_adjoint(data, drv, eta, CondExpEstimator::tree_exact());
    EXPECT_NEAR(lh.at(0)(0, 0), (1.0 / 13.0) * 1.0, 1e-15);
    const auto zero = apply_L_adjoint(data, drv, AdaptedProcess::zeros(drv, 1, 1, 1), CondExpEstimator::tree_exact());
    EXPECT_EQ(zero.at(0)(0, 0), 0.0);
}

TEST(Regression, ConstantAndLinearTargets) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    const Eigen::Index P = 200;
    Slice f(3, P);
    for (Eigen::Index p = 0; p < P; ++p) {
        f(0, p) = 1.0;
        f(1, p) = nd(rng);
        f(2, p) = nd(rng);
    }
    Slice c = Slice::Constant(2, P, 4.25);
    EXPECT_LE(max_abs(regression_condexp(f, c, 1e-10) - c), 1e-9 * 4.25);
    EXPECT_LE(max_abs(regression_condexp(f, c, 0.0) - c), 1e-12);
    Slice lin(2, P);
    lin.row(0) = 2.0 * f.row(0) - 3.0 * f.row(1) + 0.5 * f.row(2);
    lin.row(1) = -f.row(2);
    EXPECT_LE(max_abs(regression_condexp(f, lin, 0.0) - lin), 1e-10);
    RegressionFit fit(f, 0.0);
    const Matrix coef = fit.coefficients(lin);
    EXPECT_NEAR(coef(0, 1), -3.0, 1e-10);
    EXPECT_LE(max_abs(RegressionFit::evaluate(coef, f) - lin), 1e-10);
}

TEST(Regression, Errors) {
    Slice f = Slice::Ones(2, 100);
    EXPECT_THROW(RegressionFit(f, 0.0), NumericError);
    Slice small = Slice::Random(3, 20);
    EXPECT_THROW(RegressionFit(small, 1e-10), ConfigError);
}

TEST(Regression, IndicatorBasisOnReplayedTreeIsExact) {
    std::mt19937_64 rng(5);
    const auto data = tiny(4, 4, 1.0, 1.0, oracle::rich_data());
    const auto tree = WienerDriver::tree(data.grid);
    const auto rep = WienerDriver::replay_tree(data.grid);
    const auto x_tree = oracle::random_process(tree, data.dim(), 0, 4, rng);
    // Spread the tree process over the replayed paths.
    AdaptedProcess x_rep = AdaptedProcess::zeros(rep, data.dim(), 0, 4);
    for (std::size_t n = 0; n <= 4; ++n) {
        for (Eigen::Index p = 0; p < 16; ++p) x_rep.at(n).col(p) = x_tree.at(n).col(p % (1 << n));
    }
    CondExpEstimator est = CondExpEstimator::regression(CondExpEstimator::Basis::Indicator, 0.0);
    est.min_samples_per_feature = 1;
    const auto q_rep = k_htau(data, rep, x_rep, est);
    const auto q_tree = k_htau(data, tree, x_tree, CondExpEstimator::tree_exact());
    for (std::size_t n = 0; n < 4; ++n) {
        for (Eigen::Index p = 0; p < 16; ++p) {
            EXPECT_LE((q_rep.at(n).col(p) - q_tree.at(n).col(p % (1 << n))).cwiseAbs().maxCoeff(), 1e-10);
        }
    }
}

TEST(Regression, TreeExactRejectsEnsemble) {
    const auto data = tiny(4, 3, 1.0, 1.0, default_data());
    const auto drv = WienerDriver::gaussian(data.grid, 50, 1);
    const auto x = solve_forward(data, drv, zero_control(data, drv));
    EXPECT_THROW(k_htau(data, drv, x, CondExpEstimator::tree_exact()), ConfigError);
}

TEST(Regression, FeaturesIncludeConstant) {
    const auto data = tiny(6, 3, 1.0, 1.0, default_data());
    const auto drv = WienerDriver::gaussian(data.grid, 100, 4);
    const auto x = solve_forward(data, drv, zero_control(data, drv));
    const auto est = CondExpEstimator::regression();
    const Slice f = regression_features(est, data, drv, &x, 2);
    EXPECT_EQ(f.rows(), 6);  // 4 modes, W, constant
    EXPECT_EQ(f.cols(), 100);
    bool has_constant = false;
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
        has_constant = has_constant || (f.row(r).array() == 1.0).all();
    }
    EXPECT_TRUE(has_constant);
}
