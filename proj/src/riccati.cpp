#include "slq/riccati.hpp"

#include "slq/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <string>

namespace slq {

namespace {

constexpr double kBlowup = 1e6;

void check_finite_bounded(double v, const char* what) {
    if (!std::isfinite(v) || std::abs(v) > kBlowup) {
        throw NumericError(std::string(what) + ": integration blew up");
    }
}

// Exponential-integrator coefficients for u' = c u + N: with z = c h,
// phi_1(z) = (e^z - 1)/z, phi_2(z) = (e^z - 1 - z)/z^2, phi_3(z) = (e^z - 1 - z - z^2/2)/z^3.
void phi_functions(double z, double& p1, double& p2, double& p3) {
    if (std::abs(z) < 0.2) {
        // phi_k(z) = sum_j z^j / (j + k)!
        double term1 = 1.0, term2 = 0.5, term3 = 1.0 / 6.0;
        p1 = p2 = p3 = 0.0;
        for (int j = 0; j < 14; ++j) {
            p1 += term1;
            p2 += term2;
            p3 += term3;
            term1 *= z / (j + 2);
            term2 *= z / (j + 3);
            term3 *= z / (j + 4);
        }
        return;
    }
    const double em1 = std::expm1(z);
    p1 = em1 / z;
    p2 = (em1 - z) / (z * z);
    p3 = (em1 - z - 0.5 * z * z) / (z * z * z);
}

// ETDRK4 (Cox-Matthews) weights, f1..f3 and p2 already scaled by the step.
struct EtdScalar {
    double e, e2, p2, f1, f2, f3;
};

EtdScalar etd_scalar(double c, double h) {
    EtdScalar r{};
    double a1, a2, a3, b1, b2, b3;
    phi_functions(c * h, a1, a2, a3);
    phi_functions(0.5 * c * h, b1, b2, b3);
    r.e = std::exp(c * h);
    r.e2 = std::exp(0.5 * c * h);
    r.p2 = 0.5 * h * b1;
    r.f1 = h * (a1 - 3.0 * a2 + 4.0 * a3);
    r.f2 = h * (a2 - 2.0 * a3);
    r.f3 = h * (4.0 * a3 - a2);
    return r;
}

struct EtdArray {
    Eigen::ArrayXXd e, e2, p2, f1, f2, f3;
};

EtdArray etd_array(const Eigen::ArrayXXd& c, double h) {
    EtdArray r;
    for (auto* a : {&r.e, &r.e2, &r.p2, &r.f1, &r.f2, &r.f3}) a->resize(c.rows(), c.cols());
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
        for (Eigen::Index i = 0; i < c.rows(); ++i) {
            const EtdScalar s = etd_scalar(c(i, j), h);
            r.e(i, j) = s.e;
            r.e2(i, j) = s.e2;
            r.p2(i, j) = s.p2;
            r.f1(i, j) = s.f1;
            r.f2(i, j) = s.f2;
            r.f3(i, j) = s.f3;
        }
    }
    return r;
}

Vector interpolate(const Matrix& traj, const RiccatiSolution& sol, double t) {
    if (!(t >= 0.0) || t > sol.T * (1.0 + 1e-14)) {
        throw ConfigError("time " + std::to_string(t) + " outside [0, T]");
    }
    const double pos = std::min(t / sol.half_step(), static_cast<double>(2 * sol.K));
    const auto j = static_cast<Eigen::Index>(std::min(std::floor(pos), static_cast<double>(2 * sol.K - 1)));
    const double w = pos - static_cast<double>(j);
    return (1.0 - w) * traj.col(j) + w * traj.col(j + 1);
}

}  // namespace

ModalSigma modal_sigma(const FemSpace& space, const DataSpec& spec) {
    return [&space, spec](double t) { return space.to_modal(project_sigma(space, spec, t)); };
}

Vector RiccatiSolution::p_at(double t) const { return interpolate(p, *this, t); }
Vector RiccatiSolution::phi_at(double t) const { return interpolate(phi, *this, t); }

double riccati_stationary(double lambda) {
    const double b = 2.0 * lambda - 1.0;
    const double root = std::sqrt(b * b + 4.0);
    return b >= 0.0 ? 2.0 / (b + root) : 0.5 * (root - b);
}

std::vector<double> solve_mode_riccati(double lambda, double T, double alpha, std::size_t steps) {
    if (steps < 1) throw ConfigError("Riccati integration needs at least one step");
    if (!(T > 0.0)) throw ConfigError("horizon must be positive");
    // Reversed time s = T - t: y' = (1 - 2 lambda) y + (1 - y^2).
    const double h = T / static_cast<double>(steps);
    const EtdScalar c = etd_scalar(1.0 - 2.0 * lambda, h);
    auto nl = [](double y) { return 1.0 - y * y; };
    std::vector<double> p(steps + 1);
    double y = alpha;
    p[steps] = y;
    for (std::size_t j = steps; j-- > 0;) {
        const double nu = nl(y);
        const double a = c.e2 * y + c.p2 * nu;
        const double na = nl(a);
        const double b = c.e2 * y + c.p2 * na;
        const double nb = nl(b);
        const double cc = c.e2 * a + c.p2 * (2.0 * nb - nu);
        const double nc = nl(cc);
        y = c.e * y + c.f1 * nu + 2.0 * c.f2 * (na + nb) + c.f3 * nc;
        check_finite_bounded(y, "Riccati");
        p[j] = y;
    }
    return p;
}

RiccatiSolution solve_riccati(const FemSpace& space, double T, double alpha, std::size_t K_fine) {
    if (K_fine < 1) throw ConfigError("K_fine must be at least 1");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
    RiccatiSolution sol;
    sol.T = T;
    sol.alpha = alpha;
    sol.K = K_fine;
    sol.lambda = space.eigenvalues();
    const auto d = sol.lambda.size();
    const auto nodes = static_cast<Eigen::Index>(sol.nodes());
    sol.p.resize(d, nodes);
    for (Eigen::Index i = 0; i < d; ++i) {
        const std::vector<double> pi = solve_mode_riccati(sol.lambda[i], T, alpha, 2 * K_fine);
        for (Eigen::Index j = 0; j < nodes; ++j) sol.p(i, j) = pi[static_cast<std::size_t>(j)];
    }
    sol.phi = Matrix::Zero(d, nodes);
    sol.sigma = Matrix::Zero(d, nodes);
    sol.value_integral.assign(K_fine + 1, 0.0);
    return sol;
}

void solve_phi(RiccatiSolution& sol, const ModalSigma& sigma) {
    const std::size_t steps = 2 * sol.K;
    const double h = sol.half_step();
    // Reversed time s = T - t with state (y, psi) = (p, phi):
    //   y'   = (1 - 2 lambda) y + (1 - y^2)
    //   psi' = -lambda psi + y (sigma - psi)
    // The p trajectory is recomputed alongside so stages see consistent values.
    const EtdArray cy = etd_array(Eigen::ArrayXXd(1.0 - 2.0 * sol.lambda.array()), h);
    const EtdArray cf = etd_array(Eigen::ArrayXXd(-sol.lambda.array()), h);
    auto fy = [](const Eigen::ArrayXd& yy) -> Eigen::ArrayXd { return 1.0 - yy * yy; };
    auto fpsi = [](const Eigen::ArrayXd& yy, const Eigen::ArrayXd& pp,
                   const Eigen::ArrayXd& ss) -> Eigen::ArrayXd { return yy * (ss - pp); };

    Eigen::ArrayXd y = Eigen::ArrayXd::Constant(sol.lambda.size(), sol.alpha);
    Eigen::ArrayXd psi = Eigen::ArrayXd::Zero(sol.lambda.size());
    Eigen::ArrayXd sig_hi = sigma(sol.T).array();
    sol.sigma.col(static_cast<Eigen::Index>(steps)) = sig_hi.matrix();
    sol.phi.col(static_cast<Eigen::Index>(steps)).setZero();
    for (std::size_t j = steps; j-- > 0;) {
        const double t_hi = sol.time(j + 1);
        const double t_lo = sol.time(j);
        const Eigen::ArrayXd sig_mid = sigma(0.5 * (t_hi + t_lo)).array();
        const Eigen::ArrayXd sig_lo = sigma(t_lo).array();
        const Eigen::ArrayXd ny = fy(y);
        const Eigen::ArrayXd nf = fpsi(y, psi, sig_hi);
        const Eigen::ArrayXd ay = cy.e2 * y + cy.p2 * ny;
        const Eigen::ArrayXd af = cf.e2 * psi + cf.p2 * nf;
        const Eigen::ArrayXd nay = fy(ay);
        const Eigen::ArrayXd naf = fpsi(ay, af, sig_mid);
        const Eigen::ArrayXd by = cy.e2 * y + cy.p2 * nay;
        const Eigen::ArrayXd bf = cf.e2 * psi + cf.p2 * naf;
        const Eigen::ArrayXd nby = fy(by);
        const Eigen::ArrayXd nbf = fpsi(by, bf, sig_mid);
        const Eigen::ArrayXd qy = cy.e2 * ay + cy.p2 * (2.0 * nby - ny);
        const Eigen::ArrayXd qf = cf.e2 * af + cf.p2 * (2.0 * nbf - nf);
        const Eigen::ArrayXd nqy = fy(qy);
        const Eigen::ArrayXd nqf = fpsi(qy, qf, sig_lo);
        y = cy.e * y + cy.f1 * ny + 2.0 * cy.f2 * (nay + nby) + cy.f3 * nqy;
        psi = cf.e * psi + cf.f1 * nf + 2.0 * cf.f2 * (naf + nbf) + cf.f3 * nqf;
        if (!psi.isFinite().all() || psi.abs().maxCoeff() > kBlowup ||
            !y.isFinite().all() || y.abs().maxCoeff() > kBlowup) {
            throw NumericError("offset equation: integration blew up");
        }
        sol.p.col(static_cast<Eigen::Index>(j)) = y.matrix();
        sol.phi.col(static_cast<Eigen::Index>(j)) = psi.matrix();
        sol.sigma.col(static_cast<Eigen::Index>(j)) = sig_lo.matrix();
        sig_hi = sig_lo;
    }

    // r(t) = 1/2 int_t^T ((P sigma, sigma) - |phi|^2), Simpson per fine interval.
    auto density = [&](std::size_t j) {
        const auto c = static_cast<Eigen::Index>(j);
        return 0.5 * ((sol.p.col(c).array() * sol.sigma.col(c).array().square()).sum() -
                      sol.phi.col(c).squaredNorm());
    };
    const double dt = sol.T / static_cast<double>(sol.K);
    sol.value_integral.assign(sol.K + 1, 0.0);
    for (std::size_t k = sol.K; k-- > 0;) {
        const double piece =
            dt / 6.0 * (density(2 * k) + 4.0 * density(2 * k + 1) + density(2 * k + 2));
        sol.value_integral[k] = sol.value_integral[k + 1] + piece;
    }
}

RiccatiSolution solve_riccati_system(const FemSpace& space, const DataSpec& spec, double T,
                                     double alpha, std::size_t K_fine) {
    RiccatiSolution sol = solve_riccati(space, T, alpha, K_fine);
    solve_phi(sol, modal_sigma(space, spec));
    return sol;
}

FemFunction feedback_control(const RiccatiSolution& sol, const FemSpace& space,
                             const FemFunction& x, double t) {
    const Vector c = space.to_modal(x);
    const Vector u = -(sol.p_at(t).array() * c.array()).matrix() - sol.phi_at(t);
    return space.from_modal(u);
}

FeedbackRollout feedback_rollout(const RiccatiSolution& sol, const ProblemData& data,
                                 const WienerDriver& driver) {
    validate(data);
    const TimeGrid& g = data.grid;
    if (std::abs(sol.T - g.T) > 1e-12 * g.T) throw ConfigError("feedback horizon differs from the grid");
    const FemSpace& space = data.fem();
    if (static_cast<std::size_t>(sol.lambda.size()) != space.dim()) throw DimensionError("feedback modes");
    const Matrix& V = space.eigenvectors();
    const Matrix MV = space.mass().dense() * V;
    FeedbackRollout out;
    out.state.slices.push_back(data.x0.replicate(1, static_cast<Eigen::Index>(driver.scenarios(0))));
    for (std::size_t n = 0; n < g.N; ++n) {
        const Slice& x = out.state.slices[n];
        const double t = g.node(n);
        // modal coefficients of every scenario, then u = V (-p c - phi)
        Matrix c = MV.transpose() * x;
        c = -(c.array().colwise() * sol.p_at(t).array());
        c.colwise() -= sol.phi_at(t);
        Slice u = V * c;
        const auto sp = static_cast<Eigen::Index>(driver.scenarios(n));
        const auto sc = static_cast<Eigen::Index>(driver.scenarios(n + 1));
        const auto& inc = driver.increments(n + 1);
        const Slice drift = x + g.tau * u;
        const Slice noise = x.colwise() + data.sigma[n];
        Slice next(x.rows(), sc);
        for (Eigen::Index off = 0; off < sc; off += sp) {
            const Eigen::Map<const Eigen::RowVectorXd> dw(inc.data() + off, sp);
            next.middleCols(off, sp) = drift + (noise.array().rowwise() * dw.array()).matrix();
        }
        a0_apply_rows(space, g.tau, next);
        out.control.slices.push_back(std::move(u));
        out.state.slices.push_back(std::move(next));
    }
    return out;
}

double value_function(const RiccatiSolution& sol, const FemSpace& space, const FemFunction& x0) {
    const Vector c = space.to_modal(x0);
    return 0.5 * (sol.p.col(0).array() * c.array().square()).sum() + sol.phi.col(0).dot(c) +
           sol.value_integral[0];
}

MomentResult integrate_moments(const ModalLoop& loop, const Vector& m0, const Matrix& S0,
                               std::size_t n_integrals, const MomentIntegrand& integrand,
                               bool keep_trajectory) {
    const auto n = loop.lambda.size();
    if (loop.p == nullptr || loop.phi == nullptr || loop.sigma == nullptr) {
        throw ConfigError("moment integration needs p, phi and sigma trajectories");
    }
    if (m0.size() != n || S0.rows() != n || S0.cols() != n) throw DimensionError("moment state size");
    const double dt = loop.T / static_cast<double>(loop.K);
    const Eigen::ArrayXd lam = loop.lambda.array();
    const EtdArray cm = etd_array(Eigen::ArrayXXd(-lam), dt);
    // S_ij has linear rate 1 - lambda_i - lambda_j.
    Eigen::ArrayXXd rate_s(n, n);
    for (Eigen::Index j = 0; j < n; ++j) rate_s.col(j) = 1.0 - lam - lam(j);
    const EtdArray cs = etd_array(rate_s, dt);
    const EtdScalar cc = etd_scalar(0.0, dt);

    struct State {
        Eigen::ArrayXd m;
        Eigen::ArrayXXd S;
        Eigen::ArrayXd c;
    };
    const auto ni = static_cast<Eigen::Index>(n_integrals);
    auto rhs = [&](std::size_t node, const State& y) {
        const auto col = static_cast<Eigen::Index>(node);
        const Eigen::ArrayXd p = loop.p->col(col).array();
        const Eigen::ArrayXd phi = loop.phi->col(col).array();
        const Eigen::ArrayXd sig = loop.sigma->col(col).array();
        State k;
        k.m = -p * y.m - phi;
        const Eigen::ArrayXd a = sig - phi;  // rank-one terms combine to m a^T + a m^T + sig sig^T
        k.S = -(y.S.colwise() * p) - (y.S.rowwise() * p.transpose());
        k.S.matrix() += y.m.matrix() * a.matrix().transpose() + a.matrix() * y.m.matrix().transpose() +
                        sig.matrix() * sig.matrix().transpose();
        k.c = Eigen::ArrayXd::Zero(ni);
        if (n_integrals > 0) {
            const Vector mv = y.m.matrix();
            const Matrix Sv = y.S.matrix();
            integrand(node, mv, Sv, k.c.data());
        }
        return k;
    };

    MomentResult out;
    State y{m0.array(), S0.array(), Eigen::ArrayXd::Zero(ni)};
    if (keep_trajectory) {
        out.m.resize(n, static_cast<Eigen::Index>(loop.K + 1));
        out.m.col(0) = m0;
        out.S.reserve(loop.K + 1);
        out.S.push_back(S0);
    }
    // base advanced by half a step under frozen forcing f
    auto stage = [&](const State& base, const State& f) {
        return State{cm.e2 * base.m + cm.p2 * f.m, cs.e2 * base.S + cs.p2 * f.S, base.c + cc.p2 * f.c};
    };
    for (std::size_t k = 0; k < loop.K; ++k) {
        const std::size_t j0 = 2 * k;
        const State k1 = rhs(j0, y);
        const State a = stage(y, k1);
        const State k2 = rhs(j0 + 1, a);
        const State b = stage(y, k2);
        const State k3 = rhs(j0 + 1, b);
        const State q = stage(a, State{2.0 * k3.m - k1.m, 2.0 * k3.S - k1.S, 2.0 * k3.c - k1.c});
        const State k4 = rhs(j0 + 2, q);
        y.m = cm.e * y.m + cm.f1 * k1.m + 2.0 * cm.f2 * (k2.m + k3.m) + cm.f3 * k4.m;
        y.S = cs.e * y.S + cs.f1 * k1.S + 2.0 * cs.f2 * (k2.S + k3.S) + cs.f3 * k4.S;
        y.c = y.c + cc.f1 * k1.c + 2.0 * cc.f2 * (k2.c + k3.c) + cc.f3 * k4.c;
        if (!y.S.isFinite().all()) throw NumericError("moment integration blew up");
        if (keep_trajectory) {
            out.m.col(static_cast<Eigen::Index>(k + 1)) = y.m.matrix();
            out.S.push_back(y.S.matrix());
        }
    }
    out.m_final = y.m.matrix();
    out.S_final = y.S.matrix();
    out.integrals.assign(y.c.data(), y.c.data() + y.c.size());
    return out;
}

MomentTrajectory closed_loop_moments(const RiccatiSolution& sol, const FemSpace& space,
                                     const FemFunction& x0, bool keep_trajectory) {
    ModalLoop loop{sol.lambda, &sol.p, &sol.phi, &sol.sigma, sol.T, sol.K};
    const Vector m0 = space.to_modal(x0);
    const Matrix S0 = m0 * m0.transpose();
    auto integrand = [&](std::size_t node, const Vector& m, const Matrix& S, double* rates) {
        const auto c = static_cast<Eigen::Index>(node);
        const Eigen::ArrayXd p = sol.p.col(c).array();
        const Eigen::ArrayXd phi = sol.phi.col(c).array();
        const Eigen::ArrayXd sd = S.diagonal().array();
        const double eu2 = (p * p * sd + 2.0 * p * phi * m.array() + phi * phi).sum();
        rates[0] = 0.5 * (sd.sum() + eu2);
    };
    MomentResult r = integrate_moments(loop, m0, S0, 1, integrand, keep_trajectory);
    MomentTrajectory t;
    t.m = std::move(r.m);
    t.S = std::move(r.S);
    t.running_cost = r.integrals[0];
    t.terminal_cost = 0.5 * sol.alpha * r.S_final.trace();
    return t;
}

double cost_from_moments(const RiccatiSolution& sol, const FemSpace& space, const FemFunction& x0) {
    return closed_loop_moments(sol, space, x0).cost();
}

std::vector<Matrix> solve_riccati_dense(const FemSpace& space, double T, double alpha,
                                        std::size_t K_fine) {
    if (space.dim() > 64) throw ResourceError("dense Riccati integrator is limited to d <= 64");
    if (K_fine < 1) throw ConfigError("K_fine must be at least 1");
    const auto d = static_cast<Eigen::Index>(space.dim());
    const Matrix mass = space.mass().dense();
    const Matrix lap = -mass.llt().solve(space.stiffness().dense());
    const Matrix id = Matrix::Identity(d, d);
    // P' = -(P L + L P + P + 1 - P^2), integrated backward.
    auto f = [&](const Matrix& P) -> Matrix { return -(P * lap + lap * P + P + id - P * P); };
    const double h = -T / static_cast<double>(K_fine);
    std::vector<Matrix> out(K_fine + 1);
    Matrix P = alpha * id;
    out[K_fine] = P;
    for (std::size_t j = K_fine; j-- > 0;) {
        const Matrix k1 = f(P);
        const Matrix k2 = f(P + 0.5 * h * k1);
        const Matrix k3 = f(P + 0.5 * h * k2);
        const Matrix k4 = f(P + h * k3);
        P += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!P.allFinite() || P.cwiseAbs().maxCoeff() > kBlowup) {
            throw NumericError("dense Riccati: integration blew up");
        }
        out[j] = P;
    }
    return out;
}

}  // namespace slq
