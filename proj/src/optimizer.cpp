#include "slq/optimizer.hpp"

#include "slq/errors.hpp"
#include "slq/kernels.hpp"

#include <cmath>
#include <iostream>
#include <string>

namespace slq {

namespace {

// Adds per-path contributions w * (a, b) of one level to the leaf totals.
void add_level(const FemSpace& space, const WienerDriver& driver, double w, const Slice& a,
               std::vector<double>& totals) {
    const std::vector<double> v = column_inner(space, a, a);
    for (std::size_t p = 0; p < totals.size(); ++p) totals[p] += w * v[driver.is_tree() ? p % v.size() : p];
}

CostValue summarize(const std::vector<double>& totals) {
    const auto& k = simd::active();
    const double n = static_cast<double>(totals.size());
    const double mean = k.sum(totals.data(), totals.size()) / n;
    if (totals.size() < 2) return {mean, 0.0};
    std::vector<double> dev(totals.size());
    for (std::size_t p = 0; p < totals.size(); ++p) dev[p] = totals[p] - mean;
    const double var = k.dot(dev.data(), dev.data(), dev.size()) / (n - 1.0);
    return {mean, std::sqrt(var / n)};
}

AdaptedProcess difference(const AdaptedProcess& a, const AdaptedProcess& b) {
    AdaptedProcess out = a;
    axpy(out, -1.0, b);
    return out;
}

// Hessian of the reduced cost: V - K(L V) with zero data.
AdaptedProcess hessian_apply(const ProblemData& data, const WienerDriver& driver,
                             const AdaptedProcess& v) {
    AdaptedProcess x = apply_L(data, driver, v);
    auto proj = make_projector(CondExpEstimator::tree_exact(), data, driver, &x);
    SweepRequest req;
    req.xi = &x;
    req.c_run = -data.grid.tau;
    req.eta = &x.at(data.grid.N);
    req.c_term = -data.alpha;
    AdaptedProcess q = backward_sweep(data, driver, *proj, req).q;
    AdaptedProcess out = v;
    axpy(out, -1.0, q);
    return out;
}

}  // namespace

CostValue cost(const ProblemData& data, const WienerDriver& driver, const AdaptedProcess& state,
               const AdaptedProcess& control) {
    const TimeGrid& g = data.grid;
    const FemSpace& space = data.fem();
    check_layout(state, driver, data.dim(), 0, g.N, "cost state");
    check_layout(control, driver, data.dim(), 0, g.N - 1, "cost control");
    if (driver.is_tree()) {
        double total = 0.0;
        for (std::size_t n = 1; n <= g.N; ++n) {
            total += 0.5 * g.tau * level_inner(space, state.at(n), state.at(n));
        }
        for (std::size_t n = 0; n < g.N; ++n) {
            total += 0.5 * g.tau * level_inner(space, control.at(n), control.at(n));
        }
        total += 0.5 * data.alpha * level_inner(space, state.at(g.N), state.at(g.N));
        return {total, 0.0};
    }
    std::vector<double> totals(driver.n_paths(), 0.0);
    for (std::size_t n = 1; n <= g.N; ++n) add_level(space, driver, 0.5 * g.tau, state.at(n), totals);
    for (std::size_t n = 0; n < g.N; ++n) add_level(space, driver, 0.5 * g.tau, control.at(n), totals);
    add_level(space, driver, 0.5 * data.alpha, state.at(g.N), totals);
    return summarize(totals);
}

CostValue reduced_cost(const ProblemData& data, const WienerDriver& driver,
                       const AdaptedProcess& control) {
    return cost(data, driver, solve_forward(data, driver, control), control);
}

AdaptedProcess gradient(const ProblemData& data, const WienerDriver& driver,
                        const AdaptedProcess& control, const CondExpEstimator& est,
                        AdaptedProcess* state) {
    AdaptedProcess x = solve_forward(data, driver, control);
    AdaptedProcess q = k_htau(data, driver, x, est);
    AdaptedProcess g = control;
    axpy(g, -1.0, q);
    if (state != nullptr) *state = std::move(x);
    return g;
}

double kappa_bound(double T, double alpha) {
    if (!(T > 0.0) || !(alpha >= 0.0)) throw ConfigError("kappa_bound needs T > 0 and alpha >= 0");
    const double e = std::exp(T);
    return 1.0 + alpha * T * e + T * T * e;
}

double state_error_constant(double T) { return T * std::exp(T); }

double hessian_norm_estimate(const ProblemData& data, const WienerDriver& tree_driver,
                             std::size_t iterations, std::uint64_t seed) {
    if (!tree_driver.is_tree()) throw ConfigError("power iteration runs on a tree driver");
    AdaptedProcess v = zero_control(data, tree_driver);
    std::uint64_t counter = 0;
    for (auto& s : v.slices) {
        for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = keyed_normal(seed, counter++, 0);
    }
    double estimate = 0.0;
    for (std::size_t it = 0; it < iterations; ++it) {
        const double norm = std::sqrt(u_inner(data, v, v));
        if (!(norm > 0.0)) break;
        for (auto& s : v.slices) s /= norm;
        AdaptedProcess hv = hessian_apply(data, tree_driver, v);
        estimate = std::max(estimate, u_inner(data, v, hv));
        v = std::move(hv);
    }
    return estimate;
}

GdResult gradient_descent(const ProblemData& data, const WienerDriver& driver,
                          const GdConfig& cfg, const GdReference* ref) {
    validate(data);
    const TimeGrid& g = data.grid;
    const FemSpace& space = data.fem();
    const double bound = kappa_bound(g.T, data.alpha);
    const double kappa = cfg.kappa > 0.0 ? cfg.kappa : bound;
    if (kappa < bound && !cfg.allow_small_kappa) {
        throw ConfigError("kappa " + std::to_string(kappa) + " is below the bound " +
                          std::to_string(bound) + "; set the override flag to use it");
    }
    const bool have_ref = ref != nullptr && ref->control != nullptr;
    const double contraction = 1.0 - 1.0 / kappa;
    const double c_state = state_error_constant(g.T);

    GdResult result;
    result.trace.kappa = kappa;
    result.control = cfg.u0 ? *cfg.u0 : zero_control(data, driver);
    check_layout(result.control, driver, data.dim(), 0, g.N - 1, "initial control");
    AdaptedProcess& u = result.control;

    double err0 = std::numeric_limits<double>::quiet_NaN();
    double prev_err = err0;
    double prev_cost = std::numeric_limits<double>::infinity();
    double prev_grad = std::numeric_limits<double>::infinity();
    std::size_t rising = 0;
    for (std::size_t it = 0; it <= cfg.max_iters; ++it) {
        AdaptedProcess x = solve_forward(data, driver, u);
        GdRecord rec;
        rec.iter = it;
        const CostValue c = cost(data, driver, x, u);
        rec.cost = c.value;
        rec.cost_stderr = c.std_error;
        const double lpow = std::pow(contraction, static_cast<double>(it));
        if (have_ref) {
            const AdaptedProcess du = difference(u, *ref->control);
            rec.err_to_ref = u_inner(data, du, du);
            if (it == 0) err0 = rec.err_to_ref;
            rec.ratio = it > 0 && prev_err > 0.0 ? rec.err_to_ref / prev_err : rec.ratio;
            rec.envelope = lpow * err0;
            prev_err = rec.err_to_ref;
            rec.cost_gap = c.value - ref->cost;
            if (it > 0) rec.gap_envelope = 2.0 * kappa * err0 / static_cast<double>(it);
            if (ref->state != nullptr) {
                double worst = 0.0;
                for (std::size_t n = 0; n <= g.N; ++n) {
                    Slice dx = x.at(n) - ref->state->at(n);
                    worst = std::max(worst, level_inner(space, dx, dx));
                }
                rec.state_err = worst;
                rec.state_envelope = c_state * lpow * err0;
            }
        }

        // Backward sweep; each Q(t_n) immediately turns into the update of U(t_n).
        double grad_sq = 0.0;
        double u_sq = 0.0;
        auto proj = make_projector(cfg.est, data, driver, &x);
        SweepRequest req;
        req.xi = &x;
        req.c_run = -g.tau;
        req.eta = &x.at(g.N);
        req.c_term = -data.alpha;
        req.keep_q = false;
        const auto& k = simd::active();
        req.q_sink = [&](std::size_t n, const Slice& q) {
            Slice& un = u.at(n);
            Slice grad(un.rows(), un.cols());
            k.axpby(grad.data(), 1.0, un.data(), -1.0, q.data(), static_cast<std::size_t>(grad.size()));
            grad_sq += g.tau * level_inner(space, grad, grad);
            u_sq += g.tau * level_inner(space, un, un);
            k.axpy(un.data(), -1.0 / kappa, grad.data(), static_cast<std::size_t>(un.size()));
        };
        backward_sweep(data, driver, *proj, req);
        rec.grad_norm = std::sqrt(grad_sq);
        result.trace.records.push_back(rec);

        if (!std::isfinite(c.value) || std::abs(c.value) > 1e150) {
            result.trace.diverging = true;
            result.trace.warnings.push_back("cost overflow at iteration " + std::to_string(it) +
                                            "; kappa is likely below the Hessian norm");
            break;
        }
        // Divergence grows cost and gradient together; estimator noise near the
        // optimum only wiggles the cost.
        const bool grew = c.value > prev_cost + 1e-13 * std::abs(prev_cost) && rec.grad_norm > prev_grad;
        rising = grew ? rising + 1 : 0;
        prev_cost = c.value;
        prev_grad = rec.grad_norm;
        if (rising >= 5 && !result.trace.diverging) {
            result.trace.diverging = true;
            result.trace.warnings.push_back("cost increased 5 iterations in a row at iteration " +
                                            std::to_string(it) +
                                            "; kappa is likely below the Hessian norm");
            std::cerr << "warning: " << result.trace.warnings.back() << '\n';
        }
        const double threshold = cfg.relative_tol ? cfg.tol_grad * std::sqrt(u_sq) : cfg.tol_grad;
        if (rec.grad_norm <= threshold) {
            result.trace.converged = true;
            break;
        }
    }
    result.state = solve_forward(data, driver, u);
    return result;
}

AdaptedProcess direct_solve(const ProblemData& data, const WienerDriver& tree_driver,
                            double rel_tol, CgInfo* info) {
    if (!tree_driver.is_tree()) throw ConfigError("direct_solve needs a tree driver");
    const TimeGrid& g = data.grid;
    std::size_t unknowns = 0;
    for (std::size_t n = 0; n < g.N; ++n) unknowns += data.dim() * tree_driver.scenarios(n);
    if (unknowns > 1000000) {
        throw ResourceError("direct_solve limited to 1e6 unknowns, got " + std::to_string(unknowns));
    }
    AdaptedProcess u = zero_control(data, tree_driver);
    // H is the gradient at U = 0.
    AdaptedProcess r = gradient(data, tree_driver, u, CondExpEstimator::tree_exact());
    for (auto& s : r.slices) s = -s;
    const double h_norm = std::sqrt(u_inner(data, r, r));
    CgInfo local;
    local.rhs_norm = h_norm;
    if (h_norm == 0.0) {
        if (info != nullptr) *info = local;
        return u;
    }
    AdaptedProcess p = r;
    double rr = h_norm * h_norm;
    const std::size_t max_it = 10 * unknowns;
    std::size_t it = 0;
    while (std::sqrt(rr) > rel_tol * h_norm) {
        if (it++ >= max_it) throw NumericError("conjugate gradients did not converge");
        const AdaptedProcess ap = hessian_apply(data, tree_driver, p);
        const double step = rr / u_inner(data, p, ap);
        axpy(u, step, p);
        axpy(r, -step, ap);
        const double rr_new = u_inner(data, r, r);
        const double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t n = 0; n < g.N; ++n) p.at(n) = r.at(n) + beta * p.at(n);
    }
    local.iterations = it;
    local.residual = std::sqrt(rr);
    if (info != nullptr) *info = local;
    return u;
}

}  // namespace slq
