#include "slq/adjoint.hpp"

#include "slq/errors.hpp"
#include "slq/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace slq {

RegressionFit::RegressionFit(const Slice& features, double ridge,
                             std::size_t min_samples_per_feature)
    : features_(&features) {
    const auto& k = simd::active();
    const auto nf = features.rows();
    const auto samples = static_cast<std::size_t>(features.cols());
    if (!(ridge >= 0.0)) throw ConfigError("ridge must be nonnegative");
    if (nf < 1) throw ConfigError("regression needs at least one feature");
    if (samples < min_samples_per_feature * static_cast<std::size_t>(nf)) {
        throw ConfigError("regression needs at least " + std::to_string(min_samples_per_feature) +
                          " samples per feature, got " + std::to_string(samples) + " for " +
                          std::to_string(nf) + " features");
    }
    const double inv = 1.0 / static_cast<double>(samples);
    gram_.resize(nf, nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
        for (Eigen::Index b = 0; b <= a; ++b) {
            const double g = k.dot(features.row(a).data(), features.row(b).data(), samples) * inv;
            gram_(a, b) = g;
            gram_(b, a) = g;
        }
        gram_(a, a) += ridge;
    }
    solver_.compute(gram_);
    const Vector diag = solver_.vectorD();
    const double dmax = diag.cwiseAbs().maxCoeff();
    const double dmin = diag.minCoeff();
    if (solver_.info() != Eigen::Success || !(dmin > 1e-14 * dmax)) {
        throw NumericError("regression normal equations are singular; use a positive ridge");
    }
}

Matrix RegressionFit::coefficients(const Slice& targets) const {
    const auto& k = simd::active();
    const auto samples = static_cast<std::size_t>(features_->cols());
    if (static_cast<std::size_t>(targets.cols()) != samples) {
        throw DimensionError("regression targets and features differ in sample count");
    }
    const double inv = 1.0 / static_cast<double>(samples);
    Matrix rhs(features_->rows(), targets.rows());
    for (Eigen::Index a = 0; a < features_->rows(); ++a) {
        for (Eigen::Index i = 0; i < targets.rows(); ++i) {
            rhs(a, i) = k.dot(features_->row(a).data(), targets.row(i).data(), samples) * inv;
        }
    }
    return solver_.solve(rhs).transpose();
}

Slice RegressionFit::fitted(const Slice& targets) const {
    return evaluate(coefficients(targets), *features_);
}

Slice RegressionFit::evaluate(const Matrix& coeffs, const Slice& features) {
    const auto& k = simd::active();
    if (coeffs.cols() != features.rows()) throw DimensionError("coefficient/feature mismatch");
    const auto samples = static_cast<std::size_t>(features.cols());
    Slice out(coeffs.rows(), features.cols());
    for (Eigen::Index i = 0; i < coeffs.rows(); ++i) {
        double* o = out.row(i).data();
        k.axpby(o, coeffs(i, 0), features.row(0).data(), 0.0, features.row(0).data(), samples);
        for (Eigen::Index a = 1; a < features.rows(); ++a) {
            k.axpy(o, coeffs(i, a), features.row(a).data(), samples);
        }
    }
    return out;
}

Slice regression_condexp(const Slice& features, const Slice& targets, double ridge,
                         std::size_t min_samples_per_feature) {
    const RegressionFit fit(features, ridge, min_samples_per_feature);
    return fit.fitted(targets);
}

namespace {

Slice build_features(const CondExpEstimator& est, const ProblemData& data,
                     const WienerDriver& driver, const AdaptedProcess* feature_state,
                     std::size_t n, const std::vector<double>* w);

class TreeProjector final : public Projector {
public:
    explicit TreeProjector(const WienerDriver& driver) : driver_(driver) {}

    void project(std::size_t n, const Slice& w, Slice* plain, Slice* weighted) override {
        const auto& k = simd::active();
        const std::size_t half = driver_.scenarios(n);
        const auto& inc = driver_.increments(n + 1);
        const double wa = 0.5 * (1.0 + inc[0]);
        const double wb = 0.5 * (1.0 + inc[half]);
        const auto rows = w.rows();
        const auto cols = static_cast<Eigen::Index>(half);
        if (plain != nullptr) plain->resize(rows, cols);
        if (weighted != nullptr) weighted->resize(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            const double* a = w.row(i).data();
            const double* b = a + half;
            if (plain != nullptr) k.axpby(plain->row(i).data(), 0.5, a, 0.5, b, half);
            if (weighted != nullptr) k.axpby(weighted->row(i).data(), wa, a, wb, b, half);
        }
    }

private:
    const WienerDriver& driver_;
};

class RegressionProjector final : public Projector {
public:
    RegressionProjector(const CondExpEstimator& est, const ProblemData& data,
                        const WienerDriver& driver, const AdaptedProcess* state)
        : est_(est), data_(data), driver_(driver), state_(state) {
        if (est_.basis == CondExpEstimator::Basis::StateModes && est_.brownian_feature) {
            // running sums once per sweep instead of once per level
            brownian_.resize(data.grid.N + 1);
            brownian_[0].assign(driver.scenarios(0), 0.0);
            for (std::size_t n = 1; n <= data.grid.N; ++n) {
                const auto& inc = driver.increments(n);
                brownian_[n].resize(inc.size());
                for (std::size_t p = 0; p < inc.size(); ++p) brownian_[n][p] = brownian_[n - 1][p] + inc[p];
            }
        }
    }

    void project(std::size_t n, const Slice& w, Slice* plain, Slice* weighted) override {
        const auto& k = simd::active();
        const Slice features = build_features(est_, data_, driver_, state_, n,
                                              brownian_.empty() ? nullptr : &brownian_[n]);
        const RegressionFit fit(features, est_.ridge, est_.min_samples_per_feature);
        if (plain != nullptr) *plain = fit.fitted(w);
        if (weighted != nullptr) {
            const auto& inc = driver_.increments(n + 1);
            Slice scaled(w.rows(), w.cols());
            const auto cols = static_cast<std::size_t>(w.cols());
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                k.one_plus_mul(scaled.row(i).data(), w.row(i).data(), inc.data(), cols);
            }
            *weighted = fit.fitted(scaled);
        }
    }

private:
    CondExpEstimator est_;
    const ProblemData& data_;
    const WienerDriver& driver_;
    const AdaptedProcess* state_;
    std::vector<std::vector<double>> brownian_;
};

Slice build_features(const CondExpEstimator& est, const ProblemData& data,
                     const WienerDriver& driver, const AdaptedProcess* feature_state,
                     std::size_t n, const std::vector<double>* w) {
    const auto& k = simd::active();
    if (driver.is_tree()) throw ConfigError("regression estimators need an ensemble driver");
    const std::size_t paths = driver.scenarios(n);
    if (est.basis == CondExpEstimator::Basis::Indicator) {
        // Paths are tree leaves; the F_n class of path p is p mod 2^n.
        const std::size_t classes = std::size_t{1} << n;
        Slice f = Slice::Zero(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(paths));
        for (std::size_t p = 0; p < paths; ++p) {
            f(0, static_cast<Eigen::Index>(p)) = 1.0;
            const std::size_t c = p % classes;
            if (c > 0) f(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p)) = 1.0;
        }
        return f;
    }
    if (feature_state == nullptr || !feature_state->covers(n)) {
        throw ConfigError("state-mode regression needs a feature state at every level");
    }
    const FemSpace& space = data.fem();
    const std::size_t modes = std::min(est.n_modes, space.dim());
    const std::size_t nf = modes + (est.brownian_feature ? 1 : 0) + 1;
    Slice f(static_cast<Eigen::Index>(nf), static_cast<Eigen::Index>(paths));
    const Slice& x = feature_state->at(n);
    for (std::size_t j = 0; j < modes; ++j) {
        // modal coefficient v_j^T M x as a weighted sum of state rows
        const Vector mv = space.apply_mass(space.eigenvectors().col(static_cast<Eigen::Index>(j)));
        double* row = f.row(static_cast<Eigen::Index>(j)).data();
        std::fill(row, row + paths, 0.0);
        for (Eigen::Index i = 0; i < x.rows(); ++i) k.axpy(row, mv[i], x.row(i).data(), paths);
    }
    std::size_t next = modes;
    if (est.brownian_feature) {
        std::copy(w->begin(), w->end(), f.row(static_cast<Eigen::Index>(next)).data());
        ++next;
    }
    f.row(static_cast<Eigen::Index>(next)).setOnes();
    return f;
}

}  // namespace

Slice regression_features(const CondExpEstimator& est, const ProblemData& data,
                          const WienerDriver& driver, const AdaptedProcess* feature_state,
                          std::size_t n) {
    const std::vector<double> w = driver.brownian(n);
    return build_features(est, data, driver, feature_state, n, &w);
}

std::unique_ptr<Projector> make_projector(const CondExpEstimator& est, const ProblemData& data,
                                          const WienerDriver& driver,
                                          const AdaptedProcess* feature_state) {
    if (est.kind == CondExpEstimator::Kind::TreeExact) {
        if (!driver.is_tree()) throw ConfigError("exact conditional expectations need a tree driver");
        return std::make_unique<TreeProjector>(driver);
    }
    if (driver.is_tree()) throw ConfigError("regression estimators need an ensemble driver");
    return std::make_unique<RegressionProjector>(est, data, driver, feature_state);
}

SweepResult backward_sweep(const ProblemData& data, const WienerDriver& driver,
                           Projector& projector, const SweepRequest& req) {
    const auto& k = simd::active();
    const FemSpace& space = data.fem();
    const TimeGrid& g = data.grid;
    const std::size_t d = space.dim();
    const double tau = g.tau;
    if (req.xi != nullptr) check_layout(*req.xi, driver, d, 1, g.N, "backward xi");

    const auto dd = static_cast<Eigen::Index>(d);
    Slice y;
    if (req.eta != nullptr) {
        if (req.eta->rows() != dd ||
            static_cast<std::size_t>(req.eta->cols()) != driver.scenarios(g.N)) {
            throw DimensionError("terminal field shape");
        }
        y = req.c_term * (*req.eta);
    } else {
        y = Slice::Zero(dd, static_cast<Eigen::Index>(driver.scenarios(g.N)));
    }

    SweepResult out;
    if (req.keep_q) {
        out.q.first = 0;
        out.q.slices.resize(g.N);
    }
    if (req.keep_z) {
        out.z.first = 0;
        out.z.slices.resize(g.N);
    }
    if (req.keep_y) {
        out.y.first = 0;
        out.y.slices.resize(g.N + 1);
        out.y.slices[g.N] = y;
    }

    Slice plain;
    Slice weighted;
    for (std::size_t n = g.N; n-- > 0;) {
        Slice& w = y;  // reused in place: W = Y(t_{n+1}) + c_run xi(t_{n+1})
        if (req.xi != nullptr && req.c_run != 0.0) {
            k.axpy(w.data(), req.c_run, req.xi->at(n + 1).data(), static_cast<std::size_t>(w.size()));
        }
        projector.project(n, w, &plain, &weighted);
        if (req.keep_z) {
            Slice z(plain.rows(), plain.cols());
            k.axpby(z.data(), 1.0 / tau, weighted.data(), -1.0 / tau, plain.data(),
                    static_cast<std::size_t>(z.size()));
            out.z.slices[n] = std::move(z);
        }
        a0_apply_rows(space, tau, plain);
        if (req.q_sink) req.q_sink(n, plain);
        if (req.keep_q) out.q.slices[n] = plain;
        a0_apply_rows(space, tau, weighted);
        y.swap(weighted);
        if (req.keep_y) out.y.slices[n] = y;
    }
    return out;
}

AdaptedProcess k_htau(const ProblemData& data, const WienerDriver& driver,
                      const AdaptedProcess& state, const CondExpEstimator& est) {
    check_layout(state, driver, data.dim(), 0, data.grid.N, "k_htau state");
    auto proj = make_projector(est, data, driver, &state);
    SweepRequest req;
    req.xi = &state;
    req.c_run = -data.grid.tau;
    req.eta = &state.at(data.grid.N);
    req.c_term = -data.alpha;
    return backward_sweep(data, driver, *proj, req).q;
}

AdjointOutput implicit_euler_bsde(const ProblemData& data, const WienerDriver& driver,
                                  const AdaptedProcess& state, const CondExpEstimator& est) {
    check_layout(state, driver, data.dim(), 0, data.grid.N, "implicit_euler_bsde state");
    auto proj = make_projector(est, data, driver, &state);
    SweepRequest req;
    req.xi = &state;
    req.c_run = -data.grid.tau;
    req.eta = &state.at(data.grid.N);
    req.c_term = -data.alpha;
    req.keep_y = true;
    req.keep_z = true;
    SweepResult r = backward_sweep(data, driver, *proj, req);
    return AdjointOutput{std::move(r.q), std::move(r.y), std::move(r.z)};
}

AdaptedProcess apply_L_adjoint(const ProblemData& data, const WienerDriver& driver,
                               const AdaptedProcess& xi, const CondExpEstimator& est,
                               const AdaptedProcess* feature_state) {
    auto proj = make_projector(est, data, driver, feature_state != nullptr ? feature_state : &xi);
    SweepRequest req;
    req.xi = &xi;
    req.c_run = data.grid.tau;
    return backward_sweep(data, driver, *proj, req).q;
}

AdaptedProcess apply_Lhat_adjoint(const ProblemData& data, const WienerDriver& driver,
                                  const Slice& eta, const CondExpEstimator& est,
                                  const AdaptedProcess* feature_state) {
    auto proj = make_projector(est, data, driver, feature_state);
    SweepRequest req;
    req.eta = &eta;
    req.c_term = 1.0;
    return backward_sweep(data, driver, *proj, req).q;
}

}  // namespace slq
