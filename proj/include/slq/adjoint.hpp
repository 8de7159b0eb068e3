#pragma once

// Backward recursions for the discrete adjoint K, the implicit-Euler BSDE and
// the adjoints of the control-to-state maps.
//
// All of them share one sweep. Starting from Y(t_N) = c_term * eta it sets
//   W       = Y(t_{n+1}) + c_run * xi(t_{n+1})
//   Q(t_n)  = A0 E[W | F_n]
//   Y(t_n)  = A0 E[(1 + Delta_{n+1} W) W | F_n]
//   Z(t_n)  = E[Delta_{n+1} W * W | F_n] / tau
// so that Y(t_n) - Q(t_n) = tau A0 Z(t_n). K X is Q with xi = X, c_run = -tau,
// c_term = -alpha, eta = X(t_N); Y and Z are then the implicit-Euler BSDE pair.

#include "slq/forward.hpp"

#include <Eigen/Cholesky>

#include <cstddef>
#include <functional>
#include <memory>

namespace slq {

struct CondExpEstimator {
    enum class Kind { TreeExact, Regression };
    enum class Basis {
        StateModes,  // lowest modal coefficients of the state, W(t_n), constant
        Indicator,   // constant plus indicators of the tree classes of F_n
    };

    Kind kind = Kind::TreeExact;
    Basis basis = Basis::StateModes;
    std::size_t n_modes = 4;
    bool brownian_feature = true;
    double ridge = 1e-10;
    std::size_t min_samples_per_feature = 10;

    static CondExpEstimator tree_exact() { return {}; }
    static CondExpEstimator regression(Basis basis = Basis::StateModes, double ridge = 1e-10) {
        CondExpEstimator e;
        e.kind = Kind::Regression;
        e.basis = basis;
        e.ridge = ridge;
        return e;
    }
};

/// Ridge least-squares fit of targets (rows) on features (rows, one column
/// per sample). The Gram matrix is normalized by the sample count.
class RegressionFit {
public:
    /// Throws ConfigError with fewer than min_samples * k samples, and
    /// NumericError if the normal equations are singular.
    RegressionFit(const Slice& features, double ridge, std::size_t min_samples_per_feature = 10);

    /// Coefficients (targets x features) of the best fit of `targets`.
    [[nodiscard]] Matrix coefficients(const Slice& targets) const;
    /// Fitted values at the training features, which must outlive the fit.
    [[nodiscard]] Slice fitted(const Slice& targets) const;
    /// Evaluates a fit on arbitrary features.
    [[nodiscard]] static Slice evaluate(const Matrix& coeffs, const Slice& features);

    [[nodiscard]] std::size_t n_features() const { return static_cast<std::size_t>(features_->rows()); }

private:
    const Slice* features_;
    Matrix gram_;
    Eigen::LDLT<Matrix> solver_;
};

/// One-shot version of RegressionFit.
Slice regression_condexp(const Slice& features, const Slice& targets, double ridge,
                         std::size_t min_samples_per_feature = 10);

/// Projects level-(n+1) values onto F_n.
class Projector {
public:
    virtual ~Projector() = default;
    /// plain = E[w | F_n], weighted = E[(1 + Delta_{n+1} W) w | F_n]; either
    /// output may be null.
    virtual void project(std::size_t n, const Slice& w, Slice* plain, Slice* weighted) = 0;
};

/// Regression estimators with the StateModes basis take their features from
/// `feature_state` (levels 0..N-1).
std::unique_ptr<Projector> make_projector(const CondExpEstimator& est, const ProblemData& data,
                                          const WienerDriver& driver,
                                          const AdaptedProcess* feature_state);

/// Feature rows at level n for a regression estimator.
Slice regression_features(const CondExpEstimator& est, const ProblemData& data,
                          const WienerDriver& driver, const AdaptedProcess* feature_state,
                          std::size_t n);

struct SweepRequest {
    const AdaptedProcess* xi = nullptr;  // read on 1..N
    double c_run = 0.0;
    const Slice* eta = nullptr;  // terminal field at level N
    double c_term = 0.0;
    bool keep_q = true;
    bool keep_y = false;
    bool keep_z = false;
    /// Called with Q(t_n) for n = N-1 down to 0 before it is stored.
    std::function<void(std::size_t, const Slice&)> q_sink;
};

struct SweepResult {
    AdaptedProcess q;  // 0..N-1
    AdaptedProcess y;  // 0..N
    AdaptedProcess z;  // 0..N-1
};

SweepResult backward_sweep(const ProblemData& data, const WienerDriver& driver,
                           Projector& projector, const SweepRequest& request);

/// (K X)(t_n), n = 0..N-1.
AdaptedProcess k_htau(const ProblemData& data, const WienerDriver& driver,
                      const AdaptedProcess& state, const CondExpEstimator& est);

struct AdjointOutput {
    AdaptedProcess q;
    AdaptedProcess y0;
    AdaptedProcess zbar0;
};

/// K X together with the implicit-Euler pair (Y0, Zbar0).
AdjointOutput implicit_euler_bsde(const ProblemData& data, const WienerDriver& driver,
                                  const AdaptedProcess& state, const CondExpEstimator& est);

/// L* xi on 0..N-1 for xi on 1..N.
AdaptedProcess apply_L_adjoint(const ProblemData& data, const WienerDriver& driver,
                               const AdaptedProcess& xi, const CondExpEstimator& est,
                               const AdaptedProcess* feature_state = nullptr);

/// Lhat* eta on 0..N-1 for a level-N field eta.
AdaptedProcess apply_Lhat_adjoint(const ProblemData& data, const WienerDriver& driver,
                                  const Slice& eta, const CondExpEstimator& est,
                                  const AdaptedProcess* feature_state = nullptr);

}  // namespace slq
