#pragma once

// Reduced cost, its gradient U - K S(U), gradient descent with step 1/kappa
// and a conjugate-gradient solve of the optimality system on trees.

#include "slq/adjoint.hpp"
#include "slq/forward.hpp"

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace slq {

struct CostValue {
    double value = 0.0;
    double std_error = 0.0;  // Monte Carlo standard error; zero on trees
};

/// J = 1/2 (|X|^2 + |U|^2) + alpha/2 E|X(T)|^2 with the discrete norms.
CostValue cost(const ProblemData& data, const WienerDriver& driver, const AdaptedProcess& state,
               const AdaptedProcess& control);

/// Reduced cost of a control (forward solve included).
CostValue reduced_cost(const ProblemData& data, const WienerDriver& driver,
                       const AdaptedProcess& control);

/// U - K S(U). The forward state is returned through `state` when given.
AdaptedProcess gradient(const ProblemData& data, const WienerDriver& driver,
                        const AdaptedProcess& control, const CondExpEstimator& est,
                        AdaptedProcess* state = nullptr);

/// Upper bound 1 + alpha T e^T + T^2 e^T for the norm of the Hessian.
double kappa_bound(double T, double alpha);

/// Constant bounding max_n E|(L V)(t_n)|^2 by |V|^2, namely T e^T.
double state_error_constant(double T);

/// Power iteration for the largest eigenvalue of the Hessian on a tree.
double hessian_norm_estimate(const ProblemData& data, const WienerDriver& tree_driver,
                             std::size_t iterations = 30, std::uint64_t seed = 7);

struct GdConfig {
    double kappa = 0.0;  // <= 0 selects kappa_bound(T, alpha)
    bool allow_small_kappa = false;
    std::size_t max_iters = 500;
    double tol_grad = 1e-10;
    bool relative_tol = false;  // stop on |grad| <= tol * |U| instead
    CondExpEstimator est;
    std::optional<AdaptedProcess> u0;
};

/// Reference optimum used only for the diagnostics in the trace.
struct GdReference {
    const AdaptedProcess* control = nullptr;
    const AdaptedProcess* state = nullptr;
    double cost = std::numeric_limits<double>::quiet_NaN();
};

struct GdRecord {
    std::size_t iter = 0;
    double cost = 0.0;
    double cost_stderr = 0.0;
    double grad_norm = 0.0;
    double err_to_ref = std::numeric_limits<double>::quiet_NaN();  // |U - U*|^2
    double ratio = std::numeric_limits<double>::quiet_NaN();       // err_l / err_{l-1}
    double envelope = std::numeric_limits<double>::quiet_NaN();    // (1-1/kappa)^l err_0
    double cost_gap = std::numeric_limits<double>::quiet_NaN();
    double gap_envelope = std::numeric_limits<double>::quiet_NaN();  // 2 kappa err_0 / l
    double state_err = std::numeric_limits<double>::quiet_NaN();     // max_n E|X - X*|^2
    double state_envelope = std::numeric_limits<double>::quiet_NaN();
};

struct GdTrace {
    double kappa = 0.0;
    std::vector<GdRecord> records;
    bool converged = false;
    bool diverging = false;
    std::vector<std::string> warnings;
};

struct GdResult {
    AdaptedProcess control;
    AdaptedProcess state;
    GdTrace trace;
};

/// Iterates U <- U - (1/kappa)(U - K S(U)) until the gradient is small. The
/// returned state belongs to the returned control.
GdResult gradient_descent(const ProblemData& data, const WienerDriver& driver,
                          const GdConfig& cfg, const GdReference* reference = nullptr);

struct CgInfo {
    std::size_t iterations = 0;
    double residual = 0.0;
    double rhs_norm = 0.0;
};

/// Solves (1 + L*L + alpha Lhat*Lhat) U = -H on a tree by conjugate gradients.
AdaptedProcess direct_solve(const ProblemData& data, const WienerDriver& tree_driver,
                            double rel_tol = 1e-13, CgInfo* info = nullptr);

}  // namespace slq
