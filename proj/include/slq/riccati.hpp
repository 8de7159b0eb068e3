#pragma once

// Riccati feedback for the semidiscrete problem. In the M-orthonormal
// eigenbasis the Riccati operator stays diagonal, so each mode solves
//   p' = p^2 + (2 lambda - 1) p - 1,          p(T) = alpha,
//   phi' = (lambda + p) phi - p sigma,         phi(T) = 0,
// and the optimal feedback is u = -p x - phi.
//
// The modes are stiff (lambda grows like 12/h^2), so all integrators here are
// exponential RK4 (ETDRK4) schemes: the constant diagonal part is solved
// exactly, including its action on the forcing.

#include "slq/forward.hpp"
#include "slq/mesh_fem.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace slq {

/// Eigen-coefficients of the projected noise coefficient at time t.
using ModalSigma = std::function<Vector(double t)>;

ModalSigma modal_sigma(const FemSpace& space, const DataSpec& spec);

struct RiccatiSolution {
    double T = 0.0;
    double alpha = 0.0;
    std::size_t K = 0;  // fine steps; trajectories live on the 2K+1 half-step nodes
    Vector lambda;
    Matrix p;      // modes x (2K+1)
    Matrix phi;    // modes x (2K+1)
    Matrix sigma;  // modes x (2K+1), eigen-coefficients of R_h sigma
    std::vector<double> value_integral;  // fine nodes 0..K

    [[nodiscard]] std::size_t nodes() const { return 2 * K + 1; }
    [[nodiscard]] double half_step() const { return T / static_cast<double>(2 * K); }
    [[nodiscard]] double time(std::size_t j) const {
        return j == 2 * K ? T : static_cast<double>(j) * half_step();
    }
    /// Linear interpolation in time; ConfigError outside [0, T].
    [[nodiscard]] Vector p_at(double t) const;
    [[nodiscard]] Vector phi_at(double t) const;
};

/// Single mode on `steps` uniform steps; entry j is p(j T / steps).
std::vector<double> solve_mode_riccati(double lambda, double T, double alpha, std::size_t steps);

/// p part only (phi and sigma zero).
RiccatiSolution solve_riccati(const FemSpace& space, double T, double alpha, std::size_t K_fine);

/// Fills phi, sigma and the value integral of an existing p part.
void solve_phi(RiccatiSolution& sol, const ModalSigma& sigma);

/// Both parts for given data.
RiccatiSolution solve_riccati_system(const FemSpace& space, const DataSpec& spec, double T,
                                     double alpha, std::size_t K_fine);

/// Nodal coefficients of -P(t) x - phi(t).
FemFunction feedback_control(const RiccatiSolution& sol, const FemSpace& space,
                             const FemFunction& x, double t);

struct FeedbackRollout {
    AdaptedProcess state;    // 0..N
    AdaptedProcess control;  // 0..N-1
};

/// The forward scheme on `driver` with U(t_n) = -P(t_n) X(t_n) - phi(t_n).
/// The solution must share the horizon of data.grid.
FeedbackRollout feedback_rollout(const RiccatiSolution& sol, const ProblemData& data,
                                 const WienerDriver& driver);

/// V(0, X0) = 1/2 (P X0, X0) + (phi, X0) + r(0), where r is the remaining
/// integral 1/2 int ((P sigma, sigma) - |phi|^2).
double value_function(const RiccatiSolution& sol, const FemSpace& space, const FemFunction& x0);

/// Diagonal linear closed loop dz = [-(lambda + p) z - phi] dt + (z + sigma) dW
/// in modal coordinates, with p, phi, sigma sampled on the half-step nodes.
struct ModalLoop {
    Vector lambda;
    const Matrix* p = nullptr;
    const Matrix* phi = nullptr;
    const Matrix* sigma = nullptr;
    double T = 0.0;
    std::size_t K = 0;
};

/// Extra scalar integrands evaluated at (half-step node, mean, second moment).
using MomentIntegrand =
    std::function<void(std::size_t node, const Vector& m, const Matrix& S, double* rates)>;

struct MomentResult {
    Matrix m;               // modes x (K+1), filled when trajectories are kept
    std::vector<Matrix> S;  // per fine node, filled when trajectories are kept
    Vector m_final;
    Matrix S_final;
    std::vector<double> integrals;
};

/// Forward integration of the mean and second moment of the closed loop.
MomentResult integrate_moments(const ModalLoop& loop, const Vector& m0, const Matrix& S0,
                               std::size_t n_integrals, const MomentIntegrand& integrand,
                               bool keep_trajectory);

struct MomentTrajectory {
    Matrix m;
    std::vector<Matrix> S;
    double running_cost = 0.0;  // 1/2 int (tr S + E|U|^2)
    double terminal_cost = 0.0; // alpha/2 tr S(T)
    [[nodiscard]] double cost() const { return running_cost + terminal_cost; }
};

MomentTrajectory closed_loop_moments(const RiccatiSolution& sol, const FemSpace& space,
                                     const FemFunction& x0, bool keep_trajectory = false);

double cost_from_moments(const RiccatiSolution& sol, const FemSpace& space, const FemFunction& x0);

/// Classical RK4 on the full nodal-coordinate matrix equation
///   P' + P Delta_h + Delta_h P + P + 1 - P^2 = 0,   P(T) = alpha;
/// entry j is P at t = j T / K_fine. Test scale only (d <= 64).
std::vector<Matrix> solve_riccati_dense(const FemSpace& space, double T, double alpha,
                                        std::size_t K_fine);

/// Positive root of p^2 + (2 lambda - 1) p - 1 = 0.
double riccati_stationary(double lambda);

}  // namespace slq
