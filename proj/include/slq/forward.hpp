#pragma once

// Problem data, adapted processes and the controlled forward scheme
//   X(t_{n+1}) = A0 [ X(t_n) + tau U(t_n) + (X(t_n) + R_h sigma(t_n)) Delta_{n+1} W ],
// with A0 = (M + tau A)^{-1} M.

#include "slq/mesh_fem.hpp"
#include "slq/noise.hpp"
#include "slq/types.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace slq {

using SpaceTimeFunction = std::function<double(double t, double x)>;

/// Continuous data of an experiment: initial datum and noise coefficient with
/// their x-derivatives (needed by the Ritz projection).
struct DataSpec {
    std::string name = "custom";
    RealFunction x0;
    RealFunction dx0;
    SpaceTimeFunction sigma;
    SpaceTimeFunction dsigma;
    /// L2 projection instead of the Ritz projection (additive-noise comparison mode).
    bool l2_projection = false;
};

/// X0(x) = a sin(pi x), sigma(t, x) = b exp(-t) sin(pi x).
DataSpec default_data(double x0_scale = 1.0, double sigma_scale = 1.0);
DataSpec zero_data();

/// Projection of x -> f(x) onto V_h following spec.l2_projection.
FemFunction project_data(const FemSpace& space, const DataSpec& spec, const RealFunction& f,
                         const RealFunction& df);
FemFunction project_sigma(const FemSpace& space, const DataSpec& spec, double t);

struct ProblemData {
    std::shared_ptr<const FemSpace> space;
    TimeGrid grid;
    double alpha = 0.0;
    FemFunction x0;                  // projected initial datum
    std::vector<FemFunction> sigma;  // projected sigma(t_n), n = 0..N
    DataSpec spec;

    [[nodiscard]] const FemSpace& fem() const { return *space; }
    [[nodiscard]] std::size_t dim() const { return space->dim(); }
};

ProblemData make_problem(std::shared_ptr<const FemSpace> space, const TimeGrid& grid,
                         double alpha, const DataSpec& spec);

/// Throws on negative alpha or arrays that do not match the space and grid.
void validate(const ProblemData& data);

/// V_h-valued process on time levels first..last. On a tree the level-n slice
/// has 2^n columns, so a value at time n can only depend on the first n
/// increments.
struct AdaptedProcess {
    std::size_t first = 0;
    std::vector<Slice> slices;

    [[nodiscard]] std::size_t last() const { return first + slices.size() - 1; }
    [[nodiscard]] bool empty() const { return slices.empty(); }
    [[nodiscard]] bool covers(std::size_t n) const {
        return !slices.empty() && n >= first && n <= last();
    }
    Slice& at(std::size_t n) { return slices.at(n - first); }
    [[nodiscard]] const Slice& at(std::size_t n) const { return slices.at(n - first); }

    static AdaptedProcess zeros(const WienerDriver& driver, std::size_t d, std::size_t first,
                                std::size_t last);
    /// Deterministic process: the same function in every scenario.
    static AdaptedProcess broadcast(const WienerDriver& driver, const std::vector<FemFunction>& f,
                                    std::size_t first);
};

/// Controls live on 0..N-1, states on 0..N.
AdaptedProcess zero_control(const ProblemData& data, const WienerDriver& driver);

/// Throws DimensionError unless `p` covers first..last with the driver's layout.
void check_layout(const AdaptedProcess& p, const WienerDriver& driver, std::size_t d,
                  std::size_t first, std::size_t last, const char* what);

/// The scheme with explicit initial value, control and noise coefficient;
/// a null control or sigma means zero.
AdaptedProcess forward_sweep(const FemSpace& space, const WienerDriver& driver,
                             const FemFunction& x0, const AdaptedProcess* control,
                             const std::vector<FemFunction>* sigma);

AdaptedProcess solve_forward(const ProblemData& data, const WienerDriver& driver,
                             const AdaptedProcess& control);

/// Homogeneous part: initial value only.
AdaptedProcess apply_Gamma(const ProblemData& data, const WienerDriver& driver);
/// Control-to-state part: zero initial value and noise coefficient.
AdaptedProcess apply_L(const ProblemData& data, const WienerDriver& driver,
                       const AdaptedProcess& control);
/// Noise-driven part: zero initial value and control.
AdaptedProcess compute_f(const ProblemData& data, const WienerDriver& driver);

/// E (a, b)_{L2} at one time level (mean over scenarios).
double level_inner(const FemSpace& space, const Slice& a, const Slice& b);
/// Per-scenario (a, b)_{L2} at one time level.
std::vector<double> column_inner(const FemSpace& space, const Slice& a, const Slice& b);

/// tau * sum_{n=0}^{N-1} E (a(t_n), b(t_n)).
double u_inner(const ProblemData& data, const AdaptedProcess& a, const AdaptedProcess& b);
/// tau * sum_{n=1}^{N} E (a(t_n), b(t_n)).
double x_inner(const ProblemData& data, const AdaptedProcess& a, const AdaptedProcess& b);

/// a <- a + c * b on the common time range.
void axpy(AdaptedProcess& a, double c, const AdaptedProcess& b);

}  // namespace slq
