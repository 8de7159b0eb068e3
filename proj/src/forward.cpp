#include "slq/forward.hpp"

#include "slq/errors.hpp"
#include "slq/kernels.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace slq {

DataSpec default_data(double x0_scale, double sigma_scale) {
    constexpr double pi = std::numbers::pi;
    DataSpec s;
    s.name = "sine";
    s.x0 = [x0_scale](double x) { return x0_scale * std::sin(pi * x); };
    s.dx0 = [x0_scale](double x) { return x0_scale * pi * std::cos(pi * x); };
    s.sigma = [sigma_scale](double t, double x) {
        return sigma_scale * std::exp(-t) * std::sin(pi * x);
    };
    s.dsigma = [sigma_scale](double t, double x) {
        return sigma_scale * std::exp(-t) * pi * std::cos(pi * x);
    };
    return s;
}

DataSpec zero_data() {
    DataSpec s;
    s.name = "zero";
    s.x0 = [](double) { return 0.0; };
    s.dx0 = [](double) { return 0.0; };
    s.sigma = [](double, double) { return 0.0; };
    s.dsigma = [](double, double) { return 0.0; };
    return s;
}

FemFunction project_data(const FemSpace& space, const DataSpec& spec, const RealFunction& f,
                         const RealFunction& df) {
    return spec.l2_projection ? l2_project(space, f) : ritz_project(space, f, df);
}

FemFunction project_sigma(const FemSpace& space, const DataSpec& spec, double t) {
    return project_data(
        space, spec, [&](double x) { return spec.sigma(t, x); },
        [&](double x) { return spec.dsigma(t, x); });
}

ProblemData make_problem(std::shared_ptr<const FemSpace> space, const TimeGrid& grid,
                         double alpha, const DataSpec& spec) {
    if (!space) throw ConfigError("problem needs a finite element space");
    ProblemData d;
    d.space = std::move(space);
    d.grid = grid;
    d.alpha = alpha;
    d.spec = spec;
    d.x0 = project_data(*d.space, spec, spec.x0, spec.dx0);
    d.sigma.reserve(grid.N + 1);
    for (std::size_t n = 0; n <= grid.N; ++n) {
        d.sigma.push_back(project_sigma(*d.space, spec, grid.node(n)));
    }
    validate(d);
    return d;
}

void validate(const ProblemData& data) {
    if (!data.space) throw ConfigError("problem needs a finite element space");
    if (!(data.alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
    const auto d = static_cast<Eigen::Index>(data.dim());
    if (data.x0.size() != d) throw DimensionError("initial value does not match the space");
    if (data.sigma.size() != data.grid.N + 1) {
        throw DimensionError("sigma needs one entry per time node");
    }
    for (const auto& s : data.sigma) {
        if (s.size() != d) throw DimensionError("sigma does not match the space");
    }
}

AdaptedProcess AdaptedProcess::zeros(const WienerDriver& driver, std::size_t d,
                                     std::size_t first, std::size_t last) {
    AdaptedProcess p;
    p.first = first;
    for (std::size_t n = first; n <= last; ++n) {
        p.slices.push_back(Slice::Zero(static_cast<Eigen::Index>(d),
                                       static_cast<Eigen::Index>(driver.scenarios(n))));
    }
    return p;
}

AdaptedProcess AdaptedProcess::broadcast(const WienerDriver& driver,
                                         const std::vector<FemFunction>& f, std::size_t first) {
    AdaptedProcess p;
    p.first = first;
    for (std::size_t k = 0; k < f.size(); ++k) {
        const auto s = static_cast<Eigen::Index>(driver.scenarios(first + k));
        p.slices.push_back(f[k].replicate(1, s));
    }
    return p;
}

AdaptedProcess zero_control(const ProblemData& data, const WienerDriver& driver) {
    return AdaptedProcess::zeros(driver, data.dim(), 0, data.grid.N - 1);
}

void check_layout(const AdaptedProcess& p, const WienerDriver& driver, std::size_t d,
                  std::size_t first, std::size_t last, const char* what) {
    if (!p.covers(first) || !p.covers(last)) {
        throw DimensionError(std::string(what) + ": process does not cover levels " +
                             std::to_string(first) + ".." + std::to_string(last));
    }
    for (std::size_t n = first; n <= last; ++n) {
        const Slice& s = p.at(n);
        if (static_cast<std::size_t>(s.rows()) != d ||
            static_cast<std::size_t>(s.cols()) != driver.scenarios(n)) {
            throw DimensionError(std::string(what) + ": slice shape mismatch at level " +
                                 std::to_string(n));
        }
    }
}

AdaptedProcess forward_sweep(const FemSpace& space, const WienerDriver& driver,
                             const FemFunction& x0, const AdaptedProcess* control,
                             const std::vector<FemFunction>* sigma) {
    const auto& k = simd::active();
    const TimeGrid& g = driver.grid();
    const std::size_t d = space.dim();
    if (static_cast<std::size_t>(x0.size()) != d) throw DimensionError("initial value size");
    if (control != nullptr) check_layout(*control, driver, d, 0, g.N - 1, "forward control");
    if (sigma != nullptr && sigma->size() < g.N) throw DimensionError("sigma length");

    AdaptedProcess x;
    x.first = 0;
    x.slices.reserve(g.N + 1);
    x.slices.push_back(x0.replicate(1, static_cast<Eigen::Index>(driver.scenarios(0))));
    std::vector<double> zero_row;
    for (std::size_t n = 0; n < g.N; ++n) {
        const Slice& prev = x.slices[n];
        const std::size_t sp = driver.scenarios(n);
        const std::size_t sc = driver.scenarios(n + 1);
        const std::vector<double>& inc = driver.increments(n + 1);
        if (control == nullptr && zero_row.size() < sp) zero_row.assign(sp, 0.0);
        Slice next(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(sc));
        for (std::size_t i = 0; i < d; ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            const double s = sigma != nullptr ? (*sigma)[n][row] : 0.0;
            const double* u = control != nullptr ? control->at(n).row(row).data() : zero_row.data();
            for (std::size_t off = 0; off < sc; off += sp) {
                k.forward_combine(next.row(row).data() + off, prev.row(row).data(), u,
                                  inc.data() + off, g.tau, s, sp);
            }
        }
        a0_apply_rows(space, g.tau, next);
        x.slices.push_back(std::move(next));
    }
    return x;
}

AdaptedProcess solve_forward(const ProblemData& data, const WienerDriver& driver,
                             const AdaptedProcess& control) {
    return forward_sweep(data.fem(), driver, data.x0, &control, &data.sigma);
}

AdaptedProcess apply_Gamma(const ProblemData& data, const WienerDriver& driver) {
    return forward_sweep(data.fem(), driver, data.x0, nullptr, nullptr);
}

AdaptedProcess apply_L(const ProblemData& data, const WienerDriver& driver,
                       const AdaptedProcess& control) {
    const FemFunction zero = FemFunction::Zero(static_cast<Eigen::Index>(data.dim()));
    return forward_sweep(data.fem(), driver, zero, &control, nullptr);
}

AdaptedProcess compute_f(const ProblemData& data, const WienerDriver& driver) {
    const FemFunction zero = FemFunction::Zero(static_cast<Eigen::Index>(data.dim()));
    return forward_sweep(data.fem(), driver, zero, nullptr, &data.sigma);
}

double level_inner(const FemSpace& space, const Slice& a, const Slice& b) {
    const auto& k = simd::active();
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("level_inner shapes");
    Slice mb;
    apply_tridiag_rows(space.mass(), b, mb);
    const auto cols = static_cast<std::size_t>(a.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) total += k.dot(a.row(i).data(), mb.row(i).data(), cols);
    return total / static_cast<double>(cols);
}

std::vector<double> column_inner(const FemSpace& space, const Slice& a, const Slice& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("column_inner shapes");
    Slice mb;
    apply_tridiag_rows(space.mass(), b, mb);
    std::vector<double> out(static_cast<std::size_t>(a.cols()), 0.0);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double* x = a.row(i).data();
        const double* y = mb.row(i).data();
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += x[c] * y[c];
    }
    return out;
}

double u_inner(const ProblemData& data, const AdaptedProcess& a, const AdaptedProcess& b) {
    double total = 0.0;
    for (std::size_t n = 0; n < data.grid.N; ++n) total += level_inner(data.fem(), a.at(n), b.at(n));
    return data.grid.tau * total;
}

double x_inner(const ProblemData& data, const AdaptedProcess& a, const AdaptedProcess& b) {
    double total = 0.0;
    for (std::size_t n = 1; n <= data.grid.N; ++n) total += level_inner(data.fem(), a.at(n), b.at(n));
    return data.grid.tau * total;
}

void axpy(AdaptedProcess& a, double c, const AdaptedProcess& b) {
    const auto& k = simd::active();
    for (std::size_t n = std::max(a.first, b.first); n <= std::min(a.last(), b.last()); ++n) {
        Slice& x = a.at(n);
        const Slice& y = b.at(n);
        k.axpy(x.data(), c, y.data(), static_cast<std::size_t>(x.size()));
    }
}

}  // namespace slq
