#include "slq/experiments.hpp"

#include "slq/errors.hpp"
#include "slq/riccati.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace slq {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
    T out{};
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) {
        throw ConfigError("bad integer for " + key + ": '" + v + "'");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError("bad number for " + key + ": '" + v + "'");
    }
    return out;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_integer<std::size_t>(key, trim(item)));
    if (out.empty()) throw ConfigError("empty list for " + key);
    return out;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

DataSpec study_data(const ExperimentConfig& cfg) { return default_data(cfg.x0_scale, cfg.sigma_scale); }

/// Runs fn(i) for i < n on up to `workers` threads; rethrows the first error.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr err;
    auto body = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(mu);
                if (next >= n || err) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

struct KappaChoice {
    double kappa = 0.0;
    bool allow_small = false;
};

KappaChoice resolve_kappa(const ExperimentConfig& cfg, const ProblemData& data, StudyResult& res) {
    const double bound = kappa_bound(data.grid.T, data.alpha);
    if (cfg.kappa == "bound") return {bound, false};
    if (cfg.kappa == "power") {
        // The Hessian norm hardly depends on tau; estimate it on a shallow tree.
        const std::size_t n = std::min<std::size_t>(data.grid.N, 10);
        const ProblemData small = make_problem(data.space, make_time_grid(data.grid.T, n), data.alpha, data.spec);
        const double est = hessian_norm_estimate(small, WienerDriver::tree(small.grid));
        const bool seen = std::any_of(res.metrics.begin(), res.metrics.end(),
                                      [](const auto& m) { return m.first == "hessian_norm_estimate"; });
        if (!seen) res.metrics.emplace_back("hessian_norm_estimate", est);
        return {1.1 * est, true};
    }
    const double k = parse_double("kappa", cfg.kappa);
    if (k < bound) {
        res.warnings.push_back("kappa " + format_number(k) + " is below the bound " + format_number(bound));
    }
    return {k, true};
}

CondExpEstimator estimator_for(const WienerDriver& drv) {
    return drv.is_tree() ? CondExpEstimator::tree_exact() : CondExpEstimator::regression();
}

std::string estimator_name(const WienerDriver& drv) {
    return drv.is_tree() ? "tree_exact" : "regression(state modes 4, W, constant; ridge 1e-10)";
}

GdResult solve_gd(const ExperimentConfig& cfg, const ProblemData& data, const WienerDriver& drv,
                  const KappaChoice& kappa, StudyResult& res, const GdReference* ref = nullptr) {
    GdConfig g;
    g.kappa = kappa.kappa;
    g.allow_small_kappa = kappa.allow_small;
    g.max_iters = cfg.max_iters;
    g.tol_grad = cfg.tol_grad;
    g.relative_tol = !drv.is_tree();
    g.est = estimator_for(drv);
    GdResult r = gradient_descent(data, drv, g, ref);
    if (!r.trace.converged) {
        res.warnings.push_back("gradient descent did not converge for N=" + std::to_string(data.grid.N));
    }
    for (const auto& w : r.trace.warnings) res.warnings.push_back(w);
    return r;
}

/// Per-path discrete cost on an ensemble.
std::vector<double> path_costs(const ProblemData& data, const AdaptedProcess& x, const AdaptedProcess& u) {
    const TimeGrid& g = data.grid;
    const FemSpace& space = data.fem();
    std::vector<double> c(static_cast<std::size_t>(x.at(g.N).cols()), 0.0);
    for (std::size_t n = 0; n <= g.N; ++n) {
        if (n >= 1) {
            const auto v = column_inner(space, x.at(n), x.at(n));
            for (std::size_t p = 0; p < c.size(); ++p) c[p] += 0.5 * g.tau * v[p];
        }
        if (n < g.N) {
            const auto v = column_inner(space, u.at(n), u.at(n));
            for (std::size_t p = 0; p < c.size(); ++p) c[p] += 0.5 * g.tau * v[p];
        }
    }
    const auto v = column_inner(space, x.at(g.N), x.at(g.N));
    for (std::size_t p = 0; p < c.size(); ++p) c[p] += 0.5 * data.alpha * v[p];
    return c;
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
    MeanSe r;
    if (v.empty()) return r;
    for (double a : v) r.mean += a;
    r.mean /= static_cast<double>(v.size());
    if (v.size() < 2) return r;
    double ss = 0.0;
    for (double a : v) ss += (a - r.mean) * (a - r.mean);
    r.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    return r;
}

struct SpatialErrors {
    double control = 0.0;   // E int |U_ref - U_h|^2
    double state = 0.0;     // E int |X_ref - X_h|^2
    double state_h1 = 0.0;  // E int |grad (X_ref - X_h)|^2
};

/// Mean-square errors of one coarse level against the fine reference, with the
/// coarse functions prolongated onto the fine mesh.
SpatialErrors spatial_errors(const RiccatiSolution& sol_f, const FemSpace& fine,
                                         const FemFunction& x0_f, const RiccatiSolution& sol_c,
                                         const FemSpace& coarse, const FemFunction& x0_c) {
    const auto df = static_cast<Eigen::Index>(fine.dim());
    const auto dc = static_cast<Eigen::Index>(coarse.dim());
    const Eigen::Index n = df + dc;
    const auto cols = static_cast<Eigen::Index>(sol_f.nodes());
    auto stack = [&](const Matrix& a, const Matrix& b) {
        Matrix s(n, cols);
        s << a, b;
        return s;
    };
    const Matrix p = stack(sol_f.p, sol_c.p);
    const Matrix phi = stack(sol_f.phi, sol_c.phi);
    const Matrix sigma = stack(sol_f.sigma, sol_c.sigma);
    Vector lambda(n);
    lambda << sol_f.lambda, sol_c.lambda;
    ModalLoop loop{lambda, &p, &phi, &sigma, sol_f.T, sol_f.K};

    Vector m0(n);
    m0 << fine.to_modal(x0_f), coarse.to_modal(x0_c);
    const Matrix S0 = m0 * m0.transpose();

    // Fine-modal coefficients of the prolongated coarse modes.
    const Matrix B = fine.eigenvectors().transpose() * fine.mass().dense() *
                     prolongation_matrix(coarse, fine) * coarse.eigenvectors();
    const Matrix H = B.transpose() * B;
    // The energy form is diagonal in the fine eigenbasis.
    const Matrix LB = sol_f.lambda.asDiagonal() * B;
    const Matrix HL = B.transpose() * LB;

    auto integrand = [&](std::size_t node, const Vector& m, const Matrix& S, double* rates) {
        const auto col = static_cast<Eigen::Index>(node);
        const Eigen::ArrayXd pf = p.col(col).head(df).array(), pc = p.col(col).tail(dc).array();
        const Eigen::ArrayXd ff = phi.col(col).head(df).array(), fc = phi.col(col).tail(dc).array();
        const Eigen::ArrayXd mf = m.head(df).array(), mc = m.tail(dc).array();
        const auto Sff = S.topLeftCorner(df, df);
        const auto Sfc = S.topRightCorner(df, dc);
        const auto Scc = S.bottomRightCorner(dc, dc);
        // a = -p z - phi, so E[a a^T] = D S D + D m phi^T + phi m^T D + phi phi^T.
        const double a_ff = (pf.square() * Sff.diagonal().array() + 2.0 * pf * mf * ff + ff.square()).sum();
        const Vector pmf = (pf * mf).matrix(), pmc = (pc * mc).matrix();
        const double a_fc = (Sfc.array() * (pf.matrix() * pc.matrix().transpose()).array() * B.array()).sum() +
                            pmf.dot(B * fc.matrix()) + ff.matrix().dot(B * pmc) + ff.matrix().dot(B * fc.matrix());
        const double a_cc = (Scc.array() * (pc.matrix() * pc.matrix().transpose()).array() * H.array()).sum() +
                            2.0 * pmc.dot(H * fc.matrix()) + fc.matrix().dot(H * fc.matrix());
        rates[0] = a_ff - 2.0 * a_fc + a_cc;
        rates[1] = Sff.trace() - 2.0 * (Sfc.array() * B.array()).sum() + (Scc.array() * H.array()).sum();
        rates[2] = Sff.diagonal().dot(sol_f.lambda) - 2.0 * (Sfc.array() * LB.array()).sum() +
                   (Scc.array() * HL.array()).sum();
    };
    const MomentResult r = integrate_moments(loop, m0, S0, 3, integrand, false);
    return {r.integrals[0], r.integrals[1], r.integrals[2]};
}

std::vector<double> column_diff_norms(const FemSpace& space, const Slice& a, const Slice& b) {
    const Slice d = a - b;
    return column_inner(space, d, d);
}

}  // namespace

ExperimentConfig default_config(const std::string& study) {
    ExperimentConfig c;
    c.study = study;
    if (study == "spatial_rate") {
        c.mesh_levels = {8, 16, 32, 64};
        c.n_elems_ref = 256;
    } else if (study == "temporal_rate") {
        c.n_elems = 32;
        c.time_levels = {8, 16, 32, 64};
        c.time_steps_ref = 512;
        c.driver = "mc";
        c.paths = 10000;
        c.kappa = "power";
        c.tol_grad = 1e-8;
        c.max_iters = 200;
    } else if (study == "gd_convergence") {
        c.n_elems = 4;
        c.time_steps = 4;
        c.tol_grad = 1e-11;
    } else if (study == "riccati_crosscheck") {
        c.n_elems = 16;
        c.time_steps = 256;
        c.time_levels = {8, 16, 32, 64};
        c.driver = "mc";
        c.paths = 10000;
        c.kappa = "power";
        c.tol_grad = 1e-8;
        c.max_iters = 200;
    } else if (study == "adjoint_gap") {
        c.n_elems = 8;
        c.time_levels = {4, 6, 8, 10};
    } else {
        throw ConfigError("unknown study '" + study + "'");
    }
    return c;
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "study") {
        c.study = v;
    } else if (key == "T" || key == "horizon") {
        c.T = parse_double(key, v);
    } else if (key == "alpha") {
        c.alpha = parse_double(key, v);
    } else if (key == "mesh_levels") {
        c.mesh_levels = parse_list(key, v);
    } else if (key == "time_levels") {
        c.time_levels = parse_list(key, v);
    } else if (key == "n_elems") {
        c.n_elems = parse_integer<std::size_t>(key, v);
    } else if (key == "time_steps") {
        c.time_steps = parse_integer<std::size_t>(key, v);
    } else if (key == "n_elems_ref") {
        c.n_elems_ref = parse_integer<std::size_t>(key, v);
    } else if (key == "time_steps_ref") {
        c.time_steps_ref = parse_integer<std::size_t>(key, v);
    } else if (key == "driver") {
        c.driver = v;
    } else if (key == "paths") {
        c.paths = parse_integer<std::size_t>(key, v);
    } else if (key == "seed") {
        c.seed = parse_integer<std::uint64_t>(key, v);
    } else if (key == "kappa") {
        if (v != "bound" && v != "power") parse_double(key, v);
        c.kappa = v;
    } else if (key == "max_iters") {
        c.max_iters = parse_integer<std::size_t>(key, v);
    } else if (key == "tol_grad") {
        c.tol_grad = parse_double(key, v);
    } else if (key == "k_fine") {
        c.k_fine = parse_integer<std::size_t>(key, v);
    } else if (key == "x0_scale") {
        c.x0_scale = parse_double(key, v);
    } else if (key == "sigma_scale") {
        c.sigma_scale = parse_double(key, v);
    } else if (key == "workers") {
        c.workers = parse_integer<std::size_t>(key, v);
    } else if (key == "out") {
        c.out = v;
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

void parse_config(std::istream& in, ExperimentConfig& cfg) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        try {
            set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void parse_config_file(const std::filesystem::path& path, ExperimentConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    parse_config(in, cfg);
}

void validate_config(const ExperimentConfig& c) {
    const auto& names = study_names();
    if (std::find(names.begin(), names.end(), c.study) == names.end()) {
        throw ConfigError("unknown study '" + c.study + "'");
    }
    if (!(c.T > 0.0)) throw ConfigError("T must be positive");
    if (!(c.alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
    if (c.driver != "tree" && c.driver != "mc") throw ConfigError("driver must be tree or mc");
    if (c.paths < 1) throw ConfigError("paths must be positive");
    if (c.workers < 1) throw ConfigError("workers must be positive");
    if (c.k_fine < 1) throw ConfigError("k_fine must be positive");
    if (!(c.tol_grad > 0.0)) throw ConfigError("tol_grad must be positive");
    if (c.kappa != "bound" && c.kappa != "power" && !(parse_double("kappa", c.kappa) > 0.0)) {
        throw ConfigError("kappa must be positive");
    }
    auto ascending = [](const std::vector<std::size_t>& v, const char* what) {
        if (v.empty()) throw ConfigError(std::string(what) + " must not be empty");
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i] == 0) throw ConfigError(std::string(what) + " must be positive");
            if (i > 0 && v[i] <= v[i - 1]) throw ConfigError(std::string(what) + " must be strictly ascending");
        }
    };
    auto tree_depth = [&](std::size_t N) {
        if (N > kDefaultTreeCap) {
            throw ConfigError("tree depth " + std::to_string(N) + " exceeds the cap " +
                              std::to_string(kDefaultTreeCap));
        }
    };
    // Chains of common paths halve the step count.
    auto halving_chain = [](const std::vector<std::size_t>& levels, std::size_t top) {
        for (std::size_t N : levels) {
            if (N > top || top % N != 0 || !is_power_of_two(top / N)) {
                throw ConfigError("level " + std::to_string(N) + " is not " + std::to_string(top) +
                                  " halved a whole number of times");
            }
        }
    };
    if (c.study == "spatial_rate") {
        ascending(c.mesh_levels, "mesh_levels");
        const std::size_t ref = c.n_elems_ref ? c.n_elems_ref : 4 * c.mesh_levels.back();
        for (std::size_t n : c.mesh_levels) {
            if (n < 2 || ref % n != 0) {
                throw ConfigError("reference mesh " + std::to_string(ref) + " is not a refinement of " +
                                  std::to_string(n));
            }
        }
    } else if (c.study == "temporal_rate") {
        ascending(c.time_levels, "time_levels");
        if (c.driver != "mc") throw ConfigError("temporal_rate needs driver = mc");
        halving_chain(c.time_levels, c.time_steps_ref);
    } else if (c.study == "gd_convergence") {
        if (c.driver != "tree") throw ConfigError("gd_convergence needs driver = tree");
        tree_depth(c.time_steps);
    } else if (c.study == "riccati_crosscheck") {
        ascending(c.time_levels, "time_levels");
        if (c.driver == "tree") {
            tree_depth(c.time_steps);
            tree_depth(c.time_levels.back());
        } else {
            halving_chain(c.time_levels, c.time_levels.back());
        }
    } else if (c.study == "adjoint_gap") {
        ascending(c.time_levels, "time_levels");
        if (c.driver != "tree") throw ConfigError("adjoint_gap needs driver = tree");
        tree_depth(c.time_levels.back());
    }
    if (c.n_elems < 2) throw ConfigError("n_elems must be at least 2");
}

std::vector<std::pair<std::string, std::string>> config_echo(const ExperimentConfig& c) {
    return {{"study", c.study},
            {"T", format_number(c.T)},
            {"alpha", format_number(c.alpha)},
            {"mesh_levels", join(c.mesh_levels)},
            {"time_levels", join(c.time_levels)},
            {"n_elems", std::to_string(c.n_elems)},
            {"time_steps", std::to_string(c.time_steps)},
            {"n_elems_ref", std::to_string(c.n_elems_ref)},
            {"time_steps_ref", std::to_string(c.time_steps_ref)},
            {"driver", c.driver},
            {"paths", std::to_string(c.paths)},
            {"seed", std::to_string(c.seed)},
            {"kappa", c.kappa},
            {"max_iters", std::to_string(c.max_iters)},
            {"tol_grad", format_number(c.tol_grad)},
            {"k_fine", std::to_string(c.k_fine)},
            {"x0_scale", format_number(c.x0_scale)},
            {"sigma_scale", format_number(c.sigma_scale)},
            {"workers", std::to_string(c.workers)},
            {"out", c.out}};
}

double eoc(double e_coarse, double e_fine, double p_coarse, double p_fine) {
    if (!(e_coarse > 0.0) || !(e_fine > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return std::log(e_coarse / e_fine) / std::log(p_coarse / p_fine);
}

void RateTable::add(std::size_t level, double param, double error_sq, double error_sq_stderr) {
    RateRow r;
    r.level = level;
    r.param = param;
    r.error_sq = std::max(error_sq, 0.0);
    r.error = std::sqrt(r.error_sq);
    // delta method for the square root
    r.stderr_ = r.error > 0.0 ? error_sq_stderr / (2.0 * r.error) : 0.0;
    rows.push_back(r);
}

void RateTable::compute_eoc() {
    for (std::size_t k = 0; k < rows.size(); ++k) {
        rows[k].eoc = k == 0 ? std::numeric_limits<double>::quiet_NaN()
                             : eoc(rows[k - 1].error, rows[k].error, rows[k - 1].param, rows[k].param);
    }
}

std::string format_number(double v) {
    if (std::isnan(v)) return {};
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string RateTable::csv() const {
    std::string s = "level,param,error,error_sq,eoc,stderr\n";
    for (const auto& r : rows) {
        s += std::to_string(r.level) + ',' + format_number(r.param) + ',' + format_number(r.error) + ',' +
             format_number(r.error_sq) + ',' + format_number(r.eoc) + ',' + format_number(r.stderr_) + '\n';
    }
    return s;
}

std::string trace_csv(const GdTrace& trace) {
    std::string s = "iter,cost,grad_norm,err_to_ref,ratio,envelope\n";
    for (const auto& r : trace.records) {
        s += std::to_string(r.iter) + ',' + format_number(r.cost) + ',' + format_number(r.grad_norm) + ',' +
             format_number(r.err_to_ref) + ',' + format_number(r.ratio) + ',' + format_number(r.envelope) + '\n';
    }
    return s;
}

std::string trace_bounds_csv(const GdTrace& trace) {
    std::string s = "iter,cost_gap,gap_envelope,state_err,state_envelope\n";
    for (const auto& r : trace.records) {
        s += std::to_string(r.iter) + ',' + format_number(r.cost_gap) + ',' + format_number(r.gap_envelope) +
             ',' + format_number(r.state_err) + ',' + format_number(r.state_envelope) + '\n';
    }
    return s;
}

std::string crosscheck_csv(const std::vector<CrosscheckRow>& rows) {
    std::string s = "check,level,lhs,rhs,diff,stderr\n";
    for (const auto& r : rows) {
        s += r.check + ',' + std::to_string(r.level) + ',' + format_number(r.lhs) + ',' + format_number(r.rhs) +
             ',' + format_number(r.lhs - r.rhs) + ',' + format_number(r.stderr_) + '\n';
    }
    return s;
}

StudyResult run_spatial_rate(const ExperimentConfig& cfg) {
    validate_config(cfg);
    StudyResult res;
    res.study = cfg.study;
    res.estimator = "moment ODE (deterministic)";
    const DataSpec spec = study_data(cfg);
    const std::size_t n_ref = cfg.n_elems_ref ? cfg.n_elems_ref : 4 * cfg.mesh_levels.back();
    const auto fine = build_fem_space(n_ref);
    const RiccatiSolution sol_f = solve_riccati_system(*fine, spec, cfg.T, cfg.alpha, cfg.k_fine);
    const FemFunction x0_f = project_data(*fine, spec, spec.x0, spec.dx0);

    const std::size_t L = cfg.mesh_levels.size();
    std::vector<SpatialErrors> errs(L);
    parallel_for(L, cfg.workers, [&](std::size_t i) {
        const auto coarse = build_fem_space(cfg.mesh_levels[i]);
        const RiccatiSolution sol_c = solve_riccati_system(*coarse, spec, cfg.T, cfg.alpha, cfg.k_fine);
        const FemFunction x0_c = project_data(*coarse, spec, spec.x0, spec.dx0);
        errs[i] = spatial_errors(sol_f, *fine, x0_f, sol_c, *coarse, x0_c);
    });
    for (std::size_t i = 0; i < L; ++i) {
        const std::size_t n = cfg.mesh_levels[i];
        res.rates.add(n, 1.0 / static_cast<double>(n), errs[i].control);
        res.state_rates.add(n, 1.0 / static_cast<double>(n), errs[i].state);
        res.state_h1_rates.add(n, 1.0 / static_cast<double>(n), errs[i].state_h1);
    }
    res.rates.compute_eoc();
    res.state_rates.compute_eoc();
    res.state_h1_rates.compute_eoc();
    res.has_state_rates = true;
    res.metrics.emplace_back("n_elems_ref", static_cast<double>(n_ref));
    return res;
}

StudyResult run_temporal_rate(const ExperimentConfig& cfg) {
    validate_config(cfg);
    StudyResult res;
    res.study = cfg.study;
    const DataSpec spec = study_data(cfg);
    const auto space = build_fem_space(cfg.n_elems);
    const std::size_t n_ref = cfg.time_steps_ref;
    const std::size_t top = cfg.time_levels.back();

    // Common paths: every level sums the increments of the reference driver.
    const WienerDriver ref_drv =
        WienerDriver::gaussian(make_time_grid(cfg.T, n_ref), cfg.paths, cfg.seed, cfg.workers);
    std::map<std::size_t, WienerDriver> drivers;
    {
        WienerDriver cur = ref_drv;
        for (;;) {
            const std::size_t N = cur.grid().N;
            if (std::find(cfg.time_levels.begin(), cfg.time_levels.end(), N) != cfg.time_levels.end()) {
                drivers.emplace(N, cur);
            }
            if (N <= cfg.time_levels.front() || N % 2 != 0) break;
            cur = refine_common_path(cur);
        }
    }
    res.estimator = estimator_name(drivers.begin()->second);

    const ProblemData ref_data = make_problem(space, make_time_grid(cfg.T, n_ref), cfg.alpha, spec);
    const KappaChoice kappa = resolve_kappa(cfg, ref_data, res);
    res.metrics.emplace_back("kappa", kappa.kappa);

    // Reference solve, kept only on the nodes of the finest level.
    const std::size_t stride = n_ref / top;
    AdaptedProcess ref_u, ref_x;
    {
        GdResult r = solve_gd(cfg, ref_data, ref_drv, kappa, res);
        res.metrics.emplace_back("ref_iterations", static_cast<double>(r.trace.records.size() - 1));
        for (std::size_t n = 0; n <= top; ++n) {
            if (n < top) ref_u.slices.push_back(std::move(r.control.at(n * stride)));
            ref_x.slices.push_back(std::move(r.state.at(n * stride)));
        }
    }

    for (std::size_t N : cfg.time_levels) {
        const WienerDriver& drv = drivers.at(N);
        const ProblemData data = make_problem(space, drv.grid(), cfg.alpha, spec);
        const std::size_t step = top / N;
        std::vector<double> eu(cfg.paths, 0.0);
        MeanSe worst;
        if (N == n_ref) {
            // the reference itself
        } else {
            const GdResult r = solve_gd(cfg, data, drv, kappa, res);
            for (std::size_t n = 0; n < N; ++n) {
                const auto d = column_diff_norms(*space, r.control.at(n), ref_u.at(n * step));
                for (std::size_t p = 0; p < eu.size(); ++p) eu[p] += data.grid.tau * d[p];
            }
            for (std::size_t n = 1; n <= N; ++n) {
                const MeanSe e = mean_se(column_diff_norms(*space, r.state.at(n), ref_x.at(n * step)));
                if (e.mean > worst.mean) worst = e;
            }
        }
        const MeanSe u = mean_se(eu);
        res.rates.add(N, data.grid.tau, u.mean, u.se);
        res.state_rates.add(N, data.grid.tau, worst.mean, worst.se);
    }
    res.rates.compute_eoc();
    res.state_rates.compute_eoc();
    res.has_state_rates = true;
    return res;
}

StudyResult run_gd_convergence(const ExperimentConfig& cfg) {
    validate_config(cfg);
    StudyResult res;
    res.study = cfg.study;
    const ProblemData data =
        make_problem(build_fem_space(cfg.n_elems), make_time_grid(cfg.T, cfg.time_steps), cfg.alpha, study_data(cfg));
    const WienerDriver drv = WienerDriver::tree(data.grid);
    res.estimator = estimator_name(drv);
    CgInfo info;
    const AdaptedProcess u_star = direct_solve(data, drv, 1e-14, &info);
    const AdaptedProcess x_star = solve_forward(data, drv, u_star);
    const GdReference ref{&u_star, &x_star, reduced_cost(data, drv, u_star).value};
    const KappaChoice kappa = resolve_kappa(cfg, data, res);
    const GdResult r = solve_gd(cfg, data, drv, kappa, res, &ref);

    double sup = 0.0;
    for (std::size_t n = 0; n < data.grid.N; ++n) {
        sup = std::max(sup, (r.control.at(n) - u_star.at(n)).cwiseAbs().maxCoeff());
    }
    double c_fit = 0.0;
    for (const auto& rec : r.trace.records) {
        if (rec.envelope > 0.0 && std::isfinite(rec.state_err)) c_fit = std::max(c_fit, rec.state_err / rec.envelope);
    }
    res.trace = r.trace;
    res.has_trace = true;
    res.metrics.emplace_back("kappa", r.trace.kappa);
    res.metrics.emplace_back("kappa_bound", kappa_bound(cfg.T, cfg.alpha));
    res.metrics.emplace_back("sup_diff_to_direct_solve", sup);
    res.metrics.emplace_back("direct_solve_cg_iterations", static_cast<double>(info.iterations));
    res.metrics.emplace_back("optimal_cost", ref.cost);
    res.metrics.emplace_back("fitted_state_constant", c_fit);
    res.metrics.emplace_back("state_constant_bound", state_error_constant(cfg.T));
    res.metrics.emplace_back("converged", r.trace.converged ? 1.0 : 0.0);
    res.metrics.emplace_back("diverging", r.trace.diverging ? 1.0 : 0.0);
    return res;
}

StudyResult run_riccati_crosscheck(const ExperimentConfig& cfg) {
    validate_config(cfg);
    StudyResult res;
    res.study = cfg.study;
    const DataSpec spec = study_data(cfg);
    const auto space = build_fem_space(cfg.n_elems);
    const RiccatiSolution sol = solve_riccati_system(*space, spec, cfg.T, cfg.alpha, cfg.k_fine);
    const FemFunction x0 = project_data(*space, spec, spec.x0, spec.dx0);
    const double v = value_function(sol, *space, x0);
    const double cm = cost_from_moments(sol, *space, x0);
    res.crosscheck.push_back({"value_vs_moments", 0, v, cm, 0.0});
    res.metrics.emplace_back("value_vs_moments_rel", std::abs(v - cm) / std::max(std::abs(cm), 1e-300));

    auto make_driver = [&](const TimeGrid& g) {
        return cfg.driver == "tree" ? WienerDriver::tree(g)
                                    : WienerDriver::gaussian(g, cfg.paths, cfg.seed, cfg.workers);
    };
    {
        const ProblemData data = make_problem(space, make_time_grid(cfg.T, cfg.time_steps), cfg.alpha, spec);
        const WienerDriver drv = make_driver(data.grid);
        res.estimator = estimator_name(drv);
        const FeedbackRollout fb = feedback_rollout(sol, data, drv);
        const CostValue c = cost(data, drv, fb.state, fb.control);
        res.crosscheck.push_back({"value_vs_feedback", cfg.time_steps, v, c.value, c.std_error});
        if (c.std_error > 0.0) res.metrics.emplace_back("value_vs_feedback_z", (v - c.value) / c.std_error);
        res.metrics.emplace_back("value_vs_feedback_rel", std::abs(v - c.value) / std::abs(c.value));
    }

    // Feedback cost against the discrete optimum on the same driver.
    std::map<std::size_t, WienerDriver> drivers;
    if (cfg.driver == "mc") {
        WienerDriver cur = make_driver(make_time_grid(cfg.T, cfg.time_levels.back()));
        for (;;) {
            drivers.emplace(cur.grid().N, cur);
            if (cur.grid().N <= cfg.time_levels.front()) break;
            cur = refine_common_path(cur);
        }
    }
    double prev_gap = std::numeric_limits<double>::infinity();
    bool monotone = true;
    for (std::size_t N : cfg.time_levels) {
        const ProblemData data = make_problem(space, make_time_grid(cfg.T, N), cfg.alpha, spec);
        const WienerDriver drv = cfg.driver == "tree" ? WienerDriver::tree(data.grid) : drivers.at(N);
        const FeedbackRollout fb = feedback_rollout(sol, data, drv);
        double j_opt = 0.0, se = 0.0;
        if (drv.is_tree()) {
            j_opt = reduced_cost(data, drv, direct_solve(data, drv)).value;
        } else {
            const KappaChoice kappa = resolve_kappa(cfg, data, res);
            const GdResult r = solve_gd(cfg, data, drv, kappa, res);
            const auto a = path_costs(data, fb.state, fb.control);
            const auto b = path_costs(data, r.state, r.control);
            std::vector<double> diff(a.size());
            for (std::size_t p = 0; p < a.size(); ++p) diff[p] = a[p] - b[p];
            se = mean_se(diff).se;
            j_opt = mean_se(b).mean;
        }
        const double j_fb = cost(data, drv, fb.state, fb.control).value;
        res.crosscheck.push_back({"feedback_vs_optimal", N, j_fb, j_opt, se});
        const double gap = std::abs(j_fb - j_opt);
        if (!(gap < prev_gap)) monotone = false;
        prev_gap = gap;
    }
    res.metrics.emplace_back("feedback_gap_monotone", monotone ? 1.0 : 0.0);
    return res;
}

StudyResult run_adjoint_gap(const ExperimentConfig& cfg) {
    validate_config(cfg);
    StudyResult res;
    res.study = cfg.study;
    res.estimator = "tree_exact";
    const DataSpec spec = study_data(cfg);
    const auto space = build_fem_space(cfg.n_elems);
    std::vector<double> gaps(cfg.time_levels.size());
    parallel_for(gaps.size(), cfg.workers, [&](std::size_t i) {
        const std::size_t N = cfg.time_levels[i];
        const ProblemData data = make_problem(space, make_time_grid(cfg.T, N), cfg.alpha, spec);
        const WienerDriver drv = WienerDriver::tree(data.grid);
        // the uncontrolled state
        const AdaptedProcess x = solve_forward(data, drv, zero_control(data, drv));
        const AdjointOutput out = implicit_euler_bsde(data, drv, x, CondExpEstimator::tree_exact());
        double worst = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const Slice d = out.y0.at(n) - out.q.at(n);
            worst = std::max(worst, level_inner(*space, d, d));
        }
        gaps[i] = worst;
    });
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        const std::size_t N = cfg.time_levels[i];
        res.rates.add(N, cfg.T / static_cast<double>(N), gaps[i]);
    }
    res.rates.compute_eoc();
    return res;
}

StudyResult run_study(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    StudyResult r;
    if (cfg.study == "spatial_rate") {
        r = run_spatial_rate(cfg);
    } else if (cfg.study == "temporal_rate") {
        r = run_temporal_rate(cfg);
    } else if (cfg.study == "gd_convergence") {
        r = run_gd_convergence(cfg);
    } else if (cfg.study == "riccati_crosscheck") {
        r = run_riccati_crosscheck(cfg);
    } else if (cfg.study == "adjoint_gap") {
        r = run_adjoint_gap(cfg);
    } else {
        throw ConfigError("unknown study '" + cfg.study + "'");
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

std::string manifest_json(const ExperimentConfig& cfg, const StudyResult& res) {
    nlohmann::ordered_json j;
    j["study"] = res.study;
    nlohmann::ordered_json c = nlohmann::ordered_json::object();
    for (const auto& [k, v] : config_echo(cfg)) c[k] = v;
    j["config"] = c;
    j["versions"] = {{"slq", "0.1.0"},
                     {"compiler", __VERSION__},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                   "." + std::to_string(EIGEN_MINOR_VERSION)}};
    j["estimator"] = res.estimator;
    j["wall_time_s"] = res.wall_seconds;
    nlohmann::ordered_json m = nlohmann::ordered_json::object();
    for (const auto& [k, v] : res.metrics) {
        if (std::isfinite(v)) {
            m[k] = v;
        } else {
            m[k] = nullptr;
        }
    }
    j["metrics"] = m;
    j["warnings"] = res.warnings;
    return j.dump(2) + "\n";
}

void write_outputs(const ExperimentConfig& cfg, const StudyResult& res, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto put = [&](const std::string& name, const std::string& text) {
        const auto target = dir / name;
        const auto tmp = dir / (name + ".tmp");
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw ConfigError("cannot write " + tmp.string());
            out << text;
            if (!out.flush()) throw ConfigError("cannot write " + tmp.string());
        }
        std::filesystem::rename(tmp, target);
    };
    if (!res.rates.rows.empty()) put("rates.csv", res.rates.csv());
    if (res.has_state_rates) put("rates_state.csv", res.state_rates.csv());
    if (!res.state_h1_rates.rows.empty()) put("rates_state_h1.csv", res.state_h1_rates.csv());
    if (res.has_trace) {
        put("trace.csv", trace_csv(res.trace));
        put("trace_bounds.csv", trace_bounds_csv(res.trace));
    }
    if (!res.crosscheck.empty()) put("crosscheck.csv", crosscheck_csv(res.crosscheck));
    put("manifest.json", manifest_json(cfg, res));
}

}  // namespace slq
