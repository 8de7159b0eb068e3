#pragma once

// Study harness: configuration, rate tables and the five study types, plus
// deterministic CSV/JSON output.

#include "slq/optimizer.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace slq {

inline const std::vector<std::string>& study_names() {
    static const std::vector<std::string> names{"spatial_rate", "temporal_rate", "gd_convergence",
                                                "riccati_crosscheck", "adjoint_gap"};
    return names;
}

struct ExperimentConfig {
    std::string study;
    double T = 1.0;
    double alpha = 1.0;
    std::vector<std::size_t> mesh_levels;
    std::vector<std::size_t> time_levels;
    std::size_t n_elems = 32;
    std::size_t time_steps = 16;
    std::size_t n_elems_ref = 0;  // 0 selects 4x the finest mesh level
    std::size_t time_steps_ref = 512;
    std::string driver = "tree";  // tree | mc
    std::size_t paths = 10000;
    std::uint64_t seed = 1;
    std::string kappa = "bound";  // bound | power | a number
    std::size_t max_iters = 500;
    double tol_grad = 1e-10;  // absolute on trees, relative to |U| on ensembles
    std::size_t k_fine = 1024;
    double x0_scale = 1.0;
    double sigma_scale = 1.0;
    std::size_t workers = 1;
    std::string out = "out";
};

/// Defaults of each study (the desk-scale runs the rate claims refer to).
ExperimentConfig default_config(const std::string& study);

/// Sets one key from its text value; ConfigError on unknown keys or bad values.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Flat `key = value` lines; `#` starts a comment. Keys apply on top of `cfg`.
void parse_config(std::istream& in, ExperimentConfig& cfg);
void parse_config_file(const std::filesystem::path& path, ExperimentConfig& cfg);

/// Levels sorted ascending and unique, tree depth within the cap, and so on.
void validate_config(const ExperimentConfig& cfg);

/// key/value pairs in a fixed order, as written to the manifest.
std::vector<std::pair<std::string, std::string>> config_echo(const ExperimentConfig& cfg);

struct RateRow {
    std::size_t level = 0;  // n_elems or N
    double param = 0.0;     // h or tau
    double error = 0.0;
    double error_sq = 0.0;
    double eoc = std::numeric_limits<double>::quiet_NaN();
    double stderr_ = 0.0;  // standard error of `error`; zero for deterministic rows
};

/// EOC of row k+1 is log(e_k / e_{k+1}) / log(param_k / param_{k+1}).
struct RateTable {
    std::vector<RateRow> rows;

    /// Appends a row from a mean-square error and its standard error.
    void add(std::size_t level, double param, double error_sq, double error_sq_stderr = 0.0);
    void compute_eoc();
    [[nodiscard]] std::string csv() const;
};

double eoc(double e_coarse, double e_fine, double p_coarse, double p_fine);

struct CrosscheckRow {
    std::string check;
    std::size_t level = 0;
    double lhs = 0.0;
    double rhs = 0.0;
    double stderr_ = 0.0;
};

struct StudyResult {
    std::string study;
    RateTable rates;        // rates.csv
    RateTable state_rates;  // rates_state.csv (spatial and temporal studies)
    bool has_state_rates = false;
    RateTable state_h1_rates;  // rates_state_h1.csv (spatial study, energy norm)
    GdTrace trace;  // trace.csv (gd_convergence)
    bool has_trace = false;
    std::vector<CrosscheckRow> crosscheck;  // crosscheck.csv
    std::vector<std::pair<std::string, double>> metrics;
    std::vector<std::string> warnings;
    std::string estimator;
    double wall_seconds = 0.0;
};

StudyResult run_spatial_rate(const ExperimentConfig& cfg);
StudyResult run_temporal_rate(const ExperimentConfig& cfg);
StudyResult run_gd_convergence(const ExperimentConfig& cfg);
StudyResult run_riccati_crosscheck(const ExperimentConfig& cfg);
StudyResult run_adjoint_gap(const ExperimentConfig& cfg);

/// Dispatches on cfg.study and fills the wall time.
StudyResult run_study(const ExperimentConfig& cfg);

/// Shortest round-trip decimal form; empty for NaN.
std::string format_number(double v);

std::string trace_csv(const GdTrace& trace);
std::string trace_bounds_csv(const GdTrace& trace);
std::string crosscheck_csv(const std::vector<CrosscheckRow>& rows);
std::string manifest_json(const ExperimentConfig& cfg, const StudyResult& result);

/// Writes every output of the study into `dir`, each file atomically.
void write_outputs(const ExperimentConfig& cfg, const StudyResult& result,
                   const std::filesystem::path& dir);

}  // namespace slq
