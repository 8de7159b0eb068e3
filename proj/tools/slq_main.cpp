#include "slq/errors.hpp"
#include "slq/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

void print_table(const char* title, const slq::RateTable& t) {
    std::cout << title << '\n' << t.csv();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic LQ control of the 1D heat equation: convergence studies"};
    std::string study;
    std::string config_path;
    std::optional<std::string> n_elems, time_steps, driver, paths, seed, alpha, horizon, kappa, max_iters, out;
    std::optional<std::string> workers;
    std::string names;
    for (const auto& s : slq::study_names()) names += (names.empty() ? "" : "|") + s;
    app.add_option("study", study, names)->required()->check(CLI::IsMember(slq::study_names()));
    app.add_option("--config", config_path, "flat key = value file")->check(CLI::ExistingFile);
    app.add_option("--n-elems", n_elems, "number of elements");
    app.add_option("--time-steps", time_steps, "number of time steps");
    app.add_option("--driver", driver, "tree|mc")->check(CLI::IsMember({"tree", "mc"}));
    app.add_option("--paths", paths, "Monte Carlo paths");
    app.add_option("--seed", seed, "random seed");
    app.add_option("--alpha", alpha, "terminal weight");
    app.add_option("--horizon", horizon, "time horizon T");
    app.add_option("--kappa", kappa, "bound|power|number");
    app.add_option("--max-iters", max_iters, "gradient descent iteration cap");
    app.add_option("--workers", workers, "worker threads (outputs do not depend on it)");
    app.add_option("--out", out, "output directory");
    CLI11_PARSE(app, argc, argv);

    try {
        slq::ExperimentConfig cfg = slq::default_config(study);
        if (!config_path.empty()) slq::parse_config_file(config_path, cfg);
        if (cfg.study != study) {
            throw slq::ConfigError("config file is for study '" + cfg.study + "', not '" + study + "'");
        }
        const std::pair<const char*, const std::optional<std::string>*> overrides[] = {
            {"n_elems", &n_elems}, {"time_steps", &time_steps}, {"driver", &driver},
            {"paths", &paths},     {"seed", &seed},             {"alpha", &alpha},
            {"T", &horizon},       {"kappa", &kappa},           {"max_iters", &max_iters},
            {"workers", &workers}, {"out", &out}};
        for (const auto& [key, value] : overrides) {
            if (value->has_value()) slq::set_config_value(cfg, key, **value);
        }
        slq::validate_config(cfg);
        const slq::StudyResult r = slq::run_study(cfg);
        slq::write_outputs(cfg, r, cfg.out);
        if (!r.rates.rows.empty()) print_table("rates", r.rates);
        if (r.has_state_rates) print_table("state rates", r.state_rates);
        if (!r.state_h1_rates.rows.empty()) print_table("state rates, energy norm", r.state_h1_rates);
        if (r.has_trace) {
            std::cout << "trace: " << r.trace.records.size() << " records, "
                      << (r.trace.converged ? "converged" : "not converged") << '\n';
        }
        if (!r.crosscheck.empty()) std::cout << slq::crosscheck_csv(r.crosscheck);
        for (const auto& [k, v] : r.metrics) std::cout << k << " = " << slq::format_number(v) << '\n';
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
        std::cout << "wall time " << r.wall_seconds << " s, outputs in " << cfg.out << '\n';
    } catch (const slq::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const slq::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
