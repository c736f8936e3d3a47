#include "safeopt/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace safeopt;

namespace {

constexpr int exit_config = 2;
constexpr int exit_runtime = 3;

int report_errors(const std::vector<exp::RunOutcome>& runs) {
    int code = 0;
    for (const auto& r : runs)
        if (!r.trace.error.empty()) {
            std::cerr << "error (" << r.algorithm << "): " << r.trace.error << "\n";
            code = exit_runtime;
        }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Safe Bayesian optimization benchmarks"};
    std::string command, config_path, out_dir = "out";
    std::optional<std::uint64_t> seed;
    unsigned jobs = 1;
    app.add_option("command", command, "quad | pid | compare | sweep | gp-check")
        ->required()
        ->check(CLI::IsMember({"quad", "pid", "compare", "sweep", "gp-check"}));
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "override the configured seed");
    app.add_option("--jobs", jobs, "parallel sweep cells")->check(CLI::PositiveNumber);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_config;
    }

    const fs::path out(out_dir);
    if (command == "gp-check") {
        const auto rep = exp::gp_check(seed.value_or(0));
        exp::json j{{"instances", rep.instances},
                    {"max_mean_rel_error", rep.max_mean_error},
                    {"max_variance_rel_error", rep.max_variance_error},
                    {"max_virtual_abs_error", rep.max_virtual_error},
                    {"pass", rep.pass()}};
        fs::create_directories(out);
        exp::write_file(out / "gp_check.json", j.dump(2) + "\n");
        std::cout << j.dump(2) << "\n";
        return rep.pass() ? 0 : exit_runtime;
    }

    if (config_path.empty()) {
        std::cerr << "--config is required for '" << command << "'\n";
        return exit_config;
    }
    exp::RunConfig cfg;
    try {
        std::vector<std::string> needs;
        if (command == "compare") needs.push_back("grid");
        if (command == "sweep") needs.push_back("sweep");
        cfg = exp::load_config(config_path, needs);
        if ((command == "quad" || command == "pid") && exp::benchmark_name(cfg.benchmark) != command)
            throw exp::ConfigError(config_path + ": field 'benchmark': expected \"" + command + "\" for this command");
    } catch (const exp::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return exit_config;
    }
    if (seed) exp::set_seed(cfg, *seed);

    try {
        if (command == "quad" || command == "pid") {
            const auto o = exp::run_config(cfg);
            exp::write_run_outputs(out, cfg, o);
            const auto s = exp::summary_json(cfg, o);
            std::cout << "iterations " << o.trace.iterations() << ", stop " << o.trace.stop_reason
                      << ", final objective " << s["final_true_objective"].dump() << ", true violations "
                      << o.true_violations << "\n";
            return report_errors({o});
        }
        if (command == "compare") {
            const auto runs = exp::compare(cfg);
            std::vector<exp::SummaryRow> rows;
            for (const auto& r : runs) {
                exp::write_run_outputs(out / r.algorithm, cfg, r);
                rows.push_back(exp::summary_row(cfg, r));
            }
            std::ostringstream os;
            exp::write_summary_csv(os, rows, cfg.dim());
            exp::write_file(out / "compare.csv", os.str());
            std::cout << os.str();
            return report_errors(runs);
        }
        // sweep
        const auto cells = exp::sweep_cells(cfg);
        const auto runs = exp::sweep(cfg, jobs);
        std::vector<exp::SummaryRow> rows;
        for (std::size_t i = 0; i < runs.size(); ++i) {
            exp::write_run_outputs(out / ("cell_" + std::to_string(i)), cells[i], runs[i]);
            rows.push_back(exp::summary_row(cells[i], runs[i]));
        }
        std::ostringstream os;
        exp::write_summary_csv(os, rows, cfg.dim());
        exp::write_file(out / "sweep.csv", os.str());
        std::cout << os.str();
        return report_errors(runs);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_runtime;
    }
}
