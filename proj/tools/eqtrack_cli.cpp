// Command-line driver for the experiment harness.
#include "eqtrack/harness.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <exception>
#include <iomanip>
#include <iostream>

namespace h = eqtrack::harness;

namespace {

struct GlobalFlags {
    std::uint64_t seed = 123;
    std::string out_dir = "results";
    int replicates = 0;
    bool quick = false;
    int workers = 1;
};

void print_checks(const std::vector<h::AcceptanceRow>& rows) {
    for (const auto& r : rows)
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.check << "  measured=" << std::setprecision(6) << r.measured
                  << "  expected " << r.expected << '\n';
}

int run_one(h::ExperimentId id, const GlobalFlags& g) {
    h::ExperimentConfig cfg = h::ExperimentConfig::defaults(id, g.quick, g.seed);
    cfg.workers = g.workers;
    if (g.replicates > 0) cfg.replicates = g.replicates;
    const auto start = std::chrono::steady_clock::now();
    const h::ExperimentResult res = h::run_experiment(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string name(h::experiment_name(id));
    h::write_file(g.out_dir + "/" + name + ".csv", h::to_csv(res));
    h::write_file(g.out_dir + "/acceptance.csv", h::acceptance_csv(res.checks, g.quick));
    print_checks(res.checks);
    std::cout << name << ": " << (res.passed() ? "pass" : "FAIL") << " in " << std::setprecision(3) << secs
              << " s, " << res.failures << " replicate failures\n";
    return res.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Equilibrium tracking experiments for streaming covariance estimation"};
    app.require_subcommand(1);
    GlobalFlags g;
    app.add_option("--seed", g.seed, "base seed")->capture_default_str();
    app.add_option("--out-dir", g.out_dir, "directory for CSV output")->capture_default_str();
    app.add_option("--replicates", g.replicates, "override the replicate count")->check(CLI::PositiveNumber);
    app.add_flag("--quick", g.quick, "reduced grids, replicates / 10, tolerances x2");
    app.add_option("--workers", g.workers, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    app.fallthrough();

    std::vector<std::pair<CLI::App*, h::ExperimentId>> subs;
    for (h::ExperimentId id : h::all_experiments()) {
        std::string name(h::experiment_name(id));
        for (auto& c : name)
            if (c == '_') c = '-';
        subs.emplace_back(app.add_subcommand(name, "run the " + name + " experiment"), id);
    }
    CLI::App* all = app.add_subcommand("run-all", "run every experiment and write acceptance.csv");

    CLI11_PARSE(app, argc, argv);
    try {
        if (all->parsed()) {
            h::RunAllOptions opts;
            opts.quick = g.quick;
            opts.seed = g.seed;
            opts.out_dir = g.out_dir;
            opts.workers = g.workers;
            if (g.replicates > 0) opts.replicates = g.replicates;
            const auto start = std::chrono::steady_clock::now();
            const h::RunAllResult res = h::run_all(opts);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            print_checks(res.checks);
            std::cout << "run-all: " << (res.passed() ? "pass" : "FAIL") << " (" << res.checks.size()
                      << " checks) in " << std::setprecision(4) << secs << " s\n";
            return res.passed() ? 0 : 1;
        }
        for (const auto& [sub, id] : subs)
            if (sub->parsed()) return run_one(id, g);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
