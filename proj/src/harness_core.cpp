#include "harness_internal.hpp"

#include "eqtrack/types.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace eqtrack::harness {

namespace {

struct NameEntry {
    ExperimentId id;
    std::string_view name;
};

constexpr NameEntry kNames[] = {
    {ExperimentId::Audit, "audit"},
    {ExperimentId::ScalarOrder, "scalar_order"},
    {ExperimentId::CorrectorOrder, "corrector_order"},
    {ExperimentId::Damping, "damping"},
    {ExperimentId::GaussTrack, "gauss_track"},
    {ExperimentId::Transfer, "transfer"},
    {ExperimentId::CgAblation, "cg_ablation"},
    {ExperimentId::Isserlis, "isserlis"},
    {ExperimentId::Restart, "restart"},
    {ExperimentId::SolverHierarchy, "solver_hierarchy"},
    {ExperimentId::Stress, "stress"},
};

std::vector<std::int64_t> doubling(std::int64_t first, int count) {
    std::vector<std::int64_t> g;
    for (int k = 0; k < count; ++k) g.push_back(first << k);
    return g;
}

// first, middle and last point: widest log-range for the slope fit
std::vector<std::int64_t> spread_three(const std::vector<std::int64_t>& g) {
    if (g.size() <= 3) return g;
    return {g.front(), g[g.size() / 2], g.back()};
}

}  // namespace

const std::vector<ExperimentId>& all_experiments() {
    static const std::vector<ExperimentId> ids = [] {
        std::vector<ExperimentId> v;
        for (const auto& e : kNames) v.push_back(e.id);
        return v;
    }();
    return ids;
}

std::string_view experiment_name(ExperimentId id) {
    for (const auto& e : kNames)
        if (e.id == id) return e.name;
    throw std::invalid_argument("experiment_name: unknown id");
}

std::optional<ExperimentId> parse_experiment(std::string_view name) {
    std::string s(name);
    for (auto& c : s)
        if (c == '-') c = '_';
    for (const auto& e : kNames)
        if (e.name == s) return e.id;
    return std::nullopt;
}

ExperimentConfig ExperimentConfig::defaults(ExperimentId id, bool quick, std::uint64_t seed) {
    ExperimentConfig c;
    c.id = id;
    c.seed = seed;
    c.quick = quick;
    bool divide = true;
    switch (id) {
        case ExperimentId::Audit:
            c.replicates = 25;  // instances
            divide = false;
            break;
        case ExperimentId::ScalarOrder:
        case ExperimentId::CorrectorOrder:
        case ExperimentId::Damping:
            c.t_grid = doubling(200, 5);
            c.replicates = 500;
            break;
        case ExperimentId::GaussTrack:
            c.t_grid = doubling(400, 6);
            c.t_grid_wide = doubling(3200, 5);
            c.replicates = 500;
            break;
        case ExperimentId::Transfer:
            c.t_grid = doubling(800, 6);
            c.replicates = 500;
            break;
        case ExperimentId::Restart:
            c.t_grid = doubling(200, 4);
            c.replicates = 200;
            break;
        case ExperimentId::SolverHierarchy:
            c.t_grid = doubling(400, 4);
            c.replicates = 100;
            break;
        case ExperimentId::Stress:
            c.t_grid = doubling(400, 3);
            c.replicates = 20;
            break;
        case ExperimentId::CgAblation:
            c.t_grid = doubling(200, 4);
            c.replicates = 100;
            break;
        case ExperimentId::Isserlis:
            c.t_grid = {1000, 4000, 16000, 64000, 256000};  // sample sizes N
            c.replicates = 10;                               // direction pairs
            divide = false;
            break;
    }
    if (quick) {
        if (divide) c.replicates = std::max(1, c.replicates / 10);
        c.t_grid = spread_three(c.t_grid);
        c.t_grid_wide = spread_three(c.t_grid_wide);
    }
    return c;
}

void ExperimentConfig::validate() const {
    if (replicates < 1) throw std::invalid_argument("ExperimentConfig: replicates must be >= 1");
    if (workers < 1) throw std::invalid_argument("ExperimentConfig: workers must be >= 1");
    for (const auto* g : {&t_grid, &t_grid_wide})
        for (std::size_t k = 0; k < g->size(); ++k) {
            if ((*g)[k] < 1) throw std::invalid_argument("ExperimentConfig: grid entries must be positive");
            if (k > 0 && (*g)[k] <= (*g)[k - 1])
                throw std::invalid_argument("ExperimentConfig: t_grid must be strictly increasing");
        }
}

SlopeFit fit_slope(const std::vector<std::pair<double, double>>& points) {
    const int n = static_cast<int>(points.size());
    if (n < 3) throw InsufficientData("fit_slope: need at least 3 points");
    std::vector<double> lx;
    std::vector<double> ly;
    for (const auto& [t, r] : points) {
        if (!(t > 0.0) || !(r > 0.0) || !std::isfinite(r))
            throw InsufficientData("fit_slope: points must be positive and finite");
        lx.push_back(std::log(t));
        ly.push_back(std::log(r));
    }
    double mx = 0.0;
    double my = 0.0;
    for (int k = 0; k < n; ++k) {
        mx += lx[k] / n;
        my += ly[k] / n;
    }
    double sxx = 0.0;
    double sxy = 0.0;
    for (int k = 0; k < n; ++k) {
        sxx += (lx[k] - mx) * (lx[k] - mx);
        sxy += (lx[k] - mx) * (ly[k] - my);
    }
    if (!(sxx > 0.0)) throw InsufficientData("fit_slope: abscissae must differ");
    SlopeFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double rss = 0.0;
    for (int k = 0; k < n; ++k) {
        const double res = ly[k] - f.intercept - f.slope * lx[k];
        rss += res * res;
    }
    f.ci95_halfwidth = 1.96 * std::sqrt(rss / (n - 2) / sxx);
    f.local_slope_last = (ly[n - 1] - ly[n - 2]) / (lx[n - 1] - lx[n - 2]);
    return f;
}

double ks_normal(std::vector<double> samples) {
    if (samples.size() < 10) throw InsufficientData("ks_normal: need at least 10 samples");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double cdf = 0.5 * std::erfc(-samples[i] / std::numbers::sqrt2);
        d = std::max({d, cdf - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - cdf});
    }
    return d;
}

bool ExperimentResult::passed() const {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

std::optional<double> ExperimentResult::find(std::string_view setting, std::string_view method,
                                             std::string_view metric, std::int64_t t) const {
    for (const auto& r : rows)
        if (r.setting == setting && r.method == method && r.metric == metric && (t < 0 || r.t == t))
            return r.value;
    return std::nullopt;
}

namespace detail {

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string grid_string(const std::vector<std::int64_t>& grid) {
    std::string s;
    for (std::size_t k = 0; k < grid.size(); ++k) s += (k ? ";" : "") + std::to_string(grid[k]);
    return s;
}

Report::Report(const ExperimentConfig& cfg) {
    result_.cfg = cfg;
    header("experiment", std::string(experiment_name(cfg.id)));
    header("seed", std::to_string(cfg.seed));
    header("quick", cfg.quick ? "1" : "0");
    header("replicates", std::to_string(cfg.replicates));
    if (!cfg.t_grid.empty()) header("t_grid", grid_string(cfg.t_grid));
    if (!cfg.t_grid_wide.empty()) header("t_grid_wide", grid_string(cfg.t_grid_wide));
    header("tolerance_scale", fmt(cfg.tolerance_scale()));
}

void Report::header(const std::string& key, const std::string& value) { result_.header.push_back(key + "=" + value); }

void Report::row(const std::string& setting, const std::string& method, std::int64_t t, int replicates,
                 const std::string& metric, double value, double stderr_value) {
    result_.rows.push_back({std::string(experiment_name(result_.cfg.id)), setting, method, t, replicates, metric,
                            value, stderr_value});
}

SlopeFit Report::slope_rows(const std::string& setting, const std::string& method,
                            const std::vector<std::pair<double, double>>& points) {
    SlopeFit f;
    try {
        f = fit_slope(points);
    } catch (const InsufficientData&) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        f = {nan, nan, nan, nan};
    }
    const int reps = result_.cfg.replicates;
    row(setting, method, 0, reps, "ols_slope", f.slope, f.ci95_halfwidth / 1.96);
    row(setting, method, 0, reps, "ols_ci95", f.ci95_halfwidth);
    row(setting, method, 0, reps, "local_slope_last", f.local_slope_last);
    return f;
}

void Report::check_band(const std::string& name, double center, double half, double measured) {
    const double h = half * tol_scale();
    result_.checks.push_back({name, fmt(center), measured, "+-" + fmt(h), std::abs(measured - center) <= h});
}

void Report::check_upper(const std::string& name, double bound, double measured, bool widen) {
    const double b = widen ? bound * tol_scale() : bound;
    result_.checks.push_back({name, "<= " + fmt(b), measured, fmt(b), measured <= b});
}

void Report::check_lower(const std::string& name, double bound, double measured) {
    result_.checks.push_back({name, ">= " + fmt(bound), measured, fmt(bound), measured >= bound});
}

}  // namespace detail


ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    switch (cfg.id) {
        case ExperimentId::Audit: return detail::run_audit_experiment(cfg);
        case ExperimentId::ScalarOrder: return detail::run_scalar_order(cfg);
        case ExperimentId::CorrectorOrder: return detail::run_corrector_order(cfg);
        case ExperimentId::Damping: return detail::run_damping(cfg);
        case ExperimentId::GaussTrack: return detail::run_gauss_track(cfg);
        case ExperimentId::Transfer: return detail::run_transfer(cfg);
        case ExperimentId::CgAblation: return detail::run_cg_ablation(cfg);
        case ExperimentId::Isserlis: return detail::run_isserlis(cfg);
        case ExperimentId::Restart: return detail::run_restart(cfg);
        case ExperimentId::SolverHierarchy: return detail::run_solver_hierarchy(cfg);
        case ExperimentId::Stress: return detail::run_stress(cfg);
    }
    throw std::invalid_argument("run_experiment: unknown experiment");
}

std::string to_csv(const ExperimentResult& result) {
    std::ostringstream os;
    for (const auto& h : result.header) os << "# " << h << '\n';
    os << "experiment,setting,method,T,replicates,metric,value,stderr\n";
    for (const auto& r : result.rows)
        os << r.experiment << ',' << r.setting << ',' << r.method << ',' << r.t << ',' << r.replicates << ','
           << r.metric << ',' << detail::fmt(r.value) << ',' << detail::fmt(r.stderr_value) << '\n';
    return os.str();
}

std::string acceptance_csv(const std::vector<AcceptanceRow>& rows, bool quick) {
    std::ostringstream os;
    os << "# quick=" << (quick ? 1 : 0) << '\n';
    os << "# tolerance_scale=" << (quick ? 2 : 1) << '\n';
    os << "check,expected,measured,tolerance,pass\n";
    for (const auto& r : rows)
        os << r.check << ',' << r.expected << ',' << detail::fmt(r.measured) << ',' << r.tolerance << ','
           << (r.pass ? "true" : "false") << '\n';
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("write_file: cannot open " + path);
    out << content;
    if (!out) throw std::runtime_error("write_file: write failed for " + path);
}

bool RunAllResult::passed() const {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

RunAllResult run_all(const RunAllOptions& opts) {
    RunAllResult out;
    for (ExperimentId id : all_experiments()) {
        ExperimentConfig cfg = ExperimentConfig::defaults(id, opts.quick, opts.seed);
        cfg.workers = opts.workers;
        if (opts.replicates) cfg.replicates = *opts.replicates;
        const auto start = std::chrono::steady_clock::now();
        ExperimentResult r = run_experiment(cfg);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cerr << experiment_name(id) << ": " << (r.passed() ? "pass" : "FAIL") << " (" << detail::fmt(secs)
                  << " s)\n";
        write_file(opts.out_dir + "/" + std::string(experiment_name(id)) + ".csv", to_csv(r));
        out.checks.insert(out.checks.end(), r.checks.begin(), r.checks.end());
        out.results.push_back(std::move(r));
    }
    write_file(opts.out_dir + "/acceptance.csv", acceptance_csv(out.checks, opts.quick));
    return out;
}

int default_workers() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

}  // namespace eqtrack::harness
