#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace eqtrack::harness {

enum class ExperimentId {
    Audit,
    ScalarOrder,
    CorrectorOrder,
    GaussTrack,
    Transfer,
    Restart,
    SolverHierarchy,
    Stress,
    CgAblation,
    Isserlis,
    Damping,
};

/// Every experiment, in run_all order.
const std::vector<ExperimentId>& all_experiments();
std::string_view experiment_name(ExperimentId id);
/// Accepts both "gauss_track" and "gauss-track".
std::optional<ExperimentId> parse_experiment(std::string_view name);

struct ExperimentConfig {
    ExperimentId id = ExperimentId::Audit;
    std::vector<std::int64_t> t_grid;
    /// Second grid for experiments with two settings (the d=5 setting of gauss_track).
    std::vector<std::int64_t> t_grid_wide;
    int replicates = 1;
    std::uint64_t seed = 123;
    bool quick = false;
    int workers = 1;

    /// Protocol defaults; quick divides replicates by 10 and keeps the first, middle and last grid points.
    static ExperimentConfig defaults(ExperimentId id, bool quick = false, std::uint64_t seed = 123);
    /// Acceptance tolerances are doubled in quick mode.
    [[nodiscard]] double tolerance_scale() const { return quick ? 2.0 : 1.0; }
    void validate() const;
};

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double ci95_halfwidth = 0.0;
    double local_slope_last = 0.0;
};

/// OLS of log(rms) on log(t). Throws InsufficientData for fewer than 3 points or nonpositive entries.
SlopeFit fit_slope(const std::vector<std::pair<double, double>>& points);

/// Kolmogorov-Smirnov distance to the standard normal. Needs at least 10 samples.
double ks_normal(std::vector<double> samples);

struct CsvRow {
    std::string experiment;
    std::string setting;
    std::string method;
    std::int64_t t = 0;
    int replicates = 0;
    std::string metric;
    double value = 0.0;
    double stderr_value = 0.0;
};

struct AcceptanceRow {
    std::string check;
    std::string expected;
    double measured = 0.0;
    std::string tolerance;
    bool pass = false;
};

struct ExperimentResult {
    ExperimentConfig cfg;
    std::vector<std::string> header;  // "key=value" lines written as comments
    std::vector<CsvRow> rows;
    std::vector<AcceptanceRow> checks;
    int failures = 0;

    [[nodiscard]] bool passed() const;
    /// Value of the first row matching all three keys.
    [[nodiscard]] std::optional<double> find(std::string_view setting, std::string_view method,
                                             std::string_view metric, std::int64_t t = -1) const;
};

struct AuditEntry {
    std::string name;
    bool finite_difference = false;
    double median = 0.0;
    double max = 0.0;
};

/// Formula sanity checks over 25 seeded instances at d=3, p=8.
std::vector<AuditEntry> run_audit(std::uint64_t seed);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

std::string to_csv(const ExperimentResult& result);
std::string acceptance_csv(const std::vector<AcceptanceRow>& rows, bool quick);
void write_file(const std::string& path, const std::string& content);

struct RunAllOptions {
    bool quick = false;
    std::uint64_t seed = 123;
    std::string out_dir = "results";
    int workers = 1;
    std::optional<int> replicates;  // overrides every experiment's replicate count
};

struct RunAllResult {
    std::vector<ExperimentResult> results;
    std::vector<AcceptanceRow> checks;
    [[nodiscard]] bool passed() const;
};

/// Runs every experiment, writes one CSV each plus acceptance.csv into out_dir.
RunAllResult run_all(const RunAllOptions& opts);

/// Hardware concurrency, at least 1.
int default_workers();

}  // namespace eqtrack::harness
