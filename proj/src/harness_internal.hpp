#pragma once

#include "eqtrack/harness.hpp"
#include "eqtrack/seeding.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace eqtrack::harness::detail {

/// Runs f(0..n-1) on up to `workers` threads. Callers write results by index, so the
/// outcome does not depend on scheduling. The lowest-index exception is rethrown.
template <class F>
void parallel_for(int n, int workers, F&& f) {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    auto body = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                f(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
    };
    const int k = std::max(1, std::min(workers, n));
    if (k == 1) {
        body();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < k; ++w) pool.emplace_back(body);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct MeanAcc {
    double sum = 0.0;
    double sumsq = 0.0;
    int n = 0;

    void add(double x) {
        sum += x;
        sumsq += x * x;
        ++n;
    }
    [[nodiscard]] double mean() const { return n ? sum / n : 0.0; }
    [[nodiscard]] double stderr_mean() const {
        if (n < 2) return 0.0;
        const double m = mean();
        const double var = std::max(0.0, (sumsq - n * m * m) / (n - 1));
        return std::sqrt(var / n);
    }
};

/// RMS of the accumulated values, with a delta-method standard error.
struct RmsAcc {
    MeanAcc sq;
    void add(double e) { sq.add(e * e); }
    [[nodiscard]] double rms() const { return std::sqrt(sq.mean()); }
    [[nodiscard]] double stderr_rms() const {
        const double r = rms();
        return r > 0.0 ? sq.stderr_mean() / (2.0 * r) : 0.0;
    }
};

std::string fmt(double v);
std::string grid_string(const std::vector<std::int64_t>& grid);

/// Collects rows and checks for one experiment.
class Report {
public:
    explicit Report(const ExperimentConfig& cfg);

    void header(const std::string& key, const std::string& value);
    void row(const std::string& setting, const std::string& method, std::int64_t t, int replicates,
             const std::string& metric, double value, double stderr_value = 0.0);
    /// OLS and last local slope rows for one (setting, method) series.
    SlopeFit slope_rows(const std::string& setting, const std::string& method,
                        const std::vector<std::pair<double, double>>& points);

    /// |measured - center| <= half * tolerance_scale
    void check_band(const std::string& name, double center, double half, double measured);
    /// measured <= bound (bound widened by tolerance_scale when widen is set)
    void check_upper(const std::string& name, double bound, double measured, bool widen = true);
    void check_lower(const std::string& name, double bound, double measured);
    void add_failures(int n) { result_.failures += n; }

    [[nodiscard]] double tol_scale() const { return result_.cfg.tolerance_scale(); }
    ExperimentResult take() { return std::move(result_); }

private:
    ExperimentResult result_;
};

inline std::uint64_t replicate_seed(const ExperimentConfig& cfg, std::uint64_t rep, std::uint64_t a = 0,
                                    std::uint64_t b = 0) {
    return derive_seed(cfg.seed, static_cast<std::uint64_t>(cfg.id) + 1, rep,
                       (a << 32) ^ b);
}

ExperimentResult run_audit_experiment(const ExperimentConfig& cfg);
ExperimentResult run_scalar_order(const ExperimentConfig& cfg);
ExperimentResult run_corrector_order(const ExperimentConfig& cfg);
ExperimentResult run_damping(const ExperimentConfig& cfg);
ExperimentResult run_cg_ablation(const ExperimentConfig& cfg);
ExperimentResult run_gauss_track(const ExperimentConfig& cfg);
ExperimentResult run_transfer(const ExperimentConfig& cfg);
ExperimentResult run_restart(const ExperimentConfig& cfg);
ExperimentResult run_solver_hierarchy(const ExperimentConfig& cfg);
ExperimentResult run_stress(const ExperimentConfig& cfg);
ExperimentResult run_isserlis(const ExperimentConfig& cfg);

}  // namespace eqtrack::harness::detail
