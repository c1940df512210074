#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "../src/harness_internal.hpp"
#include "eqtrack/harness.hpp"
#include "eqtrack/types.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

using namespace eqtrack::harness;

namespace {

std::vector<std::pair<double, double>> power_law(double c, double slope, const std::vector<double>& ts) {
    std::vector<std::pair<double, double>> pts;
    for (double t : ts) pts.emplace_back(t, c * std::pow(t, slope));
    return pts;
}

std::vector<std::string> csv_lines(const std::string& csv) {
    std::vector<std::string> out;
    std::istringstream is(csv);
    for (std::string line; std::getline(is, line);) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("exact power laws recover their exponent") {
    const std::vector<double> ts = {200, 400, 800, 1600, 3200};
    for (double slope : {-1.0, -2.0, -3.0, -0.4}) {
        const SlopeFit f = fit_slope(power_law(3.7, slope, ts));
        CHECK(std::abs(f.slope - slope) <= 1e-10);
        CHECK(std::abs(f.local_slope_last - slope) <= 1e-10);
        CHECK(std::abs(f.intercept - std::log(3.7)) <= 1e-9);
        CHECK(f.ci95_halfwidth <= 1e-10);
    }
}

TEST_CASE("slope fit tolerates multiplicative noise") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    const std::vector<double> ts = {200, 400, 800, 1600, 3200};
    for (int trial = 0; trial < 50; ++trial) {
        auto pts = power_law(0.2, -2.0, ts);
        for (auto& p : pts) p.second *= 1.0 + u(rng);
        const SlopeFit f = fit_slope(pts);
        CHECK(std::abs(f.slope + 2.0) <= 0.1);
        CHECK(f.ci95_halfwidth > 0.0);
    }
}

TEST_CASE("slope fit confidence interval matches a hand computation") {
    // log points (0,0), (1,1), (2,3): slope 1.5, residuals 1/6, -1/3, 1/6
    const double e = std::exp(1.0);
    const SlopeFit f = fit_slope({{1.0, 1.0}, {e, e}, {e * e, e * e * e}});
    CHECK(f.slope == doctest::Approx(1.5).epsilon(1e-13));
    CHECK(f.intercept == doctest::Approx(-1.0 / 6.0).epsilon(1e-12));
    CHECK(f.local_slope_last == doctest::Approx(2.0).epsilon(1e-13));
    const double se = std::sqrt((1.0 / 36 + 1.0 / 9 + 1.0 / 36) / 1.0 / 2.0);
    CHECK(f.ci95_halfwidth == doctest::Approx(1.96 * se).epsilon(1e-12));
}

TEST_CASE("slope fit rejects unusable input") {
    CHECK_THROWS_AS(fit_slope({{1.0, 1.0}, {2.0, 0.5}}), eqtrack::InsufficientData);
    CHECK_THROWS_AS(fit_slope({{1.0, 1.0}, {2.0, 0.0}, {4.0, 0.2}}), eqtrack::InsufficientData);
    CHECK_THROWS_AS(fit_slope({{-1.0, 1.0}, {2.0, 0.3}, {4.0, 0.2}}), eqtrack::InsufficientData);
    CHECK_THROWS_AS(fit_slope({{2.0, 1.0}, {2.0, 0.3}, {2.0, 0.2}}), eqtrack::InsufficientData);
}

TEST_CASE("KS distance to the standard normal") {
    CHECK(ks_normal(std::vector<double>(20, 0.0)) == doctest::Approx(0.5).epsilon(1e-15));
    // far right point mass: the normal CDF there is 1 - 1e-23
    CHECK(ks_normal(std::vector<double>(10, 10.0)) == doctest::Approx(1.0).epsilon(1e-12));
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    int too_far = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> s(500);
        for (auto& x : s) x = nd(rng);
        if (ks_normal(s) > 0.08) ++too_far;
    }
    CHECK(too_far <= 1);
    std::vector<double> shifted(500);
    for (auto& x : shifted) x = nd(rng) + 0.5;
    CHECK(ks_normal(shifted) > 0.15);
    CHECK_THROWS_AS(ks_normal(std::vector<double>(9, 0.0)), eqtrack::InsufficientData);
}

TEST_CASE("experiment names and configuration defaults") {
    for (ExperimentId id : all_experiments()) {
        const std::string name(experiment_name(id));
        CHECK(parse_experiment(name) == id);
        std::string dashed = name;
        for (auto& c : dashed)
            if (c == '_') c = '-';
        CHECK(parse_experiment(dashed) == id);
        const ExperimentConfig full = ExperimentConfig::defaults(id);
        const ExperimentConfig quick = ExperimentConfig::defaults(id, true);
        CHECK_NOTHROW(full.validate());
        CHECK_NOTHROW(quick.validate());
        CHECK(quick.tolerance_scale() == 2.0);
        CHECK(full.tolerance_scale() == 1.0);
        CHECK(quick.t_grid.size() == std::min<std::size_t>(3, full.t_grid.size()));
        if (!full.t_grid.empty()) {
            CHECK(quick.t_grid.front() == full.t_grid.front());
            CHECK(quick.t_grid.back() == full.t_grid.back());
        }
        if (id != ExperimentId::Audit && id != ExperimentId::Isserlis)
            CHECK(quick.replicates == std::max(1, full.replicates / 10));
    }
    CHECK(all_experiments().size() == 11);
    CHECK_FALSE(parse_experiment("nope").has_value());
    const ExperimentConfig s = ExperimentConfig::defaults(ExperimentId::ScalarOrder);
    CHECK(s.t_grid == std::vector<std::int64_t>{200, 400, 800, 1600, 3200});
    CHECK(s.replicates == 500);
    CHECK(s.seed == 123);
}

TEST_CASE("config validation") {
    ExperimentConfig c = ExperimentConfig::defaults(ExperimentId::ScalarOrder);
    c.replicates = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.replicates = 3;
    c.t_grid = {200, 200, 400};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.t_grid = {400, 200};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.t_grid = {200, 400};
    c.workers = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK_THROWS_AS(run_experiment(c), std::invalid_argument);
}

TEST_CASE("parallel loop rethrows the lowest failing index and fills every slot") {
    std::vector<int> seen(100, 0);
    detail::parallel_for(100, 4, [&](int i) { seen[i] = i + 1; });
    for (int i = 0; i < 100; ++i) CHECK(seen[i] == i + 1);
    try {
        detail::parallel_for(50, 3, [](int i) {
            if (i % 7 == 3) throw std::runtime_error(std::to_string(i));
        });
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "3");
    }
}

TEST_CASE("accumulators") {
    detail::MeanAcc m;
    for (double x : {1.0, 2.0, 3.0, 4.0}) m.add(x);
    CHECK(m.mean() == doctest::Approx(2.5));
    CHECK(m.stderr_mean() == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
    detail::RmsAcc r;
    for (double x : {3.0, -4.0}) r.add(x);
    CHECK(r.rms() == doctest::Approx(std::sqrt(12.5)));
}

TEST_CASE("CSV output is self-describing and deterministic under parallel execution") {
    ExperimentConfig c = ExperimentConfig::defaults(ExperimentId::ScalarOrder, true);
    c.replicates = 30;
    const ExperimentResult a = run_experiment(c);
    const ExperimentResult b = run_experiment(c);
    c.workers = 3;
    const ExperimentResult p = run_experiment(c);
    const std::string csv = to_csv(a);
    CHECK(csv == to_csv(b));
    CHECK(csv == to_csv(p));

    const auto lines = csv_lines(csv);
    REQUIRE(lines.size() > 8);
    bool saw_grid = false;
    std::size_t k = 0;
    for (; k < lines.size() && lines[k].rfind("# ", 0) == 0; ++k)
        if (lines[k] == "# t_grid=200;800;3200") saw_grid = true;
    CHECK(saw_grid);
    REQUIRE(k < lines.size());
    CHECK(lines[k] == "experiment,setting,method,T,replicates,metric,value,stderr");
    for (++k; k < lines.size(); ++k) CHECK(std::count(lines[k].begin(), lines[k].end(), ',') == 7);

    const auto rms = a.find("smooth_branch", "m1", "rms_error", 3200);
    REQUIRE(rms.has_value());
    CHECK(*rms > 0.0);
    CHECK(a.checks.size() == 3);

    c.seed = 124;
    CHECK(to_csv(run_experiment(c)) != csv);
}

TEST_CASE("acceptance summary layout") {
    const std::vector<AcceptanceRow> rows = {{"a.slope", "-2", -1.98, "+-0.15", true},
                                             {"b.frac", "<= 0.1", 0.2, "0.1", false}};
    const auto lines = csv_lines(acceptance_csv(rows, true));
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] == "# quick=1");
    CHECK(lines[1] == "# tolerance_scale=2");
    CHECK(lines[2] == "check,expected,measured,tolerance,pass");
    CHECK(lines[3] == "a.slope,-2,-1.98,+-0.15,true");
    CHECK(lines[4] == "b.frac,<= 0.1,0.2,0.1,false");
}

TEST_CASE("quick scalar order reproduces the predictor hierarchy") {
    const ExperimentResult r = run_experiment(ExperimentConfig::defaults(ExperimentId::ScalarOrder, true));
    for (int m = 0; m < 3; ++m) {
        const auto s = r.find("smooth_branch", "m" + std::to_string(m), "ols_slope");
        REQUIRE(s.has_value());
        CHECK(std::abs(*s + 1.0 + m) <= 0.3);
    }
    CHECK(r.passed());
}

TEST_CASE("audit table covers every check") {
    const auto entries = run_audit(123);
    REQUIRE(entries.size() == 6);
    int fd = 0;
    for (const auto& e : entries) {
        CHECK(e.median <= e.max);
        CHECK(e.median <= (e.finite_difference ? 1e-6 : 1e-12));
        if (e.finite_difference) ++fd;
    }
    CHECK(fd == 3);
}
