// Acceptance run: one line per criterion, full protocols, tolerances fixed below.
#include "eqtrack/equilibrium.hpp"
#include "eqtrack/harness.hpp"
#include "eqtrack/types.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <tuple>

using namespace eqtrack;
namespace h = eqtrack::harness;

namespace {

constexpr double kAuditBudget = 30.0;
constexpr double kScalarBudget = 120.0;
constexpr double kGaussBudget = 900.0;
constexpr double kQuickBudget = 300.0;
const std::string kOutDir = "acceptance_results";

struct Timed {
    h::ExperimentResult result;
    double seconds = 0.0;
};

Timed run(h::ExperimentId id) {
    h::ExperimentConfig cfg = h::ExperimentConfig::defaults(id);
    cfg.workers = h::default_workers();
    const auto start = std::chrono::steady_clock::now();
    Timed t{h::run_experiment(cfg), 0.0};
    t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    h::write_file(kOutDir + "/" + std::string(h::experiment_name(id)) + ".csv", h::to_csv(t.result));
    return t;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

int failed = 0;
std::vector<h::AcceptanceRow> summary;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
    if (!pass) ++failed;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << ". " << title << ": " << detail << std::endl;
}

/// Keeps checks whose name starts with prefix; returns whether all pass and a compact listing.
std::pair<bool, std::string> checks_with(const h::ExperimentResult& r, const std::string& prefix) {
    bool ok = true;
    std::ostringstream os;
    int n = 0;
    for (const auto& c : r.checks) {
        if (c.check.rfind(prefix, 0) != 0) continue;
        ok = ok && c.pass;
        os << (n++ ? "; " : "") << c.check.substr(prefix.size()) << "=" << num(c.measured) << (c.pass ? "" : " (!)");
        summary.push_back(c);
    }
    if (n == 0) ok = false;
    return {ok, os.str()};
}

void experiment_criterion(int id, const std::string& title, h::ExperimentId exp, const std::string& prefix,
                          double budget = 0.0) {
    const Timed t = run(exp);
    auto [ok, detail] = checks_with(t.result, prefix);
    detail += "; " + num(t.seconds) + " s";
    if (budget > 0.0) {
        detail += " (budget " + num(budget) + " s)";
        ok = ok && t.seconds < budget;
    }
    report(id, title, ok, detail);
}

/// Chart round trips, Frobenius sandwich, response vs finite differences, quadratic remainder,
/// frozen fixed point.
std::pair<bool, std::string> property_suite() {
    using testing_support::random_chart_point;
    using testing_support::random_sym;
    std::mt19937_64 rng(2024);
    bool ok = true;
    std::ostringstream os;

    double worst_trip = 0.0;
    double worst_tangent = 0.0;
    for (int d = 2; d <= 6; ++d) {
        Rng mr(static_cast<std::uint64_t>(d));
        ModelRecipe recipe;
        recipe.d = d;
        recipe.p = 4 * d;
        const ModelSpec spec = generate_model(recipe, mr);
        for (int k = 0; k < 20; ++k) {
            const ChartPoint p = random_chart_point(d, rng, 0.15);
            const ChartPoint back = chart_log(spec.base(), chart_exp(spec.base(), p));
            worst_trip = std::max(worst_trip, (back - p).norm() / (1.0 + p.norm()));
            const SymMatrix u(Eigen::MatrixXd(random_sym(d, rng)));
            const SymMatrix recon = tangent_reconstruct(spec.base(), tangent_decompose(spec.base(), u));
            worst_tangent = std::max(worst_tangent, (recon.matrix() - u.matrix()).norm() / u.matrix().norm());
        }
    }
    ok = ok && worst_trip <= 1e-10 && worst_tangent <= 1e-12;
    os << "round_trip=" << num(worst_trip) << "; tangent_round_trip=" << num(worst_tangent);

    double worst_sandwich = 0.0;
    Rng mr(77);
    ModelRecipe r3;
    const ModelSpec spec = generate_model(r3, mr);
    const auto [c_lo, c_hi] = chart_norm_constants(spec.base().lambda);
    for (int k = 0; k < 200; ++k) {
        const SymMatrix u(Eigen::MatrixXd(random_sym(3, rng)));
        const double chart = tangent_decompose(spec.base(), u).norm();
        const double frob = u.matrix().norm();
        worst_sandwich = std::max({worst_sandwich, c_lo * chart / frob, frob / (c_hi * chart)});
    }
    ok = ok && worst_sandwich <= 1.0 + 1e-12;
    os << "; sandwich_max_ratio=" << num(worst_sandwich);

    CompressedStat st = CompressedStat::empty(3);
    for (int t = 0; t < 2000; ++t) update_statistic_inplace(st, sample_compressed(spec, mr));
    FrozenSolveOptions tight;
    tight.tol = 1e-14;
    tight.accept_tol = 1e-12;
    const FrozenTarget tgt = solve_frozen_target(spec, st.d, ChartPoint::zero(3), tight);
    double worst_resp = 0.0;
    double ratio_lo = 1e300;
    double ratio_hi = 0.0;
    for (int k = 0; k < 5; ++k) {
        const Mat dd = random_sym(3, rng);
        const ChartPoint an = response_apply(spec, tgt, dd);
        const double eps = 1e-6;
        const FrozenTarget tp = solve_frozen_target(spec, Mat(st.d + eps * dd), tgt.theta, tight);
        const FrozenTarget tm = solve_frozen_target(spec, Mat(st.d - eps * dd), tgt.theta, tight);
        const ChartPoint fd = (1.0 / (2 * eps)) * (tp.theta - tm.theta);
        worst_resp = std::max(worst_resp, (fd - an).norm() / an.norm());
        const Mat step = 1e-3 * st.d.norm() * dd;
        const double ratio =
            jet_remainder_probe(spec, st.d, Mat(st.d + step)) / jet_remainder_probe(spec, st.d, Mat(st.d + 0.5 * step));
        ratio_lo = std::min(ratio_lo, ratio);
        ratio_hi = std::max(ratio_hi, ratio);
    }
    ok = ok && tgt.converged && worst_resp <= 1e-5 && ratio_lo >= 3.5 && ratio_hi <= 4.5;
    os << "; response_fd=" << num(worst_resp) << "; remainder_ratio=[" << num(ratio_lo) << "," << num(ratio_hi)
       << "]";

    const SpdMatrix sig = chart_exp(spec.base(), tgt.theta);
    const SymMatrix lifted = latent_lift(spec, sig, SymMatrix(Eigen::MatrixXd(st.d)));
    const double fixed = (lifted.matrix() - sig.matrix()).norm() / sig.matrix().norm();
    ok = ok && fixed <= 1e-12;
    os << "; fixed_point=" << num(fixed);
    return {ok, os.str()};
}

}  // namespace

int main() {
    std::cout << "workers=" << h::default_workers() << std::endl;
    experiment_criterion(1, "audit suite", h::ExperimentId::Audit, "audit.", kAuditBudget);
    experiment_criterion(2, "scalar predictor order", h::ExperimentId::ScalarOrder, "scalar_order.", kScalarBudget);
    experiment_criterion(3, "corrector order", h::ExperimentId::CorrectorOrder, "corrector_order.");
    experiment_criterion(4, "damping negative result", h::ExperimentId::Damping, "damping.");
    experiment_criterion(5, "latent Gaussian tracking", h::ExperimentId::GaussTrack, "gauss_track.", kGaussBudget);
    experiment_criterion(6, "transfer", h::ExperimentId::Transfer, "transfer.");
    experiment_criterion(7, "certified corrector contraction", h::ExperimentId::SolverHierarchy,
                         "solver_hierarchy.");
    experiment_criterion(8, "CG ablation", h::ExperimentId::CgAblation, "cg_ablation.");
    {
        const Timed t = run(h::ExperimentId::Isserlis);
        auto [ok9, d9] = checks_with(t.result, "isserlis.");
        report(9, "Isserlis check", ok9, d9);
        auto [ok11, d11] = checks_with(t.result, "wishart.");
        // criterion 10 prints before 11; hold the Wishart line
        experiment_criterion(10, "restart localization", h::ExperimentId::Restart, "restart.");
        report(11, "Wishart oracle", ok11, d11 + "; " + num(t.seconds) + " s with the Isserlis runs");
    }
    {
        bool ok = false;
        std::string detail;
        try {
            std::tie(ok, detail) = property_suite();
        } catch (const std::exception& e) {
            detail = std::string("property suite threw: ") + e.what();
        }
        h::RunAllOptions opts;
        opts.quick = true;
        opts.workers = h::default_workers();
        opts.out_dir = kOutDir + "/quick";
        const auto start = std::chrono::steady_clock::now();
        const h::RunAllResult all = h::run_all(opts);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        int quick_failed = 0;
        for (const auto& c : all.checks)
            if (!c.pass) ++quick_failed;
        detail += "; run-all --quick " + std::string(all.passed() ? "pass" : "FAIL") + " (" +
                  std::to_string(all.checks.size()) + " checks, " + std::to_string(quick_failed) + " failed) in " +
                  num(secs) + " s (budget " + num(kQuickBudget) + " s)";
        report(12, "property suites and quick run", ok && all.passed() && secs <= kQuickBudget, detail);
    }
    h::write_file(kOutDir + "/acceptance.csv", h::acceptance_csv(summary, false));
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
    return failed ? 1 : 0;
}
