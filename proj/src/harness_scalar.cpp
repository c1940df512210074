#include "harness_internal.hpp"

#include "eqtrack/scalar_lab.hpp"
#include "eqtrack/tracker.hpp"
#include "eqtrack/types.hpp"

#include <array>
#include <random>

namespace eqtrack::harness::detail {

namespace {

using scalar::Corrector;
using scalar::ModelKind;
using scalar::TargetModel;

struct ScalarMethod {
    std::string name;
    int m = 0;
    Corrector corrector;
};

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

/// RMS terminal error per method and horizon; one seed per (replicate, T) shared by all methods.
std::vector<SlopeFit> scalar_family(const ExperimentConfig& cfg, Report& rep, const std::string& setting,
                                    const TargetModel& model, const std::vector<ScalarMethod>& methods) {
    const int nm = static_cast<int>(methods.size());
    const int nt = static_cast<int>(cfg.t_grid.size());
    std::vector<double> err(static_cast<std::size_t>(cfg.replicates) * nm * nt, kNan);
    auto at = [&](int r, int mi, int ti) -> double& { return err[(static_cast<std::size_t>(r) * nm + mi) * nt + ti]; };

    parallel_for(cfg.replicates, cfg.workers, [&](int r) {
        for (int ti = 0; ti < nt; ++ti) {
            const std::int64_t t = cfg.t_grid[ti];
            const std::uint64_t s = replicate_seed(cfg, r, static_cast<std::uint64_t>(t));
            for (int mi = 0; mi < nm; ++mi) {
                try {
                    at(r, mi, ti) = scalar::scalar_run(model, methods[mi].m, methods[mi].corrector, t, s);
                } catch (const Error&) {
                    at(r, mi, ti) = kNan;
                }
            }
        }
    });

    std::vector<SlopeFit> fits;
    for (int mi = 0; mi < nm; ++mi) {
        std::vector<std::pair<double, double>> pts;
        int failures = 0;
        for (int ti = 0; ti < nt; ++ti) {
            RmsAcc acc;
            for (int r = 0; r < cfg.replicates; ++r) {
                const double e = at(r, mi, ti);
                if (std::isfinite(e)) acc.add(e);
                else ++failures;
            }
            const std::int64_t t = cfg.t_grid[ti];
            rep.row(setting, methods[mi].name, t, acc.sq.n, "rms_error", acc.rms(), acc.stderr_rms());
            pts.emplace_back(static_cast<double>(t), acc.rms());
        }
        if (failures > 0) {
            rep.row(setting, methods[mi].name, 0, cfg.replicates, "failed_runs", failures);
            rep.add_failures(failures);
        }
        fits.push_back(rep.slope_rows(setting, methods[mi].name, pts));
    }
    return fits;
}

}  // namespace

ExperimentResult run_scalar_order(const ExperimentConfig& cfg) {
    Report rep(cfg);
    rep.header("model", "r(s)=s+s^2/2+0.1s^3 linear score");
    rep.header("corrector", "linear q=0.7");
    rep.header("restart", "exact at ceil(T/2)");
    const TargetModel model{ModelKind::SmoothBranch};
    const std::vector<ScalarMethod> methods = {
        {"m0", 0, Corrector::linear(0.7)},
        {"m1", 1, Corrector::linear(0.7)},
        {"m2", 2, Corrector::linear(0.7)},
    };
    const auto fits = scalar_family(cfg, rep, "smooth_branch", model, methods);
    for (int m = 0; m < 3; ++m)
        rep.check_band("scalar_order.m" + std::to_string(m) + ".slope", -1.0 - m, 0.15, fits[m].slope);
    return rep.take();
}

ExperimentResult run_corrector_order(const ExperimentConfig& cfg) {
    Report rep(cfg);
    rep.header("model", "r(s)=s+s^2/2+0.1s^3 score e+0.2e^2");
    rep.header("predictor", "m=0");
    rep.header("restart", "exact at ceil(T/2)");
    const TargetModel model{ModelKind::NonlinearScore};
    const std::vector<ScalarMethod> methods = {
        {"nu1_linear", 0, Corrector::linear(0.7)},
        {"nu2_newton", 0, Corrector::newton()},
        {"nu3_halley", 0, Corrector::halley()},
    };
    const auto fits = scalar_family(cfg, rep, "nonlinear_score", model, methods);
    for (int k = 0; k < 3; ++k)
        rep.check_band("corrector_order." + methods[k].name + ".slope", -1.0 - k, 0.15, fits[k].slope);
    return rep.take();
}

ExperimentResult run_damping(const ExperimentConfig& cfg) {
    Report rep(cfg);
    rep.header("model", "r(s)=s+s^2/2+0.1s^3 score e+0.2e^2");
    rep.header("predictor", "m=0");
    rep.header("corrector", "damped Newton x-F/(F'+lambda)");
    const TargetModel model{ModelKind::NonlinearScore};
    const std::array<double, 4> lambdas = {0.0, 0.01, 0.1, 1.0};
    std::vector<ScalarMethod> methods;
    for (double l : lambdas) methods.push_back({"lambda=" + fmt(l), 0, Corrector::damped(l)});
    const auto fits = scalar_family(cfg, rep, "nonlinear_score", model, methods);
    rep.check_band("damping.lambda=0.slope", -2.0, 0.2, fits[0].slope);
    for (std::size_t k = 1; k < lambdas.size(); ++k)
        rep.check_band("damping." + methods[k].name + ".slope", -1.0, 0.15, fits[k].slope);
    return rep.take();
}

namespace {

constexpr int kLabDim = 4;
using LabVec = Eigen::Vector4d;

struct LabOutcome {
    double error = kNan;
    double contraction = kNan;  // mean over corrected steps
};

/// Componentwise score F = J e + 0.2 e^2 around the branch r(S), first-order predictor, one
/// undamped Newton step per observation with a residual of norm tau |F| (or plain CG to tau).
LabOutcome vector_lab_run(double tau, bool use_cg, std::int64_t t_total, std::uint64_t seed) {
    const LabVec jdiag(1.0, 2.0, 4.0, 8.0);
    std::mt19937_64 data(seed);
    std::mt19937_64 dirs(splitmix64(seed ^ 0x5bd1e995ULL));
    std::normal_distribution<double> nd;
    const std::int64_t t0 = restart_step(0.5, t_total);
    LabVec sum = LabVec::Zero();
    LabVec s = LabVec::Zero();
    LabVec x = LabVec::Zero();
    auto branch = [](const LabVec& v) { return v.unaryExpr([](double a) { return TargetModel::r(a); }).eval(); };
    double ratio_sum = 0.0;
    int ratio_n = 0;
    for (std::int64_t t = 1; t <= t_total; ++t) {
        const LabVec s_prev = s;
        for (int i = 0; i < kLabDim; ++i) sum[i] += nd(data);
        s = sum / static_cast<double>(t);
        if (t == t0) {
            x = branch(s);
            continue;
        }
        if (t < t0) continue;
        for (int i = 0; i < kLabDim; ++i) x[i] += TargetModel::dr(s_prev[i]) * (s[i] - s_prev[i]);
        const LabVec r = branch(s);
        const LabVec e = x - r;
        const LabVec f = (jdiag.array() * e.array() + 0.2 * e.array().square()).matrix();
        const LabVec jac = (jdiag.array() + 0.4 * e.array()).matrix();
        LabVec step;
        if (use_cg) {
            ChartVec rhs = f;
            const CgResult cg = conjugate_gradient(
                [&](const ChartVec& v) { return ChartVec((jac.array() * v.array()).matrix()); }, rhs, tau, 10 * kLabDim);
            step = cg.x;
        } else {
            LabVec u;
            for (int i = 0; i < kLabDim; ++i) u[i] = nd(dirs);
            u.normalize();
            step = ((f + tau * f.norm() * u).array() / jac.array()).matrix();
        }
        x -= step;
        const double before = e.norm();
        if (before > 0.0) {
            ratio_sum += (x - r).norm() / before;
            ++ratio_n;
        }
    }
    return {(x - branch(s)).norm(), ratio_n ? ratio_sum / ratio_n : kNan};
}

}  // namespace

ExperimentResult run_cg_ablation(const ExperimentConfig& cfg) {
    Report rep(cfg);
    const double mu = 1.0;
    const double l_f = 8.0;
    const CertifiedParameters cp = certified_parameters(mu, l_f);
    const double tau_max = cp.tau_max;
    rep.header("model", "d=4 J=diag(1,2,4,8) F=J e+0.2e^2 r componentwise s+s^2/2+0.1s^3");
    rep.header("predictor", "m=1");
    rep.header("corrector", "Newton eta=1 lambda=0 residual tau|F| in random unit direction");
    rep.header("tau_max", fmt(tau_max));
    const std::vector<double> fracs = {0.0, 0.1, 0.5, 1.0, 2.0, 10.0};
    struct Variant {
        std::string name;
        double tau;
        bool cg;
    };
    std::vector<Variant> variants;
    for (double f : fracs) variants.push_back({"tau/tau_max=" + fmt(f), f * tau_max, false});
    variants.push_back({"cg tau=tau_max", tau_max, true});

    const int nv = static_cast<int>(variants.size());
    const int nt = static_cast<int>(cfg.t_grid.size());
    std::vector<LabOutcome> out(static_cast<std::size_t>(cfg.replicates) * nv * nt);
    auto at = [&](int r, int v, int ti) -> LabOutcome& {
        return out[(static_cast<std::size_t>(r) * nv + v) * nt + ti];
    };
    parallel_for(cfg.replicates, cfg.workers, [&](int r) {
        for (int ti = 0; ti < nt; ++ti) {
            const std::uint64_t s = replicate_seed(cfg, r, static_cast<std::uint64_t>(cfg.t_grid[ti]));
            for (int v = 0; v < nv; ++v) at(r, v, ti) = vector_lab_run(variants[v].tau, variants[v].cg, cfg.t_grid[ti], s);
        }
    });

    for (int v = 0; v < nv; ++v) {
        std::vector<std::pair<double, double>> pts;
        double worst_contraction = 0.0;
        for (int ti = 0; ti < nt; ++ti) {
            RmsAcc err;
            MeanAcc con;
            for (int r = 0; r < cfg.replicates; ++r) {
                err.add(at(r, v, ti).error);
                con.add(at(r, v, ti).contraction);
            }
            const std::int64_t t = cfg.t_grid[ti];
            rep.row("vector_lab", variants[v].name, t, cfg.replicates, "rms_error", err.rms(), err.stderr_rms());
            rep.row("vector_lab", variants[v].name, t, cfg.replicates, "mean_contraction", con.mean(),
                    con.stderr_mean());
            pts.emplace_back(static_cast<double>(t), err.rms());
            worst_contraction = std::max(worst_contraction, con.mean());
        }
        const SlopeFit fit = rep.slope_rows("vector_lab", variants[v].name, pts);
        if (variants[v].cg) continue;
        const double f = fracs[v];
        if (f == 0.0) {
            rep.check_upper("cg_ablation.tau=0.slope", -3.0, fit.slope, false);
        } else {
            rep.check_upper("cg_ablation." + variants[v].name + ".contraction", 1.0, worst_contraction, false);
            rep.check_band("cg_ablation." + variants[v].name + ".slope", -2.0, 0.3, fit.slope);
        }
    }
    return rep.take();
}

}  // namespace eqtrack::harness::detail
