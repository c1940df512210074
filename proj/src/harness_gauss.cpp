#include "harness_internal.hpp"

#include "eqtrack/tracker.hpp"
#include "eqtrack/types.hpp"

#include <random>

namespace eqtrack::harness::detail {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Per-run reduction kept in memory instead of the full RunRecord.
struct RunSummary {
    double error = kInf;
    double online = kInf;
    double batch = kInf;
    bool in_tube = false;
    bool at_restart_in_tube = false;
    bool dead = true;
    ChartVec theta;
    int contraction_ok = 0;  // in-tube contractions <= 7/8
    int contraction_n = 0;
    int failures = 0;  // 1 when the run hit an oracle, corrector or initialization failure
};

RunSummary summarize(const RunRecord& rec, double tube_radius) {
    RunSummary s;
    s.error = rec.terminal_error;
    s.online = rec.dist_online;
    s.batch = rec.dist_batch;
    s.dead = !std::isfinite(rec.terminal_error);
    s.in_tube = rec.stayed_in_tube() && !s.dead;
    s.at_restart_in_tube = !rec.steps.empty() && rec.steps.front().t == rec.t0 &&
                           rec.steps.front().error <= tube_radius;
    if (!s.dead) s.theta = rec.terminal_theta.packed();
    for (double c : rec.in_tube_contractions) {
        ++s.contraction_n;
        if (c <= 7.0 / 8.0) ++s.contraction_ok;
    }
    s.failures = rec.failures > 0 ? 1 : 0;
    return s;
}

/// Summaries indexed [replicate][config][horizon]; every config of a replicate shares one stream.
class GridRuns {
public:
    GridRuns(const ExperimentConfig& cfg, const ModelSpec& spec, const std::vector<TrackerConfig>& configs,
             const std::vector<std::int64_t>& grid, std::uint64_t setting)
        : nc_(static_cast<int>(configs.size())), nt_(static_cast<int>(grid.size())), reps_(cfg.replicates) {
        data_.resize(static_cast<std::size_t>(reps_) * nc_ * nt_);
        parallel_for(reps_, cfg.workers, [&](int r) {
            try {
                const auto recs = run_stream_batch(spec, configs, grid, replicate_seed(cfg, r, setting));
                for (int c = 0; c < nc_; ++c)
                    for (int k = 0; k < nt_; ++k) at(r, c, k) = summarize(recs[c][k], configs[c].tube_radius);
            } catch (const Error&) {
                for (int c = 0; c < nc_; ++c)
                    for (int k = 0; k < nt_; ++k) at(r, c, k).failures = 1;
            }
        });
    }

    RunSummary& at(int r, int c, int k) { return data_[(static_cast<std::size_t>(r) * nc_ + c) * nt_ + k]; }
    [[nodiscard]] const RunSummary& at(int r, int c, int k) const {
        return data_[(static_cast<std::size_t>(r) * nc_ + c) * nt_ + k];
    }
    [[nodiscard]] int replicates() const { return reps_; }

private:
    int nc_;
    int nt_;
    int reps_;
    std::vector<RunSummary> data_;
};

ModelSpec experiment_model(const ExperimentConfig& cfg, const ModelRecipe& recipe, std::uint64_t setting) {
    Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(cfg.id), setting));
    return generate_model(recipe, rng);
}

std::string recipe_string(const ModelRecipe& r) {
    std::string s = "d=" + std::to_string(r.d) + " p=" + std::to_string(r.p) + " R=" + fmt(r.noise_var) + "I";
    if (r.lambda.size() > 0) {
        s += " lambda=";
        for (int k = 0; k < r.lambda.size(); ++k) s += (k ? ";" : "") + fmt(r.lambda(k));
    } else {
        s += " lambda=2*0.75^(i-1)+0.2";
    }
    if (r.h_condition > 0.0) s += " h_condition=" + fmt(r.h_condition);
    return s;
}

/// RMS terminal error rows for one config; returns the (T, rms) series over runs that finished.
std::vector<std::pair<double, double>> rms_rows(Report& rep, const GridRuns& runs, int c,
                                                const std::vector<std::int64_t>& grid, const std::string& setting,
                                                const std::string& method) {
    std::vector<std::pair<double, double>> pts;
    int failures = 0;
    for (int k = 0; k < static_cast<int>(grid.size()); ++k) {
        RmsAcc acc;
        int exits = 0;
        for (int r = 0; r < runs.replicates(); ++r) {
            const RunSummary& s = runs.at(r, c, k);
            failures += s.failures;
            if (s.dead) continue;
            acc.add(s.error);
            if (!s.in_tube) ++exits;
        }
        rep.row(setting, method, grid[k], acc.sq.n, "rms_error", acc.rms(), acc.stderr_rms());
        rep.row(setting, method, grid[k], acc.sq.n, "tube_exit_fraction",
                acc.sq.n ? static_cast<double>(exits) / acc.sq.n : 0.0);
        pts.emplace_back(static_cast<double>(grid[k]), acc.rms());
    }
    rep.row(setting, method, 0, runs.replicates(), "failed_runs", failures);
    rep.add_failures(failures);
    return pts;
}

TrackerConfig oracle_tracker(int m, PredictorSign sign, RestartKind restart, double tube_radius) {
    TrackerConfig c;
    c.predictor_order = m;
    c.predictor_sign = sign;
    c.corrector = CorrectorConfig::oracle_linear(0.7);
    c.restart = restart;
    c.tube_radius = tube_radius;
    c.record_stride = 1 << 30;  // restart step and terminal step only
    return c;
}

}  // namespace

ExperimentResult run_gauss_track(const ExperimentConfig& cfg) {
    Report rep(cfg);
    rep.header("corrector", "oracle linear q=0.7");
    rep.header("restart", "exact target at ceil(T/2)");
    const std::vector<std::string> names = {"no_predictor", "first_order", "wrong_sign"};
    const std::vector<TrackerConfig> configs = {
        oracle_tracker(0, PredictorSign::Normal, RestartKind::Oracle, 0.5),
        oracle_tracker(1, PredictorSign::Normal, RestartKind::Oracle, 0.5),
        oracle_tracker(1, PredictorSign::WrongSign, RestartKind::Oracle, 0.5),
    };
    struct Setting {
        std::string name;
        ModelRecipe recipe;
        const std::vector<std::int64_t>* grid;
    };
    ModelRecipe small;
    small.d = 3;
    small.p = 8;
    ModelRecipe wide;
    wide.d = 5;
    wide.p = 20;
    const std::vector<Setting> settings = {{"d3p8", small, &cfg.t_grid}, {"d5p20", wide, &cfg.t_grid_wide}};
    for (std::size_t si = 0; si < settings.size(); ++si) {
        const Setting& st = settings[si];
        if (st.grid->empty()) continue;
        rep.header("model." + st.name, recipe_string(st.recipe));
        const ModelSpec spec = experiment_model(cfg, st.recipe, si);
        const GridRuns runs(cfg, spec, configs, *st.grid, si);
        for (int c = 0; c < 3; ++c) {
            const auto pts = rms_rows(rep, runs, c, *st.grid, st.name, names[c]);
            const SlopeFit f = rep.slope_rows(st.name, names[c], pts);
            const std::string check = "gauss_track." + st.name + "." + names[c] + ".local_slope";
            if (c == 0) rep.check_band(check, -1.0, 0.15, f.local_slope_last);
            if (c == 1) rep.check_band(check, -2.0, 0.25, f.local_slope_last);
            if (c == 2) rep.check_lower(check, -1.3, f.local_slope_last);
        }
    }
    return rep.take();
}

ExperimentResult run_transfer(const ExperimentConfig& cfg) {
    Report rep(cfg);
    ModelRecipe recipe;
    recipe.d = 3;
    recipe.p = 8;
    rep.header("model", recipe_string(recipe));
    rep.header("tracker", "m=1 oracle linear q=0.7 linear restart at ceil(T/2)");
    const ModelSpec spec = experiment_model(cfg, recipe, 0);
    const BatchConstants bc = batch_constants(spec);
    const int n = chart_dim(spec.dim());

    // projection direction for the CLT statistic
    Rng vrng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(cfg.id), 99));
    std::normal_distribution<double> nd;
    ChartVec v(n);
    for (int k = 0; k < n; ++k) v(k) = nd(vrng);
    v.normalize();
    const Eigen::MatrixXd jinv = Eigen::MatrixXd(bc.fisher).inverse();
    const Eigen::VectorXd vd = v;
    const double v_scale = std::sqrt(vd.dot(jinv * vd));
    rep.header("trace_inv_fisher", fmt(bc.trace_inv_fisher));
    rep.header("ks_direction_variance", fmt(v_scale * v_scale));

    TrackerConfig tc = oracle_tracker(1, PredictorSign::Normal, RestartKind::Linear, 0.5);
    const GridRuns runs(cfg, spec, {tc}, cfg.t_grid, 0);
    const auto pts = rms_rows(rep, runs, 0, cfg.t_grid, "d3p8", "first_order");
    rep.slope_rows("d3p8", "first_order", pts);

    std::vector<double> scaled_track;
    double online_last = 0.0;
    double batch_last = 0.0;
    double ks_last = 1.0;
    for (int k = 0; k < static_cast<int>(cfg.t_grid.size()); ++k) {
        const double t = static_cast<double>(cfg.t_grid[k]);
        MeanAcc on;
        MeanAcc ba;
        std::vector<double> z;
        for (int r = 0; r < runs.replicates(); ++r) {
            const RunSummary& s = runs.at(r, 0, k);
            if (s.dead) continue;
            on.add(t * s.online * s.online);
            ba.add(t * s.batch * s.batch);
            z.push_back(std::sqrt(t) * v.dot(s.theta) / v_scale);
        }
        const double st = std::sqrt(t) * pts[k].second;
        scaled_track.push_back(st);
        const std::int64_t ti = cfg.t_grid[k];
        rep.row("d3p8", "first_order", ti, on.n, "sqrtT_rms_track", st);
        rep.row("d3p8", "online", ti, on.n, "T_mean_dist2", on.mean(), on.stderr_mean());
        rep.row("d3p8", "batch", ti, ba.n, "T_mean_dist2", ba.mean(), ba.stderr_mean());
        double ks = std::numeric_limits<double>::quiet_NaN();
        try {
            ks = ks_normal(z);
        } catch (const InsufficientData&) {
        }
        rep.row("d3p8", "online", ti, static_cast<int>(z.size()), "ks_projected_clt", ks);
        online_last = on.mean();
        batch_last = ba.mean();
        ks_last = ks;
    }

    bool monotone = true;
    for (std::size_t k = 1; k < scaled_track.size(); ++k) monotone = monotone && scaled_track[k] < scaled_track[k - 1];
    const double drop = scaled_track.front() / scaled_track.back();
    rep.check_lower("transfer.sqrtT_rms_track.drop_factor", 10.0, monotone ? drop : 0.0);
    const double tr = bc.trace_inv_fisher;
    rep.check_upper("transfer.online_vs_batch.rel_gap", 0.02, std::abs(online_last - batch_last) / batch_last);
    rep.check_upper("transfer.online_vs_trace_inv_fisher.rel_gap", 0.05, std::abs(online_last - tr) / tr);
    rep.check_upper("transfer.batch_vs_trace_inv_fisher.rel_gap", 0.05, std::abs(batch_last - tr) / tr);
    rep.check_upper("transfer.ks_projected_clt", 0.1, ks_last);
    return rep.take();
}

namespace {

TrackerConfig certified_tracker(const CurvatureBand& band, RestartKind restart, double tube_radius) {
    const CertifiedParameters cp = certified_parameters(band.mu_star, band.l_star);
    TrackerConfig c;
    c.predictor_order = 1;
    c.corrector = CorrectorConfig::inexact_newton_cg(cp.eta, cp.lambda, cp.tau_max);
    c.restart = restart;
    c.tube_radius = tube_radius;
    c.record_stride = 1 << 30;  // restart step and terminal step only
    return c;
}

std::string certified_string(const CurvatureBand& band) {
    const CertifiedParameters cp = certified_parameters(band.mu_star, band.l_star);
    return "Newton-CG eta=" + fmt(cp.eta) + " lambda=mu*=" + fmt(cp.lambda) + " tau=tau_max=" + fmt(cp.tau_max) +
           " L*=" + fmt(band.l_star);
}

}  // namespace

ExperimentResult run_restart(const ExperimentConfig& cfg) {
    Report rep(cfg);
    ModelRecipe recipe;
    recipe.d = 3;
    recipe.p = 8;
    const ModelSpec spec = experiment_model(cfg, recipe, 0);
    const CurvatureBand band = curvature_band(spec);
    const double rho = 0.5;
    rep.header("model", recipe_string(recipe));
    rep.header("corrector", certified_string(band));
    rep.header("predictor", "m=1");
    rep.header("tube_radius", fmt(rho));
    rep.header("perturbation_radius", "0.125");
    rep.header("random_far", "Haar rotation, log-uniform eigenvalues in [0.1,10] x geometric mean of lambda*");
    rep.header("entry", "error <= tube_radius at every step from ceil(T/2) to T");
    const std::vector<std::string> names = {"linear", "tube_perturbation", "random_far"};
    const std::vector<TrackerConfig> configs = {
        certified_tracker(band, RestartKind::Linear, rho),
        certified_tracker(band, RestartKind::TubePerturbation, rho),
        certified_tracker(band, RestartKind::RandomFar, rho),
    };
    const GridRuns runs(cfg, spec, configs, cfg.t_grid, 0);

    std::vector<std::vector<double>> entry(3);
    for (int c = 0; c < 3; ++c) {
        int failures = 0;
        for (int k = 0; k < static_cast<int>(cfg.t_grid.size()); ++k) {
            MeanAcc in;
            MeanAcc start_in;
            MeanAcc terminal_in;
            for (int r = 0; r < runs.replicates(); ++r) {
                const RunSummary& s = runs.at(r, c, k);
                failures += s.failures;
                in.add(s.in_tube ? 1.0 : 0.0);
                start_in.add(s.at_restart_in_tube ? 1.0 : 0.0);
                terminal_in.add(!s.dead && s.error <= rho ? 1.0 : 0.0);
            }
            const std::int64_t t = cfg.t_grid[k];
            rep.row("d3p8", names[c], t, in.n, "tube_entry_fraction", in.mean(), in.stderr_mean());
            rep.row("d3p8", names[c], t, in.n, "restart_in_tube_fraction", start_in.mean(), start_in.stderr_mean());
            rep.row("d3p8", names[c], t, in.n, "terminal_in_tube_fraction", terminal_in.mean(),
                    terminal_in.stderr_mean());
            entry[c].push_back(in.mean());
        }
        rep.row("d3p8", names[c], 0, runs.replicates(), "failed_runs", failures);
        rep.add_failures(failures);
    }
    for (int k = 0; k < static_cast<int>(cfg.t_grid.size()); ++k) {
        const std::string t = std::to_string(cfg.t_grid[k]);
        rep.check_upper("restart.random_far.entry_fraction.T=" + t, 0.10, entry[2][k]);
        if (cfg.t_grid[k] >= 800)
            rep.check_upper("restart.linear_vs_tube_perturbation.entry_gap.T=" + t, 0.1,
                            std::abs(entry[0][k] - entry[1][k]));
    }
    return rep.take();
}

ExperimentResult run_solver_hierarchy(const ExperimentConfig& cfg) {
    Report rep(cfg);
    ModelRecipe recipe;
    recipe.d = 3;
    recipe.p = 8;
    const ModelSpec spec = experiment_model(cfg, recipe, 0);
    const CurvatureBand band = curvature_band(spec);
    rep.header("model", recipe_string(recipe));
    rep.header("certified", certified_string(band) + " m=1 exact restart");
    rep.header("damped", "exact damped Newton eta=1 m=0 exact restart");
    rep.header("mu_star", fmt(band.mu_star));
    rep.header("l_star", fmt(band.l_star));

    TrackerConfig certified = certified_tracker(band, RestartKind::Oracle, 0.5);
    TrackerConfig damped0 = certified;
    damped0.predictor_order = 0;
    damped0.corrector = CorrectorConfig::exact_damped_newton(1.0, 0.0);
    TrackerConfig damped1 = damped0;
    damped1.corrector = CorrectorConfig::exact_damped_newton(1.0, 1.0);
    const std::vector<std::string> names = {"certified_newton_cg", "damped_newton_lambda=0", "damped_newton_lambda=1"};
    const GridRuns runs(cfg, spec, {certified, damped0, damped1}, cfg.t_grid, 0);

    for (int c = 0; c < 3; ++c) {
        const auto pts = rms_rows(rep, runs, c, cfg.t_grid, "d3p8", names[c]);
        rep.slope_rows("d3p8", names[c], pts);
    }
    double fraction = 0.0;
    for (int k = 0; k < static_cast<int>(cfg.t_grid.size()); ++k) {
        long ok = 0;
        long total = 0;
        int runs_with_steps = 0;
        for (int r = 0; r < runs.replicates(); ++r) {
            const RunSummary& s = runs.at(r, 0, k);
            ok += s.contraction_ok;
            total += s.contraction_n;
            if (s.contraction_n > 0) ++runs_with_steps;
        }
        fraction = total ? static_cast<double>(ok) / static_cast<double>(total) : 0.0;
        rep.row("d3p8", names[0], cfg.t_grid[k], runs_with_steps, "in_tube_steps", static_cast<double>(total));
        rep.row("d3p8", names[0], cfg.t_grid[k], runs_with_steps, "fraction_contraction_le_7/8", fraction);
    }
    rep.check_lower("solver_hierarchy.certified.fraction_contraction_le_7/8", 0.95, fraction);
    return rep.take();
}

ExperimentResult run_stress(const ExperimentConfig& cfg) {
    Report rep(cfg);
    rep.header("model", "d=3 p=10 lambda=(1+2g,1+g,1) R=sigma^2 I H random or singular values swept over 30x");
    rep.header("tracker", "oracle linear q=0.7 exact restart tube_radius=0.8");
    const std::vector<double> gaps = {0.8, 0.3, 0.05};
    const std::vector<double> noises = {0.1, 0.5, 2.0};
    const std::vector<double> conds = {0.0, 30.0};
    const std::vector<std::string> names = {"no_predictor", "first_order"};
    const std::vector<TrackerConfig> configs = {
        oracle_tracker(0, PredictorSign::Normal, RestartKind::Oracle, 0.8),
        oracle_tracker(1, PredictorSign::Normal, RestartKind::Oracle, 0.8),
    };
    std::uint64_t cell = 0;
    for (double g : gaps)
        for (double s2 : noises)
            for (double hc : conds) {
                ModelRecipe recipe;
                recipe.d = 3;
                recipe.p = 10;
                recipe.noise_var = s2;
                recipe.lambda = Vec(3);
                recipe.lambda << 1.0 + 2.0 * g, 1.0 + g, 1.0;
                recipe.h_condition = hc;
                const std::string setting =
                    "gap=" + fmt(g) + " sigma2=" + fmt(s2) + " H=" + (hc > 0.0 ? "ill" : "well");
                const ModelSpec spec = experiment_model(cfg, recipe, cell);
                const GridRuns runs(cfg, spec, configs, cfg.t_grid, cell);
                ++cell;
                for (int c = 0; c < 2; ++c) {
                    const auto pts = rms_rows(rep, runs, c, cfg.t_grid, setting, names[c]);
                    rep.slope_rows(setting, names[c], pts);
                }
            }
    return rep.take();
}

}  // namespace eqtrack::harness::detail
