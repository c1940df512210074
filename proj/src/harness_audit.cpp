#include "harness_internal.hpp"

#include "eqtrack/equilibrium.hpp"
#include "eqtrack/types.hpp"

#include <random>

namespace eqtrack::harness {

namespace {

constexpr int kAuditInstances = 25;
constexpr double kFdStep = 1e-5;

Mat random_sym(int d, Rng& rng) {
    std::normal_distribution<double> nd;
    Mat a(d, d);
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i) a(i, j) = nd(rng);
    return sym_part(a);
}

ChartPoint random_chart_point(int d, double scale, Rng& rng) {
    std::normal_distribution<double> nd;
    ChartVec v(chart_dim(d));
    for (int k = 0; k < v.size(); ++k) v(k) = nd(rng);
    return ChartPoint::unpack(d, scale * v / v.norm());
}

double rel(double err, double ref) { return err / std::max(ref, 1e-300); }

double gradient_rel(const ChartGradient& a, const ChartGradient& b, bool rotational) {
    if (rotational) return rel((a.gtheta - b.gtheta).norm(), a.gtheta.norm());
    return rel((a.gx - b.gx).norm(), a.gx.norm());
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<AuditEntry> run_audit(std::uint64_t seed) {
    const std::vector<std::pair<std::string, bool>> names = {
        {"lift", false},          {"statistic_update", false}, {"dstat_gx", true},
        {"dstat_gtheta", true},   {"hvp", true},               {"frozen_fixed_point", false},
    };
    std::vector<std::vector<double>> errs(names.size());
    ModelRecipe recipe;
    recipe.d = 3;
    recipe.p = 8;
    FrozenSolveOptions tight;
    tight.tol = 1e-14;
    tight.accept_tol = 1e-13;

    for (int inst = 0; inst < kAuditInstances; ++inst) {
        Rng rng(derive_seed(seed, 1, static_cast<std::uint64_t>(inst)));
        const ModelSpec spec = generate_model(recipe, rng);
        const int d = spec.dim();
        const int p = spec.obs_dim();

        // lift: compressed form against the ambient Woodbury form
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
        CompressedStat stat = CompressedStat::empty(d);
        Mat batch = Mat::Zero(d, d);
        const int n_obs = 200;
        for (int k = 0; k < n_obs; ++k) {
            const Eigen::VectorXd y = sample_observation(spec, rng);
            const Vec z = compress(spec, y);
            s += y * y.transpose() / n_obs;
            stat = update_statistic(stat, z);
            batch += z * z.transpose();
        }
        batch /= n_obs;
        const Mat d_mat = compress_moment(spec, s);
        const SpdMatrix sigma = chart_exp(spec.base(), random_chart_point(d, 0.5, rng));
        const SymMatrix amb = ambient_lift(spec, sigma, s);
        const SymMatrix lat = latent_lift(spec, sigma, SymMatrix(Eigen::MatrixXd(d_mat)));
        errs[0].push_back(rel((amb.matrix() - lat.matrix()).norm(), amb.matrix().norm()));
        errs[1].push_back(rel((stat.d - batch).norm(), batch.norm()));

        // statistic derivative of the chart gradient at a random frame
        const EigenFrame frame = chart_frame(spec.base(), random_chart_point(d, 0.3, rng));
        const Mat dd = random_sym(d, rng);
        const ChartGradient an = d_stat_derivative(spec, frame, dd);
        const ChartGradient gp = score_gradient(spec, frame, Mat(stat.d + kFdStep * dd));
        const ChartGradient gm = score_gradient(spec, frame, Mat(stat.d - kFdStep * dd));
        ChartGradient fd = ChartGradient::zero(d);
        fd.gx = (gp.gx - gm.gx) / (2.0 * kFdStep);
        fd.gtheta = (gp.gtheta - gm.gtheta) / (2.0 * kFdStep);
        errs[2].push_back(gradient_rel(an, fd, false));
        errs[3].push_back(gradient_rel(an, fd, true));

        // chart Hessian along a random direction at the base point
        const ChartPoint u = random_chart_point(d, 1.0, rng);
        const ChartGradient hv = hessian_vector_product(spec, spec.base(), stat.d, u);
        const ChartVec hp = fixed_gradient(spec, kFdStep * u, stat.d).packed();
        const ChartVec hm = fixed_gradient(spec, -kFdStep * u, stat.d).packed();
        const ChartVec hfd = (hp - hm) / (2.0 * kFdStep);
        errs[4].push_back(rel((hv.packed() - hfd).norm(), hv.packed().norm()));

        // frozen target is a fixed point of the lift
        const FrozenTarget tgt = solve_frozen_target(spec, stat.d, ChartPoint::zero(d), tight);
        const SpdMatrix sig_hat = chart_exp(spec.base(), tgt.theta);
        const SymMatrix lifted = latent_lift(spec, sig_hat, SymMatrix(Eigen::MatrixXd(stat.d)));
        errs[5].push_back(tgt.converged
                              ? rel((lifted.matrix() - sig_hat.matrix()).norm(), sig_hat.matrix().norm())
                              : std::numeric_limits<double>::infinity());
    }

    std::vector<AuditEntry> out;
    for (std::size_t k = 0; k < names.size(); ++k)
        out.push_back({names[k].first, names[k].second, median(errs[k]),
                       *std::max_element(errs[k].begin(), errs[k].end())});
    return out;
}

namespace detail {

ExperimentResult run_audit_experiment(const ExperimentConfig& cfg) {
    Report rep(cfg);
    rep.header("instances", std::to_string(kAuditInstances) + " models d=3 p=8, 200 observations each");
    rep.header("fd_step", fmt(kFdStep));
    for (const AuditEntry& e : run_audit(cfg.seed)) {
        const std::string method = e.finite_difference ? "analytic_vs_fd" : "analytic_vs_algebraic";
        rep.row(e.name, method, 0, kAuditInstances, "median_rel_error", e.median);
        rep.row(e.name, method, 0, kAuditInstances, "max_rel_error", e.max);
        rep.check_upper("audit." + e.name + ".median", e.finite_difference ? 1e-6 : 1e-12, e.median);
    }
    return rep.take();
}

ExperimentResult run_isserlis(const ExperimentConfig& cfg) {
    Report rep(cfg);
    ModelRecipe recipe;
    recipe.d = 3;
    recipe.p = 8;
    Rng mrng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(cfg.id), 0));
    const ModelSpec spec = generate_model(recipe, mrng);
    const int pairs = cfg.replicates;
    rep.header("model", "d=3 p=8 R=0.5I lambda=2*0.75^(i-1)+0.2");
    rep.header("directions", "U=V random symmetric (Gaussian entries), one per pair");
    rep.header("sample_sizes", grid_string(cfg.t_grid));

    const int nn = static_cast<int>(cfg.t_grid.size());
    std::vector<double> err(static_cast<std::size_t>(pairs) * nn);
    parallel_for(pairs * nn, cfg.workers, [&](int idx) {
        const int pr = idx / nn;
        const int k = idx % nn;
        Rng drng(replicate_seed(cfg, static_cast<std::uint64_t>(pr), 1));
        const SymMatrix u(Eigen::MatrixXd(random_sym(spec.dim(), drng)));
        Rng rng(replicate_seed(cfg, static_cast<std::uint64_t>(pr), 2, static_cast<std::uint64_t>(cfg.t_grid[k])));
        err[idx] = isserlis_mc_check(spec, u, u, cfg.t_grid[k], rng).relative_error();
    });
    std::vector<std::pair<double, double>> pts;
    double last = 0.0;
    for (int k = 0; k < nn; ++k) {
        std::vector<double> col;
        MeanAcc acc;
        for (int pr = 0; pr < pairs; ++pr) {
            col.push_back(err[static_cast<std::size_t>(pr) * nn + k]);
            acc.add(col.back());
        }
        last = median(col);
        rep.row("d3p8", "score_covariance", cfg.t_grid[k], pairs, "median_rel_error", last);
        rep.row("d3p8", "score_covariance", cfg.t_grid[k], pairs, "mean_rel_error", acc.mean(), acc.stderr_mean());
        pts.emplace_back(static_cast<double>(cfg.t_grid[k]), last);
    }
    const SlopeFit fit = rep.slope_rows("d3p8", "score_covariance", pts);
    rep.check_upper("isserlis.median_rel_error.N=" + std::to_string(cfg.t_grid.back()), 3e-3, last);
    rep.check_band("isserlis.slope", -0.45, 0.15, fit.slope);

    // Wishart second moment of the running statistic
    const int wreps = 2000;
    rep.header("wishart", "T in {10,100}, " + std::to_string(wreps) + " replicates");
    for (std::int64_t t : {std::int64_t{10}, std::int64_t{100}}) {
        std::vector<double> v(wreps);
        parallel_for(wreps, cfg.workers, [&](int r) {
            Rng rng(replicate_seed(cfg, static_cast<std::uint64_t>(r), 3, static_cast<std::uint64_t>(t)));
            CompressedStat st = CompressedStat::empty(spec.dim());
            for (std::int64_t k = 0; k < t; ++k) update_statistic_inplace(st, sample_compressed(spec, rng));
            v[r] = (st.d - spec.d_star()).squaredNorm();
        });
        MeanAcc acc;
        for (double x : v) acc.add(x);
        const double exact = wishart_second_moment(spec, t);
        rep.row("d3p8", "wishart_mc", t, wreps, "mean_sq_frobenius", acc.mean(), acc.stderr_mean());
        rep.row("d3p8", "wishart_exact", t, wreps, "mean_sq_frobenius", exact);
        rep.check_upper("wishart.rel_error.T=" + std::to_string(t), 0.05, std::abs(acc.mean() - exact) / exact);
    }
    return rep.take();
}

}  // namespace detail

}  // namespace eqtrack::harness
