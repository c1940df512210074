#include "eqtrack/tracker.hpp"

#include "eqtrack/seeding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace eqtrack {

CorrectorConfig CorrectorConfig::oracle_linear(double q) {
    CorrectorConfig c;
    c.kind = CorrectorKind::OracleLinear;
    c.q = q;
    return c;
}

CorrectorConfig CorrectorConfig::exact_damped_newton(double eta, double lambda) {
    CorrectorConfig c;
    c.kind = CorrectorKind::ExactDampedNewton;
    c.eta = eta;
    c.lambda = lambda;
    return c;
}

CorrectorConfig CorrectorConfig::inexact_newton_cg(double eta, double lambda, double tau, int max_cg_iters) {
    CorrectorConfig c;
    c.kind = CorrectorKind::InexactNewtonCg;
    c.eta = eta;
    c.lambda = lambda;
    c.tau = tau;
    c.max_cg_iters = max_cg_iters;
    return c;
}

void TrackerConfig::validate() const {
    if (predictor_order < 0 || predictor_order > 1) throw std::invalid_argument("TrackerConfig: order must be 0 or 1");
    if (!(restart_fraction > 0.0 && restart_fraction <= 1.0))
        throw std::invalid_argument("TrackerConfig: restart fraction outside (0,1]");
    if (!(tube_radius > 0.0)) throw std::invalid_argument("TrackerConfig: tube radius must be positive");
    const auto& c = corrector;
    if (c.kind == CorrectorKind::OracleLinear && !(c.q > 0.0 && c.q < 1.0))
        throw std::invalid_argument("TrackerConfig: q outside (0,1)");
    if (c.kind != CorrectorKind::OracleLinear &&
        (!(c.eta > 0.0 && c.eta <= 1.0) || !(c.lambda >= 0.0) || !(c.tau >= 0.0)))
        throw std::invalid_argument("TrackerConfig: invalid Newton parameters");
    if (record_stride < 0) throw std::invalid_argument("TrackerConfig: negative stride");
}

CertifiedParameters certified_parameters(double mu, double l_f) {
    if (!(mu > 0.0) || !(l_f > 0.0)) throw std::invalid_argument("certified_parameters: need mu, l_f > 0");
    return {1.0, mu, 3.0 * mu / (16.0 * l_f)};
}

CgResult conjugate_gradient(const std::function<ChartVec(const ChartVec&)>& op, const ChartVec& rhs, double tau,
                            int max_iters) {
    CgResult res;
    res.x = ChartVec::Zero(rhs.size());
    const double bnorm = rhs.norm();
    if (bnorm == 0.0) return res;
    // tau = 0 runs to the rounding floor
    const double target = std::max(tau, 1e-15) * bnorm;
    ChartVec r = rhs;
    ChartVec p = r;
    double rs = r.squaredNorm();
    while (std::sqrt(rs) > target && res.iterations < max_iters) {
        const ChartVec ap = op(p);
        const double pap = p.dot(ap);
        if (!(pap > 0.0)) {
            res.stalled = true;
            break;
        }
        const double alpha = rs / pap;
        res.x += alpha * p;
        r -= alpha * ap;
        const double rs_new = r.squaredNorm();
        p = r + (rs_new / rs) * p;
        rs = rs_new;
        ++res.iterations;
    }
    res.relative_residual = std::sqrt(rs) / bnorm;
    if (res.relative_residual >= 1.0) res.stalled = true;
    return res;
}

ChartPoint predict_with_response(const ChartPoint& theta, const ChartPoint& response, const TrackerConfig& cfg) {
    if (cfg.predictor_order == 0) return theta;
    return cfg.predictor_sign == PredictorSign::Normal ? theta + response : theta - response;
}

ChartPoint predict(const FrozenTarget& target_prev, const ChartPoint& theta, const Mat& delta_d,
                   const TrackerConfig& cfg) {
    if (cfg.predictor_order == 0) return theta;
    const Mat& q = target_prev.eval.state.frame.q;
    return predict_with_response(theta, response_apply_rotated(target_prev, sym_part(Mat(q.transpose() * delta_d * q))),
                                 cfg);
}

namespace {

// Columns: transport of each packed unit direction from the base chart to the body frame.
ChartMat transport_matrix(const ChartEvaluation& ev) {
    const int d = ev.theta.dim();
    const int n = chart_dim(d);
    ChartMat m = ChartMat::Zero(n, n);
    for (int k = 0; k < n; ++k) {
        ChartVec e = ChartVec::Zero(n);
        e(k) = 1.0;
        m.col(k) = fixed_to_body(ev, ChartPoint::unpack(d, e)).packed();
    }
    return m;
}

}  // namespace

CorrectionResult correct(const ModelSpec& spec, const ChartPoint& theta_tilde, const Mat& d_mat,
                         const TrackerConfig& cfg, const FrozenTarget* oracle, double l_star) {
    const auto& c = cfg.corrector;
    const int d = theta_tilde.dim();
    const int n = chart_dim(d);
    CorrectionResult out;
    if (c.kind == CorrectorKind::OracleLinear) {
        if (oracle == nullptr) throw std::invalid_argument("correct: OracleLinear needs the frozen target");
        out.theta = oracle->theta + c.q * (theta_tilde - oracle->theta);
        return out;
    }
    const ChartEvaluation ev = evaluate_chart(spec, theta_tilde, d_mat);
    const ChartVec f = ev.fixed_grad.packed();
    ChartVec step(n);
    if (c.kind == CorrectorKind::ExactDampedNewton) {
        const ChartMat hb = body_hessian(spec, ev.state);
        if (c.lambda == 0.0) {
            Eigen::LDLT<ChartMat> ldlt(hb);
            const ChartVec body = ldlt.solve(ev.state.grad.packed());
            if (ldlt.info() != Eigen::Success || !body.allFinite()) throw SingularMatrix("correct: singular Hessian");
            step = body_to_fixed(ev, ChartPoint::unpack(d, body)).packed();
        } else {
            const ChartMat m = transport_matrix(ev);
            ChartMat hf = m.transpose() * hb * m;
            hf = 0.5 * (hf + hf.transpose()).eval();
            hf.diagonal().array() += c.lambda;
            Eigen::LDLT<ChartMat> ldlt(hf);
            step = ldlt.solve(f);
            if (ldlt.info() != Eigen::Success || !step.allFinite()) throw SingularMatrix("correct: singular system");
        }
    } else {
        const int cap = c.max_cg_iters > 0 ? c.max_cg_iters : 10 * n;
        const double lambda = c.lambda;
        auto op = [&](const ChartVec& v) -> ChartVec {
            return fixed_hvp(spec, ev, ChartPoint::unpack(d, v)).packed() + lambda * v;
        };
        const CgResult cg = conjugate_gradient(op, f, c.tau, cap);
        out.cg_iters = cg.iterations;
        if (cg.stalled) {
            out.cg_stalled = true;
            step = f / (l_star + lambda);
        } else {
            step = cg.x;
        }
    }
    out.theta = theta_tilde - c.eta * ChartPoint::unpack(d, step);
    return out;
}

RestartResult restart_linear(const ModelSpec& spec, const CompressedStat& stat) {
    if (stat.count < 1) throw InsufficientData("restart_linear: empty statistic");
    RestartResult out;
    const Mat& gi = spec.g_inv();
    out.raw = sym_part(Mat(gi * (stat.d - spec.g()) * gi));
    try {
        const SpdMatrix s{Eigen::MatrixXd(out.raw)};
        (void)eig_simple(s);
        out.sigma = s;
    } catch (const Error&) {
        out.sigma.reset();
    }
    return out;
}

SpdMatrix restart_fallback(const ModelSpec& spec, const CompressedStat& stat, const Mat& raw) {
    const int d = spec.dim();
    const double tg = spec.g().trace();
    double scale = d * (stat.d - spec.g()).trace() / (tg * tg);
    if (!(scale > 0.0)) scale = spec.g_inv().trace() / d;
    const double floor = 0.05 * scale;
    Eigen::SelfAdjointEigenSolver<Mat> es(raw);
    Vec ev = es.eigenvalues();
    // ascending; keep floored values distinct so the result has a simple spectrum
    double last = 0.0;
    for (int k = 0; k < d; ++k) {
        double v = std::max(ev(k), floor);
        if (k > 0 && v <= last * (1.0 + 1e-3)) v = last * (1.0 + 1e-3);
        ev(k) = v;
        last = v;
    }
    const Mat s = sym_part(Mat(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose()));
    return SpdMatrix(Eigen::MatrixXd(s));
}

std::int64_t restart_step(double fraction, std::int64_t t_total) {
    const auto t0 = static_cast<std::int64_t>(std::ceil(fraction * static_cast<double>(t_total) - 1e-9));
    return std::clamp<std::int64_t>(t0, 1, t_total);
}

namespace {

enum class RestartTag : std::uint64_t { Linear = 11, Oracle = 12, Perturb = 13, Far = 14 };

struct TrackState {
    const TrackerConfig* cfg = nullptr;
    std::int64_t t_total = 0;
    std::int64_t t0 = 0;
    ChartPoint theta;
    bool alive = false;
    bool frozen = false;
    RunRecord rec;
};

ChartPoint random_far_point(const ModelSpec& spec, Rng& rng) {
    const int d = spec.dim();
    const Vec& lam = spec.base().lambda;
    const double geo = std::exp(lam.array().log().mean());
    std::uniform_real_distribution<double> u(std::log(0.1), std::log(10.0));
    Vec ev(d);
    for (int k = 0; k < d; ++k) ev(k) = geo * std::exp(u(rng));
    std::sort(ev.data(), ev.data() + d, std::greater<>());
    const Mat r = haar_orthogonal(d, rng);
    const Mat s = sym_part(Mat(r * ev.asDiagonal() * r.transpose()));
    return chart_log(spec.base(), SpdMatrix(Eigen::MatrixXd(s)));
}

ChartPoint random_direction(int d, Rng& rng) {
    std::normal_distribution<double> nd;
    ChartVec v(chart_dim(d));
    for (int k = 0; k < v.size(); ++k) v(k) = nd(rng);
    return ChartPoint::unpack(d, v / v.norm());
}

void record_step(TrackState& s, std::int64_t t, double err, int cg_iters, double contraction) {
    const bool in_tube = std::isfinite(err) && err <= s.cfg->tube_radius && !s.frozen;
    if (!in_tube && !s.rec.tube_exit_step) s.rec.tube_exit_step = t;
    const int stride = s.cfg->record_stride;
    if ((stride > 0 && (t - s.t0) % stride == 0) || t == s.t_total)
        s.rec.steps.push_back({t, err, in_tube, cg_iters, contraction});
}

void initialize_state(TrackState& s, const ModelSpec& spec, const CompressedStat& stat, const FrozenTarget& cur,
                      std::uint64_t seed) {
    s.alive = true;
    try {
        switch (s.cfg->restart) {
            case RestartKind::Linear: {
                const RestartResult rr = restart_linear(spec, stat);
                s.rec.restart_rejected = rr.rejected();
                const SpdMatrix sigma = rr.rejected() ? restart_fallback(spec, stat, rr.raw) : *rr.sigma;
                s.theta = chart_log(spec.base(), sigma);
                break;
            }
            case RestartKind::Oracle:
                s.theta = cur.theta;
                break;
            case RestartKind::TubePerturbation: {
                Rng rng(derive_seed(seed, static_cast<std::uint64_t>(RestartTag::Perturb),
                                    static_cast<std::uint64_t>(s.t_total)));
                s.theta = cur.theta + s.cfg->perturbation_radius * random_direction(spec.dim(), rng);
                break;
            }
            case RestartKind::RandomFar: {
                Rng rng(derive_seed(seed, static_cast<std::uint64_t>(RestartTag::Far),
                                    static_cast<std::uint64_t>(s.t_total)));
                s.theta = random_far_point(spec, rng);
                break;
            }
        }
    } catch (const Error&) {
        // no valid initial state inside the chart
        s.theta = cur.theta;
        s.frozen = true;
        s.alive = false;
        ++s.rec.failures;
    }
    const double err = s.alive ? (s.theta - cur.theta).norm() : std::numeric_limits<double>::infinity();
    record_step(s, s.t0, err, 0, 0.0);
}

void finalize_state(TrackState& s, const FrozenTarget& cur) {
    s.rec.t_total = s.t_total;
    s.rec.t0 = s.t0;
    s.rec.terminal_theta = s.theta;
    s.rec.terminal_target = cur.theta;
    s.rec.terminal_error = s.alive ? (s.theta - cur.theta).norm() : std::numeric_limits<double>::infinity();
    s.rec.dist_online = s.alive ? s.theta.norm() : std::numeric_limits<double>::infinity();
    s.rec.dist_batch = cur.theta.norm();
}

FrozenTarget cold_target(const ModelSpec& spec, const CompressedStat& stat, const FrozenSolveOptions& opts) {
    ChartPoint init = ChartPoint::zero(spec.dim());
    const RestartResult rr = restart_linear(spec, stat);
    if (!rr.rejected()) {
        try {
            init = chart_log(spec.base(), *rr.sigma);
        } catch (const Error&) {
        }
    }
    return solve_frozen_target(spec, stat.d, init, opts);
}

}  // namespace

std::vector<std::vector<RunRecord>> run_stream_batch(const ModelSpec& spec, const std::vector<TrackerConfig>& configs,
                                                     const std::vector<std::int64_t>& horizons, std::uint64_t seed) {
    if (configs.empty() || horizons.empty()) throw std::invalid_argument("run_stream_batch: nothing to run");
    for (const auto& c : configs) c.validate();
    for (auto t : horizons)
        if (t < 8) throw std::invalid_argument("run_stream_batch: horizon must be at least 8");

    const int d = spec.dim();
    const double l_star = curvature_band(spec).l_star;
    std::vector<TrackState> states;
    std::int64_t t_max = 0;
    std::int64_t t_start = std::numeric_limits<std::int64_t>::max();
    for (const auto& c : configs)
        for (auto t_total : horizons) {
            TrackState s;
            s.cfg = &c;
            s.t_total = t_total;
            s.t0 = restart_step(c.restart_fraction, t_total);
            states.push_back(std::move(s));
            t_max = std::max(t_max, t_total);
            t_start = std::min(t_start, states.back().t0);
        }

    FrozenSolveOptions opts;
    opts.tol = 1e-12;
    opts.accept_tol = 1e-11;

    Rng rng(seed);
    CompressedStat stat = CompressedStat::empty(d);
    FrozenTarget prev;
    FrozenTarget cur;
    bool have_prev = false;
    for (std::int64_t t = 1; t <= t_max; ++t) {
        const Mat d_prev = stat.d;
        const Vec z = sample_compressed(spec, rng);
        update_statistic_inplace(stat, z);
        if (t < t_start) continue;

        ChartPoint response = ChartPoint::zero(d);
        bool oracle_ok = true;
        try {
            if (!have_prev) {
                cur = cold_target(spec, stat, opts);
            } else {
                const Mat& q = prev.eval.state.frame.q;
                const Mat dd = q.transpose() * (stat.d - d_prev) * q;
                const ChartPoint body = response_body(prev, sym_part(dd));
                response = body_to_fixed(prev.eval, body);
                cur = solve_frozen_target_warm(spec, stat.d, prev, body, opts);
                if (!cur.converged) cur = cold_target(spec, stat, opts);
            }
            oracle_ok = cur.converged;
        } catch (const Error&) {
            oracle_ok = false;
        }
        if (!oracle_ok && !have_prev) {
            // nothing to track against yet; retry at the next step
            for (auto& s : states)
                if (s.t0 == t) s.t0 = t + 1;
            t_start = t + 1;
            continue;
        }

        for (auto& s : states) {
            if (t < s.t0 || t > s.t_total) continue;
            if (t == s.t0) {
                initialize_state(s, spec, stat, cur, seed);
            } else {
                double err = std::numeric_limits<double>::infinity();
                int cg_iters = 0;
                double contraction = 0.0;
                if (s.alive && !s.frozen && oracle_ok) {
                    try {
                        const ChartPoint tilde = predict_with_response(s.theta, response, *s.cfg);
                        const CorrectionResult cr = correct(spec, tilde, stat.d, *s.cfg, &cur, l_star);
                        const double before = (tilde - cur.theta).norm();
                        s.theta = cr.theta;
                        cg_iters = cr.cg_iters;
                        if (cr.cg_stalled) ++s.rec.cg_stalls;
                        err = (s.theta - cur.theta).norm();
                        contraction = before > 0.0 ? err / before : 0.0;
                        if (before <= s.cfg->tube_radius && !s.rec.tube_exit_step)
                            s.rec.in_tube_contractions.push_back(contraction);
                    } catch (const Error&) {
                        s.frozen = true;
                        ++s.rec.failures;
                    }
                }
                if (s.alive && (s.frozen || !oracle_ok)) {
                    if (!oracle_ok) {
                        ++s.rec.failures;
                        s.frozen = true;
                    }
                    err = oracle_ok ? (s.theta - cur.theta).norm() : std::numeric_limits<double>::infinity();
                }
                record_step(s, t, err, cg_iters, contraction);
            }
            if (t == s.t_total) finalize_state(s, cur);
        }
        prev = std::move(cur);
        have_prev = true;
    }

    std::vector<std::vector<RunRecord>> out(configs.size());
    std::size_t idx = 0;
    for (std::size_t c = 0; c < configs.size(); ++c)
        for (std::size_t k = 0; k < horizons.size(); ++k) out[c].push_back(std::move(states[idx++].rec));
    return out;
}

RunRecord run_stream(const ModelSpec& spec, const TrackerConfig& cfg, std::int64_t t_total, std::uint64_t seed) {
    return std::move(run_stream_batch(spec, {cfg}, {t_total}, seed)[0][0]);
}

}  // namespace eqtrack
