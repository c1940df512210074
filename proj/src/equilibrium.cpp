#include "eqtrack/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>

namespace eqtrack {

ChartEvaluation evaluate_chart(const ModelSpec& spec, const ChartPoint& theta, const Mat& d_mat) {
    ChartEvaluation ev;
    ev.theta = theta;
    ev.rot = RotationGenerator(theta.theta);
    const EigenFrame frame = chart_frame(spec.base(), theta, ev.rot);
    ev.state = score_state(spec, frame, d_mat);
    ev.fixed_grad = body_covector_to_fixed(ev, ev.state.grad);
    ev.residual = ev.fixed_grad.norm();
    return ev;
}

ChartGradient fixed_gradient(const ModelSpec& spec, const ChartPoint& theta, const Mat& d_mat) {
    return evaluate_chart(spec, theta, d_mat).fixed_grad;
}

ChartPoint body_to_fixed(const ChartEvaluation& ev, const ChartPoint& body) {
    return {body.x, ev.rot.from_body(body.theta)};
}

ChartPoint fixed_to_body(const ChartEvaluation& ev, const ChartPoint& fixed) {
    return {fixed.x, ev.rot.to_body(fixed.theta)};
}

ChartGradient body_covector_to_fixed(const ChartEvaluation& ev, const ChartGradient& body) {
    return {body.gx, ev.rot.to_body_adjoint(body.gtheta)};
}

ChartPoint fixed_hvp(const ModelSpec& spec, const ChartEvaluation& ev, const ChartPoint& v) {
    const ChartGradient hb = hessian_vector_product(spec, ev.state, fixed_to_body(ev, v));
    const ChartGradient hf = body_covector_to_fixed(ev, hb);
    return {hf.gx, hf.gtheta};
}

ChartVec FrozenTarget::solve_body(const ChartVec& rhs) const {
    const auto& dd = body_ldlt.vectorD();
    const double top = dd.cwiseAbs().maxCoeff();
    if (body_ldlt.info() != Eigen::Success || !(dd.cwiseAbs().minCoeff() > 1e-13 * top))
        throw SingularMatrix("FrozenTarget: chart Hessian is singular");
    return body_ldlt.solve(rhs);
}

ChartMat FrozenTarget::fixed_hessian() const {
    const int d = dim();
    const int n = chart_dim(d);
    ChartMat out(n, n);
    for (int k = 0; k < n; ++k) {
        ChartVec e = ChartVec::Zero(n);
        e(k) = 1.0;
        const ChartPoint v = ChartPoint::unpack(d, e);
        const ChartVec hv = body_hessian * fixed_to_body(eval, v).packed();
        const ChartGradient hf = body_covector_to_fixed(eval, ChartGradient::unpack(d, hv));
        out.col(k) = hf.packed();
    }
    return out;
}

void FrozenTarget::require_converged() const {
    if (!converged) throw NotConverged("frozen target did not converge", residual_norm);
}

namespace {

ChartPoint newton_direction(const ChartEvaluation& ev, const ChartMat& h_body, const Eigen::LDLT<ChartMat>& ldlt,
                            bool& ok) {
    const int d = ev.theta.dim();
    const ChartVec step = -ldlt.solve(ev.state.grad.packed());
    ok = ldlt.info() == Eigen::Success && step.allFinite();
    (void)h_body;
    return body_to_fixed(ev, ChartPoint::unpack(d, step));
}

}  // namespace

namespace {

constexpr double kSpuriousGap = 1e-6;

double relative_gap(const Vec& lam) {
    Vec s = lam;
    std::sort(s.data(), s.data() + s.size());
    double gap = std::numeric_limits<double>::infinity();
    for (int k = 0; k + 1 < s.size(); ++k) gap = std::min(gap, s(k + 1) - s(k));
    return gap / s.maxCoeff();
}

FrozenTarget newton_solve(const ModelSpec& spec, const Mat& d_mat, const ChartPoint& init,
                          const FrozenSolveOptions& opts, const FrozenTarget* chord, bool canonicalize,
                          ChartEvaluation* start = nullptr) {
    FrozenTarget out;
    out.d_mat = d_mat;
    ChartEvaluation ev = start ? std::move(*start) : evaluate_chart(spec, init, d_mat);
    bool use_chord = chord != nullptr && chord->converged;
    int it = 0;
    bool stalled = false;
    ChartMat h_body;
    Eigen::LDLT<ChartMat> ldlt;
    bool have_hessian = false;
    while (ev.residual > opts.tol && it < opts.max_iter) {
        ++it;
        bool ok = false;
        ChartPoint dir;
        if (use_chord) {
            dir = newton_direction(ev, chord->body_hessian, chord->body_ldlt, ok);
        } else {
            h_body = body_hessian(spec, ev.state);
            ldlt.compute(h_body);
            have_hessian = true;
            dir = newton_direction(ev, h_body, ldlt, ok);
        }
        if (!ok) {
            if (use_chord) {
                use_chord = false;
                continue;
            }
            stalled = true;
            break;
        }
        double step = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 30; ++halving) {
            ChartEvaluation cand;
            try {
                cand = evaluate_chart(spec, ev.theta + step * dir, d_mat);
            } catch (const Error&) {
                step *= 0.5;
                continue;
            }
            const double required = use_chord ? 0.1 * ev.residual : ev.residual;
            if (cand.residual < required) {
                ev = std::move(cand);
                accepted = true;
                break;
            }
            if (use_chord) break;
            step *= 0.5;
        }
        if (!accepted) {
            if (use_chord) {
                use_chord = false;
                continue;
            }
            stalled = true;
            break;
        }
        have_hessian = false;
    }
    out.iterations = it;
    out.converged = ev.residual <= opts.tol || ((stalled || it >= opts.max_iter) && ev.residual <= opts.accept_tol);
    // coalescing eigenvalues zero the rotational gradient without a critical point of the objective
    if (out.converged && relative_gap(ev.state.frame.lambda) <= kSpuriousGap) out.converged = false;
    // large rotations can alias another chart representative of the same matrix
    if (canonicalize && out.converged && ev.rot.angle() > std::numbers::pi / 4) {
        try {
            const ChartPoint canon = chart_log(spec.base(), chart_exp(spec.base(), ev.theta));
            if ((canon - ev.theta).norm() > 1e-8) {
                FrozenTarget alt = newton_solve(spec, d_mat, canon, opts, nullptr, false);
                if (alt.converged) {
                    alt.iterations += it;
                    return alt;
                }
            }
        } catch (const Error&) {
        }
    }
    out.residual_norm = ev.residual;
    out.theta = ev.theta;
    if (!have_hessian) h_body = body_hessian(spec, ev.state);
    out.body_hessian = h_body;
    out.body_ldlt.compute(out.body_hessian);
    out.eval = std::move(ev);
    return out;
}

EigenFrame move_frame(const EigenFrame& f, const ChartPoint& w) {
    const Mat q = f.q * exp_neg_skew(w.theta);
    // one Newton-Schulz step keeps q orthogonal to rounding across long chains of moves
    const Mat polished = 0.5 * q * (3.0 * Mat::Identity(q.rows(), q.cols()) - q.transpose() * q);
    return {polished, (f.lambda.array() * w.x.array().exp()).matrix()};
}

constexpr int kMaxFrameIters = 8;

}  // namespace

FrozenTarget solve_frozen_target_warm(const ModelSpec& spec, const Mat& d_mat, const FrozenTarget& prev,
                                      const ChartPoint& body_step, const FrozenSolveOptions& opts) {
    const auto fallback = [&] {
        return newton_solve(spec, d_mat, prev.theta + body_to_fixed(prev.eval, body_step), opts, &prev, true);
    };
    if (!prev.converged) return fallback();
    const int d = prev.dim();
    int it = 0;
    ChartEvaluation ev;
    try {
        ScoreState st = score_state(spec, move_frame(prev.eval.state.frame, body_step), d_mat);
        double res = st.grad.norm();
        bool chord = true;
        Eigen::LDLT<ChartMat> ldlt;
        while (res > opts.tol && it < kMaxFrameIters) {
            ++it;
            if (!chord) ldlt.compute(body_hessian(spec, st));
            const ChartVec w = -(chord ? prev.body_ldlt : ldlt).solve(st.grad.packed());
            if (!w.allFinite()) return fallback();
            ScoreState cand = score_state(spec, move_frame(st.frame, ChartPoint::unpack(d, w)), d_mat);
            const double cres = cand.grad.norm();
            if (cres < (chord ? 0.1 : 1.0) * res) {
                st = std::move(cand);
                res = cres;
            } else if (chord) {
                chord = false;
            } else {
                return fallback();
            }
        }
        if (res > opts.tol) return fallback();
        // the frame is q* exp(-theta); recover theta by the principal logarithm
        ev.rot = RotationGenerator::from_orthogonal(Mat(spec.base().q.transpose() * st.frame.q));
        ev.theta = ChartPoint{st.x, ev.rot.theta()};
        ev.state = std::move(st);
        ev.fixed_grad = body_covector_to_fixed(ev, ev.state.grad);
        ev.residual = ev.fixed_grad.norm();
    } catch (const Error&) {
        return fallback();
    }
    const ChartPoint theta = ev.theta;
    FrozenTarget out = newton_solve(spec, d_mat, theta, opts, &prev, true, &ev);
    out.iterations += it;
    return out;
}

FrozenTarget solve_frozen_target(const ModelSpec& spec, const Mat& d_mat, const ChartPoint& init,
                                 const FrozenSolveOptions& opts, const FrozenTarget* chord) {
    return newton_solve(spec, d_mat, init, opts, chord, true);
}

ChartPoint response_body(const FrozenTarget& target, const Mat& delta_d_rotated) {
    const ChartGradient bd = d_stat_derivative(target.eval.state, delta_d_rotated);
    return ChartPoint::unpack(target.dim(), -target.solve_body(bd.packed()));
}

ChartPoint response_apply_rotated(const FrozenTarget& target, const Mat& delta_d_rotated) {
    return body_to_fixed(target.eval, response_body(target, delta_d_rotated));
}

ChartPoint response_apply(const ModelSpec& spec, const FrozenTarget& target, const Mat& delta_d) {
    (void)spec;
    const Mat& q = target.eval.state.frame.q;
    return response_apply_rotated(target, sym_part(Mat(q.transpose() * delta_d * q)));
}

int stat_dim(int d) { return d * (d + 1) / 2; }

double BatchConstants::sandwich_gap() const {
    const Eigen::MatrixXd jinv = Eigen::MatrixXd(fisher).inverse();
    return (v_star - jinv).norm() / jinv.norm();
}

BatchConstants batch_constants(const ModelSpec& spec) {
    if (spec.rho() != 0.0) throw std::invalid_argument("batch_constants: requires rho = 0");
    const int d = spec.dim();
    const int n = chart_dim(d);
    const int m = stat_dim(d);
    BatchConstants bc;
    bc.fisher = fisher_matrix(spec);
    bc.trace_inv_fisher = Eigen::MatrixXd(bc.fisher).inverse().trace();

    std::vector<std::pair<int, int>> pairs;
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) pairs.emplace_back(a, b);
    bc.stat_cov.resize(m, m);
    for (int k = 0; k < m; ++k)
        for (int l = 0; l < m; ++l)
            bc.stat_cov(k, l) =
                wishart_entry_cov(spec.d_star(), pairs[k].first, pairs[k].second, pairs[l].first, pairs[l].second);

    FrozenSolveOptions opts;
    opts.tol = 1e-14;
    opts.accept_tol = 1e-12;
    const double eps = 1e-4 * spec.d_star().cwiseAbs().maxCoeff();
    bc.response_jacobian.resize(n, m);
    const ChartPoint zero = ChartPoint::zero(d);
    for (int k = 0; k < m; ++k) {
        Mat e = Mat::Zero(d, d);
        e(pairs[k].first, pairs[k].second) = 1.0;
        e(pairs[k].second, pairs[k].first) = 1.0;
        const FrozenTarget plus = solve_frozen_target(spec, Mat(spec.d_star() + eps * e), zero, opts);
        const FrozenTarget minus = solve_frozen_target(spec, Mat(spec.d_star() - eps * e), zero, opts);
        plus.require_converged();
        minus.require_converged();
        bc.response_jacobian.col(k) = (plus.theta.packed() - minus.theta.packed()) / (2.0 * eps);
    }
    bc.v_star = bc.response_jacobian * bc.stat_cov * bc.response_jacobian.transpose();
    return bc;
}

double jet_remainder_probe(const ModelSpec& spec, const Mat& d_prev, const Mat& d_next) {
    FrozenSolveOptions opts;
    opts.tol = 1e-14;
    opts.accept_tol = 1e-12;
    const FrozenTarget prev = solve_frozen_target(spec, d_prev, ChartPoint::zero(spec.dim()), opts);
    prev.require_converged();
    const ChartPoint jet = prev.theta + response_apply(spec, prev, Mat(d_next - d_prev));
    const FrozenTarget next = solve_frozen_target(spec, d_next, jet, opts);
    next.require_converged();
    return (next.theta - jet).norm();
}

}  // namespace eqtrack
