#pragma once

#include "eqtrack/gaussian_model.hpp"

#include <optional>

namespace eqtrack {

/// Chart quantities at a point of the base chart for a fixed statistic.
struct ChartEvaluation {
    ChartPoint theta;
    RotationGenerator rot;
    ScoreState state;
    ChartGradient fixed_grad;  // gradient in base-chart coordinates
    double residual = 0.0;     // chart norm of fixed_grad
};

ChartEvaluation evaluate_chart(const ModelSpec& spec, const ChartPoint& theta, const Mat& d_mat);
/// Gradient of the base-chart objective at theta.
ChartGradient fixed_gradient(const ModelSpec& spec, const ChartPoint& theta, const Mat& d_mat);

/// Converts a body (frame-local) increment into base-chart coordinates at ev's point.
ChartPoint body_to_fixed(const ChartEvaluation& ev, const ChartPoint& body);
ChartPoint fixed_to_body(const ChartEvaluation& ev, const ChartPoint& fixed);
/// Pulls a body covector back to base-chart coordinates.
ChartGradient body_covector_to_fixed(const ChartEvaluation& ev, const ChartGradient& body);

/// Base-chart curvature operator v -> M^T H_body M v; equals the chart Hessian at critical points.
ChartPoint fixed_hvp(const ModelSpec& spec, const ChartEvaluation& ev, const ChartPoint& v);

struct FrozenSolveOptions {
    double tol = 1e-12;
    /// A stalled iteration is still reported converged when its residual is below this.
    double accept_tol = 1e-12;
    int max_iter = 50;
};

/// Frozen empirical target r(D) with the curvature data needed to differentiate it.
struct FrozenTarget {
    ChartPoint theta;
    double residual_norm = 0.0;
    int iterations = 0;
    bool converged = false;

    Mat d_mat;
    ChartEvaluation eval;
    ChartMat body_hessian;
    Eigen::LDLT<ChartMat> body_ldlt;

    [[nodiscard]] int dim() const { return theta.dim(); }
    /// Solves the body Hessian system; throws SingularMatrix on curvature loss.
    [[nodiscard]] ChartVec solve_body(const ChartVec& rhs) const;
    [[nodiscard]] ChartMat fixed_hessian() const;
    void require_converged() const;
};

FrozenTarget solve_frozen_target(const ModelSpec& spec, const Mat& d_mat, const ChartPoint& init,
                                 const FrozenSolveOptions& opts = {}, const FrozenTarget* chord = nullptr);

/// Warm solve from a nearby converged target. Iterates in frame coordinates starting at prev's
/// frame moved by body_step, then returns to base-chart coordinates; falls back to
/// solve_frozen_target with prev as chord when the frame iteration does not settle.
FrozenTarget solve_frozen_target_warm(const ModelSpec& spec, const Mat& d_mat, const FrozenTarget& prev,
                                      const ChartPoint& body_step, const FrozenSolveOptions& opts = {});

/// First-order response Dr(D)[delta_d] of the target map at a converged target.
ChartPoint response_apply(const ModelSpec& spec, const FrozenTarget& target, const Mat& delta_d);
/// Same, with Q^T delta_d Q already formed in the target's eigenframe.
ChartPoint response_apply_rotated(const FrozenTarget& target, const Mat& delta_d_rotated);
/// The response as a frame (body) increment at the target.
ChartPoint response_body(const FrozenTarget& target, const Mat& delta_d_rotated);

/// Statistic coordinates: the entries D_ab with a <= b.
int stat_dim(int d);

struct BatchConstants {
    ChartMat fisher;
    double trace_inv_fisher = 0.0;
    Eigen::MatrixXd stat_cov;           // one-observation covariance of (D_ab)_{a<=b}
    Eigen::MatrixXd response_jacobian;  // finite-difference Jacobian of r at D*
    Eigen::MatrixXd v_star;             // sandwich covariance built from the Jacobian
    [[nodiscard]] double sandwich_gap() const;
};

BatchConstants batch_constants(const ModelSpec& spec);

/// Size of the first-order jet remainder r(D') - r(D) - Dr(D)[D' - D] in chart norm.
double jet_remainder_probe(const ModelSpec& spec, const Mat& d_prev, const Mat& d_next);

}  // namespace eqtrack
