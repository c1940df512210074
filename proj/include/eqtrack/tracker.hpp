#pragma once

#include "eqtrack/equilibrium.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace eqtrack {

enum class PredictorSign { Normal, WrongSign };
enum class CorrectorKind { OracleLinear, ExactDampedNewton, InexactNewtonCg };
enum class RestartKind { Linear, Oracle, TubePerturbation, RandomFar };

struct CorrectorConfig {
    CorrectorKind kind = CorrectorKind::OracleLinear;
    double q = 0.7;
    double eta = 1.0;
    double lambda = 0.0;
    double tau = 0.0;
    int max_cg_iters = 0;  // 0: ten times the chart dimension

    static CorrectorConfig oracle_linear(double q);
    static CorrectorConfig exact_damped_newton(double eta, double lambda);
    static CorrectorConfig inexact_newton_cg(double eta, double lambda, double tau, int max_cg_iters = 0);
};

struct TrackerConfig {
    int predictor_order = 1;
    PredictorSign predictor_sign = PredictorSign::Normal;
    CorrectorConfig corrector;
    double restart_fraction = 0.5;
    double tube_radius = 0.5;
    RestartKind restart = RestartKind::Linear;
    double perturbation_radius = 0.125;  // TubePerturbation offset in chart norm
    int record_stride = 1;               // 0 keeps only the terminal step

    void validate() const;
};

struct StepRecord {
    std::int64_t t = 0;
    double error = 0.0;
    bool in_tube = true;
    int cg_iters = 0;
    double contraction = 0.0;  // |e after correction| / |e after prediction|
};

struct RunRecord {
    std::vector<StepRecord> steps;
    std::int64_t t_total = 0;
    std::int64_t t0 = 0;
    double terminal_error = 0.0;
    double dist_online = 0.0;  // d_h(Sigma_T, Sigma*)
    double dist_batch = 0.0;   // d_h(Sigma_o(D_T), Sigma*)
    ChartPoint terminal_theta;
    ChartPoint terminal_target;
    std::optional<std::int64_t> tube_exit_step;
    bool restart_rejected = false;
    int cg_stalls = 0;
    int failures = 0;
    std::vector<double> in_tube_contractions;

    [[nodiscard]] bool stayed_in_tube() const { return !tube_exit_step.has_value(); }
};

struct CertifiedParameters {
    double eta = 1.0;
    double lambda = 0.0;
    double tau_max = 0.0;
};

CertifiedParameters certified_parameters(double mu, double l_f);

/// Plain conjugate gradients on an SPD operator, stopped at |residual| <= tau |rhs|.
struct CgResult {
    ChartVec x;
    int iterations = 0;
    double relative_residual = 0.0;
    bool stalled = false;
};

CgResult conjugate_gradient(const std::function<ChartVec(const ChartVec&)>& op, const ChartVec& rhs, double tau,
                            int max_iters);

ChartPoint predict(const FrozenTarget& target_prev, const ChartPoint& theta, const Mat& delta_d,
                   const TrackerConfig& cfg);
/// Prediction from a response already evaluated at the previous target.
ChartPoint predict_with_response(const ChartPoint& theta, const ChartPoint& response, const TrackerConfig& cfg);

struct CorrectionResult {
    ChartPoint theta;
    int cg_iters = 0;
    bool cg_stalled = false;
};

/// One corrector step at theta_tilde for statistic d_mat. OracleLinear needs the frozen target.
/// l_star scales the fallback step after a CG stall.
CorrectionResult correct(const ModelSpec& spec, const ChartPoint& theta_tilde, const Mat& d_mat,
                         const TrackerConfig& cfg, const FrozenTarget* oracle, double l_star);

struct RestartResult {
    std::optional<SpdMatrix> sigma;
    Mat raw;  // G^{-1}(D - G)G^{-1}, before any check
    [[nodiscard]] bool rejected() const { return !sigma.has_value(); }
};

RestartResult restart_linear(const ModelSpec& spec, const CompressedStat& stat);
/// Eigenvalue-floored projection used when the linear restart is rejected.
SpdMatrix restart_fallback(const ModelSpec& spec, const CompressedStat& stat, const Mat& raw);

RunRecord run_stream(const ModelSpec& spec, const TrackerConfig& cfg, std::int64_t t_total, std::uint64_t seed);

/// Runs every configuration at every horizon on one shared data stream and oracle.
/// Result [c][k] equals run_stream(spec, configs[c], horizons[k], seed).
std::vector<std::vector<RunRecord>> run_stream_batch(const ModelSpec& spec, const std::vector<TrackerConfig>& configs,
                                                     const std::vector<std::int64_t>& horizons, std::uint64_t seed);

std::int64_t restart_step(double fraction, std::int64_t t_total);

}  // namespace eqtrack
