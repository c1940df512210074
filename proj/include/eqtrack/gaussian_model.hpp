#pragma once

#include "eqtrack/sym_geometry.hpp"
#include "eqtrack/types.hpp"

#include <cstdint>
#include <random>

namespace eqtrack {

using Rng = std::mt19937_64;

/// Latent linear Gaussian model Y = H X + noise, X ~ N(0, Sigma*), noise ~ N(0, R).
class ModelSpec {
public:
    ModelSpec(Eigen::MatrixXd h, SpdMatrix r_noise, SpdMatrix sigma_star, double rho = 0.0);

    [[nodiscard]] int dim() const { return d_; }
    [[nodiscard]] int obs_dim() const { return p_; }
    [[nodiscard]] double rho() const { return rho_; }

    [[nodiscard]] const Eigen::MatrixXd& h() const { return h_; }
    [[nodiscard]] const SpdMatrix& r_noise() const { return r_; }
    [[nodiscard]] const SpdMatrix& sigma_star() const { return sigma_star_; }
    [[nodiscard]] const SpectralDecomp& base() const { return base_; }

    [[nodiscard]] const Eigen::MatrixXd& w() const { return w_; }        // R^{-1} H
    [[nodiscard]] const Mat& g() const { return g_; }                    // H^T R^{-1} H
    [[nodiscard]] const Mat& g_inv() const { return g_inv_; }
    [[nodiscard]] const Eigen::MatrixXd& k_star() const { return k_star_; }
    [[nodiscard]] const Eigen::MatrixXd& k_chol() const { return k_chol_; }  // lower factor of K*
    [[nodiscard]] const Mat& b_star() const { return b_star_; }          // H^T K*^{-1} H
    [[nodiscard]] const Mat& d_star() const { return d_star_; }          // G Sigma* G + G
    /// W^T chol(K*): maps a standard normal p-vector directly to the compressed observation.
    [[nodiscard]] const Eigen::MatrixXd& compressed_sampler() const { return z_map_; }

private:
    int d_ = 0;
    int p_ = 0;
    double rho_ = 0.0;
    Eigen::MatrixXd h_;
    SpdMatrix r_;
    SpdMatrix sigma_star_;
    SpectralDecomp base_;
    Eigen::MatrixXd w_;
    Mat g_;
    Mat g_inv_;
    Eigen::MatrixXd k_star_;
    Eigen::MatrixXd k_chol_;
    Mat b_star_;
    Mat d_star_;
    Eigen::MatrixXd z_map_;
};

/// Running compressed statistic D_t = (1/t) sum z_r z_r^T.
struct CompressedStat {
    Mat d;
    std::int64_t count = 0;

    static CompressedStat empty(int d);
    [[nodiscard]] SymMatrix sym() const { return SymMatrix(Eigen::MatrixXd(d)); }
};

/// Chart gradient split into the log-spectrum block and the rotational block.
struct ChartGradient {
    Vec gx;
    Mat gtheta;

    static ChartGradient zero(int d);
    [[nodiscard]] int dim() const { return static_cast<int>(gx.size()); }
    [[nodiscard]] double norm() const { return std::sqrt(gx.squaredNorm() + gtheta.squaredNorm()); }
    [[nodiscard]] ChartVec packed() const;
    static ChartGradient unpack(int d, const ChartVec& v);
};

Eigen::VectorXd observation_from_normals(const ModelSpec& spec, const Eigen::VectorXd& g);
Eigen::VectorXd sample_observation(const ModelSpec& spec, Rng& rng);
Vec compress(const ModelSpec& spec, const Eigen::VectorXd& y);
/// Draws y and compresses it in one pass; consumes the same normals as sample_observation.
Vec sample_compressed(const ModelSpec& spec, Rng& rng);
CompressedStat update_statistic(const CompressedStat& stat, const Vec& z);
void update_statistic_inplace(CompressedStat& stat, const Vec& z);
/// Compression of an ambient p x p second-moment matrix: W^T S W.
Mat compress_moment(const ModelSpec& spec, const Eigen::MatrixXd& s);

/// Posterior covariance C = (Sigma^{-1} + G)^{-1}.
Mat posterior_cov(const ModelSpec& spec, const SpdMatrix& sigma);
SymMatrix latent_lift(const ModelSpec& spec, const SpdMatrix& sigma, const SymMatrix& d_mat);
/// Ambient form V + M S M^T with posterior mean map M = Sigma H^T K^{-1}.
SymMatrix ambient_lift(const ModelSpec& spec, const SpdMatrix& sigma, const Eigen::MatrixXd& s);
/// Per-observation negative log-likelihood 1/2 (logdet K + tr(K^{-1} S)).
double negative_log_likelihood(const ModelSpec& spec, const SpdMatrix& sigma, const Eigen::MatrixXd& s);
/// Same objective written through the compressed statistic, up to a sigma-free constant.
double compressed_objective(const ModelSpec& spec, const SpdMatrix& sigma, const Mat& d_mat);

/// Everything needed for gradients and Hessian products at one eigenframe and statistic,
/// expressed in the frame's eigenbasis.
struct ScoreState {
    EigenFrame frame;
    Vec x;        // log(lambda / lambda*), used by the regularizer
    Mat c;        // Q^T C Q
    Mat dt;       // Q^T D Q
    Mat e;        // C D C in the eigenbasis
    Mat b;        // Q^T A Q
    ChartGradient grad;
};

ScoreState score_state(const ModelSpec& spec, const EigenFrame& frame, const Mat& d_mat);
/// Same, with Q^T D Q supplied by the caller.
ScoreState score_state_rotated(const ModelSpec& spec, const EigenFrame& frame, const Mat& d_rotated);

/// Gradient of the chart pullback at the frame's own point.
ChartGradient score_gradient(const ModelSpec& spec, const EigenFrame& frame, const Mat& d_mat);
/// Directional derivative of the chart gradient in the statistic direction delta_d.
ChartGradient d_stat_derivative(const ModelSpec& spec, const EigenFrame& frame, const Mat& delta_d);
ChartGradient d_stat_derivative(const ScoreState& st, const Mat& delta_d_rotated);
/// Hessian of the chart pullback at the frame's point applied to direction u.
ChartGradient hessian_vector_product(const ModelSpec& spec, const EigenFrame& frame, const Mat& d_mat,
                                     const ChartPoint& u);
ChartGradient hessian_vector_product(const ModelSpec& spec, const ScoreState& st, const ChartPoint& u);
/// Dense pullback Hessian in packed coordinates.
ChartMat body_hessian(const ModelSpec& spec, const ScoreState& st);

/// Population Fisher operator on packed chart coordinates at Sigma*.
ChartMat fisher_matrix(const ModelSpec& spec);
/// Fisher pairing 1/2 tr(B* U B* V) of ambient directions.
double fisher_pairing(const ModelSpec& spec, const Eigen::MatrixXd& u, const Eigen::MatrixXd& v);

struct CurvatureBand {
    double mu_star = 0.0;
    double l_star = 0.0;
    double beta_min = 0.0;
    double beta_max = 0.0;
    double gamma_lo = 0.0;
    double gamma_hi = 0.0;
    double beta_min_bound = 0.0;  // coarse lower bound on beta_min
    double beta_max_bound = 0.0;  // coarse upper bound on beta_max
    double mu_star_bound = 0.0;
    double l_star_bound = 0.0;
};

CurvatureBand curvature_band(const ModelSpec& spec);

struct MomentCheck {
    double empirical = 0.0;
    double analytic = 0.0;
    [[nodiscard]] double relative_error() const { return std::abs(empirical - analytic) / std::abs(analytic); }
};

/// Monte Carlo covariance of one-observation scores along ambient directions u, v.
MomentCheck isserlis_mc_check(const ModelSpec& spec, const SymMatrix& u, const SymMatrix& v, std::int64_t n,
                              Rng& rng);
double wishart_second_moment(const ModelSpec& spec, std::int64_t t);
/// Covariance of (D_1)_{ab} and (D_1)_{cd} for one observation.
double wishart_entry_cov(const Mat& d_star, int a, int b, int c, int dd);

/// Experiment generator knobs; defaults give the standard tracking models.
struct ModelRecipe {
    int d = 3;
    int p = 8;
    double noise_var = 0.5;
    double sigma_min_floor = 0.1;
    Vec lambda;                 // empty: 2 * 0.75^{i-1} + 0.2
    double h_condition = 0.0;   // > 0: replace H singular values by a geometric sweep with this ratio
};

Vec default_spectrum(int d);
Mat haar_orthogonal(int d, Rng& rng);
ModelSpec generate_model(const ModelRecipe& recipe, Rng& rng);

}  // namespace eqtrack
