#include "eqtrack/gaussian_model.hpp"

#include <cmath>
#include <numbers>

namespace eqtrack {

namespace {

Eigen::VectorXd standard_normals(int n, Rng& rng) {
    std::normal_distribution<double> nd;
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g(i) = nd(rng);
    return g;
}

// Cholesky inverse with scalar loops; the matrices here are at most 8 x 8
Mat spd_inverse(const Mat& m, const char* what) {
    const int n = static_cast<int>(m.rows());
    Mat l = Mat::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        double s = m(j, j);
        for (int k = 0; k < j; ++k) s -= l(j, k) * l(j, k);
        if (!(s > 0.0) || !std::isfinite(s)) throw SingularMatrix(what);
        l(j, j) = std::sqrt(s);
        for (int i = j + 1; i < n; ++i) {
            double t = m(i, j);
            for (int k = 0; k < j; ++k) t -= l(i, k) * l(j, k);
            l(i, j) = t / l(j, j);
        }
    }
    Mat li = Mat::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        li(j, j) = 1.0 / l(j, j);
        for (int i = j + 1; i < n; ++i) {
            double t = 0.0;
            for (int k = j; k < i; ++k) t -= l(i, k) * li(k, j);
            li(i, j) = t / l(i, i);
        }
    }
    Mat out(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b) {
            double t = 0.0;
            for (int k = b; k < n; ++k) t += li(k, a) * li(k, b);
            out(a, b) = t;
            out(b, a) = t;
        }
    return out;
}

// [W, M] for W = s (E_ij - E_ji)
Mat pair_commutator(int i, int j, double s, const Mat& m) {
    const int d = static_cast<int>(m.rows());
    Mat out = Mat::Zero(d, d);
    out.row(i) += s * m.row(j);
    out.row(j) -= s * m.row(i);
    out.col(j) -= s * m.col(i);
    out.col(i) += s * m.col(j);
    return out;
}

// Projects the frame-derivative of B onto the gradient blocks. a and w describe the direction.
ChartGradient project_hvp(const ModelSpec& spec, const ScoreState& st, const Vec& a, const Mat& b_dot,
                          const Mat& w_g_comm) {
    const int d = st.frame.dim();
    const Vec& lam = st.frame.lambda;
    ChartGradient h = ChartGradient::zero(d);
    for (int i = 0; i < d; ++i) h.gx(i) = -0.5 * (b_dot(i, i) - st.b(i, i) * a(i)) / lam(i) + spec.rho() * a(i);
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double v = 0.5 * (-(a(i) / lam(i) - a(j) / lam(j)) * st.b(i, j) +
                                    (1.0 / lam(i) - 1.0 / lam(j)) * b_dot(i, j)) -
                             0.5 * 0.5 * (w_g_comm(i, j) - w_g_comm(j, i));
            h.gtheta(i, j) = v;
            h.gtheta(j, i) = -v;
        }
    return h;
}

}  // namespace

ModelSpec::ModelSpec(Eigen::MatrixXd h, SpdMatrix r_noise, SpdMatrix sigma_star, double rho)
    : d_(static_cast<int>(h.cols())),
      p_(static_cast<int>(h.rows())),
      rho_(rho),
      h_(std::move(h)),
      r_(std::move(r_noise)),
      sigma_star_(std::move(sigma_star)) {
    if (d_ < 1 || d_ > kMaxDim) throw std::invalid_argument("ModelSpec: latent dimension out of range");
    if (r_.dim() != p_ || sigma_star_.dim() != d_) throw std::invalid_argument("ModelSpec: dimension mismatch");
    if (!(rho_ >= 0.0)) throw std::invalid_argument("ModelSpec: rho must be nonnegative");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(h_);
    const auto& sv = svd.singularValues();
    if (!(sv(d_ - 1) > 1e-12 * sv(0))) throw std::invalid_argument("ModelSpec: H lacks full column rank");

    base_ = eig_simple(sigma_star_);
    Eigen::LLT<Eigen::MatrixXd> r_llt(r_.matrix());
    w_ = r_llt.solve(h_);
    g_ = sym_part(Mat(h_.transpose() * w_));
    g_inv_ = spd_inverse(g_, "ModelSpec: G singular");
    k_star_ = h_ * sigma_star_.matrix() * h_.transpose() + r_.matrix();
    k_star_ = 0.5 * (k_star_ + k_star_.transpose()).eval();
    Eigen::LLT<Eigen::MatrixXd> k_llt(k_star_);
    k_chol_ = k_llt.matrixL();
    b_star_ = sym_part(Mat(h_.transpose() * k_llt.solve(h_)));
    const Mat sig = sigma_star_.matrix();
    d_star_ = sym_part(Mat(g_ * sig * g_ + g_));
    z_map_ = w_.transpose() * k_chol_;
}

CompressedStat CompressedStat::empty(int d) { return {Mat::Zero(d, d), 0}; }

ChartGradient ChartGradient::zero(int d) { return {Vec::Zero(d), Mat::Zero(d, d)}; }

ChartVec ChartGradient::packed() const { return ChartPoint{gx, gtheta}.packed(); }

ChartGradient ChartGradient::unpack(int d, const ChartVec& v) {
    ChartPoint p = ChartPoint::unpack(d, v);
    return {p.x, p.theta};
}

Eigen::VectorXd observation_from_normals(const ModelSpec& spec, const Eigen::VectorXd& g) {
    if (g.size() != spec.obs_dim()) throw std::invalid_argument("observation_from_normals: size mismatch");
    return spec.k_chol() * g;
}

Eigen::VectorXd sample_observation(const ModelSpec& spec, Rng& rng) {
    return observation_from_normals(spec, standard_normals(spec.obs_dim(), rng));
}

Vec compress(const ModelSpec& spec, const Eigen::VectorXd& y) {
    if (y.size() != spec.obs_dim()) throw std::invalid_argument("compress: size mismatch");
    return spec.w().transpose() * y;
}

Vec sample_compressed(const ModelSpec& spec, Rng& rng) {
    return spec.compressed_sampler() * standard_normals(spec.obs_dim(), rng);
}

void update_statistic_inplace(CompressedStat& stat, const Vec& z) {
    ++stat.count;
    const double w = 1.0 / static_cast<double>(stat.count);
    stat.d += w * (z * z.transpose() - stat.d);
}

CompressedStat update_statistic(const CompressedStat& stat, const Vec& z) {
    CompressedStat out = stat;
    update_statistic_inplace(out, z);
    return out;
}

Mat compress_moment(const ModelSpec& spec, const Eigen::MatrixXd& s) {
    return sym_part(Mat(spec.w().transpose() * s * spec.w()));
}

Mat posterior_cov(const ModelSpec& spec, const SpdMatrix& sigma) {
    const Mat sig_inv = spd_inverse(Mat(sigma.matrix()), "posterior_cov: sigma singular");
    return spd_inverse(Mat(sig_inv + spec.g()), "posterior_cov: Sigma^{-1} + G singular");
}

SymMatrix latent_lift(const ModelSpec& spec, const SpdMatrix& sigma, const SymMatrix& d_mat) {
    const Mat c = posterior_cov(spec, sigma);
    const Mat d = d_mat.matrix();
    return SymMatrix(Eigen::MatrixXd(sym_part(Mat(c + c * d * c))));
}

SymMatrix ambient_lift(const ModelSpec& spec, const SpdMatrix& sigma, const Eigen::MatrixXd& s) {
    const Eigen::MatrixXd& h = spec.h();
    const Eigen::MatrixXd& sig = sigma.matrix();
    const Eigen::MatrixXd k = h * sig * h.transpose() + spec.r_noise().matrix();
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    const Eigen::MatrixXd m = llt.solve(h * sig).transpose();  // Sigma H^T K^{-1}
    const Eigen::MatrixXd v = sig - m * h * sig;
    const Eigen::MatrixXd a = v + m * s * m.transpose();
    return SymMatrix(Eigen::MatrixXd(0.5 * (a + a.transpose())));
}

double negative_log_likelihood(const ModelSpec& spec, const SpdMatrix& sigma, const Eigen::MatrixXd& s) {
    const Eigen::MatrixXd& h = spec.h();
    const Eigen::MatrixXd k = h * sigma.matrix() * h.transpose() + spec.r_noise().matrix();
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return 0.5 * (logdet + llt.solve(s).trace());
}

double compressed_objective(const ModelSpec& spec, const SpdMatrix& sigma, const Mat& d_mat) {
    const int d = spec.dim();
    const Mat sig = sigma.matrix();
    const Mat c = posterior_cov(spec, sigma);
    // det(I + Sigma G) = det(Sigma) / det(C)
    const double logdet = Eigen::PartialPivLU<Mat>(Mat(Mat::Identity(d, d) + sig * spec.g())).matrixLU()
                              .diagonal()
                              .array()
                              .abs()
                              .log()
                              .sum();
    return 0.5 * (logdet - (c * d_mat).trace());
}

ScoreState score_state_rotated(const ModelSpec& spec, const EigenFrame& frame, const Mat& d_rotated) {
    const int d = frame.dim();
    ScoreState st;
    st.frame = frame;
    const Vec& lam = frame.lambda;
    for (int i = 0; i < d; ++i)
        if (!(lam(i) > 0.0) || !std::isfinite(lam(i))) throw NotPositiveDefinite("score_state: invalid eigenvalue");
    st.x = (lam.array() / spec.base().lambda.array()).log().matrix();
    Mat m = frame.q.transpose() * spec.g() * frame.q;
    m.diagonal() += lam.cwiseInverse();
    st.c = spd_inverse(sym_part(m), "score_state: Sigma^{-1} + G singular");
    st.dt = d_rotated;
    st.e = sym_part(Mat(st.c * st.dt * st.c));
    st.b = st.c + st.e;
    st.grad = ChartGradient::zero(d);
    for (int i = 0; i < d; ++i) st.grad.gx(i) = 0.5 * (1.0 - st.b(i, i) / lam(i)) + spec.rho() * st.x(i);
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double v = 0.5 * (1.0 / lam(i) - 1.0 / lam(j)) * st.b(i, j);
            st.grad.gtheta(i, j) = v;
            st.grad.gtheta(j, i) = -v;
        }
    return st;
}

ScoreState score_state(const ModelSpec& spec, const EigenFrame& frame, const Mat& d_mat) {
    return score_state_rotated(spec, frame, sym_part(Mat(frame.q.transpose() * d_mat * frame.q)));
}

ChartGradient score_gradient(const ModelSpec& spec, const EigenFrame& frame, const Mat& d_mat) {
    return score_state(spec, frame, d_mat).grad;
}

ChartGradient d_stat_derivative(const ScoreState& st, const Mat& delta_d_rotated) {
    const int d = st.frame.dim();
    const Vec& lam = st.frame.lambda;
    const Mat db = st.c * delta_d_rotated * st.c;
    ChartGradient out = ChartGradient::zero(d);
    for (int i = 0; i < d; ++i) out.gx(i) = -0.5 * db(i, i) / lam(i);
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double v = 0.25 * (1.0 / lam(i) - 1.0 / lam(j)) * (db(i, j) + db(j, i));
            out.gtheta(i, j) = v;
            out.gtheta(j, i) = -v;
        }
    return out;
}

ChartGradient d_stat_derivative(const ModelSpec& spec, const EigenFrame& frame, const Mat& delta_d) {
    const ScoreState st = score_state(spec, frame, Mat::Zero(frame.dim(), frame.dim()));
    return d_stat_derivative(st, frame.q.transpose() * delta_d * frame.q);
}

ChartGradient hessian_vector_product(const ModelSpec& spec, const ScoreState& st, const ChartPoint& u) {
    const int d = st.frame.dim();
    if (u.dim() != d) throw std::invalid_argument("hessian_vector_product: dimension mismatch");
    const Vec& lam = st.frame.lambda;
    const Mat lam_m = lam.asDiagonal();
    const Mat& w = u.theta;
    // ambient direction in the eigenbasis
    Mat ut = commutator(lam_m, w);
    ut.diagonal() += (lam.array() * u.x.array()).matrix();
    const Vec inv = lam.cwiseInverse();
    const Mat p = inv.asDiagonal() * ut * inv.asDiagonal();
    const Mat c_dot = st.c * p * st.c;
    const Mat t = c_dot * st.dt * st.c;
    const Mat a_dot = c_dot + t + t.transpose();
    const Mat b_dot = commutator(w, st.b) + a_dot;
    return project_hvp(spec, st, u.x, b_dot, commutator(w, st.grad.gtheta));
}

ChartGradient hessian_vector_product(const ModelSpec& spec, const EigenFrame& frame, const Mat& d_mat,
                                     const ChartPoint& u) {
    return hessian_vector_product(spec, score_state(spec, frame, d_mat), u);
}

ChartMat body_hessian(const ModelSpec& spec, const ScoreState& st) {
    const int d = st.frame.dim();
    const int n = chart_dim(d);
    const Vec& lam = st.frame.lambda;
    ChartMat hm(n, n);
    // log-spectrum directions: C' = c_i c_i^T / lambda_i
    for (int i = 0; i < d; ++i) {
        const auto ci = st.c.col(i);
        const auto ei = st.e.col(i);
        const Mat a_dot = (ci * ci.transpose() + ci * ei.transpose() + ei * ci.transpose()) / lam(i);
        Vec a = Vec::Zero(d);
        a(i) = 1.0;
        hm.col(i) = project_hvp(spec, st, a, a_dot, Mat::Zero(d, d)).packed();
    }
    // rotational directions: W = (E_ij - E_ji)/sqrt2
    const double s = 1.0 / std::numbers::sqrt2;
    const Vec zero_a = Vec::Zero(d);
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double alpha = s * (lam(i) - lam(j)) / (lam(i) * lam(j));
            const auto ci = st.c.col(i);
            const auto cj = st.c.col(j);
            const auto ei = st.e.col(i);
            const auto ej = st.e.col(j);
            const Mat c_dot = alpha * (ci * cj.transpose() + cj * ci.transpose());
            const Mat t = alpha * (ci * ej.transpose() + cj * ei.transpose());
            const Mat b_dot = pair_commutator(i, j, s, st.b) + c_dot + t + t.transpose();
            hm.col(packed_pair_index(d, i, j)) =
                project_hvp(spec, st, zero_a, b_dot, pair_commutator(i, j, s, st.grad.gtheta)).packed();
        }
    return hm;
}

ChartMat fisher_matrix(const ModelSpec& spec) {
    const int d = spec.dim();
    const int n = chart_dim(d);
    const Vec& lam = spec.base().lambda;
    const Mat& q = spec.base().q;
    const Mat gam = q.transpose() * spec.b_star() * q;
    ChartMat f(n, n);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) f(i, j) = 0.5 * lam(i) * lam(j) * gam(i, j) * gam(i, j);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int k = j + 1; k < d; ++k) {
                const double v = lam(i) * (lam(j) - lam(k)) / std::numbers::sqrt2 * gam(i, j) * gam(i, k);
                const int c = packed_pair_index(d, j, k);
                f(i, c) = v;
                f(c, i) = v;
            }
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j)
            for (int k = 0; k < d; ++k)
                for (int l = k + 1; l < d; ++l) {
                    const double v = 0.5 * (lam(i) - lam(j)) * (lam(k) - lam(l)) *
                                     (gam(i, k) * gam(j, l) + gam(i, l) * gam(j, k));
                    f(packed_pair_index(d, i, j), packed_pair_index(d, k, l)) = v;
                }
    return f;
}

double fisher_pairing(const ModelSpec& spec, const Eigen::MatrixXd& u, const Eigen::MatrixXd& v) {
    const Eigen::MatrixXd b = spec.b_star();
    return 0.5 * (b * u * b * v).trace();
}

CurvatureBand curvature_band(const ModelSpec& spec) {
    CurvatureBand cb;
    Eigen::SelfAdjointEigenSolver<Mat> es(spec.b_star(), Eigen::EigenvaluesOnly);
    cb.beta_min = es.eigenvalues()(0);
    cb.beta_max = es.eigenvalues()(spec.dim() - 1);
    std::tie(cb.gamma_lo, cb.gamma_hi) = chart_norm_constants(spec.base().lambda);
    cb.mu_star = 0.5 * cb.beta_min * cb.beta_min * cb.gamma_lo;
    cb.l_star = 0.5 * cb.beta_max * cb.beta_max * cb.gamma_hi;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(spec.h());
    const double h_op = svd.singularValues()(0);
    const double h_min = svd.singularValues()(spec.dim() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> rs(spec.r_noise().matrix(), Eigen::EigenvaluesOnly);
    const double r_min = rs.eigenvalues()(0);
    const double r_max = rs.eigenvalues()(spec.obs_dim() - 1);
    const double lam_max = spec.base().lambda(0);
    cb.beta_min_bound = h_min * h_min / (h_op * h_op * lam_max + r_max);
    cb.beta_max_bound = h_op * h_op / r_min;
    cb.mu_star_bound = 0.5 * cb.gamma_lo * cb.beta_min_bound * cb.beta_min_bound;
    cb.l_star_bound = 0.5 * lam_max * lam_max * std::pow(h_op, 4) / (r_min * r_min);
    return cb;
}

MomentCheck isserlis_mc_check(const ModelSpec& spec, const SymMatrix& u, const SymMatrix& v, std::int64_t n,
                              Rng& rng) {
    if (n < 2) throw InsufficientData("isserlis_mc_check: need at least two draws");
    const int d = spec.dim();
    if (u.dim() != d || v.dim() != d) throw std::invalid_argument("isserlis_mc_check: dimension mismatch");
    // w = H^T K*^{-1} y has covariance B*; score along U is (tr(B* U) - w^T U w) / 2
    Eigen::LLT<Eigen::MatrixXd> k_llt(spec.k_star());
    const Eigen::MatrixXd w_map = k_llt.solve(spec.h()).transpose() * spec.k_chol();
    const Mat um = u.matrix();
    const Mat vm = v.matrix();
    const double tu = (spec.b_star() * um).trace();
    const double tv = (spec.b_star() * vm).trace();
    double mu = 0.0, mv = 0.0, cuv = 0.0;
    for (std::int64_t k = 0; k < n; ++k) {
        const Vec w = w_map * standard_normals(spec.obs_dim(), rng);
        const double su = 0.5 * (tu - w.dot(um * w));
        const double sv = 0.5 * (tv - w.dot(vm * w));
        // Welford co-moment
        const double kk = static_cast<double>(k + 1);
        const double du = su - mu;
        mu += du / kk;
        mv += (sv - mv) / kk;
        cuv += du * (sv - mv);
    }
    MomentCheck out;
    out.empirical = cuv / static_cast<double>(n - 1);
    out.analytic = fisher_pairing(spec, um, vm);
    return out;
}

double wishart_second_moment(const ModelSpec& spec, std::int64_t t) {
    if (t < 1) throw std::invalid_argument("wishart_second_moment: t must be positive");
    const Mat& ds = spec.d_star();
    return (ds.trace() * ds.trace() + ds.squaredNorm()) / static_cast<double>(t);
}

double wishart_entry_cov(const Mat& d_star, int a, int b, int c, int dd) {
    return d_star(a, c) * d_star(b, dd) + d_star(a, dd) * d_star(b, c);
}

Vec default_spectrum(int d) {
    Vec lam(d);
    for (int i = 0; i < d; ++i) lam(i) = 2.0 * std::pow(0.75, i) + 0.2;
    return lam;
}

Mat haar_orthogonal(int d, Rng& rng) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd a(d, d);
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i) a(i, j) = nd(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int k = 0; k < d; ++k)
        if (r(k, k) < 0.0) q.col(k) = -q.col(k);
    return q;
}

ModelSpec generate_model(const ModelRecipe& recipe, Rng& rng) {
    const int d = recipe.d;
    const int p = recipe.p;
    if (p < d) throw std::invalid_argument("generate_model: need p >= d");
    std::normal_distribution<double> nd;
    Eigen::MatrixXd h(p, d);
    for (int attempt = 0;; ++attempt) {
        if (attempt > 1000) throw std::runtime_error("generate_model: could not draw a well-posed H");
        for (int j = 0; j < d; ++j)
            for (int i = 0; i < p; ++i) h(i, j) = nd(rng);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(h);
        if (svd.singularValues()(d - 1) >= recipe.sigma_min_floor) break;
    }
    if (recipe.h_condition > 0.0 && d > 1) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(h, Eigen::ComputeThinU | Eigen::ComputeThinV);
        Eigen::VectorXd s(d);
        const double top = svd.singularValues()(0);
        for (int k = 0; k < d; ++k) s(k) = top * std::pow(recipe.h_condition, -static_cast<double>(k) / (d - 1));
        h = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    }
    const Vec lam = recipe.lambda.size() == d ? recipe.lambda : default_spectrum(d);
    const Mat q = haar_orthogonal(d, rng);
    const Mat sigma = sym_part(Mat(q * lam.asDiagonal() * q.transpose()));
    return ModelSpec(h, SpdMatrix(Eigen::MatrixXd::Identity(p, p) * recipe.noise_var),
                     SpdMatrix(Eigen::MatrixXd(sigma)), 0.0);
}

}  // namespace eqtrack
