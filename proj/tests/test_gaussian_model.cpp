#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "eqtrack/equilibrium.hpp"
#include "eqtrack/gaussian_model.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace eqtrack;
using testing_support::random_antisym;
using testing_support::random_chart_point;
using testing_support::random_sym;

namespace {

ModelSpec make_spec(std::uint64_t seed, int d = 3, int p = 8, double rho = 0.0) {
    Rng rng(seed);
    ModelRecipe recipe;
    recipe.d = d;
    recipe.p = p;
    const ModelSpec s = generate_model(recipe, rng);
    return ModelSpec(s.h(), s.r_noise(), s.sigma_star(), rho);
}

// Statistic away from D*: a finite-sample draw.
Mat sample_stat(const ModelSpec& spec, int n, std::uint64_t seed) {
    Rng rng(seed);
    CompressedStat st = CompressedStat::empty(spec.dim());
    for (int t = 0; t < n; ++t) update_statistic_inplace(st, sample_compressed(spec, rng));
    return st.d;
}

double objective(const ModelSpec& spec, const EigenFrame& f, const Mat& d_mat) {
    const Vec x = (f.lambda.array() / spec.base().lambda.array()).log().matrix();
    return compressed_objective(spec, SpdMatrix(Eigen::MatrixXd(f.matrix())), d_mat) +
           0.5 * spec.rho() * x.squaredNorm();
}

EigenFrame shifted(const EigenFrame& f, const ChartPoint& u, double h) { return chart_frame(f, h * u); }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace

TEST_CASE("model caches satisfy their defining identities") {
    const ModelSpec spec = make_spec(1);
    const Eigen::MatrixXd h = spec.h();
    const Eigen::MatrixXd r_inv = spec.r_noise().matrix().inverse();
    const Eigen::MatrixXd sig = spec.sigma_star().matrix();
    CHECK((spec.w() - r_inv * h).norm() <= 1e-13 * spec.w().norm());
    CHECK((Eigen::MatrixXd(spec.g()) - h.transpose() * r_inv * h).norm() <= 1e-12 * spec.g().norm());
    const Eigen::MatrixXd k = h * sig * h.transpose() + spec.r_noise().matrix();
    CHECK((spec.k_star() - k).norm() <= 1e-12 * k.norm());
    CHECK((spec.k_chol() * spec.k_chol().transpose() - k).norm() <= 1e-12 * k.norm());
    const Eigen::MatrixXd b = h.transpose() * k.inverse() * h;
    CHECK((Eigen::MatrixXd(spec.b_star()) - b).norm() <= 1e-12 * b.norm());
    // E[z z^T] = W^T K* W
    const Eigen::MatrixXd ds = spec.w().transpose() * k * spec.w();
    CHECK((Eigen::MatrixXd(spec.d_star()) - ds).norm() <= 1e-12 * ds.norm());
}

TEST_CASE("ModelSpec rejects a rank-deficient loading") {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(4, 2);
    h(0, 0) = 1.0;
    h(1, 0) = 1.0;
    Eigen::MatrixXd sig(2, 2);
    sig << 2.0, 0.0, 0.0, 1.0;
    CHECK_THROWS(ModelSpec(h, SpdMatrix(Eigen::MatrixXd(Eigen::MatrixXd::Identity(4, 4))), SpdMatrix(sig)));
}

TEST_CASE("compression with H = I and R = I is the identity") {
    Eigen::MatrixXd sig(2, 2);
    sig << 2.0, 0.3, 0.3, 1.0;
    const ModelSpec spec(Eigen::MatrixXd::Identity(2, 2), SpdMatrix(Eigen::MatrixXd(Eigen::MatrixXd::Identity(2, 2))),
                         SpdMatrix(sig));
    Eigen::VectorXd y(2);
    y << 0.7, -1.3;
    CHECK((Eigen::VectorXd(compress(spec, y)) - y).norm() == 0.0);
}

TEST_CASE("sample_compressed consumes the same normals as sample_observation") {
    const ModelSpec spec = make_spec(2);
    Rng a(77), b(77);
    for (int k = 0; k < 20; ++k) {
        const Vec z1 = compress(spec, sample_observation(spec, a));
        const Vec z2 = sample_compressed(spec, b);
        CHECK((z1 - z2).norm() <= 1e-12 * z1.norm());
    }
}

TEST_CASE("sample moments of observations and compressed statistics") {
    const ModelSpec spec = make_spec(3);
    Rng rng(5);
    const int n = 100000;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(spec.obs_dim(), spec.obs_dim());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(spec.obs_dim());
    Mat dz = Mat::Zero(3, 3);
    for (int k = 0; k < n; ++k) {
        const Eigen::VectorXd y = sample_observation(spec, rng);
        cov += y * y.transpose();
        mean += y;
        const Vec z = compress(spec, y);
        dz += z * z.transpose();
    }
    cov /= n;
    mean /= n;
    dz /= n;
    CHECK((cov - spec.k_star()).norm() / spec.k_star().norm() <= 0.05);
    CHECK(mean.norm() <= 3.0 * std::sqrt(spec.k_star().trace() / n));
    CHECK((dz - spec.d_star()).norm() / spec.d_star().norm() <= 0.05);
}

TEST_CASE("running statistic equals the batch mean and the compressed ambient mean") {
    const ModelSpec spec = make_spec(4);
    Rng rng(6);
    CompressedStat st = CompressedStat::empty(3);
    Mat batch = Mat::Zero(3, 3);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(spec.obs_dim(), spec.obs_dim());
    for (int t = 1; t <= 100; ++t) {
        const Eigen::VectorXd y = sample_observation(spec, rng);
        const Vec z = compress(spec, y);
        if (t == 1) {
            const CompressedStat one = update_statistic(st, z);
            CHECK((one.d - z * z.transpose()).norm() <= 1e-15 * z.squaredNorm());
            CHECK(one.count == 1);
        }
        st = update_statistic(st, z);
        batch += z * z.transpose();
        s += y * y.transpose();
    }
    batch /= 100.0;
    s /= 100.0;
    CHECK(st.count == 100);
    CHECK((st.d - batch).norm() <= 1e-13 * batch.norm());
    CHECK((st.d - compress_moment(spec, s)).norm() <= 1e-13 * batch.norm());
}

TEST_CASE("compressed lift equals the ambient lift") {
    for (std::uint64_t seed = 10; seed < 20; ++seed) {
        const ModelSpec spec = make_spec(seed);
        Rng rng(seed);
        const Mat q = haar_orthogonal(3, rng);
        Vec lam(3);
        lam << 1.9, 0.8, 0.35;
        const SpdMatrix sigma(Eigen::MatrixXd(q * lam.asDiagonal() * q.transpose()));
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(spec.obs_dim(), spec.obs_dim());
        for (int k = 0; k < 30; ++k) {
            const Eigen::VectorXd y = sample_observation(spec, rng);
            s += y * y.transpose() / 30.0;
        }
        const SymMatrix a = ambient_lift(spec, sigma, s);
        const SymMatrix b = latent_lift(spec, sigma, SymMatrix(Eigen::MatrixXd(compress_moment(spec, s))));
        CHECK((a.matrix() - b.matrix()).norm() <= 1e-13 * a.matrix().norm());
    }
}

TEST_CASE("lift special cases") {
    const ModelSpec spec = make_spec(21);
    const SymMatrix zero = SymMatrix::zero(3);
    const SymMatrix c0 = latent_lift(spec, spec.sigma_star(), zero);
    CHECK((Mat(c0.matrix()) - posterior_cov(spec, spec.sigma_star())).norm() <= 1e-14);
    const SymMatrix a = latent_lift(spec, spec.sigma_star(), SymMatrix(Eigen::MatrixXd(spec.d_star())));
    CHECK((a.matrix() - spec.sigma_star().matrix()).norm() <= 1e-12 * spec.sigma_star().matrix().norm());
}

TEST_CASE("compressed objective differs from the likelihood by a sigma-free constant") {
    const ModelSpec spec = make_spec(22);
    Rng rng(9);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(spec.obs_dim(), spec.obs_dim());
    for (int k = 0; k < 50; ++k) {
        const Eigen::VectorXd y = sample_observation(spec, rng);
        s += y * y.transpose() / 50.0;
    }
    const Mat d = compress_moment(spec, s);
    double offset = 0.0;
    for (int k = 0; k < 5; ++k) {
        const Mat q = haar_orthogonal(3, rng);
        Vec lam(3);
        lam << 2.5 - 0.3 * k, 1.0, 0.3;
        const SpdMatrix sigma(Eigen::MatrixXd(q * lam.asDiagonal() * q.transpose()));
        const double diff = negative_log_likelihood(spec, sigma, s) - compressed_objective(spec, sigma, d);
        if (k == 0) offset = diff;
        CHECK(std::abs(diff - offset) <= 1e-12 * (1.0 + std::abs(offset)));
    }
}

TEST_CASE("gradient vanishes at the population point") {
    const ModelSpec spec = make_spec(23);
    const ChartGradient g = score_gradient(spec, spec.base(), spec.d_star());
    CHECK(g.norm() <= 1e-12);
}

TEST_CASE("chart gradient matches finite differences of the objective") {
    for (double rho : {0.0, 0.3}) {
        std::vector<double> errs;
        for (std::uint64_t seed = 30; seed < 40; ++seed) {
            const ModelSpec spec = make_spec(seed, 3, 8, rho);
            Rng rng(seed);
            const Mat d = sample_stat(spec, 40, seed + 100);
            const EigenFrame f = chart_frame(spec.base(), random_chart_point(3, rng, 0.2));
            const ChartGradient g = score_gradient(spec, f, d);
            CHECK((g.gtheta + g.gtheta.transpose()).norm() == 0.0);
            ChartPoint u = random_chart_point(3, rng, 1.0);
            u *= 1.0 / u.norm();
            const double h = 1e-5;
            const double fd = (objective(spec, shifted(f, u, h), d) - objective(spec, shifted(f, u, -h), d)) / (2 * h);
            const double an = g.packed().dot(u.packed());
            errs.push_back(std::abs(fd - an) / std::max(g.norm(), 1e-12));
        }
        CHECK(median(errs) <= 1e-6);
    }
}

TEST_CASE("statistic derivative is linear and matches finite differences") {
    std::vector<double> errs;
    for (std::uint64_t seed = 40; seed < 50; ++seed) {
        const ModelSpec spec = make_spec(seed);
        Rng rng(seed);
        const Mat d = sample_stat(spec, 40, seed + 100);
        const EigenFrame f = chart_frame(spec.base(), random_chart_point(3, rng, 0.2));
        const Mat dd = random_sym(3, rng);
        const ChartGradient an = d_stat_derivative(spec, f, dd);
        const ChartGradient an2 = d_stat_derivative(spec, f, Mat(2.0 * dd));
        CHECK((an2.packed() - 2.0 * an.packed()).norm() <= 1e-14 * an.norm());
        CHECK(d_stat_derivative(spec, f, Mat::Zero(3, 3)).norm() == 0.0);
        const double h = 1e-5;
        const ChartVec fd = (score_gradient(spec, f, Mat(d + h * dd)).packed() -
                             score_gradient(spec, f, Mat(d - h * dd)).packed()) / (2 * h);
        errs.push_back((fd - an.packed()).norm() / an.norm());
    }
    CHECK(median(errs) <= 1e-6);
}

TEST_CASE("Hessian-vector product matches finite differences of the base-chart gradient") {
    std::vector<double> errs;
    for (std::uint64_t seed = 50; seed < 60; ++seed) {
        const ModelSpec spec = make_spec(seed, 3, 8, seed % 2 ? 0.2 : 0.0);
        Rng rng(seed);
        const Mat d = sample_stat(spec, 40, seed + 100);
        ChartPoint u = random_chart_point(3, rng, 1.0);
        const ChartGradient an = hessian_vector_product(spec, spec.base(), d, u);
        const double h = 1e-5;
        const ChartVec fd =
            (fixed_gradient(spec, h * u, d).packed() - fixed_gradient(spec, -h * u, d).packed()) / (2 * h);
        errs.push_back((fd - an.packed()).norm() / an.norm());
    }
    CHECK(median(errs) <= 1e-6);
}

TEST_CASE("pullback Hessian is symmetric and the fast assembly matches the generic product") {
    for (int d : {2, 3, 5}) {
        const ModelSpec spec = make_spec(60 + d, d, 4 * d, 0.1);
        Rng rng(61);
        const Mat dm = sample_stat(spec, 50, 62);
        const EigenFrame f = chart_frame(spec.base(), random_chart_point(d, rng, 0.2));
        const ScoreState st = score_state(spec, f, dm);
        const ChartMat h = body_hessian(spec, st);
        const int n = chart_dim(d);
        CHECK((h - h.transpose()).norm() <= 1e-12 * h.norm());
        for (int k = 0; k < n; ++k) {
            ChartVec e = ChartVec::Zero(n);
            e(k) = 1.0;
            const ChartVec col = hessian_vector_product(spec, st, ChartPoint::unpack(d, e)).packed();
            CHECK((col - h.col(k)).norm() <= 1e-12 * h.norm());
        }
    }
}

TEST_CASE("Fisher operator matches the ambient pairing and the population Hessian") {
    for (std::uint64_t seed = 70; seed < 75; ++seed) {
        const ModelSpec spec = make_spec(seed);
        Rng rng(seed);
        const ChartMat f = fisher_matrix(spec);
        CHECK((f - f.transpose()).norm() <= 1e-14 * f.norm());
        Eigen::SelfAdjointEigenSolver<ChartMat> es(f);
        CHECK(es.eigenvalues()(0) > 0.0);
        const ChartMat hs = body_hessian(spec, score_state(spec, spec.base(), spec.d_star()));
        CHECK((hs - f).norm() <= 1e-8 * f.norm());
        for (int rep = 0; rep < 5; ++rep) {
            const ChartPoint u = random_chart_point(3, rng, 1.0);
            const ChartPoint v = random_chart_point(3, rng, 1.0);
            // fourth-order central difference of the chart curve
            const double h = 1e-3;
            auto tangent = [&](const ChartPoint& w) {
                auto at = [&](double s) { return Eigen::MatrixXd(chart_exp(spec.base(), s * w).matrix()); };
                return Eigen::MatrixXd((8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h));
            };
            const double pair = fisher_pairing(spec, tangent(u), tangent(v));
            const double quad = u.packed().dot(f * v.packed());
            CHECK(std::abs(pair - quad) <= 1e-9 * f.norm() * u.norm() * v.norm());
        }
    }
}

TEST_CASE("Fisher blocks at an identity Gamma") {
    // H = I, R chosen so that B* = (Sigma* + R)^{-1} = I needs Sigma* + R = I; use R = I - Sigma* with small Sigma*
    Eigen::MatrixXd sig(3, 3);
    sig.setZero();
    sig.diagonal() << 0.6, 0.4, 0.2;
    const Eigen::MatrixXd r = Eigen::MatrixXd::Identity(3, 3) - sig;
    const ModelSpec spec(Eigen::MatrixXd::Identity(3, 3), SpdMatrix(r), SpdMatrix(sig));
    const ChartMat f = fisher_matrix(spec);
    const Vec& lam = spec.base().lambda;
    for (int i = 0; i < 3; ++i) CHECK(std::abs(f(i, i) - 0.5 * lam(i) * lam(i)) <= 1e-14);
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) {
            const int c = packed_pair_index(3, i, j);
            CHECK(std::abs(f(c, c) - 0.5 * (lam(i) - lam(j)) * (lam(i) - lam(j))) <= 1e-14);
            for (int k = 0; k < 3; ++k) CHECK(std::abs(f(k, c)) <= 1e-14);
        }
}

TEST_CASE("curvature band sandwiches the Fisher spectrum") {
    for (std::uint64_t seed = 80; seed < 90; ++seed) {
        const ModelSpec spec = make_spec(seed, 3 + seed % 3, 10);
        const CurvatureBand cb = curvature_band(spec);
        Eigen::SelfAdjointEigenSolver<ChartMat> es(fisher_matrix(spec));
        const auto& ev = es.eigenvalues();
        CHECK(cb.mu_star <= ev(0) * (1.0 + 1e-10));
        CHECK(ev(ev.size() - 1) <= cb.l_star * (1.0 + 1e-10));
        CHECK(cb.beta_min_bound <= cb.beta_min * (1.0 + 1e-12));
        CHECK(cb.beta_max <= cb.beta_max_bound * (1.0 + 1e-12));
        CHECK(cb.mu_star_bound <= cb.mu_star * (1.0 + 1e-12));
        CHECK(cb.l_star <= cb.l_star_bound * (1.0 + 1e-12));
    }
}

TEST_CASE("chart norm constants on small spectra") {
    Vec a(2);
    a << 2.0, 1.0;
    CHECK(chart_norm_constants(a) == std::pair<double, double>{1.0, 4.0});
    Vec b(3);
    b << 3.0, 2.5, 1.0;
    CHECK(chart_norm_constants(b) == std::pair<double, double>{0.25, 9.0});
}

TEST_CASE("Isserlis covariance check converges and orthogonal directions decorrelate") {
    const ModelSpec spec = make_spec(91);
    Rng rng(92);
    const SymMatrix u(Eigen::MatrixXd(random_sym(3, rng)));
    const MomentCheck mc = isserlis_mc_check(spec, u, u, 200000, rng);
    CHECK(mc.relative_error() <= 0.03);
    // B*-orthogonal pair: U = e1 e1^T and V = e2 e2^T in the B*^{-1/2} frame
    Eigen::SelfAdjointEigenSolver<Mat> es(spec.b_star());
    const Mat s = es.operatorInverseSqrt();
    const Mat uu = s * Vec::Unit(3, 0) * Vec::Unit(3, 0).transpose() * s;
    const Mat vv = s * Vec::Unit(3, 1) * Vec::Unit(3, 1).transpose() * s;
    const MomentCheck orth = isserlis_mc_check(spec, SymMatrix(Eigen::MatrixXd(uu)), SymMatrix(Eigen::MatrixXd(vv)),
                                               200000, rng);
    CHECK(std::abs(orth.analytic) <= 1e-12);
    CHECK(std::abs(orth.empirical) <= 0.02);
    CHECK_THROWS_AS(isserlis_mc_check(spec, u, u, 1, rng), InsufficientData);
}

TEST_CASE("Wishart second moment: closed form, scaling and Monte Carlo") {
    const ModelSpec spec = make_spec(93);
    CHECK(wishart_second_moment(spec, 10) == doctest::Approx(wishart_second_moment(spec, 20) * 2.0).epsilon(1e-15));
    const Mat& ds = spec.d_star();
    double sum = 0.0;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) sum += wishart_entry_cov(ds, a, b, a, b);
    CHECK(sum == doctest::Approx(wishart_second_moment(spec, 1)).epsilon(1e-13));
    CHECK(wishart_entry_cov(ds, 0, 0, 0, 0) == doctest::Approx(2.0 * ds(0, 0) * ds(0, 0)));
    Rng rng(94);
    const int reps = 2000;
    for (int t : {10, 100}) {
        double acc = 0.0, acc2 = 0.0;
        for (int r = 0; r < reps; ++r) {
            CompressedStat st = CompressedStat::empty(3);
            for (int k = 0; k < t; ++k) update_statistic_inplace(st, sample_compressed(spec, rng));
            const double v = (st.d - ds).squaredNorm();
            acc += v;
            acc2 += v * v;
        }
        const double m = acc / reps;
        const double se = std::sqrt((acc2 / reps - m * m) / (reps - 1));
        CHECK(std::abs(m - wishart_second_moment(spec, t)) <= 4.0 * se);
    }
}

TEST_CASE("generated models honour the recipe") {
    Rng rng(95);
    ModelRecipe recipe;
    recipe.d = 4;
    recipe.p = 12;
    recipe.h_condition = 30.0;
    const ModelSpec spec = generate_model(recipe, rng);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(spec.h());
    CHECK(svd.singularValues()(0) / svd.singularValues()(3) == doctest::Approx(30.0).epsilon(1e-10));
    CHECK((Eigen::VectorXd(spec.base().lambda) - Eigen::VectorXd(default_spectrum(4))).norm() <= 1e-12);
    CHECK(default_spectrum(3)(0) == doctest::Approx(2.2));
    CHECK(default_spectrum(3)(2) == doctest::Approx(2.0 * 0.5625 + 0.2));
    const Mat q = haar_orthogonal(5, rng);
    CHECK((q.transpose() * q - Mat::Identity(5, 5)).norm() <= 1e-13);
}
