#include "eqtrack/sym_geometry.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace eqtrack {

namespace {

double max_abs(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

void require_square(const Eigen::MatrixXd& m, const char* what) {
    if (m.rows() != m.cols() || m.rows() == 0) throw std::invalid_argument(std::string(what) + ": not square");
}

// phi(iy) = (e^{iy} - 1)/(iy), with its series near zero.
std::complex<double> phi_imag(double y) {
    if (std::abs(y) < 1e-5) return {1.0 - y * y / 6.0, y / 2.0 - y * y * y / 24.0};
    const std::complex<double> iy(0.0, y);
    return (std::exp(iy) - 1.0) / iy;
}

}  // namespace

SymMatrix::SymMatrix(const Eigen::MatrixXd& m) {
    require_square(m, "SymMatrix");
    const double scale = std::max(1.0, max_abs(m));
    if (max_abs(m - m.transpose()) > 1e-10 * scale) throw std::invalid_argument("SymMatrix: input not symmetric");
    m_ = 0.5 * (m + m.transpose());
}

SymMatrix SymMatrix::zero(int d) { return SymMatrix(Eigen::MatrixXd::Zero(d, d)); }
SymMatrix SymMatrix::identity(int d) { return SymMatrix(Eigen::MatrixXd::Identity(d, d)); }

SpdMatrix::SpdMatrix(const Eigen::MatrixXd& m) : SpdMatrix(SymMatrix(m)) {}

SpdMatrix::SpdMatrix(const SymMatrix& m) : sym_(m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.matrix(), Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    const double top = ev(ev.size() - 1);
    if (!(top > 0.0) || !(ev(0) > 1e-12 * top)) throw NotPositiveDefinite("SpdMatrix: eigenvalue not positive");
}

double SpectralDecomp::min_gap() const {
    double gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i + 1 < dim(); ++i) gap = std::min(gap, lambda(i) - lambda(i + 1));
    return gap;
}

ChartPoint ChartPoint::zero(int d) { return {Vec::Zero(d), Mat::Zero(d, d)}; }

double ChartPoint::norm() const { return std::sqrt(x.squaredNorm() + theta.squaredNorm()); }

int packed_pair_index(int d, int i, int j) {
    // rows before i contribute (d-1) + (d-2) + ... + (d-i) pairs
    return d + i * (2 * d - i - 1) / 2 + (j - i - 1);
}

ChartVec ChartPoint::packed() const {
    const int d = dim();
    ChartVec v(chart_dim(d));
    v.head(d) = x;
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) v(packed_pair_index(d, i, j)) = std::numbers::sqrt2 * theta(i, j);
    return v;
}

ChartPoint ChartPoint::unpack(int d, const ChartVec& v) {
    if (v.size() != chart_dim(d)) throw std::invalid_argument("ChartPoint::unpack: size mismatch");
    ChartPoint p = zero(d);
    p.x = v.head(d);
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double t = v(packed_pair_index(d, i, j)) / std::numbers::sqrt2;
            p.theta(i, j) = t;
            p.theta(j, i) = -t;
        }
    return p;
}

ChartPoint& ChartPoint::operator+=(const ChartPoint& o) {
    x += o.x;
    theta += o.theta;
    return *this;
}

ChartPoint& ChartPoint::operator-=(const ChartPoint& o) {
    x -= o.x;
    theta -= o.theta;
    return *this;
}

ChartPoint& ChartPoint::operator*=(double s) {
    x *= s;
    theta *= s;
    return *this;
}

ChartPoint operator+(ChartPoint a, const ChartPoint& b) { return a += b; }
ChartPoint operator-(ChartPoint a, const ChartPoint& b) { return a -= b; }
ChartPoint operator*(double s, ChartPoint a) { return a *= s; }

double TangentCoords::norm() const { return std::sqrt(a.squaredNorm() + k.squaredNorm()); }

Mat commutator(const Mat& a, const Mat& b) { return a * b - b * a; }
Mat antisym_part(const Mat& m) { return 0.5 * (m - m.transpose()); }
Mat sym_part(const Mat& m) { return 0.5 * (m + m.transpose()); }

SpectralDecomp eig_simple(const SpdMatrix& m) {
    const int d = m.dim();
    if (d > kMaxDim) throw std::invalid_argument("eig_simple: dimension exceeds kMaxDim");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.matrix());
    SpectralDecomp out;
    out.q.resize(d, d);
    out.lambda.resize(d);
    for (int k = 0; k < d; ++k) {
        // descending order
        out.lambda(k) = es.eigenvalues()(d - 1 - k);
        Vec col = es.eigenvectors().col(d - 1 - k);
        Eigen::Index arg = 0;
        col.cwiseAbs().maxCoeff(&arg);
        if (col(arg) < 0.0) col = -col;
        out.q.col(k) = col;
    }
    const double top = out.lambda(0);
    for (int k = 0; k + 1 < d; ++k)
        if (out.lambda(k) - out.lambda(k + 1) <= kGapThreshold * top)
            throw DegenerateSpectrum("eig_simple: eigengap below threshold");
    return out;
}

TangentCoords tangent_decompose(const SpectralDecomp& base, const SymMatrix& u) {
    const int d = base.dim();
    if (u.dim() != d) throw std::invalid_argument("tangent_decompose: dimension mismatch");
    const Mat ut = base.q.transpose() * Mat(u.matrix()) * base.q;
    const double tol = kGapThreshold * base.lambda.cwiseAbs().maxCoeff();
    TangentCoords c{Vec(d), Mat::Zero(d, d)};
    for (int i = 0; i < d; ++i) {
        c.a(i) = ut(i, i) / base.lambda(i);
        for (int j = 0; j < d; ++j) {
            if (i == j) continue;
            const double gap = base.lambda(j) - base.lambda(i);
            if (std::abs(gap) <= tol) throw DegenerateSpectrum("tangent_decompose: repeated eigenvalue");
            c.k(i, j) = ut(i, j) / gap;
        }
    }
    return c;
}

SymMatrix tangent_reconstruct(const SpectralDecomp& base, const TangentCoords& c) {
    const int d = base.dim();
    if (c.a.size() != d || c.k.rows() != d || c.k.cols() != d)
        throw std::invalid_argument("tangent_reconstruct: dimension mismatch");
    const Mat lam = base.lambda.asDiagonal();
    Mat ut = Mat((base.lambda.array() * c.a.array()).matrix().asDiagonal()) + commutator(c.k, lam);
    return SymMatrix(Eigen::MatrixXd(base.q * ut * base.q.transpose()));
}

std::pair<double, double> chart_norm_constants(const Vec& lambda) {
    const int d = static_cast<int>(lambda.size());
    if (d == 0) throw std::invalid_argument("chart_norm_constants: empty spectrum");
    double gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i + 1 < d; ++i) {
        const double g = lambda(i) - lambda(i + 1);
        if (!(g > 0.0)) throw DegenerateSpectrum("chart_norm_constants: spectrum not strictly decreasing");
        gap = std::min(gap, g);
    }
    if (!(lambda(d - 1) > 0.0)) throw DegenerateSpectrum("chart_norm_constants: nonpositive eigenvalue");
    const double lo = lambda(d - 1) * lambda(d - 1);
    return {std::min(lo, gap * gap), lambda(0) * lambda(0)};
}

RotationGenerator::RotationGenerator(const Mat& theta) {
    // i*theta is Hermitian; theta = V diag(i omega) V^H with omega = -eig(i theta)
    CMat h = std::complex<double>(0.0, 1.0) * theta.cast<std::complex<double>>();
    Eigen::SelfAdjointEigenSolver<CMat> es(h);
    v_ = es.eigenvectors();
    omega_ = -es.eigenvalues();
    fill_phi();
}

RotationGenerator RotationGenerator::from_orthogonal(const Mat& u) {
    // i(u - u^T)/2 = V diag(sin omega) V^H shares the eigenvectors of u when |omega| < pi/2
    const Mat s = 0.5 * (u - u.transpose());
    const CMat h = std::complex<double>(0.0, 1.0) * s.cast<std::complex<double>>();
    Eigen::SelfAdjointEigenSolver<CMat> es(h);
    if (es.info() != Eigen::Success) throw ChartDomainExceeded("from_orthogonal: eigensolver failed");
    const Vec sines = es.eigenvalues();
    if (sines.cwiseAbs().maxCoeff() > 0.95) throw ChartDomainExceeded("from_orthogonal: rotation angle too large");
    RotationGenerator g;
    g.v_ = es.eigenvectors();
    g.omega_ = sines.array().asin().matrix();
    // cos omega > 0 on the principal branch
    const CMat uv = u.cast<std::complex<double>>() * g.v_;
    if (g.v_.conjugate().cwiseProduct(uv).colwise().sum().real().minCoeff() <= 0.0) throw ChartDomainExceeded("from_orthogonal: off the principal branch");
    g.fill_phi();
    return g;
}

void RotationGenerator::fill_phi() {
    const int d = dim();
    phi_.resize(d, d);
    for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k) phi_(j, k) = phi_imag(omega_(j) - omega_(k));
}

Mat RotationGenerator::theta() const {
    const int d = dim();
    CMat scaled = v_;
    for (int k = 0; k < d; ++k) scaled.col(k) *= std::complex<double>(0.0, omega_(k));
    return antisym_part((scaled * v_.adjoint()).real());
}

double RotationGenerator::angle() const { return omega_.size() ? omega_.cwiseAbs().maxCoeff() : 0.0; }

Mat RotationGenerator::exp_neg() const {
    const int d = dim();
    CMat scaled = v_;
    for (int k = 0; k < d; ++k) scaled.col(k) *= std::exp(std::complex<double>(0.0, -omega_(k)));
    // exp(-theta) = V diag(e^{-i omega}) V^H
    return (scaled * v_.adjoint()).real();
}

Mat RotationGenerator::apply(const Mat& x, Kind kind, bool adjoint) const {
    const int d = dim();
    CMat xt = v_.adjoint() * x.cast<std::complex<double>>() * v_;
    for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k) {
            // phi(-iy) is the conjugate of phi(iy)
            const std::complex<double> f = adjoint ? std::conj(phi_(j, k)) : phi_(j, k);
            xt(j, k) = kind == Kind::Forward ? xt(j, k) * f : xt(j, k) / f;
        }
    return antisym_part((v_ * xt * v_.adjoint()).real());
}

Mat RotationGenerator::to_body(const Mat& theta_dot) const { return apply(theta_dot, Kind::Forward, false); }
Mat RotationGenerator::from_body(const Mat& w) const { return apply(w, Kind::Inverse, false); }
Mat RotationGenerator::to_body_adjoint(const Mat& g) const { return apply(g, Kind::Forward, true); }
Mat RotationGenerator::from_body_adjoint(const Mat& g) const { return apply(g, Kind::Inverse, true); }

EigenFrame chart_frame(const EigenFrame& base, const ChartPoint& p, const RotationGenerator& rot) {
    EigenFrame f;
    f.q = base.q * rot.exp_neg();
    f.lambda = (base.lambda.array() * p.x.array().exp()).matrix();
    return f;
}

EigenFrame chart_frame(const EigenFrame& base, const ChartPoint& p) {
    return chart_frame(base, p, RotationGenerator(p.theta));
}

SpdMatrix chart_exp(const SpectralDecomp& base, const ChartPoint& p) {
    if (p.dim() != base.dim()) throw std::invalid_argument("chart_exp: dimension mismatch");
    const EigenFrame f = chart_frame(base, p);
    return SpdMatrix(Eigen::MatrixXd(sym_part(f.matrix())));
}

ChartPoint chart_log(const SpectralDecomp& base, const SpdMatrix& sigma) {
    const int d = base.dim();
    if (sigma.dim() != d) throw std::invalid_argument("chart_log: dimension mismatch");
    SpectralDecomp s;
    try {
        s = eig_simple(sigma);
    } catch (const DegenerateSpectrum&) {
        throw ChartDomainExceeded("chart_log: target spectrum is degenerate");
    }
    Mat r = base.q.transpose() * s.q;
    // match each base axis to the eigenvector of largest overlap; log-eigenvalues may reorder
    std::vector<int> match(d, -1);
    std::vector<bool> used(d, false);
    for (int j = 0; j < d; ++j) {
        Eigen::Index row = 0;
        r.col(j).cwiseAbs().maxCoeff(&row);
        if (used[row]) throw ChartDomainExceeded("chart_log: ambiguous eigenvector matching");
        used[row] = true;
        match[row] = j;
    }
    {
        SpectralDecomp m = s;
        for (int k = 0; k < d; ++k) {
            m.q.col(k) = s.q.col(match[k]);
            m.lambda(k) = s.lambda(match[k]);
        }
        s = m;
        r = base.q.transpose() * s.q;
    }
    for (int k = 0; k < d; ++k) {
        if (std::abs(r(k, k)) < 1e-8) throw ChartDomainExceeded("chart_log: ambiguous eigenvector matching");
        if (r(k, k) < 0.0) {
            s.q.col(k) = -s.q.col(k);
            r.col(k) = -r.col(k);
        }
    }
    if (r.determinant() < 0.0) throw ChartDomainExceeded("chart_log: matched frame is a reflection");
    const Eigen::MatrixXd log_r = Eigen::MatrixXd(r).log();
    ChartPoint p;
    p.theta = -antisym_part(Mat(log_r));
    if (!p.theta.allFinite() || RotationGenerator(p.theta).angle() >= std::numbers::pi / 2)
        throw ChartDomainExceeded("chart_log: rotation angle outside the chart");
    p.x = (s.lambda.array() / base.lambda.array()).log().matrix();
    return p;
}

double chart_distance(const SpectralDecomp& base, const SpdMatrix& sigma) { return chart_log(base, sigma).norm(); }

Mat exp_neg_skew(const Mat& w) {
    const int d = static_cast<int>(w.rows());
    const double nrm = w.cwiseAbs().rowwise().sum().maxCoeff();
    int squarings = 0;
    double scale = 1.0;
    while (nrm * scale > 0.125) {
        scale *= 0.5;
        ++squarings;
    }
    const Mat a = -scale * w;
    // Taylor to degree 10; remainder below 1e-17 for norm <= 1/8
    Mat term = Mat::Identity(d, d);
    Mat out = Mat::Identity(d, d);
    for (int k = 1; k <= 10; ++k) {
        term = term * a / static_cast<double>(k);
        out += term;
        if (term.cwiseAbs().maxCoeff() < 1e-18) break;
    }
    for (int s = 0; s < squarings; ++s) out = out * out;
    return out;
}

}  // namespace eqtrack
