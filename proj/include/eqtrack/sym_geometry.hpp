#pragma once

#include "eqtrack/types.hpp"

#include <utility>

namespace eqtrack {

/// Dense symmetric matrix. The stored entries are exactly symmetric.
class SymMatrix {
public:
    SymMatrix() = default;
    /// Accepts matrices symmetric up to rounding and stores the symmetric part.
    explicit SymMatrix(const Eigen::MatrixXd& m);

    static SymMatrix zero(int d);
    static SymMatrix identity(int d);

    [[nodiscard]] int dim() const { return static_cast<int>(m_.rows()); }
    [[nodiscard]] const Eigen::MatrixXd& matrix() const { return m_; }
    [[nodiscard]] double operator()(int i, int j) const { return m_(i, j); }

private:
    Eigen::MatrixXd m_;
};

/// Symmetric positive definite matrix, checked on construction.
class SpdMatrix {
public:
    SpdMatrix() = default;
    explicit SpdMatrix(const Eigen::MatrixXd& m);
    explicit SpdMatrix(const SymMatrix& m);

    [[nodiscard]] int dim() const { return sym_.dim(); }
    [[nodiscard]] const Eigen::MatrixXd& matrix() const { return sym_.matrix(); }
    [[nodiscard]] const SymMatrix& sym() const { return sym_; }

private:
    SymMatrix sym_;
};

/// Orthonormal eigenframe q with eigenvalues lambda, so that q diag(lambda) q^T is the matrix.
/// Eigenvalues are simple but need not be ordered.
struct EigenFrame {
    Mat q;
    Vec lambda;

    [[nodiscard]] int dim() const { return static_cast<int>(lambda.size()); }
    [[nodiscard]] Mat matrix() const { return q * lambda.asDiagonal() * q.transpose(); }
};

/// Canonical decomposition from eig_simple: eigenvalues strictly decreasing, every eigenvector
/// has its largest-magnitude entry positive.
struct SpectralDecomp : EigenFrame {
    [[nodiscard]] double min_gap() const;
};

/// Chart coordinates: log-eigenvalue offsets x and rotation generator theta.
struct ChartPoint {
    Vec x;
    Mat theta;

    static ChartPoint zero(int d);
    [[nodiscard]] int dim() const { return static_cast<int>(x.size()); }
    [[nodiscard]] double norm() const;
    /// Packed layout [x, sqrt(2) theta_ij for i<j]; Euclidean norm matches the chart norm.
    [[nodiscard]] ChartVec packed() const;
    static ChartPoint unpack(int d, const ChartVec& v);

    ChartPoint& operator+=(const ChartPoint& o);
    ChartPoint& operator-=(const ChartPoint& o);
    ChartPoint& operator*=(double s);
};

ChartPoint operator+(ChartPoint a, const ChartPoint& b);
ChartPoint operator-(ChartPoint a, const ChartPoint& b);
ChartPoint operator*(double s, ChartPoint a);

/// Tangent coordinates (a, K) of a symmetric direction at a simple-spectrum base.
struct TangentCoords {
    Vec a;
    Mat k;

    [[nodiscard]] double norm() const;
};

/// Index of the pair (i,j), i<j, inside the packed rotational block.
int packed_pair_index(int d, int i, int j);

Mat commutator(const Mat& a, const Mat& b);
Mat antisym_part(const Mat& m);
Mat sym_part(const Mat& m);

/// Relative gap threshold below which a spectrum counts as degenerate.
inline constexpr double kGapThreshold = 1e-10;

SpectralDecomp eig_simple(const SpdMatrix& m);

TangentCoords tangent_decompose(const SpectralDecomp& base, const SymMatrix& u);
SymMatrix tangent_reconstruct(const SpectralDecomp& base, const TangentCoords& c);

/// Comparison constants between the chart norm and the Frobenius norm of the ambient direction.
std::pair<double, double> chart_norm_constants(const Vec& lambda);

/// Spectral data of a rotation generator. Provides exp(-theta) and the transport
/// phi(ad_theta), phi(z) = (e^z - 1)/z, which maps fixed-chart angle increments to body increments.
class RotationGenerator {
public:
    RotationGenerator() = default;
    explicit RotationGenerator(const Mat& theta);
    /// Principal generator of an orthogonal u = exp(-theta), for rotation angles below pi/2.
    /// Throws ChartDomainExceeded outside that range.
    [[nodiscard]] static RotationGenerator from_orthogonal(const Mat& u);

    [[nodiscard]] int dim() const { return static_cast<int>(omega_.size()); }
    [[nodiscard]] Mat exp_neg() const;
    /// Largest rotation angle, max |omega|.
    [[nodiscard]] double angle() const;
    [[nodiscard]] Mat theta() const;

    [[nodiscard]] Mat to_body(const Mat& theta_dot) const;          // phi(ad) X
    [[nodiscard]] Mat from_body(const Mat& w) const;                // phi(ad)^{-1} W
    [[nodiscard]] Mat to_body_adjoint(const Mat& g) const;          // phi(-ad) G
    [[nodiscard]] Mat from_body_adjoint(const Mat& g) const;        // phi(-ad)^{-1} G

private:
    enum class Kind { Forward, Inverse };
    [[nodiscard]] Mat apply(const Mat& x, Kind kind, bool adjoint) const;
    void fill_phi();

    CMat v_;
    Vec omega_;
    CMat phi_;  // phi(i(omega_j - omega_k))
};

/// Frame of chart_exp(base, p): q = q* exp(-theta), lambda = lambda* e^x.
EigenFrame chart_frame(const EigenFrame& base, const ChartPoint& p);
EigenFrame chart_frame(const EigenFrame& base, const ChartPoint& p, const RotationGenerator& rot);

SpdMatrix chart_exp(const SpectralDecomp& base, const ChartPoint& p);
ChartPoint chart_log(const SpectralDecomp& base, const SpdMatrix& sigma);
double chart_distance(const SpectralDecomp& base, const SpdMatrix& sigma);

/// Orthogonal exp(-w) for a small antisymmetric w, by scaling and squaring.
Mat exp_neg_skew(const Mat& w);

}  // namespace eqtrack
