#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace eqtrack {

// Latent dimension is small; capped storage keeps hot loops off the heap.
inline constexpr int kMaxDim = 8;
inline constexpr int kMaxChart = kMaxDim * (kMaxDim + 1) / 2;

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using CMat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim,
                           kMaxDim>;
using ChartVec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxChart, 1>;
using ChartMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxChart, kMaxChart>;

/// Number of chart coordinates for latent dimension d: d log-eigenvalues plus d(d-1)/2 angles.
constexpr int chart_dim(int d) { return d + d * (d - 1) / 2; }

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateSpectrum : public Error {
public:
    using Error::Error;
};

class ChartDomainExceeded : public Error {
public:
    using Error::Error;
};

class NotPositiveDefinite : public Error {
public:
    using Error::Error;
};

class SingularMatrix : public Error {
public:
    using Error::Error;
};

class NotConverged : public Error {
public:
    NotConverged(const std::string& what, double residual) : Error(what), residual_(residual) {}
    [[nodiscard]] double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class SingularDenominator : public Error {
public:
    using Error::Error;
};

class InsufficientData : public Error {
public:
    using Error::Error;
};

}  // namespace eqtrack
