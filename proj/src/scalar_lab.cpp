#include "eqtrack/scalar_lab.hpp"

#include "eqtrack/types.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace eqtrack::scalar {

double TargetModel::score(double x, double s) const {
    const double e = x - r(s);
    return kind == ModelKind::NonlinearScore ? e + 0.2 * e * e : e;
}

double TargetModel::score_dx(double x, double s) const {
    const double e = x - r(s);
    return kind == ModelKind::NonlinearScore ? 1.0 + 0.4 * e : 1.0;
}

double TargetModel::score_dxx(double, double) const { return kind == ModelKind::NonlinearScore ? 0.4 : 0.0; }

Corrector Corrector::linear(double q) {
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("Corrector::linear: q must lie in (0,1)");
    return {CorrectorKind::Linear, q, 0.0};
}
Corrector Corrector::newton() { return {CorrectorKind::Newton, 0.0, 0.0}; }
Corrector Corrector::halley() { return {CorrectorKind::Halley, 0.0, 0.0}; }
Corrector Corrector::damped(double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("Corrector::damped: lambda must be nonnegative");
    return {CorrectorKind::DampedNewton, 0.0, lambda};
}

double scalar_predict(double x, double s_prev, double ds, int m, const TargetModel& model) {
    if (m < 0 || m > 2) throw std::invalid_argument("scalar_predict: order must be 0, 1 or 2");
    double out = x;
    if (m >= 1) out += model.dr(s_prev) * ds;
    if (m >= 2) out += 0.5 * model.d2r(s_prev) * ds * ds;
    return out;
}

namespace {

double checked_div(double num, double den) {
    if (std::abs(den) < 1e-14) throw SingularDenominator("scalar_correct: denominator vanished");
    return num / den;
}

}  // namespace

double scalar_correct(double x, double s, const Corrector& c, const TargetModel& model) {
    switch (c.kind) {
        case CorrectorKind::Linear: {
            const double r = model.r(s);
            return r + c.q * (x - r);
        }
        case CorrectorKind::Newton:
            return x - checked_div(model.score(x, s), model.score_dx(x, s));
        case CorrectorKind::Halley: {
            const double f = model.score(x, s);
            const double f1 = model.score_dx(x, s);
            const double f2 = model.score_dxx(x, s);
            return x - checked_div(2.0 * f * f1, 2.0 * f1 * f1 - f * f2);
        }
        case CorrectorKind::DampedNewton:
            return x - checked_div(model.score(x, s), model.score_dx(x, s) + c.lambda);
    }
    throw std::logic_error("scalar_correct: unknown corrector");
}

double scalar_run(const TargetModel& model, int m, const Corrector& c, std::int64_t t_total, std::uint64_t seed) {
    if (t_total < 4) throw std::invalid_argument("scalar_run: need T >= 4");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    const std::int64_t t0 = (t_total + 1) / 2;
    double sum = 0.0;
    double s = 0.0;
    double x = 0.0;
    for (std::int64_t t = 1; t <= t_total; ++t) {
        const double s_prev = s;
        sum += nd(rng);
        s = sum / static_cast<double>(t);
        if (t == t0) {
            x = model.r(s);
        } else if (t > t0) {
            x = scalar_predict(x, s_prev, s - s_prev, m, model);
            x = scalar_correct(x, s, c, model);
        }
    }
    return std::abs(x - model.r(s));
}

}  // namespace eqtrack::scalar
