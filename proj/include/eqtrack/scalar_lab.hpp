#pragma once

#include <cstdint>

namespace eqtrack::scalar {

enum class ModelKind { SmoothBranch, NonlinearScore };

/// One-dimensional moving target r(S) = S + S^2/2 + 0.1 S^3.
struct TargetModel {
    ModelKind kind = ModelKind::SmoothBranch;

    [[nodiscard]] static double r(double s) { return s + 0.5 * s * s + 0.1 * s * s * s; }
    [[nodiscard]] static double dr(double s) { return 1.0 + s + 0.3 * s * s; }
    [[nodiscard]] static double d2r(double s) { return 1.0 + 0.6 * s; }

    // score in the error e = x - r(s); SmoothBranch uses the linear score F = e
    [[nodiscard]] double score(double x, double s) const;
    [[nodiscard]] double score_dx(double x, double s) const;
    [[nodiscard]] double score_dxx(double x, double s) const;
};

enum class CorrectorKind { Linear, Newton, Halley, DampedNewton };

struct Corrector {
    CorrectorKind kind = CorrectorKind::Linear;
    double q = 0.7;       // Linear contraction
    double lambda = 0.0;  // DampedNewton damping

    static Corrector linear(double q);
    static Corrector newton();
    static Corrector halley();
    static Corrector damped(double lambda);
};

/// Jet predictor x + sum_{k<=m} r^{(k)}(s_prev) ds^k / k!.
double scalar_predict(double x, double s_prev, double ds, int m, const TargetModel& model);
double scalar_correct(double x, double s, const Corrector& c, const TargetModel& model);
/// Terminal error |x_T - r(S_T)| of one streamed run restarted at ceil(T/2).
double scalar_run(const TargetModel& model, int m, const Corrector& c, std::int64_t t_total, std::uint64_t seed);

}  // namespace eqtrack::scalar
