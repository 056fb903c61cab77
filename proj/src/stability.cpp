#include "coniclpv/stability.hpp"

#include <cmath>

namespace coniclpv {

ConicSector complementary_cone(const ConicSector& plant, double delta) {
    if (plant.a == 0.0 || plant.b == 0.0) {
        throw SingularConeError("complementary_cone: plant bound is zero");
    }
    if (delta < 0.0) throw InputError("complementary_cone: delta < 0");
    const double a_c = -1.0 / plant.b + delta;
    const double b_c = -1.0 / plant.a - delta;
    if (!(a_c < b_c)) {
        throw DeltaTooLargeError(
            "complementary_cone: resulting sector inverted (a_c >= b_c)");
    }
    return ConicSector(a_c, b_c);
}

SectorConditions check_sector_conditions(const SectorPair& pair) {
    const auto& p = pair.plant;
    const auto& c = pair.controller;
    if (p.b == 0.0 || c.b == 0.0) {
        throw SingularConeError("check_sector_conditions: zero denominator");
    }
    SectorConditions out;
    out.condition1 = 1.0 / c.b + p.a;
    const double cross = c.a / c.b - p.a / p.b;
    out.condition2 =
        (1.0 / c.b + p.a) * (1.0 / p.b + c.a) - 0.25 * cross * cross;
    out.stable = out.condition1 > 0.0 && out.condition2 > 0.0;
    return out;
}

QsrBlocks qsr_matrices(const SectorPair& pair, int m) {
    const auto& p = pair.plant;
    const auto& c = pair.controller;
    if (p.b == 0.0 || c.b == 0.0) {
        throw SingularConeError("qsr_matrices: zero denominator");
    }
    const Mat I = Mat::Identity(m, m);
    QsrBlocks out;
    out.m = m;
    out.Q = Mat::Zero(2 * m, 2 * m);
    out.S = Mat::Zero(2 * m, 2 * m);
    out.R = Mat::Zero(2 * m, 2 * m);

    out.Q.topLeftCorner(m, m) = (-1.0 / c.b - p.a) * I;
    out.Q.bottomRightCorner(m, m) = (-1.0 / p.b - c.a) * I;
    out.Q.topRightCorner(m, m) = 0.5 * (c.a / c.b - p.a / p.b) * I;
    out.Q.bottomLeftCorner(m, m) = out.Q.topRightCorner(m, m);

    out.S.topLeftCorner(m, m) = 0.5 * (1.0 + c.a / c.b) * I;
    out.S.topRightCorner(m, m) = p.a * I;
    out.S.bottomLeftCorner(m, m) = -c.a * I;
    out.S.bottomRightCorner(m, m) = 0.5 * (1.0 + p.a / p.b) * I;

    out.R.topLeftCorner(m, m) = -c.a * I;
    out.R.bottomRightCorner(m, m) = -p.a * I;
    return out;
}

QsrKernel qsr_kernel(const QsrBlocks& blocks) {
    return QsrKernel{blocks.Q, blocks.S, blocks.R};
}

GainEstimate l2_gain_estimate(const SectorPair& pair, int m) {
    const QsrBlocks blocks = qsr_matrices(pair, m);
    GainEstimate est;

    const double q_max = numerics::max_symmetric_eigenvalue(blocks.Q);
    if (!(q_max < 0.0)) {
        throw EstimateError(
            "l2_gain_estimate: Q is not negative definite (sector "
            "conditions fail)");
    }

    // R = diag(-a_c I, -a_p I): the smallest beta with beta*I + R > 0
    constexpr double kEpsBeta = 1e-9;
    const double a_max = std::max(pair.controller.a, pair.plant.a);
    if (a_max <= 0.0) {
        est.degenerate = true;
        est.beta = 1e-6;
    } else {
        est.beta = a_max + kEpsBeta;
    }
    est.lambda_r = numerics::max_symmetric_eigenvalue(blocks.R);

    const Mat zmat =
        (1.0 / est.beta) * Mat::Identity(2 * m, 2 * m) + blocks.Q;
    est.zeta = numerics::max_symmetric_eigenvalue(zmat);
    if (!(est.zeta > 0.0)) {
        throw EstimateError("l2_gain_estimate: zeta <= 0, estimate undefined");
    }
    est.gamma = (est.beta + est.lambda_r) / est.zeta;
    return est;
}

double verify_feedback_iqc(const SectorPair& pair, const LoopSignals& sig,
                           double relation_tol) {
    const auto K = sig.t.size();
    const auto cols = static_cast<Eigen::Index>(K);
    if (K < 2 || sig.y_c.cols() != cols || sig.y_p.cols() != cols ||
        sig.u_c.cols() != cols || sig.u_p.cols() != cols ||
        sig.e_c.cols() != cols || sig.e_p.cols() != cols) {
        throw InputError("verify_feedback_iqc: signals not aligned");
    }
    const int m = static_cast<int>(sig.y_c.rows());

    double scale = 1.0;
    scale = std::max(scale, sig.u_c.cwiseAbs().maxCoeff());
    scale = std::max(scale, sig.u_p.cwiseAbs().maxCoeff());
    scale = std::max(scale, sig.y_c.cwiseAbs().maxCoeff());
    scale = std::max(scale, sig.y_p.cwiseAbs().maxCoeff());
    const double dev =
        std::max((sig.e_c - sig.u_c - sig.y_p).cwiseAbs().maxCoeff(),
                 (sig.e_p - sig.u_p + sig.y_c).cwiseAbs().maxCoeff());
    if (dev > relation_tol * scale) {
        throw InconsistentTraceError(
            "verify_feedback_iqc: interconnection relations violated");
    }

    const QsrBlocks blocks = qsr_matrices(pair, m);
    std::vector<double> vals(K);
    Vec Y(2 * m), U(2 * m);
    for (std::size_t i = 0; i < K; ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        Y.head(m) = sig.y_c.col(c);
        Y.tail(m) = sig.y_p.col(c);
        U.head(m) = sig.u_c.col(c);
        U.tail(m) = sig.u_p.col(c);
        vals[i] = Y.dot(blocks.Q * Y) + 2.0 * Y.dot(blocks.S * U) +
                  U.dot(blocks.R * U);
    }
    return numerics::quadrature(sig.t, vals);
}

}  // namespace coniclpv
