#include "coniclpv/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace coniclpv::numerics {

void require_finite(const Mat& m, const char* what) {
    if (!m.allFinite()) {
        throw ShapeError(std::string(what) + ": non-finite entries");
    }
}

Mat symmetrized(const Mat& m) {
    if (m.rows() != m.cols()) {
        throw ShapeError("symmetrized: matrix is not square");
    }
    require_finite(m, "symmetrized");
    const double scale = m.cwiseAbs().maxCoeff();
    const double skew = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (skew > kSymmetryRelTol * std::max(scale, 1.0)) {
        throw ShapeError("symmetrized: matrix is not symmetric (skew " +
                         std::to_string(skew) + ")");
    }
    return 0.5 * (m + m.transpose());
}

EigenReport eig_symmetric(const Mat& m) {
    const Mat s = symmetrized(m);
    Eigen::SelfAdjointEigenSolver<Mat> es(s);
    if (es.info() != Eigen::Success) {
        throw Error("eig_symmetric: eigensolver failed");
    }
    const Vec lam = es.eigenvalues();
    const Mat v = es.eigenvectors();

    const double norm = s.norm();
    const double residual = (s - v * lam.asDiagonal() * v.transpose()).norm();
    if (residual > 1e-9 * std::max(norm, 1.0)) {
        throw Error("eig_symmetric: reconstruction residual " +
                    std::to_string(residual));
    }

    EigenReport report;
    report.eigenvalues.reserve(static_cast<std::size_t>(lam.size()));
    for (Eigen::Index i = lam.size() - 1; i >= 0; --i) {
        report.eigenvalues.emplace_back(lam(i), 0.0);
    }
    report.min_symmetric_eigenvalue = lam.size() > 0 ? lam(0) : 0.0;
    return report;
}

double max_symmetric_eigenvalue(const Mat& m) {
    const Mat s = symmetrized(m);
    Eigen::SelfAdjointEigenSolver<Mat> es(s, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw Error("max_symmetric_eigenvalue: eigensolver failed");
    }
    return es.eigenvalues().maxCoeff();
}

bool is_negative_semidefinite(const Mat& m, double tol) {
    return max_symmetric_eigenvalue(m) <= tol;
}

OdePath integrate_ode(const VectorField& f, const Vec& x0, double t0,
                      double tn, double dt, const OdeOptions& opts) {
    if (!(dt > 0.0)) throw InputError("integrate_ode: dt must be positive");
    if (!(tn > t0)) throw InputError("integrate_ode: tn must exceed t0");

    OdePath path;
    const auto expected =
        static_cast<std::size_t>(std::ceil((tn - t0) / dt)) + 2;
    path.t.reserve(expected);
    path.x.reserve(expected);

    double t = t0;
    Vec x = x0;
    path.t.push_back(t);
    path.x.push_back(x);

    auto check = [&](const Vec& state, double at) {
        if (!state.allFinite() ||
            state.cwiseAbs().maxCoeff() > opts.blowup_threshold) {
            throw DivergenceError(
                "integrate_ode: state exceeded blow-up threshold at t=" +
                    std::to_string(at),
                at);
        }
    };
    check(x, t);

    while (t < tn - 1e-15 * std::max(1.0, std::abs(tn))) {
        const double h = std::min(dt, tn - t);
        const Vec k1 = f(t, x);
        const Vec k2 = f(t + 0.5 * h, x + 0.5 * h * k1);
        const Vec k3 = f(t + 0.5 * h, x + 0.5 * h * k2);
        const Vec k4 = f(t + h, x + h * k3);
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t = (h < dt) ? tn : t + h;
        check(x, t);
        path.t.push_back(t);
        path.x.push_back(x);
    }
    return path;
}

double quadrature(const std::vector<double>& t, const std::vector<double>& v) {
    if (t.size() != v.size()) {
        throw InputError("quadrature: time/value size mismatch");
    }
    if (t.size() < 2) throw InputError("quadrature: need at least 2 samples");
    double acc = 0.0;
    for (std::size_t i = 1; i < t.size(); ++i) {
        const double h = t[i] - t[i - 1];
        if (!(h > 0.0)) throw InputError("quadrature: times must increase");
        acc += 0.5 * h * (v[i] + v[i - 1]);
    }
    return acc;
}

double trapezoid_weight(const std::vector<double>& t, std::size_t i) {
    const std::size_t n = t.size();
    if (n < 2 || i >= n) throw InputError("trapezoid_weight: bad index");
    double w = 0.0;
    if (i > 0) w += 0.5 * (t[i] - t[i - 1]);
    if (i + 1 < n) w += 0.5 * (t[i + 1] - t[i]);
    return w;
}

std::vector<double> linspace(double lo, double hi, int n) {
    if (n <= 0) throw InputError("linspace: need at least one point");
    if (n == 1) return {0.5 * (lo + hi)};
    std::vector<double> out(static_cast<std::size_t>(n));
    const double h = (hi - lo) / (n - 1);
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = lo + i * h;
    out.back() = hi;
    return out;
}

}  // namespace coniclpv::numerics
