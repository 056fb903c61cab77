#pragma once

// Dense real linear algebra and fixed-step integration primitives shared by
// every other module.

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <vector>

#include "coniclpv/errors.hpp"

namespace coniclpv {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace numerics {

constexpr double kSymmetryRelTol = 1e-12;
constexpr double kDefaultEigTol = 1e-9;
constexpr double kDefaultBlowup = 1e9;

/// Throws ShapeError if m contains NaN/Inf entries.
void require_finite(const Mat& m, const char* what);

/// (M + M')/2 after checking m is square and symmetric within tolerance.
Mat symmetrized(const Mat& m);

struct EigenReport {
    /// Sorted by real part, descending.
    std::vector<std::complex<double>> eigenvalues;
    double min_symmetric_eigenvalue = 0.0;
};

/// Spectral decomposition of a symmetric matrix. Eigenvalues are real and
/// sorted descending; the reconstruction residual is checked against
/// 1e-9 * ||m||_F.
EigenReport eig_symmetric(const Mat& m);

/// Largest eigenvalue of the symmetrized input.
double max_symmetric_eigenvalue(const Mat& m);

/// True iff the largest eigenvalue of the (symmetrized) input is <= tol.
bool is_negative_semidefinite(const Mat& m, double tol = kDefaultEigTol);

using VectorField = std::function<Vec(double t, const Vec& x)>;

struct OdePath {
    std::vector<double> t;
    std::vector<Vec> x;
};

struct OdeOptions {
    double blowup_threshold = kDefaultBlowup;  // on the state inf-norm
};

/// Fixed-step classic Runge-Kutta. Samples at t0, t0+dt, ...; the final step
/// is shortened so the last sample lands exactly on tn. Throws
/// DivergenceError (with the escape time) when the state inf-norm crosses the
/// blow-up threshold.
OdePath integrate_ode(const VectorField& f, const Vec& x0, double t0,
                      double tn, double dt, const OdeOptions& opts = {});

/// Composite trapezoid over (t, value) samples; exact for integrands that are
/// piecewise linear on the sample grid. Times must be strictly increasing.
double quadrature(const std::vector<double>& t, const std::vector<double>& v);

/// Trapezoid weight of sample i on a general strictly increasing grid.
double trapezoid_weight(const std::vector<double>& t, std::size_t i);

/// Uniformly spaced points including both endpoints; n == 1 gives the
/// midpoint.
std::vector<double> linspace(double lo, double hi, int n);

}  // namespace numerics
}  // namespace coniclpv
