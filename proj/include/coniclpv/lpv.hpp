#pragma once

// Parameter-varying state-space systems, admissible parameter trajectories,
// and the bounded input class they are driven with.

#include <functional>
#include <optional>
#include <vector>

#include "coniclpv/numerics.hpp"

namespace coniclpv {

/// Frozen-parameter state-space quadruple.
struct StateSpace {
    Mat A, B, C, D;
};

/// Componentwise range and rate bounds on parameter trajectories. Rate
/// bounds may be flagged unbounded, which collapses the rate grid axis and
/// forces a parameter-independent storage basis downstream.
struct ParameterBounds {
    Vec rho_min, rho_max;
    Vec rate_min, rate_max;
    bool rate_unbounded = false;

    static ParameterBounds box(const Vec& lo, const Vec& hi, const Vec& rlo,
                               const Vec& rhi);
    static ParameterBounds box_rate_unbounded(const Vec& lo, const Vec& hi);
    /// Scalar bounds applied componentwise over p axes.
    static ParameterBounds uniform(int p, double lo, double hi, double rlo,
                                   double rhi);

    int dim() const { return static_cast<int>(rho_min.size()); }
    bool contains(const Vec& rho, double tol = 1e-12) const;
};

/// Axis-aligned sub-box of the parameter box.
struct Box {
    Vec lo, hi;
    int dim() const { return static_cast<int>(lo.size()); }
    bool contains(const Vec& rho, double tol = 1e-12) const;
    static Box interval(double lo, double hi);
    static Box of(const ParameterBounds& b) { return {b.rho_min, b.rho_max}; }
};

/// 0 < u_bar_low <= ||u(t)|| <= u_bar_high pointwise in t (Assumption-style
/// norm band; zero inputs are excluded).
struct InputClass {
    double u_bar_low = 1.0;
    double u_bar_high = 1.0;
    InputClass() = default;
    InputClass(double lo, double hi);
};

/// Piecewise-polynomial parameter path. Each segment stores power-basis
/// coefficients in local time (t - t0), degree <= 3, one row per parameter
/// component. Discrete trajectories are piecewise constant and
/// right-continuous.
class ParameterTrajectory {
  public:
    struct Segment {
        double t0 = 0.0, t1 = 0.0;
        Mat coeffs;  // p x (deg+1), deg <= 3
    };

    ParameterTrajectory() = default;
    ParameterTrajectory(std::vector<Segment> segments, bool discrete);

    static ParameterTrajectory constant(const Vec& rho, double t0, double t1);
    static ParameterTrajectory linear(const Vec& rho0, const Vec& rho1,
                                      double t0, double t1);
    /// Piecewise-constant trajectory: values[i] on (breakpoints[i],
    /// breakpoints[i+1]].
    static ParameterTrajectory discrete(const std::vector<double>& breakpoints,
                                        const std::vector<Vec>& values);

    Vec value(double t) const;
    Vec rate(double t) const;

    double t_begin() const { return segments_.front().t0; }
    double t_end() const { return segments_.back().t1; }
    double horizon() const { return t_end() - t_begin(); }
    int dim() const { return static_cast<int>(segments_.front().coeffs.rows()); }
    bool is_discrete() const { return discrete_; }
    const std::vector<Segment>& segments() const { return segments_; }

  private:
    std::size_t segment_index(double t) const;
    std::vector<Segment> segments_;
    bool discrete_ = false;
};

/// LPV system in either affine form M(rho) = M0 + sum_i rho_i Mi or as a
/// tensor grid of vertex matrices with multilinear interpolation. Input and
/// output dimensions are equal.
class LpvSystem {
  public:
    enum class Form { Affine, Grid };

    /// terms holds p+1 matrices per symbol: the constant term then one per
    /// parameter component.
    static LpvSystem affine(std::vector<Mat> A, std::vector<Mat> B,
                            std::vector<Mat> C, std::vector<Mat> D,
                            const Box& box);
    /// vertices are stored row-major over the axis grids (last axis fastest).
    static LpvSystem grid(std::vector<Vec> axes, std::vector<Mat> A,
                          std::vector<Mat> B, std::vector<Mat> C,
                          std::vector<Mat> D);
    /// Frozen (parameter-free) system; the parameter box is empty.
    static LpvSystem lti(const Mat& A, const Mat& B, const Mat& C,
                         const Mat& D);

    /// Empty placeholder; every factory above returns a validated system.
    LpvSystem() = default;

    StateSpace eval(const Vec& rho) const;

    int state_dim() const { return n_; }
    int io_dim() const { return m_; }
    int param_dim() const { return p_; }
    Form form() const { return form_; }
    const Box& box() const { return box_; }

  private:
    void check_dims();
    Mat interp(const std::vector<Mat>& vertices, const Vec& rho) const;

    Form form_ = Form::Affine;
    int n_ = 0, m_ = 0, p_ = 0;
    Box box_;
    std::vector<Mat> A_, B_, C_, D_;  // affine terms or grid vertices
    std::vector<Vec> axes_;           // grid form only
};

struct SegmentViolation {
    double range = 0.0;  // max over the segment of box violation
    double rate = 0.0;   // max rate-bound violation, 0 when skipped
    bool rate_checked = true;
};

struct AdmissibilityReport {
    std::vector<SegmentViolation> segments;
    double max_range_violation = 0.0;
    double max_rate_violation = 0.0;
    bool admissible = false;
};

/// Checks range and rate bounds per segment: polynomial extrema are located
/// exactly (degree <= 3) and a dense sample grid is swept as well. Rate
/// checks are skipped for discrete trajectories and when the bounds are
/// flagged rate-unbounded.
AdmissibilityReport validate_trajectory(const ParameterTrajectory& traj,
                                        const ParameterBounds& bounds,
                                        int samples_per_segment = 1000);

/// Piecewise-constant approximation with partition norm <= mesh_norm; each
/// piece takes the original trajectory's value at the piece midpoint.
ParameterTrajectory discretize_trajectory(const ParameterTrajectory& traj,
                                          double mesh_norm);

}  // namespace coniclpv
