#include "coniclpv/lpv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace coniclpv {

namespace {

double poly_eval(const Eigen::RowVectorXd& c, double s) {
    double acc = 0.0;
    for (Eigen::Index k = c.size() - 1; k >= 0; --k) acc = acc * s + c(k);
    return acc;
}

Eigen::RowVectorXd poly_derivative(const Eigen::RowVectorXd& c) {
    if (c.size() <= 1) return Eigen::RowVectorXd::Zero(1);
    Eigen::RowVectorXd d(c.size() - 1);
    for (Eigen::Index k = 1; k < c.size(); ++k) d(k - 1) = k * c(k);
    return d;
}

/// Real roots of a polynomial of degree <= 2 restricted to [0, len].
std::vector<double> roots_in_segment(const Eigen::RowVectorXd& c, double len) {
    std::vector<double> out;
    auto keep = [&](double s) {
        if (s >= 0.0 && s <= len) out.push_back(s);
    };
    if (c.size() >= 3 && std::abs(c(2)) > 1e-14) {
        const double a = c(2), b = c(1), k = c(0);
        const double disc = b * b - 4.0 * a * k;
        if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            keep((-b + sq) / (2.0 * a));
            keep((-b - sq) / (2.0 * a));
        }
    } else if (c.size() >= 2 && std::abs(c(1)) > 1e-14) {
        keep(-c(0) / c(1));
    }
    return out;
}

}  // namespace

ParameterBounds ParameterBounds::box(const Vec& lo, const Vec& hi,
                                     const Vec& rlo, const Vec& rhi) {
    if (lo.size() != hi.size() || lo.size() != rlo.size() ||
        lo.size() != rhi.size()) {
        throw ShapeError("ParameterBounds: inconsistent component counts");
    }
    for (int i = 0; i < lo.size(); ++i) {
        if (!(lo(i) < hi(i))) {
            throw InputError("ParameterBounds: need rho_min < rho_max");
        }
    }
    ParameterBounds b;
    b.rho_min = lo;
    b.rho_max = hi;
    b.rate_min = rlo;
    b.rate_max = rhi;
    b.rate_unbounded = false;
    return b;
}

ParameterBounds ParameterBounds::box_rate_unbounded(const Vec& lo,
                                                    const Vec& hi) {
    const auto p = lo.size();
    ParameterBounds b = box(
        lo, hi, Vec::Constant(p, -std::numeric_limits<double>::infinity()),
        Vec::Constant(p, std::numeric_limits<double>::infinity()));
    b.rate_unbounded = true;
    return b;
}

ParameterBounds ParameterBounds::uniform(int p, double lo, double hi,
                                         double rlo, double rhi) {
    return box(Vec::Constant(p, lo), Vec::Constant(p, hi),
               Vec::Constant(p, rlo), Vec::Constant(p, rhi));
}

bool ParameterBounds::contains(const Vec& rho, double tol) const {
    if (rho.size() != rho_min.size()) return false;
    for (int i = 0; i < rho.size(); ++i) {
        if (rho(i) < rho_min(i) - tol || rho(i) > rho_max(i) + tol) {
            return false;
        }
    }
    return true;
}

bool Box::contains(const Vec& rho, double tol) const {
    if (rho.size() != lo.size()) return false;
    for (int i = 0; i < rho.size(); ++i) {
        if (rho(i) < lo(i) - tol || rho(i) > hi(i) + tol) return false;
    }
    return true;
}

Box Box::interval(double a, double b) {
    Box box;
    box.lo = Vec::Constant(1, a);
    box.hi = Vec::Constant(1, b);
    return box;
}

InputClass::InputClass(double lo, double hi) : u_bar_low(lo), u_bar_high(hi) {
    if (!(lo > 0.0) || !(lo <= hi) || !std::isfinite(hi)) {
        throw InputError("InputClass: need 0 < u_bar_low <= u_bar_high < inf");
    }
}

ParameterTrajectory::ParameterTrajectory(std::vector<Segment> segments,
                                         bool discrete)
    : segments_(std::move(segments)), discrete_(discrete) {
    if (segments_.empty()) {
        throw InputError("ParameterTrajectory: no segments");
    }
    const auto p = segments_.front().coeffs.rows();
    double t_prev = segments_.front().t0;
    for (const auto& s : segments_) {
        if (!(s.t1 > s.t0)) {
            throw InputError("ParameterTrajectory: empty segment");
        }
        if (std::abs(s.t0 - t_prev) > 1e-12) {
            throw InputError("ParameterTrajectory: segments must tile");
        }
        if (s.coeffs.rows() != p || s.coeffs.cols() < 1 || s.coeffs.cols() > 4) {
            throw InputError("ParameterTrajectory: coeffs must be p x (deg+1), deg <= 3");
        }
        t_prev = s.t1;
    }
    if (!discrete_) {
        // piecewise continuously differentiable: require continuity at knots
        for (std::size_t i = 1; i < segments_.size(); ++i) {
            const auto& a = segments_[i - 1];
            const auto& b = segments_[i];
            for (int c = 0; c < p; ++c) {
                const double va = poly_eval(a.coeffs.row(c), a.t1 - a.t0);
                const double vb = b.coeffs(c, 0);
                if (std::abs(va - vb) > 1e-9 * (1.0 + std::abs(va))) {
                    throw InputError(
                        "ParameterTrajectory: discontinuous at knot; flag "
                        "the trajectory discrete instead");
                }
            }
        }
    }
}

ParameterTrajectory ParameterTrajectory::constant(const Vec& rho, double t0,
                                                  double t1) {
    Segment s;
    s.t0 = t0;
    s.t1 = t1;
    s.coeffs = rho;
    return ParameterTrajectory({s}, false);
}

ParameterTrajectory ParameterTrajectory::linear(const Vec& rho0,
                                                const Vec& rho1, double t0,
                                                double t1) {
    Segment s;
    s.t0 = t0;
    s.t1 = t1;
    s.coeffs = Mat(rho0.size(), 2);
    s.coeffs.col(0) = rho0;
    s.coeffs.col(1) = (rho1 - rho0) / (t1 - t0);
    return ParameterTrajectory({s}, false);
}

ParameterTrajectory ParameterTrajectory::discrete(
    const std::vector<double>& breakpoints, const std::vector<Vec>& values) {
    if (breakpoints.size() != values.size() + 1 || values.empty()) {
        throw InputError("discrete trajectory: need n+1 breakpoints for n values");
    }
    std::vector<Segment> segs;
    segs.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        Segment s;
        s.t0 = breakpoints[i];
        s.t1 = breakpoints[i + 1];
        s.coeffs = values[i];
        segs.push_back(std::move(s));
    }
    return ParameterTrajectory(std::move(segs), true);
}

std::size_t ParameterTrajectory::segment_index(double t) const {
    if (t < t_begin() - 1e-12 || t > t_end() + 1e-12) {
        throw DomainError("trajectory evaluated outside [t0, tn]");
    }
    // right-continuity convention for discrete trajectories: value on
    // (t_{i-1}, t_i] is rho(i)
    std::size_t lo = 0, hi = segments_.size() - 1;
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (t <= segments_[mid].t1) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    return lo;
}

Vec ParameterTrajectory::value(double t) const {
    const auto& s = segments_[segment_index(t)];
    const double local = std::clamp(t, s.t0, s.t1) - s.t0;
    Vec out(s.coeffs.rows());
    for (int c = 0; c < s.coeffs.rows(); ++c) {
        out(c) = poly_eval(s.coeffs.row(c), local);
    }
    return out;
}

Vec ParameterTrajectory::rate(double t) const {
    const auto& s = segments_[segment_index(t)];
    const double local = std::clamp(t, s.t0, s.t1) - s.t0;
    Vec out(s.coeffs.rows());
    for (int c = 0; c < s.coeffs.rows(); ++c) {
        out(c) = poly_eval(poly_derivative(s.coeffs.row(c)), local);
    }
    return out;
}

LpvSystem LpvSystem::affine(std::vector<Mat> A, std::vector<Mat> B,
                            std::vector<Mat> C, std::vector<Mat> D,
                            const Box& box) {
    LpvSystem sys;
    sys.form_ = Form::Affine;
    sys.p_ = box.dim();
    const std::size_t terms = static_cast<std::size_t>(sys.p_) + 1;
    if (A.size() != terms || B.size() != terms || C.size() != terms ||
        D.size() != terms) {
        throw ShapeError("LpvSystem::affine: need p+1 terms per matrix");
    }
    sys.A_ = std::move(A);
    sys.B_ = std::move(B);
    sys.C_ = std::move(C);
    sys.D_ = std::move(D);
    sys.box_ = box;
    sys.n_ = static_cast<int>(sys.A_[0].rows());
    sys.m_ = static_cast<int>(sys.B_[0].cols());
    sys.check_dims();
    return sys;
}

LpvSystem LpvSystem::grid(std::vector<Vec> axes, std::vector<Mat> A,
                          std::vector<Mat> B, std::vector<Mat> C,
                          std::vector<Mat> D) {
    LpvSystem sys;
    sys.form_ = Form::Grid;
    sys.p_ = static_cast<int>(axes.size());
    std::size_t count = 1;
    Vec lo(sys.p_), hi(sys.p_);
    for (int i = 0; i < sys.p_; ++i) {
        const Vec& ax = axes[static_cast<std::size_t>(i)];
        if (ax.size() < 1) throw InputError("LpvSystem::grid: empty axis");
        for (int k = 1; k < ax.size(); ++k) {
            if (!(ax(k) > ax(k - 1))) {
                throw InputError("LpvSystem::grid: axis not increasing");
            }
        }
        count *= static_cast<std::size_t>(ax.size());
        lo(i) = ax(0);
        hi(i) = ax(ax.size() - 1);
    }
    if (A.size() != count || B.size() != count || C.size() != count ||
        D.size() != count) {
        throw ShapeError("LpvSystem::grid: vertex count mismatch");
    }
    sys.axes_ = std::move(axes);
    sys.A_ = std::move(A);
    sys.B_ = std::move(B);
    sys.C_ = std::move(C);
    sys.D_ = std::move(D);
    sys.box_ = Box{lo, hi};
    sys.n_ = static_cast<int>(sys.A_[0].rows());
    sys.m_ = static_cast<int>(sys.B_[0].cols());
    sys.check_dims();
    return sys;
}

LpvSystem LpvSystem::lti(const Mat& A, const Mat& B, const Mat& C,
                         const Mat& D) {
    Box box;
    box.lo = Vec(0);
    box.hi = Vec(0);
    return affine({A}, {B}, {C}, {D}, box);
}

void LpvSystem::check_dims() {
    for (std::size_t k = 0; k < A_.size(); ++k) {
        const bool ok = A_[k].rows() == n_ && A_[k].cols() == n_ &&
                        B_[k].rows() == n_ && B_[k].cols() == m_ &&
                        C_[k].rows() == m_ && C_[k].cols() == n_ &&
                        D_[k].rows() == m_ && D_[k].cols() == m_;
        if (!ok) {
            throw ShapeError("LpvSystem: matrix " + std::to_string(k) +
                             " inconsistent with (n, m); input and output "
                             "dimensions must be equal");
        }
        numerics::require_finite(A_[k], "LpvSystem.A");
        numerics::require_finite(B_[k], "LpvSystem.B");
        numerics::require_finite(C_[k], "LpvSystem.C");
        numerics::require_finite(D_[k], "LpvSystem.D");
    }
}

Mat LpvSystem::interp(const std::vector<Mat>& vertices, const Vec& rho) const {
    // multilinear blend over the cell containing rho
    std::vector<int> base(static_cast<std::size_t>(p_));
    std::vector<double> w(static_cast<std::size_t>(p_));
    std::vector<int> sizes(static_cast<std::size_t>(p_));
    for (int i = 0; i < p_; ++i) {
        const Vec& ax = axes_[static_cast<std::size_t>(i)];
        sizes[static_cast<std::size_t>(i)] = static_cast<int>(ax.size());
        if (ax.size() == 1) {
            base[static_cast<std::size_t>(i)] = 0;
            w[static_cast<std::size_t>(i)] = 0.0;
            continue;
        }
        int k = static_cast<int>(
            std::upper_bound(ax.data(), ax.data() + ax.size(), rho(i)) -
            ax.data()) - 1;
        k = std::clamp(k, 0, static_cast<int>(ax.size()) - 2);
        base[static_cast<std::size_t>(i)] = k;
        w[static_cast<std::size_t>(i)] =
            (rho(i) - ax(k)) / (ax(k + 1) - ax(k));
    }
    Mat acc = Mat::Zero(vertices[0].rows(), vertices[0].cols());
    const int corners = 1 << p_;
    for (int c = 0; c < corners; ++c) {
        double weight = 1.0;
        std::size_t idx = 0;
        for (int i = 0; i < p_; ++i) {
            const int bit = (c >> i) & 1;
            const int ki = std::min(base[static_cast<std::size_t>(i)] + bit,
                                    sizes[static_cast<std::size_t>(i)] - 1);
            weight *= bit ? w[static_cast<std::size_t>(i)]
                          : 1.0 - w[static_cast<std::size_t>(i)];
            idx = idx * static_cast<std::size_t>(sizes[static_cast<std::size_t>(i)]) +
                  static_cast<std::size_t>(ki);
        }
        if (weight != 0.0) acc += weight * vertices[idx];
    }
    return acc;
}

StateSpace LpvSystem::eval(const Vec& rho) const {
    if (rho.size() != p_) {
        throw ShapeError("LpvSystem::eval: parameter dimension mismatch");
    }
    if (p_ > 0 && !box_.contains(rho, 1e-9)) {
        throw DomainError("LpvSystem::eval: rho outside the parameter box");
    }
    StateSpace ss;
    if (form_ == Form::Affine) {
        ss.A = A_[0];
        ss.B = B_[0];
        ss.C = C_[0];
        ss.D = D_[0];
        for (int i = 0; i < p_; ++i) {
            const auto k = static_cast<std::size_t>(i) + 1;
            ss.A += rho(i) * A_[k];
            ss.B += rho(i) * B_[k];
            ss.C += rho(i) * C_[k];
            ss.D += rho(i) * D_[k];
        }
    } else {
        ss.A = interp(A_, rho);
        ss.B = interp(B_, rho);
        ss.C = interp(C_, rho);
        ss.D = interp(D_, rho);
    }
    return ss;
}

AdmissibilityReport validate_trajectory(const ParameterTrajectory& traj,
                                        const ParameterBounds& bounds,
                                        int samples_per_segment) {
    if (traj.dim() != bounds.dim()) {
        throw ShapeError("validate_trajectory: dimension mismatch");
    }
    AdmissibilityReport report;
    report.segments.reserve(traj.segments().size());

    const bool check_rate = !traj.is_discrete() && !bounds.rate_unbounded;

    for (const auto& seg : traj.segments()) {
        SegmentViolation v;
        v.rate_checked = check_rate;
        const double len = seg.t1 - seg.t0;

        for (int c = 0; c < traj.dim(); ++c) {
            const Eigen::RowVectorXd poly = seg.coeffs.row(c);
            const Eigen::RowVectorXd dpoly = poly_derivative(poly);

            auto range_violation = [&](double s) {
                const double val = poly_eval(poly, s);
                return std::max(bounds.rho_min(c) - val,
                                val - bounds.rho_max(c));
            };
            auto rate_violation = [&](double s) {
                const double val = poly_eval(dpoly, s);
                return std::max(bounds.rate_min(c) - val,
                                val - bounds.rate_max(c));
            };

            std::vector<double> pts = {0.0, len};
            for (double s : roots_in_segment(dpoly, len)) pts.push_back(s);
            for (int k = 0; k < samples_per_segment; ++k) {
                pts.push_back(len * (k + 0.5) / samples_per_segment);
            }
            for (double s : pts) v.range = std::max(v.range, range_violation(s));

            if (check_rate) {
                std::vector<double> rpts = {0.0, len};
                for (double s : roots_in_segment(poly_derivative(dpoly), len)) {
                    rpts.push_back(s);
                }
                for (int k = 0; k < samples_per_segment; ++k) {
                    rpts.push_back(len * (k + 0.5) / samples_per_segment);
                }
                for (double s : rpts) v.rate = std::max(v.rate, rate_violation(s));
            }
        }
        report.max_range_violation = std::max(report.max_range_violation, v.range);
        report.max_rate_violation = std::max(report.max_rate_violation, v.rate);
        report.segments.push_back(v);
    }
    report.admissible = report.max_range_violation <= 0.0 &&
                        report.max_rate_violation <= 0.0;
    return report;
}

ParameterTrajectory discretize_trajectory(const ParameterTrajectory& traj,
                                          double mesh_norm) {
    if (!(mesh_norm > 0.0)) {
        throw InputError("discretize_trajectory: mesh_norm must be positive");
    }
    std::vector<double> breakpoints;
    std::vector<Vec> values;
    breakpoints.push_back(traj.t_begin());
    for (const auto& seg : traj.segments()) {
        const double len = seg.t1 - seg.t0;
        const int pieces = std::max(1, static_cast<int>(std::ceil(len / mesh_norm - 1e-12)));
        const double h = len / pieces;
        for (int k = 0; k < pieces; ++k) {
            const double mid = seg.t0 + (k + 0.5) * h;
            values.push_back(traj.value(mid));
            breakpoints.push_back(k + 1 == pieces ? seg.t1 : seg.t0 + (k + 1) * h);
        }
    }
    return ParameterTrajectory::discrete(breakpoints, values);
}

}  // namespace coniclpv
