#include "coniclpv/conic.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <cstdio>
#include <cstdlib>

#include "coniclpv/parallel.hpp"

namespace coniclpv {

using nlohmann::json;

ConicSector::ConicSector(double a_, double b_) : a(a_), b(b_) {
    if (!(a < b)) throw InputError("ConicSector: need a < b");
    if (!std::isfinite(a) || !std::isfinite(b)) {
        throw InputError("ConicSector: bounds must be finite");
    }
}

QsrKernel sector_kernel(const ConicSector& sector, int m) {
    if (sector.b == 0.0) throw SingularConeError("sector kernel: b = 0");
    QsrKernel k;
    k.Q = -(1.0 / sector.b) * Mat::Identity(m, m);
    k.S = 0.5 * (1.0 + sector.a / sector.b) * Mat::Identity(m, m);
    k.R = -sector.a * Mat::Identity(m, m);
    return k;
}

Mat supply_rate_kernel(const ConicSector& sector, int m) {
    const QsrKernel k = sector_kernel(sector, m);
    Mat K(2 * m, 2 * m);
    K.topLeftCorner(m, m) = k.Q;
    K.topRightCorner(m, m) = k.S;
    K.bottomLeftCorner(m, m) = k.S.transpose();
    K.bottomRightCorner(m, m) = k.R;
    return K;
}

double supply_rate(const ConicSector& sector, const Vec& u, const Vec& y) {
    if (u.size() != y.size()) {
        throw ShapeError("supply_rate: dim(u) != dim(y)");
    }
    const QsrKernel k = sector_kernel(sector, static_cast<int>(u.size()));
    return y.dot(k.Q * y) + 2.0 * y.dot(k.S * u) + u.dot(k.R * u);
}

double iqc_integral(const ConicSector& sector, const IoTrace& trace, double t1,
                    double t2) {
    const auto K = trace.t.size();
    if (K < 2 || trace.u.cols() != static_cast<Eigen::Index>(K) ||
        trace.y.cols() != static_cast<Eigen::Index>(K)) {
        throw InputError("iqc_integral: malformed trace");
    }
    const double slack = 1e-9 * (1.0 + std::abs(trace.t.back()));
    if (!(t1 < t2) || t1 < trace.t.front() - slack ||
        t2 > trace.t.back() + slack) {
        throw InputError("iqc_integral: window outside the trace");
    }
    t1 = std::max(t1, trace.t.front());
    t2 = std::min(t2, trace.t.back());

    auto interp_col = [&](const Mat& sig, std::size_t i, double s) -> Vec {
        return (1.0 - s) * sig.col(static_cast<Eigen::Index>(i)) +
               s * sig.col(static_cast<Eigen::Index>(i) + 1);
    };
    auto locate = [&](double t) {
        auto it = std::upper_bound(trace.t.begin(), trace.t.end(), t);
        std::size_t i = static_cast<std::size_t>(
            std::max<std::ptrdiff_t>(0, it - trace.t.begin() - 1));
        if (i + 1 >= K) i = K - 2;
        return i;
    };

    std::vector<double> ts;
    std::vector<double> ws;
    const std::size_t i1 = locate(t1);
    const std::size_t i2 = locate(t2);
    auto push = [&](double t, const Vec& u, const Vec& y) {
        ts.push_back(t);
        ws.push_back(supply_rate(sector, u, y));
    };
    {
        const double s = (t1 - trace.t[i1]) / (trace.t[i1 + 1] - trace.t[i1]);
        push(t1, interp_col(trace.u, i1, s), interp_col(trace.y, i1, s));
    }
    for (std::size_t i = i1 + 1; i <= i2; ++i) {
        if (trace.t[i] > t1 && trace.t[i] < t2) {
            push(trace.t[i], trace.u.col(static_cast<Eigen::Index>(i)),
                 trace.y.col(static_cast<Eigen::Index>(i)));
        }
    }
    {
        const double s = (t2 - trace.t[i2]) / (trace.t[i2 + 1] - trace.t[i2]);
        push(t2, interp_col(trace.u, i2, s), interp_col(trace.y, i2, s));
    }
    return numerics::quadrature(ts, ws);
}

Mat dissipation_lmi(const StateSpace& ss, const QsrKernel& k, const Mat& P,
                    const Mat& dP) {
    const int n = static_cast<int>(ss.A.rows());
    const int w = k.w_dim();
    Mat M(n + w, n + w);
    M.topLeftCorner(n, n) = ss.A.transpose() * P + P * ss.A + dP -
                            ss.C.transpose() * k.Q * ss.C;
    M.topRightCorner(n, w) =
        P * ss.B - ss.C.transpose() * k.Q * ss.D - ss.C.transpose() * k.S;
    M.bottomLeftCorner(w, n) = M.topRightCorner(n, w).transpose();
    M.bottomRightCorner(w, w) = -ss.D.transpose() * k.Q * ss.D -
                                ss.D.transpose() * k.S -
                                k.S.transpose() * ss.D - k.R;
    return M;
}

Mat conic_bounds_lmi(const StateSpace& ss, const Mat& P, const Mat& dP,
                     double q1, double q2) {
    const int n = static_cast<int>(ss.A.rows());
    const int m = static_cast<int>(ss.D.cols());
    Mat M(n + m, n + m);
    M.topLeftCorner(n, n) =
        ss.A.transpose() * P + P * ss.A + dP + ss.C.transpose() * ss.C;
    M.topRightCorner(n, m) =
        P * ss.B - q1 * ss.C.transpose() + ss.C.transpose() * ss.D;
    M.bottomLeftCorner(m, n) = M.topRightCorner(n, m).transpose();
    M.bottomRightCorner(m, m) = ss.D.transpose() * ss.D -
                                q1 * (ss.D + ss.D.transpose()) +
                                q2 * Mat::Identity(m, m);
    return M;
}

// ---------------------------------------------------------------------------
// conic bounds

namespace {

struct BoundsAttempt {
    bool feasible = false;
    double q1 = 0.0, q2 = 0.0;
    std::vector<Mat> basis;
};

BoundsAttempt try_radius(const LpvSystem& sys, const Box& region,
                         const ParameterBounds& bounds, const GridSpec& grid,
                         double radius, const ConicBoundsOptions& opts) {
    const int n = sys.state_dim();
    const int m = sys.io_dim();
    GriddedLmiBuilder g(bounds, region, grid, std::max(n, 1), opts.eps_pd);
    const int q1h = g.add_scalar("q1");
    const int q2h = g.add_scalar("q2");
    // a degenerate storage block stays at its PD floor when n == 0
    g.add_node_constraints(
        n + m,
        [&](const Vec& rho, const Vec& nu) -> SdpProblem::AffineFn {
            const StateSpace ss = sys.eval(rho);
            const Vec rho_c = rho, nu_c = nu;
            return [&g, &sys, ss, rho_c, nu_c, q1h, q2h, n](const Vec& x) {
                Mat P = g.P_at(x, rho_c).topLeftCorner(n, n);
                Mat dP = g.P_rate_term(x, nu_c).topLeftCorner(n, n);
                return conic_bounds_lmi(ss, P, dP,
                                        g.problem().scalar_value(q1h, x),
                                        g.problem().scalar_value(q2h, x));
            };
        },
        "conic_bounds");
    // radius cap via the Schur form of q1^2 - q2 <= r^2
    g.problem().add_constraint(
        2,
        [&g, q1h, q2h, radius](const Vec& x) {
            const double q1 = g.problem().scalar_value(q1h, x);
            const double q2 = g.problem().scalar_value(q2h, x);
            Mat s(2, 2);
            s << -1.0, -q1, -q1, -(q2 + radius * radius);
            return s;
        },
        "radius_cap");

    SolveOptions sopts;
    sopts.feas_tol = opts.feas_tol;
    sopts.label = "conic_bounds(r=" + std::to_string(radius) + ")";
    const SdpSolution sol = solve(g.problem(), sopts);
    if (std::getenv("CONICLPV_SDP_TRACE")) fprintf(stderr, "try_radius r=%g -> %s res=%g\n", radius, to_string(sol.status), sol.max_residual);

    BoundsAttempt out;
    out.feasible = is_feasible(sol);
    if (out.feasible) {
        out.q1 = g.problem().scalar_value(q1h, sol.x);
        out.q2 = g.problem().scalar_value(q2h, sol.x);
        for (const Mat& Pb : g.basis_values(sol.x)) {
            out.basis.push_back(Pb.topLeftCorner(n, n));
        }
    }
    return out;
}

Mat eval_basis(const std::vector<Mat>& basis, const Vec& rho) {
    Mat P = basis[0];
    for (int i = 1; i < static_cast<int>(basis.size()); ++i) {
        P += rho(i - 1) * basis[static_cast<std::size_t>(i)];
    }
    return P;
}

Mat eval_basis_rate(const std::vector<Mat>& basis, const Vec& nu) {
    Mat dP = Mat::Zero(basis[0].rows(), basis[0].cols());
    for (int i = 1; i < static_cast<int>(basis.size()); ++i) {
        dP += nu(i - 1) * basis[static_cast<std::size_t>(i)];
    }
    return dP;
}

double dense_sweep_residual(const LpvSystem& sys, const Box& region,
                            const ParameterBounds& bounds, const GridSpec& grid,
                            const std::vector<Mat>& basis, double q1, double q2,
                            int factor) {
    const int pp = std::max(2, (grid.param_points - 1) * factor + 1);
    const int rp = bounds.rate_unbounded
                       ? 1
                       : std::max(2, (grid.rate_points - 1) * factor + 1);
    const auto rhos = grid_nodes(region, sys.param_dim() == 0 ? 1 : pp);
    const auto nus = bounds.rate_unbounded || sys.param_dim() == 0
                         ? std::vector<Vec>{Vec::Zero(sys.param_dim())}
                         : grid_nodes(Box{bounds.rate_min, bounds.rate_max}, rp);
    double worst = -std::numeric_limits<double>::infinity();
    std::vector<double> per(rhos.size(),
                            -std::numeric_limits<double>::infinity());
    par::for_index(static_cast<std::ptrdiff_t>(rhos.size()), [&](std::ptrdiff_t i) {
        const Vec& rho = rhos[static_cast<std::size_t>(i)];
        const StateSpace ss = sys.eval(rho);
        const Mat P = eval_basis(basis, rho);
        double w = -std::numeric_limits<double>::infinity();
        for (const Vec& nu : nus) {
            const Mat M = conic_bounds_lmi(ss, P, eval_basis_rate(basis, nu),
                                           q1, q2);
            w = std::max(w, numerics::max_symmetric_eigenvalue(M));
        }
        per[static_cast<std::size_t>(i)] = w;
    });
    for (double w : per) worst = std::max(worst, w);
    return worst;
}

}  // namespace

std::optional<ConicBoundsResult> find_conic_bounds(
    const LpvSystem& sys, const Box& region, const ParameterBounds& bounds,
    const GridSpec& grid, const ConicBoundsOptions& opts) {
    std::vector<double> trace;
    auto attempt = [&](double r) {
        trace.push_back(r);
        return try_radius(sys, region, bounds, grid, r, opts);
    };

    BoundsAttempt best = attempt(opts.radius_cap);
    if (!best.feasible) return std::nullopt;

    double lo = opts.radius_floor;
    double hi = opts.radius_cap;
    {
        BoundsAttempt at_floor = attempt(lo);
        if (at_floor.feasible) {
            best = at_floor;
            hi = lo;
        }
    }
    while (hi - lo > opts.radius_tol) {
        const double mid = 0.5 * (lo + hi);
        BoundsAttempt at = attempt(mid);
        if (at.feasible) {
            best = at;
            hi = mid;
        } else {
            lo = mid;
        }
    }

    ConicBoundsResult res;
    res.q1 = best.q1;
    res.q2 = best.q2;
    res.bisection_radii = trace;
    const double disc = best.q1 * best.q1 - best.q2;
    const double r_rec = std::max(std::sqrt(std::max(disc, 0.0)),
                                  opts.radius_floor);
    res.sector = ConicSector(best.q1 - r_rec, best.q1 + r_rec);
    res.storage.basis = best.basis;

    // re-verify at the solve nodes and on a denser sweep
    res.storage.node_residual = dense_sweep_residual(
        sys, region, bounds, grid, best.basis, best.q1, best.q2, 1);
    res.storage.dense_residual = dense_sweep_residual(
        sys, region, bounds, grid, best.basis, best.q1, best.q2,
        opts.dense_check_factor);
    return res;
}

bool sector_feasible(const LpvSystem& sys, const ConicSector& sector,
                     const Box& region, const ParameterBounds& bounds,
                     const GridSpec& grid, double feas_tol) {
    const int n = sys.state_dim();
    const int m = sys.io_dim();
    const double q1 = sector.center();
    const double q2 = sector.a * sector.b;
    GriddedLmiBuilder g(bounds, region, grid, std::max(n, 1), 1e-6);
    g.add_node_constraints(
        n + m,
        [&](const Vec& rho, const Vec& nu) -> SdpProblem::AffineFn {
            const StateSpace ss = sys.eval(rho);
            const Vec rho_c = rho, nu_c = nu;
            return [&g, ss, rho_c, nu_c, q1, q2, n](const Vec& x) {
                Mat P = g.P_at(x, rho_c).topLeftCorner(n, n);
                Mat dP = g.P_rate_term(x, nu_c).topLeftCorner(n, n);
                return conic_bounds_lmi(ss, P, dP, q1, q2);
            };
        },
        "sector_feasible");
    SolveOptions sopts;
    sopts.feas_tol = feas_tol;
    sopts.label = "sector_feasible";
    return is_feasible(solve(g.problem(), sopts));
}

bool frozen_sector_feasible(const LpvSystem& sys, const ConicSector& sector,
                            const Vec& rho, double feas_tol) {
    const int n = sys.state_dim();
    const StateSpace ss = sys.eval(rho);
    const double q1 = sector.center();
    const double q2 = sector.a * sector.b;
    if (n == 0) {
        const Mat M = conic_bounds_lmi(ss, Mat(0, 0), Mat(0, 0), q1, q2);
        return numerics::is_negative_semidefinite(M, feas_tol);
    }
    SdpProblem prob;
    const int h = prob.add_symmetric(n, "P");
    prob.add_constraint(n, [&prob, h, n](const Vec& x) {
        return Mat(1e-6 * Mat::Identity(n, n) - prob.block_value(h, x));
    });
    prob.add_constraint(n + sys.io_dim(), [&prob, h, ss, q1, q2, n](const Vec& x) {
        const Mat P = prob.block_value(h, x);
        return conic_bounds_lmi(ss, P, Mat::Zero(n, n), q1, q2);
    });
    SolveOptions sopts;
    sopts.feas_tol = feas_tol;
    sopts.label = "frozen_sector";
    return is_feasible(solve(prob, sopts));
}

// ---------------------------------------------------------------------------
// index tables

double TensorField::at(const Vec& rho) const {
    const int p = region.dim();
    if (rho.size() != p) throw ShapeError("TensorField::at: dim mismatch");
    if (p == 0) return values.at(0);
    std::vector<int> base(static_cast<std::size_t>(p));
    std::vector<double> w(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) {
        const auto& ax = axes[static_cast<std::size_t>(i)];
        const double x = std::clamp(rho(i), ax.front(), ax.back());
        if (ax.size() == 1) {
            base[static_cast<std::size_t>(i)] = 0;
            w[static_cast<std::size_t>(i)] = 0.0;
            continue;
        }
        auto it = std::upper_bound(ax.begin(), ax.end(), x);
        int k = static_cast<int>(std::max<std::ptrdiff_t>(0, it - ax.begin() - 1));
        k = std::min(k, static_cast<int>(ax.size()) - 2);
        base[static_cast<std::size_t>(i)] = k;
        w[static_cast<std::size_t>(i)] =
            (x - ax[static_cast<std::size_t>(k)]) /
            (ax[static_cast<std::size_t>(k) + 1] - ax[static_cast<std::size_t>(k)]);
    }
    double acc = 0.0;
    const int corners = 1 << p;
    for (int c = 0; c < corners; ++c) {
        double weight = 1.0;
        std::size_t idx = 0;
        for (int i = 0; i < p; ++i) {
            const int bit = (c >> i) & 1;
            const auto& ax = axes[static_cast<std::size_t>(i)];
            const int ki = std::min(base[static_cast<std::size_t>(i)] + bit,
                                    static_cast<int>(ax.size()) - 1);
            weight *= bit ? w[static_cast<std::size_t>(i)]
                          : 1.0 - w[static_cast<std::size_t>(i)];
            idx = idx * ax.size() + static_cast<std::size_t>(ki);
        }
        if (weight != 0.0) acc += weight * values[idx];
    }
    return acc;
}

namespace {

TensorField make_field(const Box& region, int points_per_axis) {
    TensorField f;
    f.region = region;
    for (int i = 0; i < region.dim(); ++i) {
        f.axes.push_back(
            numerics::linspace(region.lo(i), region.hi(i), points_per_axis));
    }
    std::size_t count = 1;
    for (const auto& ax : f.axes) count *= ax.size();
    f.values.assign(std::max<std::size_t>(count, 1), 0.0);
    return f;
}

}  // namespace

bool dissipation_feasible(const StateSpace& ss, const QsrKernel& k, double eps,
                          const IndexOptions& opts, bool lyapunov_side,
                          double eps_pd, Mat* storage) {
    const int n = static_cast<int>(ss.A.rows());
    const int w = k.w_dim();
    const int size = n + w;
    if (n == 0) {
        const Mat M = dissipation_lmi(ss, k, Mat(0, 0), Mat(0, 0)) +
                      eps * Mat::Identity(w, w);
        const bool ok = numerics::is_negative_semidefinite(M, opts.feas_tol);
        if (ok && storage) *storage = Mat(0, 0);
        return ok;
    }
    SdpProblem prob;
    const int h = prob.add_symmetric(n, "P");
    prob.add_constraint(n, [&prob, h, n, eps_pd](const Vec& x) {
        return Mat(eps_pd * Mat::Identity(n, n) - prob.block_value(h, x));
    });
    if (lyapunov_side) {
        prob.add_constraint(n, [&prob, h, ss, n, &opts](const Vec& x) {
            const Mat P = prob.block_value(h, x);
            return Mat(ss.A.transpose() * P + P * ss.A +
                       opts.lyap_margin * Mat::Identity(n, n));
        });
    }
    prob.add_constraint(size, [&prob, h, ss, k, eps, n, size](const Vec& x) {
        const Mat P = prob.block_value(h, x);
        return Mat(dissipation_lmi(ss, k, P, Mat::Zero(n, n)) +
                   eps * Mat::Identity(size, size));
    });
    SolveOptions sopts;
    sopts.feas_tol = opts.feas_tol;
    sopts.label = "eps_index";
    const SdpSolution sol = solve(prob, sopts);
    if (is_feasible(sol) && storage) *storage = prob.block_value(h, sol.x);
    return is_feasible(sol);
}

namespace {

bool alpha_feasible_at(const StateSpace& ss, const QsrKernel& k, double alpha,
                       const IndexOptions& opts, Mat* P_out) {
    const int n = static_cast<int>(ss.A.rows());
    const int w = k.w_dim();
    Mat relax = Mat::Zero(n + w, n + w);
    relax.bottomRightCorner(w, w) = -alpha * Mat::Identity(w, w);
    if (n == 0) {
        const Mat M = dissipation_lmi(ss, k, Mat(0, 0), Mat(0, 0)) +
                      relax.bottomRightCorner(w, w);
        const bool ok = numerics::is_negative_semidefinite(M, opts.feas_tol);
        if (ok && P_out) *P_out = Mat(0, 0);
        return ok;
    }
    SdpProblem prob;
    const int h = prob.add_symmetric(n, "Pt");
    prob.add_constraint(n, [&prob, h](const Vec& x) {
        return Mat(-prob.block_value(h, x));  // Pt >= 0 (non-strict)
    });
    prob.add_constraint(n + w, [&prob, h, ss, k, relax, n](const Vec& x) {
        const Mat P = prob.block_value(h, x);
        return Mat(dissipation_lmi(ss, k, P, Mat::Zero(n, n)) + relax);
    });
    SolveOptions sopts;
    sopts.feas_tol = opts.feas_tol;
    sopts.label = "alpha_index";
    const SdpSolution sol = solve(prob, sopts);
    if (is_feasible(sol) && P_out) *P_out = prob.block_value(h, sol.x);
    return is_feasible(sol);
}

}  // namespace

NodeIndex eps_index_at(const StateSpace& ss, const QsrKernel& k,
                       const IndexOptions& opts, bool lyapunov_side,
                       double eps_pd) {
    const int n = static_cast<int>(ss.A.rows());
    NodeIndex out;
    Mat P;
    if (!dissipation_feasible(ss, k, opts.eps_floor, opts, lyapunov_side,
                              eps_pd, &P)) {
        out.status = NodeIndex::Status::Misclassified;
        return out;
    }
    double lo = opts.eps_floor;
    double hi = 1.0;
    while (dissipation_feasible(ss, k, hi, opts, lyapunov_side, eps_pd,
                                nullptr)) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e7) break;
    }
    Mat P_best = P;
    while (hi - lo > opts.bisect_tol) {
        const double mid = 0.5 * (lo + hi);
        Mat P_mid;
        if (dissipation_feasible(ss, k, mid, opts, lyapunov_side, eps_pd,
                                 &P_mid)) {
            lo = mid;
            P_best = P_mid;
        } else {
            hi = mid;
        }
    }
    out.value = lo;
    out.storage = P_best;
    const int size = n + k.w_dim();
    const Mat M = dissipation_lmi(ss, k, P_best, Mat::Zero(n, n)) +
                  lo * Mat::Identity(size, size);
    out.residual = numerics::max_symmetric_eigenvalue(M);
    return out;
}

NodeIndex alpha_index_at(const StateSpace& ss, const QsrKernel& k,
                         const IndexOptions& opts) {
    const int n = static_cast<int>(ss.A.rows());
    NodeIndex out;
    if (alpha_feasible_at(ss, k, 0.0, opts, nullptr)) {
        out.status = NodeIndex::Status::Misclassified;
        return out;
    }
    double lo = 0.0;
    double hi = 1.0;
    Mat P_best;
    while (!alpha_feasible_at(ss, k, hi, opts, &P_best)) {
        lo = hi;
        hi *= 2.0;
        if (hi > opts.alpha_cap) {
            out.status = NodeIndex::Status::Unbounded;
            return out;
        }
    }
    while (hi - lo > opts.bisect_tol) {
        const double mid = 0.5 * (lo + hi);
        Mat P_mid;
        if (alpha_feasible_at(ss, k, mid, opts, &P_mid)) {
            hi = mid;
            P_best = P_mid;
        } else {
            lo = mid;
        }
    }
    out.value = hi;
    out.storage = P_best;
    const int w = k.w_dim();
    Mat relax = Mat::Zero(n + w, n + w);
    relax.bottomRightCorner(w, w) = -hi * Mat::Identity(w, w);
    const Mat M = dissipation_lmi(ss, k, P_best, Mat::Zero(n, n)) + relax;
    out.residual = numerics::max_symmetric_eigenvalue(M);
    return out;
}

namespace {

IndexTable build_table(const SystemEval& eval, const QsrKernel& k,
                       const Box& region, const GridSpec& grid,
                       const IndexOptions& opts, bool eps_side,
                       bool lyapunov_side, double eps_pd,
                       const char* who) {
    IndexTable table;
    table.field = make_field(region, grid.param_points);
    const auto nodes = grid_nodes(region, grid.param_points);
    table.storage.assign(nodes.size(), Mat());
    std::vector<double> residual(nodes.size(), 0.0);
    std::vector<NodeIndex::Status> status(nodes.size(), NodeIndex::Status::Ok);

    par::for_index(static_cast<std::ptrdiff_t>(nodes.size()),
                   [&](std::ptrdiff_t i) {
        const auto u = static_cast<std::size_t>(i);
        const StateSpace ss = eval(nodes[u]);
        const NodeIndex node =
            eps_side ? eps_index_at(ss, k, opts, lyapunov_side, eps_pd)
                     : alpha_index_at(ss, k, opts);
        status[u] = node.status;
        table.field.values[u] = node.value;
        table.storage[u] = node.storage;
        residual[u] = node.residual;
    });
    for (std::size_t u = 0; u < nodes.size(); ++u) {
        if (status[u] == NodeIndex::Status::Misclassified) {
            throw RegionClassError(
                std::string(who) +
                (eps_side ? ": node infeasible at the bracket floor (region "
                            "misclassified)"
                          : ": node feasible at alpha = 0 (the region is "
                            "actually conic; re-partition)"));
        }
        if (status[u] == NodeIndex::Status::Unbounded) {
            throw RegionClassError(std::string(who) +
                                   ": alpha bracket exhausted (node is not "
                                   "certifiable; frozen dynamics unstable?)");
        }
    }
    table.max_residual = *std::max_element(residual.begin(), residual.end());
    return table;
}

}  // namespace

IndexTable eps_index_table(const SystemEval& eval, const QsrKernel& k,
                           const Box& region, const GridSpec& grid,
                           const IndexOptions& opts, bool lyapunov_side,
                           double eps_pd) {
    return build_table(eval, k, region, grid, opts, true, lyapunov_side,
                       eps_pd, "eps_index_table");
}

IndexTable alpha_index_table(const SystemEval& eval, const QsrKernel& k,
                             const Box& region, const GridSpec& grid,
                             const IndexOptions& opts) {
    return build_table(eval, k, region, grid, opts, false, false, 0.0,
                       "alpha_index_table");
}

IndexTable conicity_index_eps(const LpvSystem& sys, const ConicSector& sector,
                              const Box& region, const GridSpec& grid,
                              const IndexOptions& opts) {
    const QsrKernel k = sector_kernel(sector, sys.io_dim());
    return build_table([&sys](const Vec& rho) { return sys.eval(rho); }, k,
                       region, grid, opts, true, true, opts.eps_pd,
                       "conicity_index_eps");
}

IndexTable nonconicity_index_alpha(const LpvSystem& sys,
                                   const ConicSector& sector, const Box& region,
                                   const GridSpec& grid,
                                   const IndexOptions& opts) {
    const QsrKernel k = sector_kernel(sector, sys.io_dim());
    return build_table([&sys](const Vec& rho) { return sys.eval(rho); }, k,
                       region, grid, opts, false, false, 0.0,
                       "nonconicity_index_alpha");
}

// ---------------------------------------------------------------------------
// partitioning

namespace {

RegionPartition merge_labels(const std::vector<double>& times,
                             const std::vector<char>& conic,
                             const ParameterTrajectory& traj,
                             const std::function<bool(double)>& classify,
                             double time_tol) {
    RegionPartition part;
    const double t0 = traj.t_begin();
    const double tn = traj.t_end();
    double seg_start = t0;
    bool cur = conic.front() != 0;
    for (std::size_t i = 1; i < times.size(); ++i) {
        const bool next = conic[i] != 0;
        if (next == cur) continue;
        // boundary between times[i-1] and times[i]
        double lo = times[i - 1], hi = times[i];
        while (hi - lo > time_tol) {
            const double mid = 0.5 * (lo + hi);
            if (classify(mid) == cur) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        const double boundary = 0.5 * (lo + hi);
        part.intervals.push_back({seg_start, boundary, cur});
        seg_start = boundary;
        cur = next;
    }
    part.intervals.push_back({seg_start, tn, cur});
    for (const auto& iv : part.intervals) {
        (iv.conic ? part.t_c : part.t_nc) += iv.t1 - iv.t0;
    }
    return part;
}

}  // namespace

RegionPartition partition_trajectory(const LpvSystem& sys,
                                     const ConicSector& sector,
                                     const ParameterTrajectory& traj,
                                     const PartitionOptions& opts) {
    const int samples = std::max(2, opts.samples);
    std::vector<double> times(static_cast<std::size_t>(samples));
    std::vector<char> conic(static_cast<std::size_t>(samples));
    const double t0 = traj.t_begin();
    const double h = traj.horizon() / (samples - 1);
    for (int i = 0; i < samples; ++i) {
        times[static_cast<std::size_t>(i)] = t0 + i * h;
    }
    times.back() = traj.t_end();

    par::for_index(samples, [&](std::ptrdiff_t i) {
        conic[static_cast<std::size_t>(i)] = frozen_sector_feasible(
            sys, sector, traj.value(times[static_cast<std::size_t>(i)]),
            opts.feas_tol);
    });
    auto classify = [&](double t) {
        return frozen_sector_feasible(sys, sector, traj.value(t), opts.feas_tol);
    };
    return merge_labels(times, conic, traj, classify, opts.time_tol);
}

RegionPartition partition_by_regions(const std::vector<Box>& conic_regions,
                                     const std::vector<Box>& nonconic_regions,
                                     const ParameterTrajectory& traj,
                                     double time_tol) {
    auto in_any = [](const std::vector<Box>& boxes, const Vec& rho) {
        for (const auto& b : boxes) {
            if (b.contains(rho, 1e-12)) return true;
        }
        return false;
    };
    auto classify = [&](double t) {
        const Vec rho = traj.value(t);
        if (in_any(conic_regions, rho)) return true;
        if (in_any(nonconic_regions, rho)) return false;
        // outside both: label by the nearer region family
        double dc = std::numeric_limits<double>::infinity();
        double dn = std::numeric_limits<double>::infinity();
        auto dist = [](const Box& b, const Vec& rho_) {
            double d = 0.0;
            for (int i = 0; i < b.dim(); ++i) {
                d = std::max(d, std::max(b.lo(i) - rho_(i), rho_(i) - b.hi(i)));
            }
            return std::max(d, 0.0);
        };
        for (const auto& b : conic_regions) dc = std::min(dc, dist(b, rho));
        for (const auto& b : nonconic_regions) dn = std::min(dn, dist(b, rho));
        return dc <= dn;
    };

    const int samples = 512;
    std::vector<double> times(static_cast<std::size_t>(samples));
    std::vector<char> conic(static_cast<std::size_t>(samples));
    const double t0 = traj.t_begin();
    const double h = traj.horizon() / (samples - 1);
    for (int i = 0; i < samples; ++i) {
        const double t = (i + 1 == samples) ? traj.t_end() : t0 + i * h;
        times[static_cast<std::size_t>(i)] = t;
        conic[static_cast<std::size_t>(i)] = classify(t);
    }
    return merge_labels(times, conic, traj, classify, time_tol);
}

// ---------------------------------------------------------------------------
// average conicity

AverageVerdict average_conicity_discrete(const std::vector<double>& c,
                                         const std::vector<double>& mu) {
    if (c.size() != mu.size() || c.empty()) {
        throw InputError("average_conicity_discrete: size mismatch");
    }
    double total = 0.0;
    for (double m : mu) {
        if (!(m > 0.0)) {
            throw InputError("average_conicity_discrete: fractions must be positive");
        }
        total += m;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        throw InputError("average_conicity_discrete: fractions must sum to 1");
    }
    double margin = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) margin += c[i] * mu[i];
    return {margin >= 0.0, margin};
}

double ConicityCertificate::eps_at(const Vec& rho) const {
    for (const auto& t : eps_tables) {
        if (t.region().contains(rho, 1e-12)) return t.at(rho);
    }
    // clamped lookup in the nearest conic table
    if (eps_tables.empty()) throw CoverageError("certificate has no eps table");
    return eps_tables.front().at(rho);
}

double ConicityCertificate::alpha_at(const Vec& rho) const {
    for (const auto& t : alpha_tables) {
        if (t.region().contains(rho, 1e-12)) return t.at(rho);
    }
    if (alpha_tables.empty()) {
        throw CoverageError("certificate has no alpha table");
    }
    return alpha_tables.front().at(rho);
}

bool ConicityCertificate::in_conic_region(const Vec& rho, double slack) const {
    for (const auto& t : eps_tables) {
        if (t.region().contains(rho, slack)) return true;
    }
    return false;
}

bool ConicityCertificate::in_nonconic_region(const Vec& rho, double slack) const {
    for (const auto& t : alpha_tables) {
        if (t.region().contains(rho, slack)) return true;
    }
    return false;
}

std::vector<Box> ConicityCertificate::conic_regions() const {
    std::vector<Box> out;
    for (const auto& t : eps_tables) out.push_back(t.region());
    return out;
}

std::vector<Box> ConicityCertificate::nonconic_regions() const {
    std::vector<Box> out;
    for (const auto& t : alpha_tables) out.push_back(t.region());
    return out;
}

ConicityCertificate build_certificate(const LpvSystem& sys,
                                      const ConicSector& sector,
                                      const std::vector<Box>& conic_regions,
                                      const std::vector<Box>& nonconic_regions,
                                      const GridSpec& grid,
                                      const IndexOptions& opts) {
    ConicityCertificate cert;
    cert.sector = sector;
    cert.feas_tol = opts.feas_tol;
    for (const auto& region : conic_regions) {
        cert.eps_tables.push_back(
            conicity_index_eps(sys, sector, region, grid, opts));
    }
    for (const auto& region : nonconic_regions) {
        cert.alpha_tables.push_back(
            nonconicity_index_alpha(sys, sector, region, grid, opts));
    }
    return cert;
}

namespace {

double table_cell_slack(const IndexTable& t, double cells) {
    double slack = 0.0;
    for (const auto& ax : t.field.axes) {
        if (ax.size() >= 2) {
            slack = std::max(slack, cells * (ax[1] - ax[0]));
        }
    }
    return slack;
}

const IndexTable* covering_table(const std::vector<IndexTable>& tables,
                                 const Vec& rho, double cells) {
    for (const auto& t : tables) {
        if (t.region().contains(rho, 1e-12)) return &t;
    }
    for (const auto& t : tables) {
        if (t.region().contains(rho, table_cell_slack(t, cells))) return &t;
    }
    return nullptr;
}

}  // namespace

AverageVerdict average_conicity_continuous(const ConicityCertificate& cert,
                                           const RegionPartition& partition,
                                           const ParameterTrajectory& traj,
                                           const InputClass& inputs,
                                           const AverageOptions& opts) {
    const double ubar = opts.conservative_ubar ? inputs.u_bar_high
                                               : inputs.u_bar_low;
    const double ubar2 = ubar * ubar;
    double margin = 0.0;
    for (const auto& iv : partition.intervals) {
        const auto& tables = iv.conic ? cert.eps_tables : cert.alpha_tables;
        if (tables.empty()) {
            throw CoverageError(
                "average_conicity_continuous: no table for an interval label");
        }
        const int ns = std::max(2, opts.samples_per_interval);
        std::vector<double> ts(static_cast<std::size_t>(ns));
        std::vector<double> vs(static_cast<std::size_t>(ns));
        for (int i = 0; i < ns; ++i) {
            const double t = iv.t0 + (iv.t1 - iv.t0) * i / (ns - 1);
            const Vec rho = traj.value(t);
            const IndexTable* table =
                covering_table(tables, rho, opts.coverage_slack_cells);
            if (table == nullptr) {
                throw CoverageError(
                    "average_conicity_continuous: trajectory visits rho "
                    "outside the certificate tables");
            }
            ts[static_cast<std::size_t>(i)] = t;
            vs[static_cast<std::size_t>(i)] =
                iv.conic ? table->at(rho) : -ubar2 * table->at(rho);
        }
        margin += numerics::quadrature(ts, vs);
    }
    return {margin >= 0.0, margin};
}

std::vector<double> riemann_convergence_check(const ConicityCertificate& cert,
                                              const ParameterTrajectory& traj,
                                              const InputClass& inputs,
                                              const std::vector<double>& meshes,
                                              const AverageOptions& opts) {
    const RegionPartition part = partition_by_regions(
        cert.conic_regions(), cert.nonconic_regions(), traj, 1e-9);
    const double continuous =
        average_conicity_continuous(cert, part, traj, inputs, opts).margin;
    const double ubar = opts.conservative_ubar ? inputs.u_bar_high
                                               : inputs.u_bar_low;
    const double ubar2 = ubar * ubar;

    std::vector<double> errors;
    errors.reserve(meshes.size());
    for (double mesh : meshes) {
        const ParameterTrajectory disc = discretize_trajectory(traj, mesh);
        std::vector<double> c, mu;
        const double horizon = disc.horizon();
        for (const auto& seg : disc.segments()) {
            const Vec tag = seg.coeffs.col(0);
            const bool conic =
                cert.in_conic_region(tag, 1e-12) ||
                (!cert.in_nonconic_region(tag, 1e-12) &&
                 covering_table(cert.eps_tables, tag,
                                opts.coverage_slack_cells) != nullptr);
            c.push_back(conic ? cert.eps_at(tag) : -ubar2 * cert.alpha_at(tag));
            mu.push_back((seg.t1 - seg.t0) / horizon);
        }
        const double discrete =
            average_conicity_discrete(c, mu).margin * horizon;
        errors.push_back(std::abs(discrete - continuous));
    }
    return errors;
}

// ---------------------------------------------------------------------------
// json

namespace {

json mat_to_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

Mat mat_from_json(const json& j) {
    const auto rows = j.size();
    if (rows == 0) return Mat(0, 0);
    const auto cols = j.at(0).size();
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t k = 0; k < cols; ++k) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                j.at(i).at(k).get<double>();
        }
    }
    return m;
}

json vec_to_json(const Vec& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Vec vec_from_json(const json& j) {
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = j.at(i).get<double>();
    }
    return v;
}

json table_to_json(const IndexTable& t) {
    json j;
    j["region"] = {{"lo", vec_to_json(t.field.region.lo)},
                   {"hi", vec_to_json(t.field.region.hi)}};
    j["axes"] = t.field.axes;
    j["values"] = t.field.values;
    j["max_residual"] = t.max_residual;
    json storage = json::array();
    for (const auto& P : t.storage) storage.push_back(mat_to_json(P));
    j["storage"] = storage;
    return j;
}

IndexTable table_from_json(const json& j) {
    IndexTable t;
    t.field.region.lo = vec_from_json(j.at("region").at("lo"));
    t.field.region.hi = vec_from_json(j.at("region").at("hi"));
    t.field.axes = j.at("axes").get<std::vector<std::vector<double>>>();
    t.field.values = j.at("values").get<std::vector<double>>();
    t.max_residual = j.at("max_residual").get<double>();
    for (const auto& s : j.at("storage")) t.storage.push_back(mat_from_json(s));
    return t;
}

}  // namespace

std::string ConicityCertificate::to_json() const {
    json j;
    j["sector"] = {{"a", sector.a}, {"b", sector.b}};
    j["feas_tol"] = feas_tol;
    json eps = json::array();
    for (const auto& t : eps_tables) eps.push_back(table_to_json(t));
    json alpha = json::array();
    for (const auto& t : alpha_tables) alpha.push_back(table_to_json(t));
    j["eps_tables"] = eps;
    j["alpha_tables"] = alpha;
    if (bounds) {
        json b;
        b["q1"] = bounds->q1;
        b["q2"] = bounds->q2;
        b["node_residual"] = bounds->storage.node_residual;
        b["dense_residual"] = bounds->storage.dense_residual;
        json basis = json::array();
        for (const auto& P : bounds->storage.basis) basis.push_back(mat_to_json(P));
        b["basis"] = basis;
        b["bisection_radii"] = bounds->bisection_radii;
        j["bounds"] = b;
    }
    return j.dump(2);
}

ConicityCertificate ConicityCertificate::from_json(const std::string& text) {
    const json j = json::parse(text);
    ConicityCertificate cert;
    cert.sector = ConicSector(j.at("sector").at("a").get<double>(),
                              j.at("sector").at("b").get<double>());
    cert.feas_tol = j.at("feas_tol").get<double>();
    for (const auto& t : j.at("eps_tables")) {
        cert.eps_tables.push_back(table_from_json(t));
    }
    for (const auto& t : j.at("alpha_tables")) {
        cert.alpha_tables.push_back(table_from_json(t));
    }
    if (j.contains("bounds")) {
        ConicBoundsResult b;
        b.q1 = j.at("bounds").at("q1").get<double>();
        b.q2 = j.at("bounds").at("q2").get<double>();
        const double disc = b.q1 * b.q1 - b.q2;
        const double r = std::max(std::sqrt(std::max(disc, 0.0)), 1e-6);
        b.sector = ConicSector(b.q1 - r, b.q1 + r);
        b.storage.node_residual = j.at("bounds").at("node_residual").get<double>();
        b.storage.dense_residual =
            j.at("bounds").at("dense_residual").get<double>();
        for (const auto& P : j.at("bounds").at("basis")) {
            b.storage.basis.push_back(mat_from_json(P));
        }
        b.bisection_radii =
            j.at("bounds").at("bisection_radii").get<std::vector<double>>();
        cert.bounds = b;
    }
    return cert;
}

}  // namespace coniclpv
