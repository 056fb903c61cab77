#include "coniclpv/sim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

namespace coniclpv {

namespace {

double u01(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * u01(g);
}

std::vector<double> sample_grid(double t0, double t1, double dt) {
    std::vector<double> t;
    const auto steps = static_cast<std::size_t>(std::ceil((t1 - t0) / dt - 1e-12));
    t.reserve(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) {
        t.push_back(std::min(t0 + static_cast<double>(i) * dt, t1));
    }
    if (t.back() < t1) t.push_back(t1);
    return t;
}

}  // namespace

Vec Signal::at(double time) const {
    const auto K = t.size();
    if (time <= t.front()) return u.col(0);
    if (time >= t.back()) return u.col(static_cast<Eigen::Index>(K) - 1);
    auto it = std::upper_bound(t.begin(), t.end(), time);
    const auto i = static_cast<std::size_t>(it - t.begin()) - 1;
    const double s = (time - t[i]) / (t[i + 1] - t[i]);
    return (1.0 - s) * u.col(static_cast<Eigen::Index>(i)) +
           s * u.col(static_cast<Eigen::Index>(i) + 1);
}

Signal generate_input(const SignalSpec& spec, double t0, double t1) {
    if (!(spec.dt > 0.0) || spec.m < 1 || !(t1 > t0)) {
        throw InputError("generate_input: bad spec");
    }
    if (!spec.allow_zero && !(spec.input.u_bar_low > 0.0)) {
        throw InputError("generate_input: u_bar_low must be positive");
    }
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);

    Signal sig;
    sig.t = sample_grid(t0, t1, spec.dt);
    const auto K = static_cast<Eigen::Index>(sig.t.size());
    sig.u = Mat::Zero(spec.m, K);

    const double lo = spec.input.u_bar_low;
    const double hi = spec.input.u_bar_high;
    const double mid = 0.5 * (lo + hi);

    switch (spec.kind) {
        case SignalSpec::Kind::Constant: {
            Vec dir(spec.m);
            for (int i = 0; i < spec.m; ++i) dir(i) = uniform(rng, -1.0, 1.0);
            if (dir.norm() < 1e-12) dir(0) = 1.0;
            dir.normalize();
            const double amp = uniform(rng, lo, hi);
            for (Eigen::Index k = 0; k < K; ++k) sig.u.col(k) = amp * dir;
            return sig;
        }
        case SignalSpec::Kind::SinusoidMix: {
            const int tones = 3;
            Mat amp(spec.m, tones), freq(spec.m, tones), phase(spec.m, tones);
            for (int i = 0; i < spec.m; ++i) {
                for (int j = 0; j < tones; ++j) {
                    amp(i, j) = uniform(rng, 0.3, 1.0) * mid;
                    freq(i, j) = std::exp(uniform(rng, std::log(0.2), std::log(8.0)));
                    phase(i, j) = uniform(rng, 0.0, 2.0 * M_PI);
                }
            }
            for (Eigen::Index k = 0; k < K; ++k) {
                for (int i = 0; i < spec.m; ++i) {
                    double v = 0.0;
                    for (int j = 0; j < tones; ++j) {
                        v += amp(i, j) *
                             std::sin(freq(i, j) * sig.t[static_cast<std::size_t>(k)] +
                                      phase(i, j));
                    }
                    sig.u(i, k) = v;
                }
            }
            break;
        }
        case SignalSpec::Kind::FilteredNoise: {
            const double tau = 0.3;
            const double a = spec.dt / (tau + spec.dt);
            Vec state = Vec::Zero(spec.m);
            for (Eigen::Index k = 0; k < K; ++k) {
                for (int i = 0; i < spec.m; ++i) {
                    state(i) += a * (mid * uniform(rng, -2.0, 2.0) - state(i));
                }
                sig.u.col(k) = state;
            }
            break;
        }
    }

    if (spec.allow_zero) return sig;

    // radial clamp toward the midpoint amplitude; the previous direction
    // carries through near-zero samples
    Vec last_dir = Vec::Zero(spec.m);
    last_dir(0) = 1.0;
    for (Eigen::Index k = 0; k < K; ++k) {
        Vec v = sig.u.col(k);
        double norm = v.norm();
        if (norm < 1e-12) {
            v = last_dir * mid;
            norm = mid;
        }
        if (norm < lo) {
            v *= lo / norm;
        } else if (norm > hi) {
            v *= hi / norm;
        }
        sig.u.col(k) = v;
        last_dir = v / v.norm();
    }
    return sig;
}

OpenLoopTrace simulate_open_loop(const LpvSystem& sys,
                                 const ParameterTrajectory& traj,
                                 const Signal& input, const Vec& x0,
                                 const SimOptions& opts) {
    if (input.dim() != sys.io_dim()) {
        throw ShapeError("simulate_open_loop: input width mismatch");
    }
    const double t0 = traj.t_begin();
    const double tn = traj.t_end();
    if (input.t.front() > t0 + 1e-12 || input.t.back() < tn - 1e-12) {
        throw InputError("simulate_open_loop: input does not cover the horizon");
    }

    numerics::OdeOptions ode;
    ode.blowup_threshold = opts.blowup_threshold;
    const auto field = [&](double t, const Vec& x) -> Vec {
        const StateSpace ss = sys.eval(traj.value(t));
        return ss.A * x + ss.B * input.at(t);
    };
    const numerics::OdePath path =
        numerics::integrate_ode(field, x0, t0, tn, opts.dt, ode);

    OpenLoopTrace trace;
    trace.t = path.t;
    const auto K = static_cast<Eigen::Index>(path.t.size());
    trace.x = Mat::Zero(sys.state_dim(), K);
    trace.u = Mat::Zero(sys.io_dim(), K);
    trace.y = Mat::Zero(sys.io_dim(), K);
    for (Eigen::Index k = 0; k < K; ++k) {
        const double t = path.t[static_cast<std::size_t>(k)];
        const StateSpace ss = sys.eval(traj.value(t));
        const Vec u = input.at(t);
        trace.x.col(k) = path.x[static_cast<std::size_t>(k)];
        trace.u.col(k) = u;
        trace.y.col(k) = ss.C * trace.x.col(k) + ss.D * u;
    }
    return trace;
}

LoopTrace simulate_feedback(const ClosedLoopSystem& cl,
                            const ParameterTrajectory& traj,
                            const Signal& u_c, const Signal& u_p,
                            const Vec& x0, const SimOptions& opts) {
    const int m = cl.m;
    if (u_c.dim() != m || u_p.dim() != m) {
        throw ShapeError("simulate_feedback: exogenous input width mismatch");
    }
    const double t0 = traj.t_begin();
    const double tn = traj.t_end();

    const auto stacked = [&](double t) -> Vec {
        Vec U(2 * m);
        U.head(m) = u_c.at(t);
        U.tail(m) = u_p.at(t);
        return U;
    };
    numerics::OdeOptions ode;
    ode.blowup_threshold = opts.blowup_threshold;
    const auto field = [&](double t, const Vec& x) -> Vec {
        const StateSpace ss = cl.eval(traj.value(t));
        return ss.A * x + ss.B * stacked(t);
    };
    const numerics::OdePath path =
        numerics::integrate_ode(field, x0, t0, tn, opts.dt, ode);

    LoopTrace trace;
    trace.t = path.t;
    const auto K = static_cast<Eigen::Index>(path.t.size());
    trace.x_p = Mat::Zero(cl.n_p, K);
    trace.x_c = Mat::Zero(cl.n_c, K);
    trace.u_c = Mat::Zero(m, K);
    trace.u_p = Mat::Zero(m, K);
    trace.e_c = Mat::Zero(m, K);
    trace.e_p = Mat::Zero(m, K);
    trace.y_c = Mat::Zero(m, K);
    trace.y_p = Mat::Zero(m, K);

    const StateSpace ctrl = cl.controller.eval(Vec(0));
    for (Eigen::Index k = 0; k < K; ++k) {
        const double t = path.t[static_cast<std::size_t>(k)];
        const Vec rho = traj.value(t);
        const StateSpace ss = cl.eval(rho);
        const Vec& x = path.x[static_cast<std::size_t>(k)];
        const Vec U = stacked(t);
        const Vec Y = ss.C * x + ss.D * U;

        trace.x_p.col(k) = x.head(cl.n_p);
        trace.x_c.col(k) = x.tail(cl.n_c);
        trace.u_c.col(k) = U.head(m);
        trace.u_p.col(k) = U.tail(m);
        trace.y_c.col(k) = Y.head(m);
        trace.y_p.col(k) = Y.tail(m);
        trace.e_c.col(k) = trace.u_c.col(k) + trace.y_p.col(k);
        trace.e_p.col(k) = trace.u_p.col(k) - trace.y_c.col(k);

        // re-verify the eliminated subsystem output equations
        const StateSpace plant = cl.plant.eval(rho);
        const Vec y_c_check =
            ctrl.C * trace.x_c.col(k) + ctrl.D * trace.e_c.col(k);
        const Vec y_p_check =
            plant.C * trace.x_p.col(k) + plant.D * trace.e_p.col(k);
        const double scale =
            1.0 + Y.cwiseAbs().maxCoeff() + U.cwiseAbs().maxCoeff();
        if ((y_c_check - trace.y_c.col(k)).cwiseAbs().maxCoeff() >
                1e-9 * scale ||
            (y_p_check - trace.y_p.col(k)).cwiseAbs().maxCoeff() >
                1e-9 * scale) {
            throw InconsistentTraceError(
                "simulate_feedback: interconnection relations violated at t=" +
                std::to_string(t));
        }
    }
    return trace;
}

double empirical_l2_gain(const std::vector<LoopTrace>& traces) {
    if (traces.empty()) throw InputError("empirical_l2_gain: no traces");
    double worst = 0.0;
    for (const auto& tr : traces) {
        const auto K = tr.t.size();
        std::vector<double> ynorm(K), unorm(K);
        for (std::size_t k = 0; k < K; ++k) {
            const auto c = static_cast<Eigen::Index>(k);
            ynorm[k] = tr.y_c.col(c).squaredNorm() + tr.y_p.col(c).squaredNorm();
            unorm[k] = tr.u_c.col(c).squaredNorm() + tr.u_p.col(c).squaredNorm();
        }
        const double ye = numerics::quadrature(tr.t, ynorm);
        const double ue = numerics::quadrature(tr.t, unorm);
        if (!(ue > 0.0)) {
            throw InputError("empirical_l2_gain: zero input energy");
        }
        worst = std::max(worst, std::sqrt(ye / ue));
    }
    return worst;
}

namespace {

void write_block(std::ostream& os, const Mat& m, Eigen::Index col) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        os << ',' << m(i, col);
    }
}

void header_block(std::ostream& os, const char* name, Eigen::Index rows) {
    for (Eigen::Index i = 0; i < rows; ++i) os << ',' << name << i;
}

}  // namespace

void write_csv(std::ostream& os, const OpenLoopTrace& trace) {
    os.precision(17);
    os << "t";
    header_block(os, "x", trace.x.rows());
    header_block(os, "u", trace.u.rows());
    header_block(os, "y", trace.y.rows());
    os << '\n';
    for (std::size_t k = 0; k < trace.t.size(); ++k) {
        const auto c = static_cast<Eigen::Index>(k);
        os << trace.t[k];
        write_block(os, trace.x, c);
        write_block(os, trace.u, c);
        write_block(os, trace.y, c);
        os << '\n';
    }
}

void write_csv(std::ostream& os, const LoopTrace& trace) {
    os.precision(17);
    os << "t";
    header_block(os, "xp", trace.x_p.rows());
    header_block(os, "xc", trace.x_c.rows());
    header_block(os, "uc", trace.u_c.rows());
    header_block(os, "up", trace.u_p.rows());
    header_block(os, "ec", trace.e_c.rows());
    header_block(os, "ep", trace.e_p.rows());
    header_block(os, "yc", trace.y_c.rows());
    header_block(os, "yp", trace.y_p.rows());
    os << '\n';
    for (std::size_t k = 0; k < trace.t.size(); ++k) {
        const auto c = static_cast<Eigen::Index>(k);
        os << trace.t[k];
        write_block(os, trace.x_p, c);
        write_block(os, trace.x_c, c);
        write_block(os, trace.u_c, c);
        write_block(os, trace.u_p, c);
        write_block(os, trace.e_c, c);
        write_block(os, trace.e_p, c);
        write_block(os, trace.y_c, c);
        write_block(os, trace.y_p, c);
        os << '\n';
    }
}

}  // namespace coniclpv
