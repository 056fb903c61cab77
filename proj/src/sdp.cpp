#include "coniclpv/sdp.hpp"
#include <cstdio>
#include <cstdlib>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <random>

namespace coniclpv {

const char* to_string(SdpStatus s) {
    switch (s) {
        case SdpStatus::Optimal: return "Optimal";
        case SdpStatus::Feasible: return "Feasible";
        case SdpStatus::Infeasible: return "Infeasible";
        case SdpStatus::NumericalFailure: return "NumericalFailure";
    }
    return "?";
}

int SdpProblem::add_scalar(const std::string& name) {
    VarBlock b;
    b.scalar = true;
    b.dim = 1;
    b.count = 1;
    b.offset = total_dim_;
    b.name = name;
    total_dim_ += 1;
    blocks_.push_back(std::move(b));
    return static_cast<int>(blocks_.size()) - 1;
}

int SdpProblem::add_symmetric(int dim, const std::string& name) {
    if (dim < 1) throw InputError("SdpProblem: symmetric block needs dim >= 1");
    VarBlock b;
    b.scalar = false;
    b.dim = dim;
    b.count = dim * (dim + 1) / 2;
    b.offset = total_dim_;
    b.name = name;
    total_dim_ += b.count;
    blocks_.push_back(std::move(b));
    return static_cast<int>(blocks_.size()) - 1;
}

void SdpProblem::add_constraint(int size, AffineFn fn, const std::string& name) {
    if (size < 1) throw InputError("SdpProblem: constraint needs size >= 1");
    if (!fn) throw InputError("SdpProblem: null constraint");
    constraints_.push_back(Constraint{size, std::move(fn), name});
}

void SdpProblem::set_objective(const Vec& c) { objective_ = c; }

double SdpProblem::scalar_value(int handle, const Vec& x) const {
    const auto& b = blocks_.at(static_cast<std::size_t>(handle));
    if (!b.scalar) throw InputError("scalar_value: handle is a matrix block");
    return x(b.offset);
}

Mat SdpProblem::block_value(int handle, const Vec& x) const {
    const auto& b = blocks_.at(static_cast<std::size_t>(handle));
    if (b.scalar) return Mat::Constant(1, 1, x(b.offset));
    Mat m(b.dim, b.dim);
    int k = b.offset;
    for (int i = 0; i < b.dim; ++i) {
        for (int j = i; j < b.dim; ++j) {
            m(i, j) = x(k);
            m(j, i) = x(k);
            ++k;
        }
    }
    return m;
}

Mat SdpProblem::constraint_value(int j, const Vec& x) const {
    Vec full = Vec::Zero(total_dim_);
    full.head(x.size()) = x;
    return constraints_[static_cast<std::size_t>(j)].fn(full);
}

// ---------------------------------------------------------------------------
// audit registry

namespace sdp_audit {
namespace {
std::mutex g_mutex;
bool g_enabled = false;
std::vector<Record> g_records;
}  // namespace

void enable(bool on) {
    std::lock_guard<std::mutex> lock(g_mutex);
    g_enabled = on;
}
bool enabled() {
    std::lock_guard<std::mutex> lock(g_mutex);
    return g_enabled;
}
void clear() {
    std::lock_guard<std::mutex> lock(g_mutex);
    g_records.clear();
}
std::vector<Record> records() {
    std::lock_guard<std::mutex> lock(g_mutex);
    return g_records;
}
double worst_residual_ratio() {
    std::lock_guard<std::mutex> lock(g_mutex);
    double worst = 0.0;
    for (const auto& r : g_records) {
        worst = std::max(worst, r.max_residual / r.feas_tol);
    }
    return worst;
}

namespace {
void record(const std::string& label, double residual, double tol) {
    std::lock_guard<std::mutex> lock(g_mutex);
    if (g_enabled) g_records.push_back(Record{label, residual, tol});
}
}  // namespace
}  // namespace sdp_audit

// ---------------------------------------------------------------------------
// interior-point backend

struct SdpBackend {
    struct Affine {
        int size = 0;
        double scale = 1.0;
        Mat F0;                                 // scaled
        std::vector<std::pair<int, Mat>> terms; // scaled, nonzero only
    };

    const SdpProblem& prob;
    const SolveOptions& opts;
    int nx = 0;
    std::vector<Affine> cons;
    double nu = 0.0;  // total barrier dimension

    SdpBackend(const SdpProblem& p, const SolveOptions& o) : prob(p), opts(o) {
        nx = p.total_dim_;
        extract();
    }

    void extract() {
        std::mt19937_64 rng(0x5d2c0d3ULL);
        auto rnd = [&] {
            return 2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0;
        };
        cons.reserve(prob.constraints_.size());
        for (const auto& c : prob.constraints_) {
            Affine a;
            a.size = c.size;
            const Vec zero = Vec::Zero(nx);
            Mat F0 = c.fn(zero);
            if (F0.rows() != c.size || F0.cols() != c.size) {
                throw ShapeError("SdpProblem: constraint size mismatch (" +
                                 c.name + ")");
            }
            std::vector<Mat> full(static_cast<std::size_t>(nx));
            double magnitude = F0.cwiseAbs().maxCoeff();
            for (int k = 0; k < nx; ++k) {
                Vec e = Vec::Zero(nx);
                e(k) = 1.0;
                full[static_cast<std::size_t>(k)] = c.fn(e) - F0;
                magnitude = std::max(
                    magnitude,
                    full[static_cast<std::size_t>(k)].cwiseAbs().maxCoeff());
            }
            magnitude = std::max(magnitude, 1e-8);

            // constraints stay in their natural units: the shared phase-1
            // slab then measures the unscaled residual directly
            a.scale = 1.0;

            auto symcheck = [&](const Mat& m) {
                const double skew = (m - m.transpose()).cwiseAbs().maxCoeff();
                if (skew > 1e-9 * magnitude) {
                    throw ShapeError("SdpProblem: constraint not symmetric (" +
                                     c.name + ")");
                }
            };
            symcheck(F0);
            a.F0 = 0.5 * (F0 + F0.transpose());
            for (int k = 0; k < nx; ++k) {
                Mat& Fk = full[static_cast<std::size_t>(k)];
                if (Fk.cwiseAbs().maxCoeff() <= 1e-14 * magnitude) continue;
                symcheck(Fk);
                a.terms.emplace_back(k, 0.5 * (Fk + Fk.transpose()));
            }

            // affinity spot-check on random decision samples
            for (int trial = 0; trial < 2; ++trial) {
                Vec x(nx);
                for (int k = 0; k < nx; ++k) x(k) = rnd();
                Mat lhs = c.fn(x);
                Mat rhs = a.F0;
                for (const auto& [k, Fk] : a.terms) rhs += x(k) * Fk;
                if ((lhs - rhs).cwiseAbs().maxCoeff() > 1e-6 * magnitude) {
                    throw InputError("SdpProblem: constraint is not affine (" +
                                     c.name + ")");
                }
            }
            nu += a.size;
            cons.push_back(std::move(a));
        }
    }

    // S_j = t*I - F_j(x) in phase 1, S_j = -F_j(x) in phase 2.
    static bool slacks(const std::vector<Affine>& cons, const Vec& x, double t,
                       bool phase1, std::vector<Eigen::LLT<Mat>>* out,
                       double* logdet) {
        if (out) out->clear();
        if (logdet) *logdet = 0.0;
        for (const auto& a : cons) {
            Mat S = -a.F0;
            for (const auto& [k, Fk] : a.terms) S -= x(k) * Fk;
            if (phase1) S.diagonal().array() += t;
            Eigen::LLT<Mat> llt(S);
            if (llt.info() != Eigen::Success) return false;
            const auto& L = llt.matrixLLT();
            double ld = 0.0;
            for (int i = 0; i < S.rows(); ++i) {
                const double d = L(i, i);
                if (!(d > 0.0) || !std::isfinite(d)) return false;
                ld += std::log(d);
            }
            if (logdet) *logdet += 2.0 * ld;
            if (out) out->push_back(std::move(llt));
        }
        return true;
    }

    enum class StageExit { Stalled, Converged, HitTarget, MaxIter };

    // One centering run at fixed kappa. In phase 1 the run stops early once t
    // drops below t_target, which keeps decision magnitudes moderate on
    // feasibility-only problems whose cone is unbounded. Box barriers
    // |x_k| < decision_cap bound the domain so the stage minimum exists.
    StageExit center(Vec& x, double& t, bool phase1, double kappa,
                     const Vec& cobj, double t_cap, double t_target,
                     int* iters) {
        const int nvar = nx + (phase1 ? 1 : 0);
        const double R = opts.decision_cap;
        auto box_ok = [&](const Vec& v) {
            return v.cwiseAbs().maxCoeff() < R;
        };
        auto box_barrier = [&](const Vec& v) {
            double acc = 0.0;
            for (int k = 0; k < nx; ++k) {
                acc -= std::log(R - v(k)) + std::log(R + v(k));
            }
            return acc;
        };
        for (int it = 0; it < opts.max_inner; ++it) {
            if (phase1 && t < t_target) return StageExit::HitTarget;
            if (iters) ++(*iters);
            std::vector<Eigen::LLT<Mat>> llt;
            double logdet = 0.0;
            if (!box_ok(x) || !slacks(cons, x, t, phase1, &llt, &logdet)) {
                return StageExit::Stalled;
            }

            double cap_slack = 1.0;
            if (phase1) {
                cap_slack = t_cap + t;
                if (!(cap_slack > 0.0)) return StageExit::Stalled;
            }

            Vec g = Vec::Zero(nvar);
            Mat H = Mat::Zero(nvar, nvar);
            for (int k = 0; k < nx; ++k) {
                g(k) = kappa * cobj(k) + 1.0 / (R - x(k)) - 1.0 / (R + x(k));
                H(k, k) += 1.0 / ((R - x(k)) * (R - x(k))) +
                           1.0 / ((R + x(k)) * (R + x(k)));
            }
            if (phase1) {
                g(nx) = kappa - 1.0 / cap_slack;
                H(nx, nx) += 1.0 / (cap_slack * cap_slack);
            }

            for (std::size_t j = 0; j < cons.size(); ++j) {
                const auto& a = cons[j];
                const Mat L = llt[j].matrixL();
                const int nt = static_cast<int>(a.terms.size());
                std::vector<Mat> W(static_cast<std::size_t>(nt) + (phase1 ? 1 : 0));
                for (int q = 0; q < nt; ++q) {
                    // W = L^-1 * (-Fk) * L^-T  (dS/dx_k = -Fk)
                    Mat Y = L.triangularView<Eigen::Lower>().solve(
                        -a.terms[static_cast<std::size_t>(q)].second);
                    W[static_cast<std::size_t>(q)] =
                        L.triangularView<Eigen::Lower>()
                            .solve(Y.transpose())
                            .transpose();
                }
                if (phase1) {
                    // dS/dt = +I
                    Mat Y = L.triangularView<Eigen::Lower>().solve(
                        Mat::Identity(a.size, a.size));
                    W.back() = L.triangularView<Eigen::Lower>()
                                   .solve(Y.transpose())
                                   .transpose();
                }
                auto var_of = [&](int q) {
                    return q < nt ? a.terms[static_cast<std::size_t>(q)].first : nx;
                };
                const int total = nt + (phase1 ? 1 : 0);
                for (int q = 0; q < total; ++q) {
                    g(var_of(q)) -= W[static_cast<std::size_t>(q)].trace();
                    for (int r = q; r < total; ++r) {
                        const double h = (W[static_cast<std::size_t>(q)].array() *
                                          W[static_cast<std::size_t>(r)].array())
                                             .sum();
                        H(var_of(q), var_of(r)) += h;
                        if (r != q) H(var_of(r), var_of(q)) += h;
                    }
                }
            }

            // Newton direction on the Jacobi-equilibrated system; the
            // diagonal scaling compensates decision scales that can span
            // many orders of magnitude in gridded LMIs
            Vec d;
            Vec dsqrt(nvar);
            for (int k = 0; k < nvar; ++k) {
                dsqrt(k) = 1.0 / std::sqrt(std::max(H(k, k), 1e-300));
            }
            Mat Heq = dsqrt.asDiagonal() * H * dsqrt.asDiagonal();
            double ridge = 1e-13;
            for (int attempt = 0;; ++attempt) {
                Mat Hr = Heq;
                Hr.diagonal().array() += ridge;
                Eigen::LDLT<Mat> ldlt(Hr);
                const Vec deq = ldlt.solve(-(dsqrt.asDiagonal() * g));
                d = dsqrt.asDiagonal() * deq;
                if (ldlt.info() == Eigen::Success && d.allFinite()) break;
                ridge *= 100.0;
                if (attempt > 8) return StageExit::Stalled;
            }

            const double f0 = kappa * (phase1 ? t : cobj.dot(x)) - logdet +
                              box_barrier(x) -
                              (phase1 ? std::log(cap_slack) : 0.0);
            const double decrement = -g.dot(d);
            if (std::getenv("CONICLPV_SDP_TRACE")) {
                fprintf(stderr, "  it=%d kappa=%g t=%g f=%g dec=%g |x|=%g\n",
                        it, kappa, t, f0, decrement, x.cwiseAbs().maxCoeff());
            }
            if (!(decrement > 0.0)) return StageExit::Converged;
            if (decrement < 2e-12 * (1.0 + std::abs(f0))) {
                return StageExit::Converged;
            }
            double alpha = 1.0;
            bool stepped = false;
            for (int ls = 0; ls < 60; ++ls) {
                Vec xn = x + alpha * d.head(nx);
                double tn = phase1 ? t + alpha * d(nx) : t;
                double ld = 0.0;
                if ((!phase1 || tn > -t_cap) && box_ok(xn) &&
                    slacks(cons, xn, tn, phase1, nullptr, &ld)) {
                    const double fn = kappa * (phase1 ? tn : cobj.dot(xn)) -
                                      ld + box_barrier(xn) -
                                      (phase1 ? std::log(t_cap + tn) : 0.0);
                    if (fn <= f0 - 1e-4 * alpha * decrement) {
                        x = xn;
                        t = tn;
                        stepped = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            // line search exhausted: numerically at this stage's optimum
            if (!stepped) return StageExit::Converged;
        }
        return StageExit::MaxIter;
    }

    double unscaled_residual(const Vec& x, std::vector<double>* per) const {
        double worst = -std::numeric_limits<double>::infinity();
        if (per) per->clear();
        for (int j = 0; j < prob.constraint_count(); ++j) {
            const double r =
                numerics::max_symmetric_eigenvalue(prob.constraint_value(j, x));
            if (per) per->push_back(r);
            worst = std::max(worst, r);
        }
        return worst;
    }

    SdpSolution run() {
        SdpSolution sol;
        sol.x = Vec::Zero(nx);

        if (cons.empty()) {
            sol.status = prob.has_objective() ? SdpStatus::NumericalFailure
                                              : SdpStatus::Feasible;
            return finish(sol);
        }

        // Phase 1: minimize t subject to F_j(x) <= t*I.
        Vec x = Vec::Zero(nx);
        double t0 = 0.0;
        for (const auto& a : cons) {
            t0 = std::max(t0, numerics::max_symmetric_eigenvalue(a.F0));
        }
        double t = t0 + 1.0;
        const double t_cap = 10.0 * (std::abs(t) + 1.0);
        const Vec zero_obj = Vec::Zero(nx);

        // Stop descending once comfortably interior; thin feasible sets are
        // still resolved by the stage convergence checks below.
        const double t_target = (prob.has_objective() ? -2e-2 : -1e-3) *
                                (1.0 + std::abs(t0));

        bool strictly_feasible = false;
        double kappa = 1.0;
        const double nu_total = nu + 1.0 + 2.0 * nx;  // + t-cap + decision box
        while (true) {
            const StageExit exit = center(x, t, true, kappa, zero_obj, t_cap,
                                          t_target, &sol.newton_iterations);
            if (exit == StageExit::Stalled) {
                sol.status = SdpStatus::NumericalFailure;
                sol.x = x;
                return finish(sol);
            }
            if (t < -1e-9) {
                strictly_feasible = true;
                break;
            }
            // the dual bound on min t is only valid at a converged stage
            if (exit == StageExit::Converged) {
                const double lower = t - nu_total / kappa;
                if (lower > 1e-12 * (1.0 + std::abs(t))) {
                    sol.status = SdpStatus::Infeasible;
                    sol.x = x;
                    return finish(sol);
                }
            }
            if (kappa >= opts.kappa_max) {
                // converged onto the boundary; the residual check decides
                strictly_feasible = false;
                break;
            }
            kappa *= 8.0;
        }

        sol.x = x;
        if (!prob.has_objective() || !strictly_feasible) {
            sol.status = SdpStatus::Feasible;
            return finish(sol);
        }

        // Phase 2: barrier minimization of the linear objective from the
        // strictly feasible interior point.
        Vec c = prob.objective_;
        if (c.size() != nx) {
            Vec cc = Vec::Zero(nx);
            cc.head(std::min<Eigen::Index>(c.size(), nx)) =
                c.head(std::min<Eigen::Index>(c.size(), nx));
            c = cc;
        }
        const double cscale = std::max(1.0, c.cwiseAbs().maxCoeff());
        const Vec cn = c / cscale;

        kappa = 1.0;
        while (true) {
            const StageExit exit = center(x, t, false, kappa, cn, 0.0, 0.0,
                                          &sol.newton_iterations);
            if (exit == StageExit::Stalled) break;
            if (nu_total / kappa < opts.obj_gap * (1.0 + std::abs(cn.dot(x))) ||
                kappa >= opts.kappa_max) {
                break;
            }
            kappa *= 8.0;
        }
        sol.x = x;
        sol.status = SdpStatus::Optimal;
        return finish(sol);
    }

    SdpSolution finish(SdpSolution sol) {
        sol.max_residual = unscaled_residual(sol.x, &sol.residuals);
        if (is_feasible(sol)) {
            if (sol.max_residual > opts.feas_tol) {
                // the backend believed the point feasible; the eigenvalue
                // re-verification disagrees
                sol.status = SdpStatus::NumericalFailure;
            } else {
                sdp_audit::record(opts.label, std::max(sol.max_residual, 0.0),
                                  opts.feas_tol);
            }
        }
        if (prob.has_objective()) {
            Vec c = prob.objective_;
            double obj = 0.0;
            for (int k = 0; k < std::min<int>(static_cast<int>(c.size()), nx); ++k) {
                obj += c(k) * sol.x(k);
            }
            sol.objective = obj;
        }
        return sol;
    }
};

SdpSolution solve(const SdpProblem& problem, const SolveOptions& opts) {
    SdpBackend backend(problem, opts);
    return backend.run();
}

SdpSolution solve(const SdpProblem& problem, double feas_tol) {
    SolveOptions opts;
    opts.feas_tol = feas_tol;
    return solve(problem, opts);
}

// ---------------------------------------------------------------------------
// gridded assembly

std::vector<Vec> grid_nodes(const Box& box, int points_per_axis) {
    if (points_per_axis < 1) throw InputError("grid_nodes: empty grid");
    const int p = box.dim();
    if (p == 0) return {Vec(0)};
    for (int i = 0; i < p; ++i) {
        if (box.hi(i) - box.lo(i) > 1e-12 && points_per_axis < 2) {
            throw InputError("grid_nodes: bounded axis needs >= 2 points");
        }
    }
    std::vector<std::vector<double>> axes(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) {
        axes[static_cast<std::size_t>(i)] =
            numerics::linspace(box.lo(i), box.hi(i), points_per_axis);
    }
    std::vector<Vec> nodes;
    std::vector<std::size_t> idx(static_cast<std::size_t>(p), 0);
    while (true) {
        Vec v(p);
        for (int i = 0; i < p; ++i) {
            v(i) = axes[static_cast<std::size_t>(i)][idx[static_cast<std::size_t>(i)]];
        }
        nodes.push_back(v);
        int axis = p - 1;
        while (axis >= 0) {
            auto& k = idx[static_cast<std::size_t>(axis)];
            if (++k < axes[static_cast<std::size_t>(axis)].size()) break;
            k = 0;
            --axis;
        }
        if (axis < 0) break;
    }
    return nodes;
}

GriddedLmiBuilder::GriddedLmiBuilder(const ParameterBounds& bounds,
                                     const Box& region, const GridSpec& grid,
                                     int storage_dim, double eps_pd)
    : storage_dim_(storage_dim),
      param_dim_(bounds.dim()),
      rate_unbounded_(bounds.rate_unbounded) {
    if (region.dim() != param_dim_) {
        throw ShapeError("GriddedLmiBuilder: region dimension mismatch");
    }
    for (int i = 0; i < param_dim_; ++i) {
        if (region.lo(i) < bounds.rho_min(i) - 1e-9 ||
            region.hi(i) > bounds.rho_max(i) + 1e-9) {
            throw DomainError("GriddedLmiBuilder: region outside the box");
        }
    }
    rho_nodes_ = grid_nodes(region, grid.param_points);
    if (rate_unbounded_ || param_dim_ == 0) {
        rate_nodes_ = {Vec::Zero(param_dim_)};
    } else {
        rate_nodes_ = grid_nodes(Box{bounds.rate_min, bounds.rate_max},
                                 grid.rate_points);
    }

    p_blocks_.push_back(problem_.add_symmetric(storage_dim_, "P0"));
    if (!rate_unbounded_) {
        for (int i = 0; i < param_dim_; ++i) {
            p_blocks_.push_back(
                problem_.add_symmetric(storage_dim_, "P" + std::to_string(i + 1)));
        }
    }

    // P(rho) - eps_pd * I >= 0 at every parameter node
    for (const auto& rho : rho_nodes_) {
        const Vec rho_copy = rho;
        problem_.add_constraint(
            storage_dim_,
            [this, rho_copy, eps_pd](const Vec& x) -> Mat {
                return eps_pd * Mat::Identity(storage_dim_, storage_dim_) -
                       P_at(x, rho_copy);
            },
            "P_pd");
    }
}

int GriddedLmiBuilder::add_scalar(const std::string& name) {
    return problem_.add_scalar(name);
}

Mat GriddedLmiBuilder::P_at(const Vec& x, const Vec& rho) const {
    Mat P = problem_.block_value(p_blocks_[0], x);
    if (!rate_unbounded_) {
        for (int i = 0; i < param_dim_; ++i) {
            P += rho(i) *
                 problem_.block_value(p_blocks_[static_cast<std::size_t>(i) + 1], x);
        }
    }
    return P;
}

Mat GriddedLmiBuilder::P_rate_term(const Vec& x, const Vec& rhodot) const {
    Mat dP = Mat::Zero(storage_dim_, storage_dim_);
    if (!rate_unbounded_) {
        for (int i = 0; i < param_dim_; ++i) {
            dP += rhodot(i) *
                  problem_.block_value(p_blocks_[static_cast<std::size_t>(i) + 1], x);
        }
    }
    return dP;
}

std::vector<Mat> GriddedLmiBuilder::basis_values(const Vec& x) const {
    std::vector<Mat> out;
    out.reserve(p_blocks_.size());
    for (int h : p_blocks_) out.push_back(problem_.block_value(h, x));
    return out;
}

void GriddedLmiBuilder::add_node_constraints(
    int size,
    const std::function<SdpProblem::AffineFn(const Vec&, const Vec&)>& node_fn,
    const std::string& name) {
    for (const auto& rho : rho_nodes_) {
        for (const auto& nu : rate_nodes_) {
            problem_.add_constraint(size, node_fn(rho, nu), name);
        }
    }
}

}  // namespace coniclpv
