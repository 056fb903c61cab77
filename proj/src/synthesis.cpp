#include "coniclpv/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "coniclpv/parallel.hpp"

namespace coniclpv {

using nlohmann::json;

namespace {

struct LoopMatrices {
    Mat A, B, C, D;
    double condition = 1.0;
};

LoopMatrices eliminate(const StateSpace& p, const StateSpace& c) {
    const int np = static_cast<int>(p.A.rows());
    const int nc = static_cast<int>(c.A.rows());
    const int m = static_cast<int>(p.D.rows());
    const Mat I = Mat::Identity(m, m);

    const Mat M1 = I + c.D * p.D;  // for y_c
    const Mat M2 = I + p.D * c.D;  // for y_p
    Eigen::JacobiSVD<Mat> svd(M1);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    LoopMatrices out;
    out.condition = smin > 0.0 ? smax / smin
                               : std::numeric_limits<double>::infinity();

    const Mat L1 = M1.partialPivLu().solve(Mat::Identity(m, m));
    const Mat L2 = M2.partialPivLu().solve(Mat::Identity(m, m));

    const int n = np + nc;
    out.A = Mat::Zero(n, n);
    out.B = Mat::Zero(n, 2 * m);
    out.C = Mat::Zero(2 * m, n);
    out.D = Mat::Zero(2 * m, 2 * m);

    // state [x_p; x_c], exogenous U = [u_c; u_p], outputs Y = [y_c; y_p]
    out.A.topLeftCorner(np, np) = p.A - p.B * L1 * c.D * p.C;
    out.A.topRightCorner(np, nc) = -p.B * L1 * c.C;
    out.A.bottomLeftCorner(nc, np) = c.B * L2 * p.C;
    out.A.bottomRightCorner(nc, nc) = c.A - c.B * L2 * p.D * c.C;

    out.B.topLeftCorner(np, m) = -p.B * L1 * c.D;
    out.B.topRightCorner(np, m) = p.B * L1;
    out.B.bottomLeftCorner(nc, m) = c.B * L2;
    out.B.bottomRightCorner(nc, m) = c.B * L2 * p.D;

    out.C.topLeftCorner(m, np) = L1 * c.D * p.C;
    out.C.topRightCorner(m, nc) = L1 * c.C;
    out.C.bottomLeftCorner(m, np) = L2 * p.C;
    out.C.bottomRightCorner(m, nc) = -L2 * p.D * c.C;

    out.D.topLeftCorner(m, m) = L1 * c.D;
    out.D.topRightCorner(m, m) = L1 * c.D * p.D;
    out.D.bottomLeftCorner(m, m) = -L2 * p.D * c.D;
    out.D.bottomRightCorner(m, m) = L2 * p.D;
    return out;
}

}  // namespace

StateSpace ClosedLoopSystem::eval(const Vec& rho) const {
    const StateSpace p = plant.eval(rho);
    const StateSpace c = controller.eval(Vec(0));
    const LoopMatrices lm = eliminate(p, c);
    return StateSpace{lm.A, lm.B, lm.C, lm.D};
}

ClosedLoopSystem assemble_closed_loop(const LpvSystem& plant,
                                      const LpvSystem& controller,
                                      int check_points_per_axis,
                                      double max_condition) {
    if (plant.io_dim() != controller.io_dim()) {
        throw ShapeError("assemble_closed_loop: channel widths differ");
    }
    if (controller.param_dim() != 0) {
        throw ShapeError(
            "assemble_closed_loop: the controller must be parameter-free");
    }
    ClosedLoopSystem cl;
    cl.plant = plant;
    cl.controller = controller;
    cl.n_p = plant.state_dim();
    cl.n_c = controller.state_dim();
    cl.m = plant.io_dim();

    const StateSpace c = controller.eval(Vec(0));
    for (const Vec& rho :
         grid_nodes(plant.box(), plant.param_dim() == 0 ? 1
                                                        : check_points_per_axis)) {
        const LoopMatrices lm = eliminate(plant.eval(rho), c);
        if (!(lm.condition <= max_condition)) {
            throw WellPosednessError(
                "assemble_closed_loop: I + D_c D_p near-singular (condition " +
                std::to_string(lm.condition) + ")");
        }
    }
    return cl;
}

LpvSystem realize_conic_controller(const ConicSector& sector, int m,
                                   double pole_rate) {
    if (!(pole_rate > 0.0)) {
        throw InputError("realize_conic_controller: pole_rate must be > 0");
    }
    const Mat I = Mat::Identity(m, m);
    // y = c_c u + r_c G(u) with G the unit low-pass diag(pole_rate/(s+pole_rate))
    return LpvSystem::lti(-pole_rate * I, pole_rate * I, sector.radius() * I,
                          sector.center() * I);
}

namespace {

std::vector<std::pair<Box, bool>> split_regions_1d(
    const std::function<bool(double)>& conic_at, double lo, double hi,
    int samples, double tol) {
    std::vector<std::pair<Box, bool>> out;
    const int ns = std::max(2, samples);
    std::vector<char> label(static_cast<std::size_t>(ns));
    std::vector<double> pos(static_cast<std::size_t>(ns));
    for (int i = 0; i < ns; ++i) {
        pos[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (ns - 1);
    }
    par::for_index(ns, [&](std::ptrdiff_t i) {
        label[static_cast<std::size_t>(i)] =
            conic_at(pos[static_cast<std::size_t>(i)]);
    });
    double start = lo;
    bool cur = label[0] != 0;
    for (int i = 1; i < ns; ++i) {
        const bool next = label[static_cast<std::size_t>(i)] != 0;
        if (next == cur) continue;
        double a = pos[static_cast<std::size_t>(i) - 1];
        double b = pos[static_cast<std::size_t>(i)];
        while (b - a > tol) {
            const double mid = 0.5 * (a + b);
            if (conic_at(mid) == cur) {
                a = mid;
            } else {
                b = mid;
            }
        }
        const double boundary = 0.5 * (a + b);
        out.push_back({Box::interval(start, boundary), cur});
        start = boundary;
        cur = next;
    }
    out.push_back({Box::interval(start, hi), cur});
    return out;
}

}  // namespace

ClosedLoopIndices closed_loop_indices(const ClosedLoopSystem& cl,
                                      const QsrBlocks& qsr,
                                      const GridSpec& grid,
                                      const IndexOptions& opts) {
    const QsrKernel kernel = qsr_kernel(qsr);
    const SystemEval eval = [&cl](const Vec& rho) { return cl.eval(rho); };
    const int p = cl.plant.param_dim();
    if (p > 1) {
        throw InputError(
            "closed_loop_indices: region splitting supports scalar-parameter "
            "plants");
    }

    ClosedLoopIndices out;
    std::vector<std::pair<Box, bool>> regions;
    if (p == 0) {
        const bool conic =
            dissipation_feasible(eval(Vec(0)), kernel, 0.0, opts, true, 0.0);
        Box all;
        all.lo = Vec(0);
        all.hi = Vec(0);
        regions.push_back({all, conic});
    } else {
        auto conic_at = [&](double r) {
            return dissipation_feasible(eval(Vec::Constant(1, r)), kernel, 0.0,
                                        opts, true, 0.0);
        };
        regions = split_regions_1d(conic_at, cl.box().lo(0), cl.box().hi(0),
                                   64, 1e-4);
    }

    for (const auto& [region, conic] : regions) {
        try {
            if (conic) {
                out.eps_tables.push_back(
                    eps_index_table(eval, kernel, region, grid, opts, true, 0.0));
                out.conic_regions.push_back(region);
            } else {
                out.alpha_tables.push_back(
                    alpha_index_table(eval, kernel, region, grid, opts));
                out.nonconic_regions.push_back(region);
            }
        } catch (const RegionClassError& e) {
            throw RegionClassError(
                std::string("closed_loop_indices: sector mismatch in region [") +
                std::to_string(region.lo(0)) + ", " +
                std::to_string(region.hi(0)) + "]: " + e.what());
        }
    }
    return out;
}

namespace {

struct CandidateIntegrals {
    double eps = 0.0;
    double alpha = 0.0;
};

CandidateIntegrals integrate_indices(const ClosedLoopIndices& idx,
                                     const ParameterTrajectory& traj,
                                     int samples_per_interval) {
    CandidateIntegrals acc;
    const RegionPartition part = partition_by_regions(
        idx.conic_regions, idx.nonconic_regions, traj, 1e-9);
    for (const auto& iv : part.intervals) {
        const auto& tables = iv.conic ? idx.eps_tables : idx.alpha_tables;
        if (tables.empty()) continue;  // zero-length mislabel guard
        const int ns = std::max(2, samples_per_interval);
        std::vector<double> ts(static_cast<std::size_t>(ns));
        std::vector<double> vs(static_cast<std::size_t>(ns));
        for (int i = 0; i < ns; ++i) {
            const double t = iv.t0 + (iv.t1 - iv.t0) * i / (ns - 1);
            const Vec rho = traj.value(t);
            const IndexTable* best = &tables.front();
            for (const auto& tab : tables) {
                if (tab.region().contains(rho, 1e-9)) {
                    best = &tab;
                    break;
                }
            }
            ts[static_cast<std::size_t>(i)] = t;
            vs[static_cast<std::size_t>(i)] = best->at(rho);
        }
        const double integral = numerics::quadrature(ts, vs);
        (iv.conic ? acc.eps : acc.alpha) += integral;
    }
    return acc;
}

double ubar_factor_value(UbarFactor f, const InputClass& inputs) {
    switch (f) {
        case UbarFactor::None: return 1.0;
        case UbarFactor::Low: return inputs.u_bar_low * inputs.u_bar_low;
        case UbarFactor::High: return inputs.u_bar_high * inputs.u_bar_high;
    }
    return 1.0;
}

}  // namespace

std::optional<DesignResult> evaluate_design_candidate(
    const LpvSystem& plant, const ConicSector& plant_sector,
    const std::vector<ParameterTrajectory>& traj_class,
    const InputClass& inputs, const DesignOptions& opts) {
    DesignResult res;
    res.plant_sector = plant_sector;
    res.center = plant_sector.center();
    res.radius = plant_sector.radius();
    res.delta = opts.delta;
    res.pole_rate = opts.pole_rate;

    ConicSector controller_sector{0.0, 1.0};
    try {
        controller_sector = complementary_cone(plant_sector, opts.delta);
    } catch (const Error&) {
        return std::nullopt;
    }
    res.controller_sector = controller_sector;

    const LpvSystem controller = realize_conic_controller(
        controller_sector, plant.io_dim(), opts.pole_rate);
    ClosedLoopSystem cl;
    try {
        cl = assemble_closed_loop(plant, controller);
    } catch (const WellPosednessError&) {
        return std::nullopt;
    }

    const SectorPair pair{plant_sector, controller_sector};
    res.conditions = check_sector_conditions(pair);
    const QsrBlocks qsr = qsr_matrices(pair, plant.io_dim());

    const ClosedLoopIndices idx =
        closed_loop_indices(cl, qsr, opts.grid, opts.index);

    const double factor = ubar_factor_value(opts.ubar_factor, inputs);
    for (const auto& traj : traj_class) {
        const CandidateIntegrals ci = integrate_indices(idx, traj, 1000);
        res.eps_integral += ci.eps;
        res.alpha_integral += ci.alpha;
        res.horizon += traj.horizon();
    }
    res.residual = res.eps_integral - factor * res.alpha_integral;

    try {
        res.gain = l2_gain_estimate(pair, plant.io_dim());
    } catch (const EstimateError&) {
        res.gain = GainEstimate{};
        res.gain.degenerate = true;
    }
    return res;
}

namespace {

DesignResult require_candidate(const LpvSystem& plant, const ConicSector& s,
                               const std::vector<ParameterTrajectory>& trajs,
                               const InputClass& inputs,
                               const DesignOptions& opts) {
    auto cand = evaluate_design_candidate(plant, s, trajs, inputs, opts);
    if (!cand) {
        throw DesignInfeasibleError(
            "design: candidate sector cannot be realized", -1e300);
    }
    return *cand;
}

}  // namespace

DesignResult design_nominal_cone(const LpvSystem& plant,
                                 const std::vector<ParameterTrajectory>& traj_class,
                                 const InputClass& inputs,
                                 const ParameterBounds& bounds,
                                 const DesignOptions& opts) {
    if (plant.param_dim() > 1) {
        throw InputError("design_nominal_cone: scalar-parameter plants only");
    }
    if (traj_class.empty()) {
        throw InputError("design_nominal_cone: empty trajectory class");
    }

    ConicBoundsOptions bopts;
    bopts.feas_tol = opts.index.feas_tol;
    const auto full = find_conic_bounds(plant, Box::of(bounds), bounds,
                                        opts.grid, bopts);
    if (!full) {
        throw DesignInfeasibleError(
            "design_nominal_cone: the plant is not conic over the full "
            "parameter range; no worst-case cone exists",
            -1e300);
    }
    const double r_max = full->sector.radius();
    const double r_lo = std::max(opts.radius_floor_frac * r_max, 1e-6);
    const double r_tol = std::max(opts.radius_rel_tol * (r_max - r_lo), 1e-9);

    std::vector<double> centers = {full->sector.center()};
    for (int k = 1; centers.size() < static_cast<std::size_t>(opts.center_sweep);
         ++k) {
        const double off = 0.05 * k * r_max;
        centers.push_back(full->sector.center() + off);
        centers.push_back(full->sector.center() - off);
    }

    double best_residual = -std::numeric_limits<double>::infinity();
    std::optional<DesignResult> best;

    for (double center : centers) {
        auto candidate = [&](double r) {
            return evaluate_design_candidate(
                plant, ConicSector(center - r, center + r), traj_class, inputs,
                opts);
        };
        std::vector<std::pair<double, double>> trace;

        auto top = candidate(r_max);
        if (!top) continue;
        trace.push_back({r_max, top->residual});
        best_residual = std::max(best_residual, top->residual);
        if (top->residual < 0.0) continue;

        auto bottom = candidate(r_lo);
        double lo = r_lo, hi = r_max;
        DesignResult chosen = *top;
        if (bottom && bottom->residual >= 0.0) {
            chosen = *bottom;
            trace.push_back({r_lo, bottom->residual});
        } else {
            if (bottom) trace.push_back({r_lo, bottom->residual});
            while (hi - lo > r_tol) {
                const double mid = 0.5 * (lo + hi);
                auto c = candidate(mid);
                const double resid =
                    c ? c->residual : -std::numeric_limits<double>::infinity();
                trace.push_back({mid, resid});
                if (c && resid >= 0.0) {
                    hi = mid;
                    chosen = *c;
                } else {
                    lo = mid;
                }
            }
        }

        // monotonicity audit of the premise residual(r) nondecreasing
        auto sorted = trace;
        std::sort(sorted.begin(), sorted.end());
        bool monotone = true;
        for (std::size_t i = 1; i < sorted.size(); ++i) {
            if (sorted[i].second < sorted[i - 1].second - 1e-9) {
                monotone = false;
            }
        }
        if (!monotone) {
            // dense sweep fallback: smallest radius with residual >= 0
            const int pts = 50;
            for (int i = 0; i < pts; ++i) {
                const double r = r_lo + (r_max - r_lo) * i / (pts - 1);
                auto c = candidate(r);
                const double resid =
                    c ? c->residual : -std::numeric_limits<double>::infinity();
                trace.push_back({r, resid});
                if (c && resid >= 0.0) {
                    chosen = *c;
                    break;
                }
            }
            chosen.used_sweep_fallback = true;
        }
        chosen.monotone = monotone;
        chosen.bisection_trace = trace;
        if (!best || chosen.radius < best->radius) best = chosen;
        if (best) break;  // the primary center succeeded
    }

    if (!best) {
        throw DesignInfeasibleError(
            "design_nominal_cone: no radius reaches a nonnegative residual",
            best_residual);
    }
    return *best;
}

DesignResult design_worst_case_baseline(
    const LpvSystem& plant, const std::vector<ParameterTrajectory>& traj_class,
    const InputClass& inputs, const ParameterBounds& bounds,
    const DesignOptions& opts) {
    ConicBoundsOptions bopts;
    bopts.feas_tol = opts.index.feas_tol;
    const auto full = find_conic_bounds(plant, Box::of(bounds), bounds,
                                        opts.grid, bopts);
    if (!full) {
        throw DesignInfeasibleError(
            "design_worst_case_baseline: the plant is not conic over the "
            "full parameter range",
            -1e300);
    }
    return require_candidate(plant, full->sector, traj_class, inputs, opts);
}

// ---------------------------------------------------------------------------
// serialization

std::string DesignResult::to_json() const {
    json j;
    j["plant_sector"] = {{"a", plant_sector.a}, {"b", plant_sector.b}};
    j["controller_sector"] = {{"a", controller_sector.a},
                              {"b", controller_sector.b}};
    j["center"] = center;
    j["radius"] = radius;
    j["eps_integral"] = eps_integral;
    j["alpha_integral"] = alpha_integral;
    j["residual"] = residual;
    j["horizon"] = horizon;
    j["conditions"] = {{"condition1", conditions.condition1},
                       {"condition2", conditions.condition2},
                       {"stable", conditions.stable}};
    j["gain"] = {{"beta", gain.beta},
                 {"zeta", gain.zeta},
                 {"lambda_r", gain.lambda_r},
                 {"gamma", gain.gamma},
                 {"degenerate", gain.degenerate}};
    json trace = json::array();
    for (const auto& [r, resid] : bisection_trace) {
        trace.push_back({{"radius", r}, {"residual", resid}});
    }
    j["bisection_trace"] = trace;
    j["monotone"] = monotone;
    j["used_sweep_fallback"] = used_sweep_fallback;
    j["delta"] = delta;
    j["pole_rate"] = pole_rate;
    return j.dump(2);
}

DesignResult DesignResult::from_json(const std::string& text) {
    const json j = json::parse(text);
    DesignResult r;
    r.plant_sector = ConicSector(j.at("plant_sector").at("a").get<double>(),
                                 j.at("plant_sector").at("b").get<double>());
    r.controller_sector =
        ConicSector(j.at("controller_sector").at("a").get<double>(),
                    j.at("controller_sector").at("b").get<double>());
    r.center = j.at("center").get<double>();
    r.radius = j.at("radius").get<double>();
    r.eps_integral = j.at("eps_integral").get<double>();
    r.alpha_integral = j.at("alpha_integral").get<double>();
    r.residual = j.at("residual").get<double>();
    r.horizon = j.at("horizon").get<double>();
    r.conditions.condition1 = j.at("conditions").at("condition1").get<double>();
    r.conditions.condition2 = j.at("conditions").at("condition2").get<double>();
    r.conditions.stable = j.at("conditions").at("stable").get<bool>();
    r.gain.beta = j.at("gain").at("beta").get<double>();
    r.gain.zeta = j.at("gain").at("zeta").get<double>();
    r.gain.lambda_r = j.at("gain").at("lambda_r").get<double>();
    r.gain.gamma = j.at("gain").at("gamma").get<double>();
    r.gain.degenerate = j.at("gain").at("degenerate").get<bool>();
    for (const auto& e : j.at("bisection_trace")) {
        r.bisection_trace.push_back(
            {e.at("radius").get<double>(), e.at("residual").get<double>()});
    }
    r.monotone = j.at("monotone").get<bool>();
    r.used_sweep_fallback = j.at("used_sweep_fallback").get<bool>();
    r.delta = j.at("delta").get<double>();
    r.pole_rate = j.at("pole_rate").get<double>();
    return r;
}

}  // namespace coniclpv
