#pragma once

// Nominal-cone design: closed-loop assembly under the negative feedback
// interconnection, closed-loop conicity indices, a center-plus-radius conic
// controller realization, and the radius bisection that balances the
// conic surplus against the nonconic deficit along a trajectory class.

#include <string>
#include <utility>

#include "coniclpv/stability.hpp"

namespace coniclpv {

/// Negative feedback loop of plant G1 (input e_p = u_p - y_c) and controller
/// G2 (input e_c = u_c + y_p), exogenous U = [u_c; u_p], outputs
/// Y = [y_c; y_p], stacked state [x_p; x_c]. The controller is
/// parameter-independent; the loop is scheduled on the plant parameter.
struct ClosedLoopSystem {
    LpvSystem plant;
    LpvSystem controller;
    int n_p = 0, n_c = 0, m = 0;

    int state_dim() const { return n_p + n_c; }
    int io_dim() const { return 2 * m; }
    const Box& box() const { return plant.box(); }

    /// Closed-loop quadruple at a frozen plant parameter.
    StateSpace eval(const Vec& rho) const;
};

/// Checks well-posedness (condition number of I + D_c D_p at grid nodes) and
/// returns the loop. Throws WellPosednessError when the algebraic loop is
/// near-singular.
ClosedLoopSystem assemble_closed_loop(const LpvSystem& plant,
                                      const LpvSystem& controller,
                                      int check_points_per_axis = 5,
                                      double max_condition = 1e6);

/// First-order center-plus-radius realization of a sector: y = c_c u + r_c
/// G(u) with G a diagonal unit-gain low-pass of pole rate pole_rate. The
/// frozen frequency response lies in the disk of the sector.
LpvSystem realize_conic_controller(const ConicSector& sector, int m,
                                   double pole_rate);

struct ClosedLoopIndices {
    std::vector<IndexTable> eps_tables;
    std::vector<IndexTable> alpha_tables;
    std::vector<Box> conic_regions;
    std::vector<Box> nonconic_regions;
};

/// Per-node closed-loop indices against the interconnection supply: eps_cl
/// maximized where the loop is conic, alpha_cl minimized elsewhere, regions
/// split by frozen feasibility at eps = 0 (scalar parameter or parameter-free
/// plants). Throws RegionClassError naming the node when both LMIs are
/// infeasible.
ClosedLoopIndices closed_loop_indices(const ClosedLoopSystem& cl,
                                      const QsrBlocks& qsr,
                                      const GridSpec& grid,
                                      const IndexOptions& opts = {});

enum class UbarFactor { None, Low, High };

struct DesignOptions {
    double delta = 0.35;
    double pole_rate = 10.0;
    double equality_tol = 1e-3;  // on |residual| relative to the horizon
    double radius_rel_tol = 1.0 / 256.0;
    double radius_floor_frac = 0.02;  // fraction of the full-range radius
    int center_sweep = 5;             // fallback centers when needed
    UbarFactor ubar_factor = UbarFactor::None;  // Eq. 20 is verbatim
    GridSpec grid;
    IndexOptions index;
    int region_samples = 64;
    double region_tol = 1e-4;  // rho resolution of the region split
};

struct DesignResult {
    ConicSector plant_sector{0.0, 1.0};
    ConicSector controller_sector{0.0, 1.0};
    double center = 0.0, radius = 0.0;
    double eps_integral = 0.0, alpha_integral = 0.0, residual = 0.0;
    double horizon = 0.0;
    SectorConditions conditions;
    GainEstimate gain;
    std::vector<std::pair<double, double>> bisection_trace;  // (radius, residual)
    bool monotone = true;
    bool used_sweep_fallback = false;
    double delta = 0.0, pole_rate = 0.0;

    std::string to_json() const;
    static DesignResult from_json(const std::string& text);
};

/// Residual of Eq.-20-style balance for one candidate plant sector: the
/// controller is the delta-shrunk complementary cone, realized and closed
/// around the plant; returns integral(eps_cl) - factor * integral(alpha_cl)
/// accumulated over the trajectory class. Returns nullopt for candidates that
/// cannot be realized (inverted complementary cone, ill-posed loop).
std::optional<DesignResult> evaluate_design_candidate(
    const LpvSystem& plant, const ConicSector& plant_sector,
    const std::vector<ParameterTrajectory>& traj_class,
    const InputClass& inputs, const DesignOptions& opts);

/// Radius bisection over evaluate_design_candidate with the center fixed at
/// the full-range tight cone's center (small center sweep as fallback).
/// Throws DesignInfeasibleError (carrying the best residual) when no
/// candidate reaches a nonnegative residual.
DesignResult design_nominal_cone(const LpvSystem& plant,
                                 const std::vector<ParameterTrajectory>& traj_class,
                                 const InputClass& inputs,
                                 const ParameterBounds& bounds,
                                 const DesignOptions& opts = {});

/// Worst-case-cone baseline: the full-range tight cone taken as the design.
DesignResult design_worst_case_baseline(
    const LpvSystem& plant, const std::vector<ParameterTrajectory>& traj_class,
    const InputClass& inputs, const ParameterBounds& bounds,
    const DesignOptions& opts = {});

}  // namespace coniclpv
