#pragma once

// Sector geometry of the negative feedback interconnection: complementary
// cones, the two scalar stability conditions, the interconnection QSR blocks,
// and the closed-loop L2 gain estimate.

#include "coniclpv/conic.hpp"

namespace coniclpv {

struct SectorPair {
    ConicSector plant;       // [a_p, b_p]
    ConicSector controller;  // [a_c, b_c]
};

/// Controller sector complementary to the plant sector, shrunk by delta:
/// [-1/b_p + delta, -1/a_p - delta].
ConicSector complementary_cone(const ConicSector& plant, double delta);

struct SectorConditions {
    double condition1 = 0.0;  // 1/b_c + a_p
    double condition2 = 0.0;  // see below
    bool stable = false;      // both strictly positive
};

/// condition1 = 1/b_c + a_p,
/// condition2 = (1/b_c + a_p)(1/b_p + a_c) - (1/4)(a_c/b_c - a_p/b_p)^2.
SectorConditions check_sector_conditions(const SectorPair& pair);

/// 2m x 2m interconnection blocks for the quadratic form on [Y; U] with
/// Y = [y_c; y_p], exogenous U = [u_c; u_p], and internal inputs
/// e_c = u_c + y_p, e_p = u_p - y_c:
///   Q = [ (-1/b_c - a_p) I          (1/2)(a_c/b_c - a_p/b_p) I ]
///       [ (sym)                     (-1/b_p - a_c) I           ]
///   S = [ (1/2)(1 + a_c/b_c) I      a_p I                      ]
///       [ -a_c I                    (1/2)(1 + a_p/b_p) I       ]
///   R = diag(-a_c I, -a_p I)
struct QsrBlocks {
    Mat Q, S, R;
    int m = 0;
};

QsrBlocks qsr_matrices(const SectorPair& pair, int m);

/// Supply kernel on (z, w) = (Y, U) built from the blocks, usable in the
/// closed-loop dissipation LMIs.
QsrKernel qsr_kernel(const QsrBlocks& blocks);

struct GainEstimate {
    double beta = 0.0;
    double zeta = 0.0;
    double lambda_r = 0.0;
    double gamma = 0.0;
    /// max(a_c, a_p) <= 0 forces the beta floor; the estimate is then
    /// reported but flagged.
    bool degenerate = false;
};

/// gamma = (beta + lambda_max(R)) / zeta with beta the smallest scalar making
/// beta*I + R positive definite and zeta = lambda_max((1/beta) I + Q).
/// Throws EstimateError when Q is not negative definite or zeta <= 0.
GainEstimate l2_gain_estimate(const SectorPair& pair, int m);

/// Aligned loop signals; one column per sample.
struct LoopSignals {
    std::vector<double> t;
    Mat y_c, y_p, u_c, u_p, e_c, e_p;
};

/// Quadrature of the interconnection quadratic form [Y;U]' [Q S; S' R] [Y;U]
/// after verifying the interconnection relations hold within 1e-9.
double verify_feedback_iqc(const SectorPair& pair, const LoopSignals& sig,
                           double relation_tol = 1e-9);

}  // namespace coniclpv
