#pragma once

// Conic sector bounds, conicity indices, trajectory partitioning into
// conic/nonconic regions, and the average-conicity tests.

#include <optional>
#include <string>
#include <vector>

#include "coniclpv/lpv.hpp"
#include "coniclpv/sdp.hpp"

namespace coniclpv {

/// Sector [a, b] with a < b. Supply-rate and LMI computations additionally
/// require b > 0 (the kernel divides by b).
struct ConicSector {
    double a = 0.0, b = 1.0;
    ConicSector() = default;
    ConicSector(double a_, double b_);
    double center() const { return 0.5 * (a + b); }
    double radius() const { return 0.5 * (b - a); }
};

/// Supply kernel blocks for s(z, w) = z'Qz + 2 z'S w + w'R w; S may be
/// non-symmetric for interconnection kernels.
struct QsrKernel {
    Mat Q, S, R;
    int z_dim() const { return static_cast<int>(Q.rows()); }
    int w_dim() const { return static_cast<int>(R.rows()); }
};

/// Single-system kernel: Q = -(1/b) I, S = (1/2)(1 + a/b) I, R = -a I.
QsrKernel sector_kernel(const ConicSector& sector, int m);

/// 2m x 2m symmetric kernel acting on the stacked vector [y; u].
Mat supply_rate_kernel(const ConicSector& sector, int m);

/// w(u, y) = [y; u]' K [y; u].
double supply_rate(const ConicSector& sector, const Vec& u, const Vec& y);

/// Sampled input/output path on a strictly increasing time grid; u and y are
/// m x K with one column per sample.
struct IoTrace {
    std::vector<double> t;
    Mat u, y;
};

/// Trapezoid quadrature of the supply rate over [t1, t2]; window endpoints
/// between samples are handled by linear interpolation of (u, y).
double iqc_integral(const ConicSector& sector, const IoTrace& trace, double t1,
                    double t2);

/// Dissipation LMI block matrix for supply s(y, u) with y = Cx + Du:
///   [ A'P + PA + dP - C'QC      PB - C'QD - C'S           ]
///   [ (sym)                    -D'QD - D'S - S'D - R      ]
/// Negative semidefiniteness certifies d/dt x'Px <= s(y, u).
Mat dissipation_lmi(const StateSpace& ss, const QsrKernel& k, const Mat& P,
                    const Mat& dP);

/// Conic-bounds LMI in the linearizing variables q1 = (a+b)/2, q2 = ab
/// (the b-scaled dissipation form):
///   [ A'P + PA + dP + C'C       PB - q1 C' + C'D          ]
///   [ (sym)                     D'D - q1 (D + D') + q2 I  ]
Mat conic_bounds_lmi(const StateSpace& ss, const Mat& P, const Mat& dP,
                     double q1, double q2);

struct ConicBoundsOptions {
    double radius_cap = 1e3;
    double radius_floor = 1e-6;  // eps_r
    double radius_tol = 1e-4;    // bisection bracket width
    double feas_tol = 1e-7;
    double eps_pd = 1e-6;
    int dense_check_factor = 4;  // post-hoc verification sweep refinement
};

/// Storage basis certified with a gridded solve plus its residuals.
struct GriddedStorage {
    std::vector<Mat> basis;  // P0 (+ Pi per parameter when rate-bounded)
    double node_residual = 0.0;
    double dense_residual = 0.0;  // post-hoc sweep between grid nodes
};

struct ConicBoundsResult {
    ConicSector sector;
    double q1 = 0.0, q2 = 0.0;
    GriddedStorage storage;
    std::vector<double> bisection_radii;
};

/// Minimal-radius sector certified over a parameter sub-box by radius
/// bisection around gridded feasibility solves. Returns nullopt (NotConic)
/// when even the radius cap is infeasible.
std::optional<ConicBoundsResult> find_conic_bounds(
    const LpvSystem& sys, const Box& region, const ParameterBounds& bounds,
    const GridSpec& grid, const ConicBoundsOptions& opts = {});

/// Gridded feasibility of a fixed sector over a sub-box.
bool sector_feasible(const LpvSystem& sys, const ConicSector& sector,
                     const Box& region, const ParameterBounds& bounds,
                     const GridSpec& grid, double feas_tol = 1e-7);

/// Frozen-parameter feasibility of a fixed sector (single rho, constant P).
bool frozen_sector_feasible(const LpvSystem& sys, const ConicSector& sector,
                            const Vec& rho, double feas_tol = 1e-7);

/// Scalar field on a tensor grid over a box, multilinear between nodes and
/// clamped at the region edges.
struct TensorField {
    Box region;
    std::vector<std::vector<double>> axes;  // per-axis node coordinates
    std::vector<double> values;             // row-major, last axis fastest
    double at(const Vec& rho) const;
};

struct IndexTable {
    TensorField field;
    std::vector<Mat> storage;  // per-node storage matrix
    double max_residual = 0.0;
    double at(const Vec& rho) const { return field.at(rho); }
    const Box& region() const { return field.region; }
    std::size_t node_count() const { return field.values.size(); }
};

struct IndexOptions {
    double feas_tol = 1e-7;
    double eps_pd = 1e-6;
    double bisect_tol = 1e-6;
    double eps_floor = -1e6;   // epsilon bracket floor / misclassification probe
    double alpha_cap = 1e9;    // alpha bracket ceiling
    double lyap_margin = 1e-8; // strictness of A'P + PA < 0
};

using SystemEval = std::function<StateSpace(const Vec&)>;

/// Feasibility of the dissipation LMI with a fixed uniform shift eps (the
/// classification probe at eps = 0). eps_pd > 0 demands P strictly positive;
/// eps_pd = 0 allows P >= 0. The Lyapunov side condition A'P + PA < 0 is
/// optional.
bool dissipation_feasible(const StateSpace& ss, const QsrKernel& k, double eps,
                          const IndexOptions& opts, bool lyapunov_side,
                          double eps_pd, Mat* storage = nullptr);

struct NodeIndex {
    enum class Status { Ok, Misclassified, Unbounded };
    Status status = Status::Ok;
    double value = 0.0;
    Mat storage;
    double residual = 0.0;
};

/// Maximal eps by bisection over dissipation_feasible.
NodeIndex eps_index_at(const StateSpace& ss, const QsrKernel& k,
                       const IndexOptions& opts, bool lyapunov_side,
                       double eps_pd);

/// Minimal alpha > 0 making the input-relaxed LMI feasible with P >= 0.
NodeIndex alpha_index_at(const StateSpace& ss, const QsrKernel& k,
                         const IndexOptions& opts);

/// Per-node tables over a tensor grid on the region, for an arbitrary frozen
/// evaluator and supply kernel. Throw RegionClassError on misclassified or
/// unbounded nodes.
IndexTable eps_index_table(const SystemEval& eval, const QsrKernel& k,
                           const Box& region, const GridSpec& grid,
                           const IndexOptions& opts, bool lyapunov_side,
                           double eps_pd);
IndexTable alpha_index_table(const SystemEval& eval, const QsrKernel& k,
                             const Box& region, const GridSpec& grid,
                             const IndexOptions& opts);

/// Per-node maximal epsilon of the conic-index LMI (with the strict Lyapunov
/// side condition), bisection over feasibility solves. Throws
/// RegionClassError when a node is infeasible even at the bracket floor.
IndexTable conicity_index_eps(const LpvSystem& sys, const ConicSector& sector,
                              const Box& region, const GridSpec& grid,
                              const IndexOptions& opts = {});

/// Per-node minimal alpha > 0 of the nonconic-index LMI. Throws
/// RegionClassError when a node is feasible already at alpha = 0 (the node is
/// conic and the caller should re-partition).
IndexTable nonconicity_index_alpha(const LpvSystem& sys,
                                   const ConicSector& sector, const Box& region,
                                   const GridSpec& grid,
                                   const IndexOptions& opts = {});

struct RegionPartition {
    struct Interval {
        double t0 = 0.0, t1 = 0.0;
        bool conic = false;
    };
    std::vector<Interval> intervals;
    double t_c = 0.0, t_nc = 0.0;
};

struct PartitionOptions {
    int samples = 200;
    double time_tol = 1e-6;
    double feas_tol = 1e-7;
};

/// Conic/nonconic labeling of a trajectory by frozen-parameter feasibility of
/// the fixed sector, sampled densely and with interval boundaries located by
/// bisection in time.
RegionPartition partition_trajectory(const LpvSystem& sys,
                                     const ConicSector& sector,
                                     const ParameterTrajectory& traj,
                                     const PartitionOptions& opts = {});

/// Same labeling but against precomputed region boxes instead of LMI solves;
/// used wherever a certificate's regions define the geometry.
RegionPartition partition_by_regions(const std::vector<Box>& conic_regions,
                                     const std::vector<Box>& nonconic_regions,
                                     const ParameterTrajectory& traj,
                                     double time_tol = 1e-6);

struct AverageVerdict {
    bool holds = false;
    double margin = 0.0;
};

/// Discrete average-conicity test: margin = sum_i c_i mu_i with duration
/// fractions mu. The caller supplies c_i = eps_i on conic segments and
/// c_i = -alpha_i * u_bar^2 on nonconic segments.
AverageVerdict average_conicity_discrete(const std::vector<double>& c,
                                         const std::vector<double>& mu);

/// Index certificate over disjoint conic/nonconic parameter regions.
struct ConicityCertificate {
    ConicSector sector;
    std::vector<IndexTable> eps_tables;
    std::vector<IndexTable> alpha_tables;
    std::optional<ConicBoundsResult> bounds;
    double feas_tol = 1e-7;

    double eps_at(const Vec& rho) const;
    double alpha_at(const Vec& rho) const;
    bool in_conic_region(const Vec& rho, double slack = 0.0) const;
    bool in_nonconic_region(const Vec& rho, double slack = 0.0) const;
    std::vector<Box> conic_regions() const;
    std::vector<Box> nonconic_regions() const;

    std::string to_json() const;
    static ConicityCertificate from_json(const std::string& text);
};

/// Computes eps/alpha tables for the given disjoint regions.
ConicityCertificate build_certificate(const LpvSystem& sys,
                                      const ConicSector& sector,
                                      const std::vector<Box>& conic_regions,
                                      const std::vector<Box>& nonconic_regions,
                                      const GridSpec& grid,
                                      const IndexOptions& opts = {});

struct AverageOptions {
    int samples_per_interval = 1000;
    bool conservative_ubar = false;  // substitute u_bar_high^2
    double coverage_slack_cells = 1.0;
};

/// Continuous average-conicity margin: integral of eps over conic intervals
/// minus u_bar^2 times the integral of alpha over nonconic ones. Throws
/// CoverageError when the trajectory visits parameters no table covers.
AverageVerdict average_conicity_continuous(const ConicityCertificate& cert,
                                           const RegionPartition& partition,
                                           const ParameterTrajectory& traj,
                                           const InputClass& inputs,
                                           const AverageOptions& opts = {});

/// |discrete Riemann-sum margin - continuous margin| for each mesh norm in
/// the sequence. Mesh refinement must not increase the error.
std::vector<double> riemann_convergence_check(const ConicityCertificate& cert,
                                              const ParameterTrajectory& traj,
                                              const InputClass& inputs,
                                              const std::vector<double>& meshes,
                                              const AverageOptions& opts = {});

}  // namespace coniclpv
