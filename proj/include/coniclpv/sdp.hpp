#pragma once

// Linear matrix inequality subproblems: decision variables are scalars and
// symmetric matrix blocks, constraints are affine symmetric-matrix-valued
// maps required negative semidefinite, plus an optional linear objective.
// A log-barrier interior-point method sits behind the solve() contract; every
// Feasible/Optimal answer is re-verified by eigenvalue residuals before it is
// returned.

#include <functional>
#include <string>
#include <vector>

#include "coniclpv/lpv.hpp"
#include "coniclpv/numerics.hpp"

namespace coniclpv {

enum class SdpStatus { Optimal, Feasible, Infeasible, NumericalFailure };

const char* to_string(SdpStatus s);

class SdpProblem {
  public:
    /// Affine map from the stacked decision vector to a symmetric matrix.
    using AffineFn = std::function<Mat(const Vec& x)>;

    /// Returns the handle (index into the decision layout).
    int add_scalar(const std::string& name = {});
    int add_symmetric(int dim, const std::string& name = {});

    /// The matrix produced by fn(x) must be symmetric for every x and is
    /// required negative semidefinite. Affinity is verified at solve time on
    /// random decision samples.
    void add_constraint(int size, AffineFn fn, const std::string& name = {});

    /// Linear objective sum_k c_k x_k to minimize (optional).
    void set_objective(const Vec& c);
    bool has_objective() const { return objective_.size() > 0; }

    int decision_count() const { return total_dim_; }
    int constraint_count() const { return static_cast<int>(constraints_.size()); }

    double scalar_value(int handle, const Vec& x) const;
    Mat block_value(int handle, const Vec& x) const;

    /// Evaluates constraint j at x (through the stored callback).
    Mat constraint_value(int j, const Vec& x) const;
    int constraint_size(int j) const { return constraints_[static_cast<std::size_t>(j)].size; }
    const std::string& constraint_name(int j) const {
        return constraints_[static_cast<std::size_t>(j)].name;
    }

  private:
    friend struct SdpBackend;
    struct VarBlock {
        bool scalar = true;
        int dim = 1;     // matrix dim for symmetric blocks
        int offset = 0;  // position in the stacked decision vector
        int count = 1;   // scalars occupied
        std::string name;
    };
    struct Constraint {
        int size = 0;
        AffineFn fn;
        std::string name;
    };
    std::vector<VarBlock> blocks_;
    std::vector<Constraint> constraints_;
    Vec objective_;
    int total_dim_ = 0;
};

struct SdpSolution {
    SdpStatus status = SdpStatus::NumericalFailure;
    Vec x;
    double objective = 0.0;
    /// Max eigenvalue of each constraint at x (unscaled).
    std::vector<double> residuals;
    double max_residual = 0.0;
    int newton_iterations = 0;
};

struct SolveOptions {
    double feas_tol = 1e-7;
    double obj_gap = 1e-8;
    int max_inner = 120;
    double kappa_max = 1e13;
    /// Barrier box |x_k| <= decision_cap; keeps the phase-1 barrier bounded
    /// on unbounded feasibility cones.
    double decision_cap = 1e8;
    std::string label;  // audit tag
};

SdpSolution solve(const SdpProblem& problem, const SolveOptions& opts = {});
SdpSolution solve(const SdpProblem& problem, double feas_tol);

inline bool is_feasible(const SdpSolution& s) {
    return s.status == SdpStatus::Feasible || s.status == SdpStatus::Optimal;
}

/// Global audit of solver verdicts, switched on by verification suites. Every
/// Feasible/Optimal solve records its re-verified residual here.
namespace sdp_audit {
struct Record {
    std::string label;
    double max_residual;
    double feas_tol;
};
void enable(bool on);
bool enabled();
void clear();
std::vector<Record> records();
double worst_residual_ratio();  // max over records of residual / feas_tol
}  // namespace sdp_audit

/// Mesh used to grid the parameter box and rate box.
struct GridSpec {
    int param_points = 5;
    int rate_points = 3;
};

/// Tensor grid over a box: param_points per axis, box vertices included.
std::vector<Vec> grid_nodes(const Box& box, int points_per_axis);

/// Builds the gridded problem for LMIs that share an affine storage basis
/// P(rho) = P0 + sum_i rho_i Pi over a parameter sub-box. In the
/// rate-unbounded case the basis collapses to the constant block P0 and the
/// rate grid to {0}. P(rho) - eps_pd*I >= 0 is enforced at every rho node.
class GriddedLmiBuilder {
  public:
    GriddedLmiBuilder(const ParameterBounds& bounds, const Box& region,
                      const GridSpec& grid, int storage_dim,
                      double eps_pd = 1e-6);

    int add_scalar(const std::string& name = {});

    /// Storage evaluated from the decision vector.
    Mat P_at(const Vec& x, const Vec& rho) const;
    /// sum_i rhodot_i * Pi (zero in the rate-unbounded case).
    Mat P_rate_term(const Vec& x, const Vec& rhodot) const;
    std::vector<Mat> basis_values(const Vec& x) const;

    const std::vector<Vec>& rho_nodes() const { return rho_nodes_; }
    const std::vector<Vec>& rate_nodes() const { return rate_nodes_; }

    /// One constraint per (rho, rhodot) node pair. node_fn must return the
    /// affine map of the full decision vector for that node.
    void add_node_constraints(
        int size,
        const std::function<SdpProblem::AffineFn(const Vec& rho,
                                                 const Vec& rhodot)>& node_fn,
        const std::string& name = {});

    SdpProblem& problem() { return problem_; }
    const SdpProblem& problem() const { return problem_; }
    int storage_dim() const { return storage_dim_; }
    bool rate_unbounded() const { return rate_unbounded_; }

  private:
    SdpProblem problem_;
    std::vector<int> p_blocks_;
    std::vector<Vec> rho_nodes_;
    std::vector<Vec> rate_nodes_;
    int storage_dim_ = 0;
    int param_dim_ = 0;
    bool rate_unbounded_ = false;
};

}  // namespace coniclpv
