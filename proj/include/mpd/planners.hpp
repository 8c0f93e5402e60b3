#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mpd/costs.hpp"
#include "mpd/geometry.hpp"
#include "mpd/random.hpp"
#include "mpd/trajectory.hpp"

namespace mpd {

using Path = std::vector<Eigen::VectorXd>;

// ---------------------------------------------------------------------------
// RRT-Connect
// ---------------------------------------------------------------------------

struct RrtParams {
    double step_size = 0.1;
    double goal_bias = 0.05;
    int max_iterations = 5000;
    /// Spacing of collision checks along every edge (config-space units).
    double check_resolution = 0.01;
    /// Clearance required beyond the sphere radii.
    double margin = 0.0;

    void validate() const;
};

RrtParams rrt_params_from_json(const nlohmann::json& j);

struct RrtResult {
    bool success = false;
    Path path;
    int iterations = 0;
    std::string reason;
};

/// True if the straight segment a -> b is free at `resolution` spacing (both
/// ends included).
bool edge_is_free(const Environment& env, const RobotModel& robot, const Eigen::VectorXd& a,
                  const Eigen::VectorXd& b, double resolution, double margin = 0.0);

/// Bidirectional RRT. The direct start-goal edge is tried before growing
/// the trees, so unobstructed queries return the two-waypoint path.
RrtResult rrt_connect(const Environment& env, const RobotModel& robot, const Eigen::VectorXd& q_start,
                      const Eigen::VectorXd& q_goal, const RrtParams& params, Rng& rng);

/// Greedy shortcutting: from each kept waypoint jump to the farthest later
/// waypoint reachable by a free edge.
Path shortcut_path(const Environment& env, const RobotModel& robot, const Path& path,
                   double resolution, double margin = 0.0);

/// Inserts evenly spaced points so no segment is longer than `spacing`.
Path densify_path(const Path& path, double spacing);

// ---------------------------------------------------------------------------
// Spline smoothing
// ---------------------------------------------------------------------------

/// Interpolating cubic spline with zero end slopes (clamped), vector valued,
/// parametrized by normalized chord length u in [0, 1].
class CubicSpline {
public:
    explicit CubicSpline(const Path& points);

    const Eigen::VectorXd& knots() const { return knots_; }
    Eigen::VectorXd value(double u) const;
    Eigen::VectorXd derivative(double u) const;  // d/du

private:
    Eigen::VectorXd knots_;
    Eigen::MatrixXd y_;  // one row per knot
    Eigen::MatrixXd m_;  // second derivatives at the knots

    Eigen::Index segment(double u) const;
};

/// Samples the clamped spline through `path` at H evenly spaced parameters.
/// Velocities are d/du divided by the duration (H - 1) dt. Endpoint rows
/// equal the path ends with zero velocity.
Trajectory bspline_smooth(const Path& path, Eigen::Index horizon, double dt);

// ---------------------------------------------------------------------------
// GPMP
// ---------------------------------------------------------------------------

struct GpmpParams {
    int iterations = 100;
    /// Initial step along the preconditioned direction.
    double step_size = 1.0;
    /// Stop when one iteration decreases the cost by less than this.
    double tolerance = 1e-6;
    /// Stop when the largest interior gradient entry falls below this.
    double grad_tolerance = 1e-9;
    double backtrack_factor = 0.5;
    int max_backtracks = 30;
    /// Armijo sufficient-decrease constant.
    double armijo = 1e-4;
    /// Diagonal added to the GP Hessian before factorization, relative to its mean diagonal.
    double damping = 1e-6;

    void validate() const;
};

GpmpParams gpmp_params_from_json(const nlohmann::json& j);

struct GpmpResult {
    Trajectory trajectory;
    /// Cost of the initialization followed by the cost after each accepted iteration.
    std::vector<double> cost_trace;
    int iterations = 0;
    bool converged = false;
};

/// Preconditioned descent with the GP interior Hessian, Armijo backtracking
/// and fixed endpoint rows. Reusable across initializations of equal shape.
class GpmpOptimizer {
public:
    GpmpOptimizer(const CostSuite& suite, Eigen::Index horizon, GpmpParams params);

    /// Throws PlanningFailure when a non-finite cost shows up.
    GpmpResult optimize(const Trajectory& init) const;

private:
    const CostSuite* suite_;
    Eigen::Index horizon_;
    GpmpParams params_;
    Eigen::LDLT<Eigen::MatrixXd> precond_;
};

GpmpResult gpmp_optimize(const Trajectory& init, const CostSuite& suite, const GpmpParams& params);

struct GpmpOutcome {
    std::optional<GpmpResult> result;
    std::string error;  // set when `result` is empty
};

/// Runs gpmp_optimize on each sample independently; a failing sample is
/// reported in its slot and does not stop the batch.
std::vector<GpmpOutcome> primed_gpmp(const std::vector<Trajectory>& priors, const CostSuite& suite,
                                     const GpmpParams& params);

}  // namespace mpd
