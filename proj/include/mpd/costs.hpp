#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mpd/geometry.hpp"
#include "mpd/trajectory.hpp"

namespace mpd {

/// Scalar value with its gradient w.r.t. the argument.
struct CostValue {
    double value = 0.0;
    Eigen::VectorXd grad;
};

struct TrajectoryCost {
    double value = 0.0;
    Eigen::MatrixXd grad;  // H x d
};

// Default hinge margins.
inline constexpr double kDefaultObstacleMargin = 0.03;
inline constexpr double kDefaultLimitMargin = 0.01;
inline constexpr double kDefaultSelfCollisionMargin = 0.02;

// ---- waypoint costs ------------------------------------------------------

/// Mean over collision spheres of the hinge max(0, eps - (sdf(x_k) - r_k)).
CostValue collision_cost(const Environment& env, const RobotModel& robot, const Eigen::VectorXd& q,
                         double margin = kDefaultObstacleMargin);

/// Mean over sphere pairs on non-adjacent links of
/// max(0, eps - (|x_i - x_j| - r_i - r_j)). Zero for robots with < 3 links.
CostValue self_collision_cost(const RobotModel& robot, const Eigen::VectorXd& q,
                              double margin = kDefaultSelfCollisionMargin);

/// Squared hinge on position and velocity limits; gradient is w.r.t. the
/// full state [q, qdot].
CostValue joint_limits_cost(const RobotModel& robot, const Eigen::VectorXd& q,
                            const Eigen::VectorXd& qdot, double margin = kDefaultLimitMargin);

// ---- Lie group helpers ---------------------------------------------------

/// Axis-angle vector of R (|result| = rotation angle in [0, pi]).
Eigen::Vector3d so3_log_map(const Eigen::Matrix3d& R);
/// Rodrigues' formula.
Eigen::Matrix3d so3_exp_map(const Eigen::Vector3d& w);

/// |p1 - p2|^2 + |Log(R1^T R2)|
double se3_distance(const Pose3& a, const Pose3& b);

/// Sum over waypoints of the orientation-only SE(3) distance to R_goal (the
/// goal position is copied from the current end-effector position).
TrajectoryCost ee_trajectory_cost(const RobotModel& robot, const Trajectory& traj,
                                  const Eigen::Matrix3d& goal_orientation);

// ---- weighted suite ------------------------------------------------------

enum class CostKind { Collision, SelfCollision, JointLimits, EePose, GpSmoothness };

struct CostTerm {
    CostKind kind = CostKind::Collision;
    double lambda = 1.0;
    double margin = 0.0;
    Eigen::Matrix3d goal_orientation = Eigen::Matrix3d::Identity();  // EePose only

    static CostTerm collision(double lambda, double margin = kDefaultObstacleMargin);
    static CostTerm self_collision(double lambda, double margin = kDefaultSelfCollisionMargin);
    static CostTerm joint_limits(double lambda, double margin = kDefaultLimitMargin);
    static CostTerm ee_pose(double lambda, const Eigen::Matrix3d& goal_orientation);
    static CostTerm gp(double lambda);
};

class CostSuite {
public:
    CostSuite(Environment env, RobotModel robot, GpParams gp, std::vector<CostTerm> terms = {});

    const Environment& env() const { return env_; }
    const RobotModel& robot() const { return robot_; }
    const GpParams& gp() const { return gp_; }
    const std::vector<CostTerm>& terms() const { return terms_; }

    /// Adds or replaces the term of the same kind.
    void set_term(const CostTerm& term);
    void remove_term(CostKind kind);
    const CostTerm* find(CostKind kind) const;
    /// Copy with every temperature multiplied by `factor`.
    CostSuite scaled(double factor) const;

private:
    Environment env_;
    RobotModel robot_;
    GpParams gp_;
    std::vector<CostTerm> terms_;
};

struct SuiteEvaluation {
    double cost = 0.0;                 // sum_i lambda_i c_i(tau)
    Eigen::MatrixXd guidance;          // g = -sum_i lambda_i grad c_i, endpoint rows zero
};

SuiteEvaluation total_cost_and_grad(const CostSuite& suite, const Trajectory& traj);
double total_cost(const CostSuite& suite, const Trajectory& traj);

/// Cost suite terms from JSON: {"collision": {"lambda":..,"margin":..}, "gp": {...}, ...}.
std::vector<CostTerm> cost_terms_from_json(const nlohmann::json& j);

}  // namespace mpd
