#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mpd/random.hpp"

namespace mpd {

using Vec2 = Eigen::Vector2d;

// ---------------------------------------------------------------------------
// Signed distance primitives and environments
// ---------------------------------------------------------------------------

enum class PrimitiveKind { Sphere, Box };

/// Sphere (circle in the plane) or axis-aligned box obstacle.
struct SdfPrimitive {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    Vec2 center = Vec2::Zero();
    double radius = 0.0;             // sphere only
    Vec2 half_extents = Vec2::Zero();  // box only

    static SdfPrimitive sphere(const Vec2& center, double radius);
    static SdfPrimitive box(const Vec2& center, const Vec2& half_extents);

    double distance(const Vec2& x) const;
    Vec2 gradient(const Vec2& x) const;
};

struct Bounds2 {
    Vec2 lo = Vec2::Constant(-1.0);
    Vec2 hi = Vec2::Constant(1.0);

    bool contains(const Vec2& x) const {
        return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
    }
};

/// Immutable set of obstacles. `extra` holds obstacles that were not present
/// when expert data was generated; they take part in every SDF query.
class Environment {
public:
    Environment() = default;
    Environment(std::vector<SdfPrimitive> primitives, Bounds2 bounds,
                std::vector<SdfPrimitive> extra = {});

    const std::vector<SdfPrimitive>& primitives() const { return primitives_; }
    const std::vector<SdfPrimitive>& extra_primitives() const { return extra_; }
    const Bounds2& bounds() const { return bounds_; }
    std::size_t size() const { return primitives_.size() + extra_.size(); }

    /// Copy of this environment with the extra obstacles removed.
    Environment without_extra() const;
    Environment with_extra(std::vector<SdfPrimitive> extra) const;

    /// i-th primitive over the concatenation base ++ extra.
    const SdfPrimitive& primitive(std::size_t i) const;

private:
    std::vector<SdfPrimitive> primitives_;
    Bounds2 bounds_;
    std::vector<SdfPrimitive> extra_;
};

/// Sentinel returned by sdf_eval for an environment with no obstacles.
inline constexpr double kSdfFar = std::numeric_limits<double>::max();

double sdf_eval(const Environment& env, const Vec2& x);
Vec2 sdf_grad(const Environment& env, const Vec2& x);

struct SdfQuery {
    double distance = kSdfFar;
    Vec2 gradient = Vec2::Zero();
    int primitive = -1;  // index of the closest primitive, -1 if none
};
/// Distance and gradient in one pass. Ties resolve to the lowest index.
SdfQuery sdf_query(const Environment& env, const Vec2& x);

/// Random obstacle layout parameters (gen-env).
struct EnvGenConfig {
    Bounds2 bounds;
    Bounds2 placement{Vec2::Constant(-0.8), Vec2::Constant(0.8)};
    int n_spheres = 10;
    int n_boxes = 6;
    double radius_min = 0.08;
    double radius_max = 0.16;
    double half_extent_min = 0.06;
    double half_extent_max = 0.14;
    int n_extra_spheres = 3;
    int n_extra_boxes = 2;
};

Environment random_environment(const EnvGenConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Robots
// ---------------------------------------------------------------------------

enum class RobotKind { PointMass2D, PlanarArm };

struct CollisionSphere {
    int link = 0;
    Vec2 offset = Vec2::Zero();  // in the link frame (x along the link)
    double radius = 0.0;
};

/// Homogeneous rigid transform; planar robots embed into the z = 0 plane.
struct Pose3 {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d position = Eigen::Vector3d::Zero();

    bool is_valid(double tol = 1e-9) const;
};

class RobotModel {
public:
    /// Point robot moving in the plane, q = (x, y).
    static RobotModel point_mass(double radius, const Bounds2& limits, double max_velocity);
    /// Planar serial chain rooted at the origin. With `spheres_per_link` > 0
    /// the default sphere placement is used (evenly spaced, 0.05 L radius).
    static RobotModel planar_arm(std::vector<double> link_lengths, Eigen::VectorXd q_min,
                                 Eigen::VectorXd q_max, Eigen::VectorXd v_max,
                                 int spheres_per_link = 3);

    RobotKind kind() const { return kind_; }
    int dof() const { return static_cast<int>(q_min_.size()); }
    int num_links() const;
    const std::vector<double>& link_lengths() const { return link_lengths_; }
    const std::vector<CollisionSphere>& spheres() const { return spheres_; }
    const Eigen::VectorXd& q_min() const { return q_min_; }
    const Eigen::VectorXd& q_max() const { return q_max_; }
    const Eigen::VectorXd& v_max() const { return v_max_; }

    void set_spheres(std::vector<CollisionSphere> spheres);

private:
    RobotKind kind_ = RobotKind::PointMass2D;
    std::vector<double> link_lengths_;
    std::vector<CollisionSphere> spheres_;
    Eigen::VectorXd q_min_, q_max_, v_max_;

    void validate() const;
};

struct FkResult {
    std::vector<Vec2> sphere_centers;
    Pose3 ee_pose;
};

FkResult forward_kinematics(const RobotModel& robot, const Eigen::VectorXd& q);

struct FkJacobian {
    /// d(center_k)/dq, one 2 x dof block per collision sphere.
    std::vector<Eigen::Matrix<double, 2, Eigen::Dynamic>> spheres;
    Eigen::Matrix<double, 3, Eigen::Dynamic> ee_position;
    /// Angular-velocity Jacobian of the end effector (z row only for planar robots).
    Eigen::Matrix<double, 3, Eigen::Dynamic> ee_rotation;
};

FkJacobian fk_jacobian(const RobotModel& robot, const Eigen::VectorXd& q);

/// True if every collision sphere clears the environment by more than `margin`.
bool config_is_free(const Environment& env, const RobotModel& robot, const Eigen::VectorXd& q,
                    double margin = 0.0);

/// Uniform rejection sample within the joint limits. Throws PlanningFailure
/// after `budget` rejected draws.
Eigen::VectorXd sample_free_config(const Environment& env, const RobotModel& robot, Rng& rng,
                                   double margin = 0.0, int budget = 10000);

// ---------------------------------------------------------------------------
// JSON descriptions
// ---------------------------------------------------------------------------

nlohmann::json to_json(const SdfPrimitive& p);
SdfPrimitive primitive_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Environment& env);
Environment environment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RobotModel& robot);
RobotModel robot_from_json(const nlohmann::json& j);
EnvGenConfig env_gen_config_from_json(const nlohmann::json& j);

}  // namespace mpd
