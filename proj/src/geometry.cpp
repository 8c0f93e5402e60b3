#include "mpd/geometry.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/LU>

#include "mpd/error.hpp"

namespace mpd {

using Eigen::VectorXd;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

SdfPrimitive SdfPrimitive::sphere(const Vec2& center, double radius) {
    if (!(radius > 0.0)) {
        throw ConfigError("sphere radius must be positive");
    }
    SdfPrimitive p;
    p.kind = PrimitiveKind::Sphere;
    p.center = center;
    p.radius = radius;
    return p;
}

SdfPrimitive SdfPrimitive::box(const Vec2& center, const Vec2& half_extents) {
    if (!(half_extents.array() > 0.0).all()) {
        throw ConfigError("box half-extents must be positive");
    }
    SdfPrimitive p;
    p.kind = PrimitiveKind::Box;
    p.center = center;
    p.half_extents = half_extents;
    return p;
}

double SdfPrimitive::distance(const Vec2& x) const {
    if (kind == PrimitiveKind::Sphere) {
        return (x - center).norm() - radius;
    }
    const Vec2 q = (x - center).cwiseAbs() - half_extents;
    const double outside = q.cwiseMax(0.0).norm();
    const double inside = std::min(q.maxCoeff(), 0.0);
    return outside + inside;
}

Vec2 SdfPrimitive::gradient(const Vec2& x) const {
    const Vec2 rel = x - center;
    if (kind == PrimitiveKind::Sphere) {
        const double n = rel.norm();
        if (n == 0.0) {
            return Vec2::UnitX();
        }
        return rel / n;
    }
    const Vec2 sign(rel.x() >= 0.0 ? 1.0 : -1.0, rel.y() >= 0.0 ? 1.0 : -1.0);
    const Vec2 q = rel.cwiseAbs() - half_extents;
    if (q.maxCoeff() > 0.0) {
        const Vec2 pos = q.cwiseMax(0.0);
        return sign.cwiseProduct(pos) / pos.norm();
    }
    // Inside: the face with the largest (least negative) distance wins.
    Vec2 g = Vec2::Zero();
    const int axis = q.x() >= q.y() ? 0 : 1;
    g[axis] = sign[axis];
    return g;
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

namespace {

void check_inside(const std::vector<SdfPrimitive>& prims, const Bounds2& bounds) {
    for (const auto& p : prims) {
        if (!bounds.contains(p.center)) {
            std::ostringstream os;
            os << "primitive center (" << p.center.x() << ", " << p.center.y()
               << ") lies outside the workspace bounds";
            throw ConfigError(os.str());
        }
    }
}

}  // namespace

Environment::Environment(std::vector<SdfPrimitive> primitives, Bounds2 bounds,
                         std::vector<SdfPrimitive> extra)
    : primitives_(std::move(primitives)), bounds_(bounds), extra_(std::move(extra)) {
    if (!(bounds_.lo.array() < bounds_.hi.array()).all()) {
        throw ConfigError("workspace bounds must satisfy lo < hi");
    }
    check_inside(primitives_, bounds_);
    check_inside(extra_, bounds_);
}

Environment Environment::without_extra() const { return Environment(primitives_, bounds_, {}); }

Environment Environment::with_extra(std::vector<SdfPrimitive> extra) const {
    return Environment(primitives_, bounds_, std::move(extra));
}

const SdfPrimitive& Environment::primitive(std::size_t i) const {
    return i < primitives_.size() ? primitives_[i] : extra_.at(i - primitives_.size());
}

SdfQuery sdf_query(const Environment& env, const Vec2& x) {
    SdfQuery out;
    const std::size_t n = env.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double d = env.primitive(i).distance(x);
        if (d < out.distance) {
            out.distance = d;
            out.primitive = static_cast<int>(i);
        }
    }
    if (out.primitive >= 0) {
        out.gradient = env.primitive(static_cast<std::size_t>(out.primitive)).gradient(x);
    }
    return out;
}

double sdf_eval(const Environment& env, const Vec2& x) {
    double best = kSdfFar;
    const std::size_t n = env.size();
    for (std::size_t i = 0; i < n; ++i) {
        best = std::min(best, env.primitive(i).distance(x));
    }
    return best;
}

Vec2 sdf_grad(const Environment& env, const Vec2& x) { return sdf_query(env, x).gradient; }

Environment random_environment(const EnvGenConfig& cfg, Rng& rng) {
    std::uniform_real_distribution<double> ux(cfg.placement.lo.x(), cfg.placement.hi.x());
    std::uniform_real_distribution<double> uy(cfg.placement.lo.y(), cfg.placement.hi.y());
    std::uniform_real_distribution<double> ur(cfg.radius_min, cfg.radius_max);
    std::uniform_real_distribution<double> uh(cfg.half_extent_min, cfg.half_extent_max);

    auto draw = [&](int spheres, int boxes) {
        std::vector<SdfPrimitive> out;
        for (int i = 0; i < spheres; ++i) {
            const Vec2 c(ux(rng), uy(rng));
            out.push_back(SdfPrimitive::sphere(c, ur(rng)));
        }
        for (int i = 0; i < boxes; ++i) {
            const Vec2 c(ux(rng), uy(rng));
            const double hx = uh(rng);
            const double hy = uh(rng);
            out.push_back(SdfPrimitive::box(c, Vec2(hx, hy)));
        }
        return out;
    };
    auto base = draw(cfg.n_spheres, cfg.n_boxes);
    auto extra = draw(cfg.n_extra_spheres, cfg.n_extra_boxes);
    return Environment(std::move(base), cfg.bounds, std::move(extra));
}

// ---------------------------------------------------------------------------
// Robots
// ---------------------------------------------------------------------------

bool Pose3::is_valid(double tol) const {
    const Eigen::Matrix3d rtr = rotation.transpose() * rotation;
    return (rtr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol && position.allFinite();
}

RobotModel RobotModel::point_mass(double radius, const Bounds2& limits, double max_velocity) {
    if (radius < 0.0) {
        throw ConfigError("point-mass radius must be non-negative");
    }
    RobotModel r;
    r.kind_ = RobotKind::PointMass2D;
    r.q_min_ = limits.lo;
    r.q_max_ = limits.hi;
    r.v_max_ = VectorXd::Constant(2, max_velocity);
    r.spheres_ = {CollisionSphere{0, Vec2::Zero(), radius}};
    r.validate();
    return r;
}

RobotModel RobotModel::planar_arm(std::vector<double> link_lengths, VectorXd q_min, VectorXd q_max,
                                  VectorXd v_max, int spheres_per_link) {
    RobotModel r;
    r.kind_ = RobotKind::PlanarArm;
    r.link_lengths_ = std::move(link_lengths);
    r.q_min_ = std::move(q_min);
    r.q_max_ = std::move(q_max);
    r.v_max_ = std::move(v_max);
    if (spheres_per_link > 0) {
        for (std::size_t link = 0; link < r.link_lengths_.size(); ++link) {
            const double len = r.link_lengths_[link];
            for (int k = 0; k < spheres_per_link; ++k) {
                const double s = spheres_per_link == 1
                                     ? 0.5
                                     : static_cast<double>(k) / (spheres_per_link - 1);
                r.spheres_.push_back(
                    CollisionSphere{static_cast<int>(link), Vec2(s * len, 0.0), 0.05 * len});
            }
        }
    }
    r.validate();
    return r;
}

int RobotModel::num_links() const {
    return kind_ == RobotKind::PointMass2D ? 1 : static_cast<int>(link_lengths_.size());
}

void RobotModel::set_spheres(std::vector<CollisionSphere> spheres) {
    spheres_ = std::move(spheres);
    validate();
}

void RobotModel::validate() const {
    if (q_min_.size() < 1) {
        throw ConfigError("robot must have at least one degree of freedom");
    }
    if (q_max_.size() != q_min_.size() || v_max_.size() != q_min_.size()) {
        throw ConfigError("joint/velocity limit vectors must match the robot dof");
    }
    if (!(q_min_.array() < q_max_.array()).all()) {
        throw ConfigError("joint limits must satisfy q_min < q_max");
    }
    if (!(v_max_.array() > 0.0).all()) {
        throw ConfigError("velocity limits must be positive");
    }
    if (kind_ == RobotKind::PlanarArm) {
        if (static_cast<int>(link_lengths_.size()) != q_min_.size()) {
            throw ConfigError("planar arm needs one link length per joint");
        }
        for (double l : link_lengths_) {
            if (!(l > 0.0)) {
                throw ConfigError("link lengths must be positive");
            }
        }
    }
    if (spheres_.empty()) {
        throw ConfigError("robot needs at least one collision sphere");
    }
    for (const auto& s : spheres_) {
        if (s.link < 0 || s.link >= num_links() || s.radius < 0.0) {
            throw ConfigError("invalid collision sphere");
        }
    }
}

namespace {

void check_dof(const RobotModel& robot, const VectorXd& q) {
    if (q.size() != robot.dof()) {
        std::ostringstream os;
        os << "configuration has " << q.size() << " entries, robot dof is " << robot.dof();
        throw DimensionError(os.str());
    }
}

Eigen::Matrix3d rot_z(double theta) {
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    r(0, 0) = c;
    r(0, 1) = -s;
    r(1, 0) = s;
    r(1, 1) = c;
    return r;
}

// Joint origins p_0..p_n and absolute link angles of a planar chain.
struct Chain {
    std::vector<Vec2> joints;
    std::vector<double> angles;
};

Chain planar_chain(const RobotModel& robot, const VectorXd& q) {
    Chain c;
    c.joints.push_back(Vec2::Zero());
    double theta = 0.0;
    for (int i = 0; i < robot.dof(); ++i) {
        theta += q[i];
        c.angles.push_back(theta);
        const double len = robot.link_lengths()[static_cast<std::size_t>(i)];
        c.joints.push_back(c.joints.back() + len * Vec2(std::cos(theta), std::sin(theta)));
    }
    return c;
}

Vec2 rotate(double theta, const Vec2& v) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    return Vec2(c * v.x() - s * v.y(), s * v.x() + c * v.y());
}

}  // namespace

FkResult forward_kinematics(const RobotModel& robot, const VectorXd& q) {
    check_dof(robot, q);
    FkResult out;
    out.sphere_centers.reserve(robot.spheres().size());
    if (robot.kind() == RobotKind::PointMass2D) {
        const Vec2 p(q[0], q[1]);
        for (const auto& s : robot.spheres()) {
            out.sphere_centers.push_back(p + s.offset);
        }
        out.ee_pose.position << p.x(), p.y(), 0.0;
        return out;
    }
    const Chain chain = planar_chain(robot, q);
    for (const auto& s : robot.spheres()) {
        const auto link = static_cast<std::size_t>(s.link);
        out.sphere_centers.push_back(chain.joints[link] + rotate(chain.angles[link], s.offset));
    }
    out.ee_pose.rotation = rot_z(chain.angles.back());
    out.ee_pose.position << chain.joints.back().x(), chain.joints.back().y(), 0.0;
    return out;
}

FkJacobian fk_jacobian(const RobotModel& robot, const VectorXd& q) {
    check_dof(robot, q);
    const int n = robot.dof();
    FkJacobian out;
    out.ee_position.setZero(3, n);
    out.ee_rotation.setZero(3, n);
    if (robot.kind() == RobotKind::PointMass2D) {
        for (std::size_t k = 0; k < robot.spheres().size(); ++k) {
            out.spheres.push_back(Eigen::Matrix2d::Identity());
        }
        out.ee_position.topRows<2>() = Eigen::Matrix2d::Identity();
        return out;
    }
    const Chain chain = planar_chain(robot, q);
    // Revolute joint j moves a point x with velocity e_z x (x - p_j).
    auto column = [&](const Vec2& x, int j) {
        const Vec2 r = x - chain.joints[static_cast<std::size_t>(j)];
        return Vec2(-r.y(), r.x());
    };
    for (const auto& s : robot.spheres()) {
        const auto link = static_cast<std::size_t>(s.link);
        const Vec2 x = chain.joints[link] + rotate(chain.angles[link], s.offset);
        Eigen::Matrix<double, 2, Eigen::Dynamic> jac = Eigen::MatrixXd::Zero(2, n);
        for (int j = 0; j <= s.link; ++j) {
            jac.col(j) = column(x, j);
        }
        out.spheres.push_back(std::move(jac));
    }
    const Vec2 ee = chain.joints.back();
    for (int j = 0; j < n; ++j) {
        out.ee_position.col(j).head<2>() = column(ee, j);
        out.ee_rotation(2, j) = 1.0;
    }
    return out;
}

bool config_is_free(const Environment& env, const RobotModel& robot, const VectorXd& q,
                    double margin) {
    const FkResult fk = forward_kinematics(robot, q);
    for (std::size_t k = 0; k < fk.sphere_centers.size(); ++k) {
        if (!(sdf_eval(env, fk.sphere_centers[k]) > robot.spheres()[k].radius + margin)) {
            return false;
        }
    }
    return true;
}

VectorXd sample_free_config(const Environment& env, const RobotModel& robot, Rng& rng,
                            double margin, int budget) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    VectorXd q(robot.dof());
    for (int attempt = 0; attempt < budget; ++attempt) {
        for (int i = 0; i < robot.dof(); ++i) {
            q[i] = robot.q_min()[i] + unit(rng) * (robot.q_max()[i] - robot.q_min()[i]);
        }
        if (config_is_free(env, robot, q, margin)) {
            return q;
        }
    }
    throw PlanningFailure("no collision-free configuration found within " +
                          std::to_string(budget) + " draws");
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

Vec2 vec2_from(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 2) {
        throw ConfigError(std::string(what) + " must be a 2-element array");
    }
    return Vec2(j[0].get<double>(), j[1].get<double>());
}

VectorXd vector_from(const json& j, const char* what) {
    if (!j.is_array()) {
        throw ConfigError(std::string(what) + " must be an array");
    }
    VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

json to_array(const Eigen::Ref<const VectorXd>& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        a.push_back(v[i]);
    }
    return a;
}

Bounds2 bounds_from(const json& j) {
    Bounds2 b;
    b.lo = vec2_from(j.at("min"), "bounds.min");
    b.hi = vec2_from(j.at("max"), "bounds.max");
    return b;
}

json bounds_to(const Bounds2& b) {
    return json{{"min", to_array(b.lo)}, {"max", to_array(b.hi)}};
}

std::vector<SdfPrimitive> primitives_from(const json& j) {
    std::vector<SdfPrimitive> out;
    if (j.is_null()) {
        return out;
    }
    for (const auto& p : j) {
        out.push_back(primitive_from_json(p));
    }
    return out;
}

}  // namespace

json to_json(const SdfPrimitive& p) {
    if (p.kind == PrimitiveKind::Sphere) {
        return json{{"type", "sphere"}, {"center", to_array(p.center)}, {"radius", p.radius}};
    }
    return json{{"type", "box"},
                {"center", to_array(p.center)},
                {"half_extents", to_array(p.half_extents)}};
}

SdfPrimitive primitive_from_json(const json& j) {
    try {
        const auto type = j.at("type").get<std::string>();
        const Vec2 c = vec2_from(j.at("center"), "center");
        if (type == "sphere") {
            return SdfPrimitive::sphere(c, j.at("radius").get<double>());
        }
        if (type == "box") {
            return SdfPrimitive::box(c, vec2_from(j.at("half_extents"), "half_extents"));
        }
        throw ConfigError("unknown primitive type '" + type + "'");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad primitive: ") + e.what());
    }
}

json to_json(const Environment& env) {
    json prims = json::array();
    for (const auto& p : env.primitives()) {
        prims.push_back(to_json(p));
    }
    json extra = json::array();
    for (const auto& p : env.extra_primitives()) {
        extra.push_back(to_json(p));
    }
    return json{{"bounds", bounds_to(env.bounds())}, {"primitives", prims}, {"extra_primitives", extra}};
}

Environment environment_from_json(const json& j) {
    try {
        const Bounds2 b = bounds_from(j.at("bounds"));
        return Environment(primitives_from(j.value("primitives", json::array())), b,
                           primitives_from(j.value("extra_primitives", json::array())));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad environment description: ") + e.what());
    }
}

json to_json(const RobotModel& robot) {
    json spheres = json::array();
    for (const auto& s : robot.spheres()) {
        spheres.push_back(json{{"link", s.link}, {"offset", to_array(s.offset)}, {"radius", s.radius}});
    }
    json j{{"q_min", to_array(robot.q_min())},
           {"q_max", to_array(robot.q_max())},
           {"v_max", to_array(robot.v_max())},
           {"spheres", spheres}};
    if (robot.kind() == RobotKind::PointMass2D) {
        j["kind"] = "point_mass_2d";
    } else {
        j["kind"] = "planar_arm";
        j["link_lengths"] = robot.link_lengths();
    }
    return j;
}

RobotModel robot_from_json(const json& j) {
    try {
        const auto kind = j.at("kind").get<std::string>();
        RobotModel robot;
        if (kind == "point_mass_2d") {
            Bounds2 limits;
            if (j.contains("q_min")) {
                limits.lo = vec2_from(j.at("q_min"), "q_min");
                limits.hi = vec2_from(j.at("q_max"), "q_max");
            }
            double vmax = 1.0;
            if (j.contains("v_max")) {
                const json& v = j.at("v_max");
                vmax = v.is_array() ? v.at(0).get<double>() : v.get<double>();
            }
            robot = RobotModel::point_mass(j.value("radius", 0.01), limits, vmax);
        } else if (kind == "planar_arm") {
            auto lengths = j.at("link_lengths").get<std::vector<double>>();
            const auto n = static_cast<Eigen::Index>(lengths.size());
            VectorXd q_min = j.contains("q_min") ? vector_from(j.at("q_min"), "q_min")
                                                 : VectorXd::Constant(n, -M_PI);
            VectorXd q_max = j.contains("q_max") ? vector_from(j.at("q_max"), "q_max")
                                                 : VectorXd::Constant(n, M_PI);
            VectorXd v_max = j.contains("v_max") ? vector_from(j.at("v_max"), "v_max")
                                                 : VectorXd::Constant(n, 2.0);
            robot = RobotModel::planar_arm(std::move(lengths), q_min, q_max, v_max,
                                           j.value("spheres_per_link", 3));
        } else {
            throw ConfigError("unknown robot kind '" + kind + "'");
        }
        if (j.contains("spheres")) {
            std::vector<CollisionSphere> spheres;
            for (const auto& s : j.at("spheres")) {
                spheres.push_back(CollisionSphere{s.at("link").get<int>(),
                                                  vec2_from(s.at("offset"), "offset"),
                                                  s.at("radius").get<double>()});
            }
            robot.set_spheres(std::move(spheres));
        }
        return robot;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad robot description: ") + e.what());
    }
}

EnvGenConfig env_gen_config_from_json(const json& j) {
    try {
        EnvGenConfig c;
        if (j.contains("bounds")) {
            c.bounds = bounds_from(j.at("bounds"));
        }
        if (j.contains("placement")) {
            c.placement = bounds_from(j.at("placement"));
        }
        c.n_spheres = j.value("n_spheres", c.n_spheres);
        c.n_boxes = j.value("n_boxes", c.n_boxes);
        c.radius_min = j.value("radius_min", c.radius_min);
        c.radius_max = j.value("radius_max", c.radius_max);
        c.half_extent_min = j.value("half_extent_min", c.half_extent_min);
        c.half_extent_max = j.value("half_extent_max", c.half_extent_max);
        c.n_extra_spheres = j.value("n_extra_spheres", c.n_extra_spheres);
        c.n_extra_boxes = j.value("n_extra_boxes", c.n_extra_boxes);
        if (c.n_spheres < 0 || c.n_boxes < 0 || c.n_extra_spheres < 0 || c.n_extra_boxes < 0 ||
            !(c.radius_min > 0.0) || c.radius_max < c.radius_min || !(c.half_extent_min > 0.0) ||
            c.half_extent_max < c.half_extent_min) {
            throw ConfigError("invalid environment generator settings");
        }
        if (!c.bounds.contains(c.placement.lo) || !c.bounds.contains(c.placement.hi)) {
            throw ConfigError("placement region must lie inside the workspace bounds");
        }
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad environment generator config: ") + e.what());
    }
}

}  // namespace mpd
