#include "mpd/costs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/LU>

#include "mpd/error.hpp"

namespace mpd {

using Eigen::Index;
using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;
using json = nlohmann::json;

CostValue collision_cost(const Environment& env, const RobotModel& robot, const VectorXd& q,
                         double margin) {
    const FkResult fk = forward_kinematics(robot, q);
    const auto& spheres = robot.spheres();
    const double inv_k = 1.0 / static_cast<double>(spheres.size());
    CostValue out{0.0, VectorXd::Zero(robot.dof())};
    std::optional<FkJacobian> jac;
    for (std::size_t k = 0; k < spheres.size(); ++k) {
        const SdfQuery s = sdf_query(env, fk.sphere_centers[k]);
        if (s.primitive < 0) {
            continue;
        }
        const double d = s.distance - spheres[k].radius;
        if (d <= margin) {
            if (!jac) {
                jac = fk_jacobian(robot, q);
            }
            out.value += inv_k * (margin - d);
            out.grad -= inv_k * (jac->spheres[k].transpose() * s.gradient);
        }
    }
    return out;
}

CostValue self_collision_cost(const RobotModel& robot, const VectorXd& q, double margin) {
    CostValue out{0.0, VectorXd::Zero(robot.dof())};
    const auto& spheres = robot.spheres();
    if (robot.num_links() < 2) {
        return out;
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < spheres.size(); ++i) {
        for (std::size_t j = i + 1; j < spheres.size(); ++j) {
            if (std::abs(spheres[i].link - spheres[j].link) >= 2) {
                pairs.emplace_back(i, j);
            }
        }
    }
    if (pairs.empty()) {
        return out;
    }
    const FkResult fk = forward_kinematics(robot, q);
    std::optional<FkJacobian> jac;
    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    for (const auto& [i, j] : pairs) {
        const Vec2 diff = fk.sphere_centers[i] - fk.sphere_centers[j];
        const double dist = diff.norm();
        const double clearance = dist - spheres[i].radius - spheres[j].radius;
        if (clearance >= margin) {
            continue;
        }
        out.value += inv_n * (margin - clearance);
        if (dist > 0.0) {
            if (!jac) {
                jac = fk_jacobian(robot, q);
            }
            const Vec2 u = diff / dist;
            out.grad -= inv_n * ((jac->spheres[i] - jac->spheres[j]).transpose() * u);
        }
    }
    return out;
}

namespace {

// Squared hinge keeping x inside [lo + eps, hi - eps]; returns value, adds d/dx.
double limit_hinge(double x, double lo, double hi, double eps, double& grad) {
    if (x < lo + eps) {
        const double r = lo + eps - x;
        grad = -2.0 * r;
        return r * r;
    }
    if (x > hi - eps) {
        const double r = hi - eps - x;
        grad = -2.0 * r;
        return r * r;
    }
    grad = 0.0;
    return 0.0;
}

}  // namespace

CostValue joint_limits_cost(const RobotModel& robot, const VectorXd& q, const VectorXd& qdot,
                            double margin) {
    const int n = robot.dof();
    if (q.size() != n || qdot.size() != n) {
        throw DimensionError("joint_limits_cost: state does not match robot dof");
    }
    CostValue out{0.0, VectorXd::Zero(2 * n)};
    for (int i = 0; i < n; ++i) {
        double g = 0.0;
        out.value += limit_hinge(q[i], robot.q_min()[i], robot.q_max()[i], margin, g);
        out.grad[i] = g;
        out.value += limit_hinge(qdot[i], -robot.v_max()[i], robot.v_max()[i], margin, g);
        out.grad[n + i] = g;
    }
    return out;
}

// ---------------------------------------------------------------------------
// SO(3) / SE(3)
// ---------------------------------------------------------------------------

namespace {

Vector3d vee(const Matrix3d& m) { return Vector3d(m(2, 1), m(0, 2), m(1, 0)); }

Matrix3d hat(const Vector3d& w) {
    Matrix3d m;
    m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
    return m;
}

}  // namespace

Vector3d so3_log_map(const Matrix3d& R) {
    if ((R.transpose() * R - Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
        std::abs(R.determinant() - 1.0) > 1e-6) {
        throw std::invalid_argument("so3_log_map: matrix is not a rotation");
    }
    const double cos_theta = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
    const double theta = std::acos(cos_theta);
    const Vector3d skew = vee(R - R.transpose());  // = 2 sin(theta) n
    if (theta < 1e-6) {
        return 0.5 * (1.0 + theta * theta / 6.0) * skew;
    }
    if (M_PI - theta < 1e-3) {
        // sin(theta) ~ 0: recover the axis from the symmetric part
        // R + R^T - 2 cos I = 2 (1 - cos) n n^T.
        const Matrix3d nn = (0.5 * (R + R.transpose()) - cos_theta * Matrix3d::Identity()) /
                            (1.0 - cos_theta);
        Index k = 0;
        nn.diagonal().maxCoeff(&k);
        Vector3d n = nn.col(k) / std::sqrt(std::max(nn(k, k), 1e-300));
        n.normalize();
        if (n.dot(skew) < 0.0) {
            n = -n;
        }
        return theta * n;
    }
    return (theta / (2.0 * std::sin(theta))) * skew;
}

Matrix3d so3_exp_map(const Vector3d& w) {
    const double theta = w.norm();
    const Matrix3d K = hat(w);
    if (theta < 1e-8) {
        return Matrix3d::Identity() + K + 0.5 * K * K;
    }
    return Matrix3d::Identity() + (std::sin(theta) / theta) * K +
           ((1.0 - std::cos(theta)) / (theta * theta)) * K * K;
}

double se3_distance(const Pose3& a, const Pose3& b) {
    return (a.position - b.position).squaredNorm() +
           so3_log_map(a.rotation.transpose() * b.rotation).norm();
}

TrajectoryCost ee_trajectory_cost(const RobotModel& robot, const Trajectory& traj,
                                  const Matrix3d& goal_orientation) {
    if (robot.kind() != RobotKind::PlanarArm) {
        throw Unsupported("end-effector cost is only defined for arm robots");
    }
    if (traj.dof() != robot.dof()) {
        throw DimensionError("trajectory dof does not match robot");
    }
    TrajectoryCost out{0.0, MatrixXd::Zero(traj.horizon(), traj.state_dim())};
    for (Index t = 0; t < traj.horizon(); ++t) {
        const VectorXd q = traj.position(t);
        const FkResult fk = forward_kinematics(robot, q);
        Pose3 goal;
        goal.rotation = goal_orientation;
        goal.position = fk.ee_pose.position;
        out.value += se3_distance(fk.ee_pose, goal);

        // d|w|/dq_j = -(w/|w|) . (R_g^T omega_j), w = Log(R^T R_g).
        const Vector3d w = so3_log_map(fk.ee_pose.rotation.transpose() * goal_orientation);
        const double phi = w.norm();
        if (phi < 1e-12) {
            continue;
        }
        const FkJacobian jac = fk_jacobian(robot, q);
        const Vector3d u = w / phi;
        const Eigen::RowVectorXd g =
            -(u.transpose() * goal_orientation.transpose() * jac.ee_rotation);
        out.grad.row(t).head(robot.dof()) += g;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

CostTerm CostTerm::collision(double lambda, double margin) {
    return CostTerm{CostKind::Collision, lambda, margin, Matrix3d::Identity()};
}
CostTerm CostTerm::self_collision(double lambda, double margin) {
    return CostTerm{CostKind::SelfCollision, lambda, margin, Matrix3d::Identity()};
}
CostTerm CostTerm::joint_limits(double lambda, double margin) {
    return CostTerm{CostKind::JointLimits, lambda, margin, Matrix3d::Identity()};
}
CostTerm CostTerm::ee_pose(double lambda, const Matrix3d& goal_orientation) {
    return CostTerm{CostKind::EePose, lambda, 0.0, goal_orientation};
}
CostTerm CostTerm::gp(double lambda) {
    return CostTerm{CostKind::GpSmoothness, lambda, 0.0, Matrix3d::Identity()};
}

CostSuite::CostSuite(Environment env, RobotModel robot, GpParams gp, std::vector<CostTerm> terms)
    : env_(std::move(env)), robot_(std::move(robot)), gp_(std::move(gp)) {
    if (gp_.dof() != robot_.dof()) {
        throw DimensionError("GP parameters do not match robot dof");
    }
    for (const auto& t : terms) {
        if (find(t.kind) != nullptr) {
            throw ConfigError("cost suite holds at most one term per kind");
        }
        set_term(t);
    }
}

void CostSuite::set_term(const CostTerm& term) {
    if (!(term.lambda >= 0.0) || !(term.margin >= 0.0)) {
        throw ConfigError("cost temperatures and margins must be non-negative");
    }
    for (auto& t : terms_) {
        if (t.kind == term.kind) {
            t = term;
            return;
        }
    }
    terms_.push_back(term);
}

void CostSuite::remove_term(CostKind kind) {
    std::erase_if(terms_, [kind](const CostTerm& t) { return t.kind == kind; });
}

const CostTerm* CostSuite::find(CostKind kind) const {
    for (const auto& t : terms_) {
        if (t.kind == kind) {
            return &t;
        }
    }
    return nullptr;
}

CostSuite CostSuite::scaled(double factor) const {
    CostSuite out = *this;
    for (auto& t : out.terms_) {
        t.lambda *= factor;
    }
    return out;
}

SuiteEvaluation total_cost_and_grad(const CostSuite& suite, const Trajectory& traj) {
    const RobotModel& robot = suite.robot();
    if (traj.dof() != robot.dof()) {
        throw DimensionError("trajectory dof does not match the cost suite robot");
    }
    const Index H = traj.horizon();
    const Index n = traj.dof();
    SuiteEvaluation out;
    MatrixXd grad = MatrixXd::Zero(H, traj.state_dim());

    for (const CostTerm& term : suite.terms()) {
        if (term.lambda == 0.0) {
            continue;
        }
        switch (term.kind) {
            case CostKind::Collision:
                for (Index t = 0; t < H; ++t) {
                    const CostValue c = collision_cost(suite.env(), robot, traj.position(t), term.margin);
                    out.cost += term.lambda * c.value;
                    grad.row(t).head(n) += term.lambda * c.grad.transpose();
                }
                break;
            case CostKind::SelfCollision:
                for (Index t = 0; t < H; ++t) {
                    const CostValue c = self_collision_cost(robot, traj.position(t), term.margin);
                    out.cost += term.lambda * c.value;
                    grad.row(t).head(n) += term.lambda * c.grad.transpose();
                }
                break;
            case CostKind::JointLimits:
                for (Index t = 0; t < H; ++t) {
                    const CostValue c =
                        joint_limits_cost(robot, traj.position(t),
                                          traj.states.row(t).tail(n).transpose(), term.margin);
                    out.cost += term.lambda * c.value;
                    grad.row(t) += term.lambda * c.grad.transpose();
                }
                break;
            case CostKind::EePose: {
                const TrajectoryCost c = ee_trajectory_cost(robot, traj, term.goal_orientation);
                out.cost += term.lambda * c.value;
                grad += term.lambda * c.grad;
                break;
            }
            case CostKind::GpSmoothness:
                out.cost += term.lambda * gp_cost(traj, suite.gp());
                grad += term.lambda * gp_cost_grad(traj, suite.gp());
                break;
        }
    }
    grad.row(0).setZero();
    grad.row(H - 1).setZero();
    out.guidance = -grad;
    return out;
}

double total_cost(const CostSuite& suite, const Trajectory& traj) {
    return total_cost_and_grad(suite, traj).cost;
}

std::vector<CostTerm> cost_terms_from_json(const json& j) {
    std::vector<CostTerm> terms;
    try {
        if (j.contains("collision")) {
            const auto& c = j.at("collision");
            terms.push_back(CostTerm::collision(c.value("lambda", 1.0),
                                                c.value("margin", kDefaultObstacleMargin)));
        }
        if (j.contains("self_collision")) {
            const auto& c = j.at("self_collision");
            terms.push_back(CostTerm::self_collision(
                c.value("lambda", 1.0), c.value("margin", kDefaultSelfCollisionMargin)));
        }
        if (j.contains("joint_limits")) {
            const auto& c = j.at("joint_limits");
            terms.push_back(CostTerm::joint_limits(c.value("lambda", 1.0),
                                                   c.value("margin", kDefaultLimitMargin)));
        }
        if (j.contains("ee_pose")) {
            const auto& c = j.at("ee_pose");
            Matrix3d r = Matrix3d::Identity();
            if (c.contains("goal_orientation")) {
                const auto rows = c.at("goal_orientation").get<std::vector<std::vector<double>>>();
                if (rows.size() != 3) {
                    throw ConfigError("goal_orientation must be 3x3");
                }
                for (int i = 0; i < 3; ++i) {
                    if (rows[static_cast<std::size_t>(i)].size() != 3) {
                        throw ConfigError("goal_orientation must be 3x3");
                    }
                    for (int k = 0; k < 3; ++k) {
                        r(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
                    }
                }
            } else {
                r = so3_exp_map(Vector3d(0.0, 0.0, c.value("goal_angle", 0.0)));
            }
            terms.push_back(CostTerm::ee_pose(c.value("lambda", 1.0), r));
        }
        if (j.contains("gp")) {
            terms.push_back(CostTerm::gp(j.at("gp").value("lambda", 1.0)));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad cost suite: ") + e.what());
    }
    for (const auto& t : terms) {
        if (!(t.lambda >= 0.0) || !(t.margin >= 0.0)) {
            throw ConfigError("cost temperatures and margins must be non-negative");
        }
    }
    return terms;
}

}  // namespace mpd
