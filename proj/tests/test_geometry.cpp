#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mpd/error.hpp"
#include "mpd/geometry.hpp"
#include "test_util.hpp"

using namespace mpd;

namespace {

Environment unit_sphere_env() {
    return Environment({SdfPrimitive::sphere(Vec2(0, 0), 1.0)}, Bounds2{});
}

Environment mixed_env() {
    Bounds2 b{Vec2(-4, -4), Vec2(4, 4)};
    return Environment({SdfPrimitive::box(Vec2(0, 0), Vec2(1, 1)), SdfPrimitive::sphere(Vec2(3, 0), 0.5),
                        SdfPrimitive::box(Vec2(-2, 2), Vec2(0.3, 0.7))},
                       b, {SdfPrimitive::sphere(Vec2(-2, -2), 0.4)});
}

// Closed-form distances written independently of the library.
double oracle_sdf(const Environment& env, const Vec2& x) {
    double best = kSdfFar;
    for (std::size_t i = 0; i < env.size(); ++i) {
        const auto& p = env.primitive(i);
        double d;
        if (p.kind == PrimitiveKind::Sphere) {
            d = std::hypot(x.x() - p.center.x(), x.y() - p.center.y()) - p.radius;
        } else {
            const double qx = std::abs(x.x() - p.center.x()) - p.half_extents.x();
            const double qy = std::abs(x.y() - p.center.y()) - p.half_extents.y();
            const double out = std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
            d = out + std::min(std::max(qx, qy), 0.0);
        }
        best = std::min(best, d);
    }
    return best;
}

Eigen::Matrix3d rot_z(double a) {
    Eigen::Matrix3d r;
    r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return r;
}

Eigen::Matrix4d homog(double angle, double tx) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rot_z(angle);
    m(0, 3) = tx;
    return m;
}

RobotModel arm(int links) {
    std::vector<double> lengths(links, 1.0);
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(links, -std::numbers::pi);
    Eigen::VectorXd hi = -lo;
    return RobotModel::planar_arm(lengths, lo, hi, Eigen::VectorXd::Constant(links, 2.0));
}

}  // namespace

TEST_CASE("sphere sdf values and gradient") {
    const auto env = unit_sphere_env();
    CHECK(sdf_eval(env, Vec2(2, 0)) == doctest::Approx(1.0));
    CHECK(sdf_eval(env, Vec2(0, 0)) == doctest::Approx(-1.0));
    CHECK((sdf_grad(env, Vec2(2, 0)) - Vec2(1, 0)).norm() < 1e-12);
    CHECK((sdf_grad(env, Vec2(0, 2)) - Vec2(0, 1)).norm() < 1e-12);
}

TEST_CASE("box plus sphere takes the minimum") {
    Environment env({SdfPrimitive::box(Vec2(0, 0), Vec2(1, 1)), SdfPrimitive::sphere(Vec2(3, 0), 0.5)},
                    Bounds2{Vec2(-4, -4), Vec2(4, 4)});
    CHECK(sdf_eval(env, Vec2(2.2, 0)) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("empty environment returns the far sentinel") {
    Environment env({}, Bounds2{});
    CHECK(sdf_eval(env, Vec2(0.3, 0.1)) == kSdfFar);
    CHECK(sdf_query(env, Vec2(0, 0)).primitive == -1);
}

TEST_CASE("sdf matches closed-form oracle and is 1-Lipschitz") {
    const auto env = mixed_env();
    Rng rng(3);
    std::uniform_real_distribution<double> u(-4, 4);
    for (int i = 0; i < 2000; ++i) {
        Vec2 x(u(rng), u(rng)), y(u(rng), u(rng));
        CHECK(sdf_eval(env, x) == doctest::Approx(oracle_sdf(env, x)).epsilon(1e-12));
        CHECK(std::abs(sdf_eval(env, x) - sdf_eval(env, y)) <= (x - y).norm() + 1e-12);
    }
}

TEST_CASE("sdf gradient matches finite differences") {
    const auto env = mixed_env();
    Rng rng(4);
    std::uniform_real_distribution<double> u(-4, 4);
    int checked = 0;
    while (checked < 1000) {
        Vec2 x(u(rng), u(rng));
        // Skip points near a medial axis or a box corner ridge where the FD stencil straddles a kink.
        auto f = [&](const Eigen::VectorXd& v) { return sdf_eval(env, Vec2(v[0], v[1])); };
        const Eigen::VectorXd g1 = test::fd_gradient(f, x, 1e-5);
        const Eigen::VectorXd g2 = test::fd_gradient(f, x, 1e-4);
        if ((g1 - g2).norm() > 1e-6) continue;
        const Vec2 g = sdf_grad(env, x);
        CHECK(test::rel_error(g, g1) < 1e-4);
        CHECK(g.norm() == doctest::Approx(1.0).epsilon(1e-6));
        ++checked;
    }
}

TEST_CASE("gradient ties resolve to the lowest index") {
    Environment env({SdfPrimitive::sphere(Vec2(-1, 0), 0.5), SdfPrimitive::sphere(Vec2(1, 0), 0.5)},
                    Bounds2{Vec2(-2, -2), Vec2(2, 2)});
    const auto q = sdf_query(env, Vec2(0, 0.3));
    CHECK(q.primitive == 0);
    CHECK(q.gradient.x() > 0.0);
}

TEST_CASE("extra obstacles never increase the distance") {
    const auto env = mixed_env();
    const auto base = env.without_extra();
    Rng rng(5);
    std::uniform_real_distribution<double> u(-4, 4);
    for (int i = 0; i < 500; ++i) {
        Vec2 x(u(rng), u(rng));
        CHECK(sdf_eval(env, x) <= sdf_eval(base, x));
    }
}

TEST_CASE("primitive invariants are enforced") {
    CHECK_THROWS(SdfPrimitive::sphere(Vec2(0, 0), 0.0));
    CHECK_THROWS(SdfPrimitive::box(Vec2(0, 0), Vec2(0.1, -0.1)));
    CHECK_THROWS(Environment({SdfPrimitive::sphere(Vec2(5, 0), 0.1)}, Bounds2{}));
}

TEST_CASE("forward kinematics of planar arms") {
    const auto two = arm(2);
    auto fk = forward_kinematics(two, Eigen::Vector2d(0, 0));
    CHECK((fk.ee_pose.position - Eigen::Vector3d(2, 0, 0)).norm() < 1e-12);
    fk = forward_kinematics(two, Eigen::Vector2d(std::numbers::pi / 2, 0));
    CHECK((fk.ee_pose.position - Eigen::Vector3d(0, 2, 0)).norm() < 1e-12);
    CHECK(fk.ee_pose.is_valid());
    CHECK_THROWS_AS(forward_kinematics(two, Eigen::Vector3d(0, 0, 0)), DimensionError);

    const auto three = arm(3);
    Rng rng(6);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int i = 0; i < 50; ++i) {
        Eigen::Vector3d q(u(rng), u(rng), u(rng));
        Eigen::Matrix4d T = homog(q[0], 0) * homog(q[1], 1) * homog(q[2], 1) * homog(0, 1);
        const auto r = forward_kinematics(three, q);
        CHECK((r.ee_pose.position - T.topRightCorner<3, 1>()).norm() < 1e-12);
        CHECK((r.ee_pose.rotation - T.topLeftCorner<3, 3>()).norm() < 1e-12);
    }
}

TEST_CASE("point mass kinematics") {
    const auto pm = RobotModel::point_mass(0.02, Bounds2{}, 1.0);
    const Eigen::Vector2d q(0.3, -0.4);
    const auto fk = forward_kinematics(pm, q);
    REQUIRE(fk.sphere_centers.size() == 1);
    CHECK((fk.sphere_centers[0] - q).norm() == 0.0);
    CHECK(fk.ee_pose.rotation.isIdentity());
    const auto J = fk_jacobian(pm, q);
    CHECK(J.spheres[0].isApprox(Eigen::Matrix2d::Identity()));
}

TEST_CASE("arm jacobian matches hand values and finite differences") {
    const auto two = arm(2);
    const auto J0 = fk_jacobian(two, Eigen::Vector2d(0, 0));
    CHECK((J0.ee_position.col(0) - Eigen::Vector3d(0, 2, 0)).norm() < 1e-12);
    CHECK((J0.ee_position.col(1) - Eigen::Vector3d(0, 1, 0)).norm() < 1e-12);

    const auto three = arm(3);
    Rng rng(7);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int i = 0; i < 100; ++i) {
        Eigen::VectorXd q(3);
        q << u(rng), u(rng), u(rng);
        const auto J = fk_jacobian(three, q);
        for (std::size_t k = 0; k < three.spheres().size(); ++k) {
            for (int c = 0; c < 2; ++c) {
                auto f = [&](const Eigen::VectorXd& v) { return forward_kinematics(three, v).sphere_centers[k][c]; };
                CHECK(test::rel_error(J.spheres[k].row(c).transpose(), test::fd_gradient(f, q, 1e-6)) < 1e-6);
            }
        }
        for (int c = 0; c < 3; ++c) {
            auto f = [&](const Eigen::VectorXd& v) { return forward_kinematics(three, v).ee_pose.position[c]; };
            CHECK(test::rel_error(J.ee_position.row(c).transpose(), test::fd_gradient(f, q, 1e-6)) < 1e-6);
        }
    }
}

TEST_CASE("default arm spheres") {
    const auto three = arm(3);
    CHECK(three.spheres().size() == 9);
    for (const auto& s : three.spheres()) CHECK(s.radius == doctest::Approx(0.05));
}

TEST_CASE("free configuration sampling") {
    const auto pm = RobotModel::point_mass(0.02, Bounds2{}, 1.0);
    {
        Environment empty({}, Bounds2{});
        Rng a(9), b(9);
        const auto q = sample_free_config(empty, pm, a);
        std::uniform_real_distribution<double> unit(0, 1);
        Eigen::Vector2d first;
        first[0] = -1.0 + 2.0 * unit(b);
        first[1] = -1.0 + 2.0 * unit(b);
        CHECK((q - first).norm() == 0.0);
    }
    {
        Environment full({SdfPrimitive::sphere(Vec2(0, 0), 10.0)}, Bounds2{});
        Rng rng(1);
        CHECK_THROWS_AS(sample_free_config(full, pm, rng, 0.0, 200), PlanningFailure);
    }
    {
        Environment one({SdfPrimitive::sphere(Vec2(0, 0), 0.5)}, Bounds2{});
        Rng rng(2);
        for (int i = 0; i < 100; ++i) {
            const auto q = sample_free_config(one, pm, rng, 0.01);
            CHECK(oracle_sdf(one, Vec2(q[0], q[1])) > 0.02 + 0.01);
        }
    }
}

TEST_CASE("json round trip") {
    const auto env = mixed_env();
    const auto env2 = environment_from_json(to_json(env));
    CHECK(to_json(env2).dump() == to_json(env).dump());
    CHECK(env2.extra_primitives().size() == 1);

    const auto three = arm(3);
    CHECK(to_json(robot_from_json(to_json(three))).dump() == to_json(three).dump());
    CHECK_THROWS_AS(environment_from_json(nlohmann::json{{"primitives", 3}}), ConfigError);
}

TEST_CASE("random environments are seeded") {
    EnvGenConfig cfg;
    Rng a(11), b(11);
    CHECK(to_json(random_environment(cfg, a)).dump() == to_json(random_environment(cfg, b)).dump());
    Rng c(11);
    const auto env = random_environment(cfg, c);
    CHECK(env.primitives().size() == 16);
    CHECK(env.extra_primitives().size() == 5);
}
