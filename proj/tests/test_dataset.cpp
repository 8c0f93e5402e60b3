#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mpd/bench.hpp"
#include "mpd/dataset.hpp"
#include "mpd/error.hpp"

using namespace mpd;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

const Bounds2 kBox{Vec2(-1, -1), Vec2(1, 1)};

RobotModel point() { return RobotModel::point_mass(0.02, kBox, 1.0); }

Environment few_obstacles() {
    return Environment({SdfPrimitive::sphere(Vec2(0.0, 0.0), 0.25), SdfPrimitive::box(Vec2(-0.5, 0.5), Vec2(0.1, 0.2)),
                        SdfPrimitive::sphere(Vec2(0.5, -0.4), 0.15)},
                       kBox);
}

ExpertConfig small_config() {
    ExpertConfig c;
    c.n_contexts = 6;
    c.n_per_context = 3;
    c.horizon = 32;
    c.dt = 0.1;
    c.min_separation = 0.8;
    c.gp_lambda = 20.0;
    c.gpmp.iterations = 100;
    return c;
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mpd_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

// Independent dense check: 50 sub-samples per segment straight from the SDF.
bool oracle_dense_free(const Environment& env, const RobotModel& robot, const Trajectory& tr) {
    const double r = robot.spheres()[0].radius;
    for (Eigen::Index t = 0; t + 1 < tr.horizon(); ++t) {
        for (int k = 0; k <= 50; ++k) {
            const VectorXd q = tr.position(t) + (k / 50.0) * (tr.position(t + 1) - tr.position(t));
            if (sdf_eval(env, Vec2(q[0], q[1])) <= r) return false;
        }
    }
    return true;
}

const Dataset& shared_data() {
    static const Dataset data = generate_expert(few_obstacles(), point(), small_config(), 42);
    return data;
}

}  // namespace

TEST_CASE("empty environment gives straight lines") {
    ExpertConfig c = small_config();
    c.n_contexts = 1;
    c.min_separation = 0.0;
    const auto data = generate_expert(Environment({}, kBox), point(), c, 1);
    REQUIRE(data.trajectories.size() == 3);
    const auto gp = build_gp_params(c.dt, 2, 1.0);
    for (const auto& tr : data.trajectories) {
        CHECK((tr.states - data.trajectories[0].states).cwiseAbs().maxCoeff() < 1e-12);
        const Eigen::Vector2d dir = (tr.position(31) - tr.position(0)).normalized();
        for (Eigen::Index t = 0; t < 32; ++t) {
            const Eigen::Vector2d off = tr.position(t) - tr.position(0);
            CHECK(std::abs(off.x() * dir.y() - off.y() * dir.x()) < 1e-5);
        }
    }
    CHECK(data.provenance[0].cost_after <= data.provenance[0].cost_before);
    CHECK(std::isfinite(gp_cost(data.trajectories[0], gp)));
}

TEST_CASE("generated trajectories are valid") {
    const auto& data = shared_data();
    CHECK(data.contexts.size() == 6);
    CHECK(data.trajectories.size() == data.context_of.size());
    CHECK(data.trajectories.size() == data.provenance.size());
    const auto gp = build_gp_params(data.dt, 2, 1.0);
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
        const auto& tr = data.trajectories[i];
        const auto& ctx = data.contexts[static_cast<std::size_t>(data.context_of[i])];
        CHECK(ctx.id == data.context_of[i]);
        CHECK(tr.position(0) == ctx.q_start);
        CHECK(tr.position(tr.horizon() - 1) == ctx.q_goal);
        CHECK(oracle_dense_free(data.env, data.robot, tr));
        CHECK(colliding_waypoints(tr, data.env, data.robot) == 0);
        CHECK(std::isfinite(gp_cost(tr, gp)));
        for (Eigen::Index t = 0; t < tr.horizon(); ++t) {
            for (Eigen::Index k = 0; k < tr.state_dim(); ++k) {
                CHECK(tr.states(t, k) >= data.normalizer.lo[k]);
                CHECK(tr.states(t, k) <= data.normalizer.hi[k]);
            }
        }
    }
    for (const auto& ctx : data.contexts) {
        CHECK(config_is_free(data.env, data.robot, ctx.q_start));
        CHECK(config_is_free(data.env, data.robot, ctx.q_goal));
        CHECK((ctx.q_goal - ctx.q_start).norm() >= 0.8);
    }
}

TEST_CASE("seeded generation is byte-identical") {
    const auto again = generate_expert(few_obstacles(), point(), small_config(), 42);
    const auto a = temp_dir("ds_a"), b = temp_dir("ds_b");
    save_dataset(shared_data(), a);
    save_dataset(again, b);
    for (const char* f : {"manifest.json", "trajectories.f32", "provenance.jsonl"}) {
        CHECK(slurp(a / f) == slurp(b / f));
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("context split") {
    auto data = shared_data();
    const auto s = split_dataset(data, 0.34, 5);
    CHECK(s.val_contexts.size() == 2);
    CHECK(s.train_contexts.size() == 4);
    std::set<int> all(s.train_contexts.begin(), s.train_contexts.end());
    for (int v : s.val_contexts) CHECK(all.insert(v).second);
    CHECK(all.size() == 6);
    CHECK(std::is_sorted(s.val_contexts.begin(), s.val_contexts.end()));
    const auto tr = data.indices_of(s.train_contexts);
    const auto va = data.indices_of(s.val_contexts);
    std::set<std::size_t> ids(tr.begin(), tr.end());
    for (auto i : va) CHECK(ids.count(i) == 0);
    CHECK(tr.size() + va.size() == data.trajectories.size());
    CHECK(split_dataset(data, 0.34, 5).val_contexts == s.val_contexts);

    Dataset hundred;
    for (int i = 0; i < 100; ++i) hundred.contexts.push_back(PlanningContext{i, 0, VectorXd(), VectorXd()});
    const auto h = split_dataset(hundred, 0.05, 1);
    CHECK(h.train_contexts.size() == 95);
    CHECK(h.val_contexts.size() == 5);

    Dataset two;
    two.contexts.resize(2);
    two.contexts[1].id = 1;
    const auto t = split_dataset(two, 0.5, 3);
    CHECK(t.train_contexts.size() == 1);
    CHECK(t.val_contexts.size() == 1);
    CHECK(t.train_contexts[0] != t.val_contexts[0]);

    Dataset one;
    one.contexts.resize(1);
    CHECK_THROWS_AS(split_dataset(one, 0.5, 3), ConfigError);
    CHECK_THROWS_AS(split_dataset(two, 1.0, 3), ConfigError);
    CHECK_THROWS_AS(split_dataset(two, 0.0, 3), ConfigError);
}

TEST_CASE("save and load") {
    auto data = shared_data();
    data.split = split_dataset(data, 0.34, 5);
    const auto dir = temp_dir("ds_rt");
    save_dataset(data, dir);
    const auto back = load_dataset(dir);
    REQUIRE(back.trajectories.size() == data.trajectories.size());
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
        CHECK(back.trajectories[i].states == data.trajectories[i].states);
        CHECK(back.context_of[i] == data.context_of[i]);
    }
    CHECK(back.normalizer.lo == data.normalizer.lo);
    CHECK(back.normalizer.hi == data.normalizer.hi);
    REQUIRE(back.split.has_value());
    CHECK(back.split->val_contexts == data.split->val_contexts);
    CHECK(back.contexts[3].q_start == data.contexts[3].q_start);
    CHECK(back.provenance[2].rrt_seed == data.provenance[2].rrt_seed);

    const auto dir2 = temp_dir("ds_rt2");
    save_dataset(back, dir2);
    for (const char* f : {"manifest.json", "trajectories.f32", "provenance.jsonl"}) {
        CHECK(slurp(dir / f) == slurp(dir2 / f));
    }

    const std::string blob = slurp(dir / "trajectories.f32");
    std::string tampered = blob;
    tampered[100] ^= 0x01;
    spit(dir2 / "trajectories.f32", tampered);
    CHECK_THROWS_AS(load_dataset(dir2), FormatError);
    spit(dir2 / "trajectories.f32", blob.substr(0, blob.size() - 4));
    CHECK_THROWS_AS(load_dataset(dir2), FormatError);

    spit(dir2 / "trajectories.f32", blob);
    auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    manifest["horizon"] = 31;
    spit(dir2 / "manifest.json", manifest.dump());
    CHECK_THROWS_AS(load_dataset(dir2), FormatError);
    manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    manifest["version"] = kDatasetVersion + 1;
    spit(dir2 / "manifest.json", manifest.dump());
    CHECK_THROWS_AS(load_dataset(dir2), FormatError);
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("too cluttered environments fail explicitly") {
    ExpertConfig c = small_config();
    c.n_contexts = 1;
    c.context_budget = 3;
    c.rrt.max_iterations = 50;
    // Two small free pockets separated by a solid wall; the separation
    // forces start and goal into different pockets.
    Environment env({SdfPrimitive::box(Vec2(0, 0.6), Vec2(1.0, 0.4)), SdfPrimitive::box(Vec2(0, -0.6), Vec2(1.0, 0.4)),
                     SdfPrimitive::box(Vec2(0, 0), Vec2(0.1, 0.2)), SdfPrimitive::box(Vec2(-0.9, 0), Vec2(0.1, 0.2)),
                     SdfPrimitive::box(Vec2(0.9, 0), Vec2(0.1, 0.2))},
                    kBox);
    c.min_separation = 1.0;
    CHECK_THROWS_AS(generate_expert(env, point(), c, 3), PlanningFailure);
}

TEST_CASE("expert config from json") {
    const auto c = expert_config_from_json(nlohmann::json::parse(
        R"({"n_contexts": 7, "horizon": 16, "rrt": {"step_size": 0.05}, "gpmp": {"iterations": 9}})"));
    CHECK(c.n_contexts == 7);
    CHECK(c.horizon == 16);
    CHECK(c.rrt.step_size == 0.05);
    CHECK(c.gpmp.iterations == 9);
    CHECK_THROWS_AS(expert_config_from_json(nlohmann::json::parse(R"({"n_contexts": "x"})")), ConfigError);
}
