#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpd/costs.hpp"
#include "mpd/denoiser.hpp"
#include "mpd/diffusion.hpp"
#include "mpd/geometry.hpp"
#include "mpd/planners.hpp"
#include "mpd/trajectory.hpp"

namespace mpd {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// A waypoint collides when any of its spheres has SDF <= radius.
bool waypoint_in_collision(const Environment& env, const RobotModel& robot, const Eigen::VectorXd& q);
int colliding_waypoints(const Trajectory& traj, const Environment& env, const RobotModel& robot);

/// 1 if at least one trajectory has no colliding waypoint.
int metric_success(const std::vector<Trajectory>& batch, const Environment& env, const RobotModel& robot);
/// Colliding waypoints over all waypoints of the batch (pooled).
double metric_intensity(const std::vector<Trajectory>& batch, const Environment& env, const RobotModel& robot);
/// sum_t |q_{t+1} - q_t|
double metric_path_length(const Trajectory& traj);
/// sum over t of the population variance of all pairwise waypoint distances
/// at t. Needs a batch of at least two.
double metric_waypoint_variance(const std::vector<Trajectory>& batch);

struct Stats {
    double mean = 0.0;
    double std = 0.0;  // population
    int count = 0;
};

Stats summarize(const std::vector<double>& values);

// ---------------------------------------------------------------------------
// Benchmark runs
// ---------------------------------------------------------------------------

enum class PlannerKind { DiffusionPrior, Mpd, Gpmp, Rrt, PrimedGpmp };

std::string to_string(PlannerKind kind);
PlannerKind planner_kind_from_string(const std::string& s);

GuidanceConfig guidance_config_from_json(const nlohmann::json& j);

struct RunConfig {
    Environment env;  // evaluation environment, extra obstacles included
    RobotModel robot;
    PlannerKind planner = PlannerKind::Mpd;
    /// Prior for primed-gpmp: "diffusion" or "rrt".
    std::string prime = "diffusion";
    std::filesystem::path model_path;
    std::optional<ScheduleSpec> schedule;  // overrides the checkpoint's schedule
    GuidanceConfig guidance;
    std::vector<CostTerm> cost_terms;
    double gp_sigma2 = 1.0;
    Eigen::Index horizon = 64;
    double dt = 0.08;
    GpmpParams gpmp;
    RrtParams rrt;
    int batch = 100;
    int n_contexts = 20;
    std::uint64_t seed = 0;
    double endpoint_margin = 0.0;
    double min_separation = 0.0;
    bool keep_trajectories = false;

    bool needs_model() const;
};

/// Relative file references (environment, robot, model) resolve against `base`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base);

struct ContextResult {
    int id = 0;
    Eigen::VectorXd q_start, q_goal;
    bool ok = false;
    std::string error;
    double time_s = 0.0;
    int n_trajectories = 0;
    int success = 0;
    double intensity = 0.0;
    double path_length = 0.0;  // batch mean
    std::optional<double> waypoint_variance;
    std::vector<Trajectory> trajectories;  // filled when keep_trajectories
};

struct MetricReport {
    std::string planner;
    std::uint64_t seed = 0;
    int batch = 0;
    std::vector<ContextResult> contexts;
    /// Success counts failed contexts as 0; the other metrics use planned contexts only.
    Stats success, intensity, path_length, waypoint_variance, time_s;
    int n_failed = 0;
};

/// Evaluation contexts (free in `cfg.env`) depend only on cfg.seed, so all
/// planners see the same start/goal pairs and the same per-context noise seed.
using Query = std::pair<Eigen::VectorXd, Eigen::VectorXd>;  // (q_start, q_goal)

std::vector<Query> benchmark_contexts(const RunConfig& cfg);

MetricReport run_benchmark(const RunConfig& cfg, const DenoiserModel* model);
/// Same, on caller-provided queries (row i uses noise stream i of cfg.seed).
MetricReport run_benchmark(const RunConfig& cfg, const DenoiserModel* model, const std::vector<Query>& queries);

/// `include_time` = false drops wall-clock fields (for determinism checks).
nlohmann::json to_json(const MetricReport& report, bool include_time = true);

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// SVG of a 2D point-mass scene. Throws Unsupported for other robots.
std::string render_svg(const std::vector<Trajectory>& batch, const Environment& env, const RobotModel& robot);
void render_svg(const std::vector<Trajectory>& batch, const Environment& env, const RobotModel& robot,
                const std::filesystem::path& path);

}  // namespace mpd
