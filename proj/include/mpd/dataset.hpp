#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mpd/diffusion.hpp"
#include "mpd/geometry.hpp"
#include "mpd/planners.hpp"
#include "mpd/trajectory.hpp"

namespace mpd {

struct PlanningContext {
    int id = 0;
    std::uint64_t seed = 0;
    Eigen::VectorXd q_start, q_goal;
};

struct TrajectoryProvenance {
    int context = 0;
    int attempt = 0;
    std::uint64_t rrt_seed = 0;
    int rrt_iterations = 0;
    int path_waypoints = 0;  // after shortcutting
    int gpmp_iterations = 0;
    double cost_before = 0.0;
    double cost_after = 0.0;
};

struct ExpertConfig {
    int n_contexts = 100;
    int n_per_context = 10;
    Eigen::Index horizon = 64;
    double dt = 0.08;
    /// Start and goal must be at least this far apart (config-space norm).
    double min_separation = 0.0;
    /// Extra clearance demanded of sampled endpoints.
    double endpoint_margin = 0.0;
    /// RRT attempts per context = attempts_factor * n_per_context.
    int attempts_factor = 3;
    /// Endpoint resamples allowed per context slot before giving up.
    int context_budget = 20;
    bool shortcut = true;
    /// Max segment length before spline fitting; keeps the interpolant close
    /// to the polyline at sharp corners (0 disables).
    double densify_spacing = 0.05;
    /// Sub-samples per segment in the final dense collision check.
    int dense_substeps = 10;
    double gp_sigma2 = 1.0;
    double gp_lambda = 1.0;
    double collision_lambda = 100.0;
    double collision_margin = kDefaultObstacleMargin;
    /// Joint position / velocity limit term (0 disables it).
    double limits_lambda = 100.0;
    RrtParams rrt;
    GpmpParams gpmp;
};

ExpertConfig expert_config_from_json(const nlohmann::json& j);

struct DatasetSplit {
    double val_fraction = 0.05;
    std::uint64_t seed = 0;
    std::vector<int> train_contexts, val_contexts;  // context ids, ascending
};

struct Dataset {
    Environment env;
    RobotModel robot;
    Eigen::Index horizon = 0;
    double dt = 0.0;
    int n_per_context = 0;
    std::vector<PlanningContext> contexts;
    std::vector<Trajectory> trajectories;
    std::vector<int> context_of;  // per trajectory
    std::vector<TrajectoryProvenance> provenance;
    Normalizer normalizer;
    std::optional<DatasetSplit> split;

    Eigen::Index state_dim() const { return 2 * robot.dof(); }
    /// Trajectory indices belonging to the given contexts, in storage order.
    std::vector<std::size_t> indices_of(const std::vector<int>& context_ids) const;
    /// Normalized state matrices for the given trajectory indices.
    std::vector<Eigen::MatrixXd> normalized(const std::vector<std::size_t>& indices) const;
};

/// Collision check of every waypoint plus `substeps` evenly spaced
/// positions on each segment between consecutive waypoints.
bool dense_collision_free(const Environment& env, const RobotModel& robot, const Trajectory& traj,
                          int substeps = 10);

/// RRT-Connect -> shortcut -> spline -> GPMP refinement per trajectory.
/// Only trajectories passing the dense check are kept; a context without
/// any is resampled. Throws PlanningFailure when the resample budget runs out.
/// `log`, if given, receives one JSON line per context.
Dataset generate_expert(const Environment& env, const RobotModel& robot, const ExpertConfig& cfg,
                        std::uint64_t seed, std::ostream* log = nullptr);

/// Context-granular seeded split; n_val = max(1, round(fraction * n)).
DatasetSplit split_dataset(const Dataset& data, double val_fraction, std::uint64_t seed);

inline constexpr int kDatasetVersion = 1;

/// Writes manifest.json, trajectories.f32 ([M, H, d] row-major LE float32)
/// and provenance.jsonl into `dir`.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mpd
