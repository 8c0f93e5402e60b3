#include "mpd/bench.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "io_util.hpp"
#include "mpd/error.hpp"

namespace mpd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

bool waypoint_in_collision(const Environment& env, const RobotModel& robot, const VectorXd& q) {
    return !config_is_free(env, robot, q, 0.0);
}

int colliding_waypoints(const Trajectory& traj, const Environment& env, const RobotModel& robot) {
    int n = 0;
    for (Index t = 0; t < traj.horizon(); ++t) {
        n += waypoint_in_collision(env, robot, traj.position(t)) ? 1 : 0;
    }
    return n;
}

int metric_success(const std::vector<Trajectory>& batch, const Environment& env, const RobotModel& robot) {
    if (batch.empty()) {
        throw std::invalid_argument("metric_success: empty batch");
    }
    for (const auto& traj : batch) {
        if (colliding_waypoints(traj, env, robot) == 0) {
            return 1;
        }
    }
    return 0;
}

double metric_intensity(const std::vector<Trajectory>& batch, const Environment& env, const RobotModel& robot) {
    long bad = 0;
    long total = 0;
    for (const auto& traj : batch) {
        bad += colliding_waypoints(traj, env, robot);
        total += traj.horizon();
    }
    return total == 0 ? 0.0 : static_cast<double>(bad) / static_cast<double>(total);
}

double metric_path_length(const Trajectory& traj) {
    double len = 0.0;
    const auto q = traj.positions();
    for (Index t = 0; t + 1 < traj.horizon(); ++t) {
        len += (q.row(t + 1) - q.row(t)).norm();
    }
    return len;
}

double metric_waypoint_variance(const std::vector<Trajectory>& batch) {
    if (batch.size() < 2) {
        throw std::invalid_argument("waypoint variance needs a batch of at least two trajectories");
    }
    const Index horizon = batch.front().horizon();
    for (const auto& t : batch) {
        if (t.horizon() != horizon || t.dof() != batch.front().dof()) {
            throw DimensionError("waypoint variance: trajectories differ in shape");
        }
    }
    double total = 0.0;
    std::vector<double> dists;
    for (Index t = 0; t < horizon; ++t) {
        dists.clear();
        for (std::size_t i = 0; i < batch.size(); ++i) {
            for (std::size_t j = i + 1; j < batch.size(); ++j) {
                dists.push_back((batch[i].position(t) - batch[j].position(t)).norm());
            }
        }
        const double sd = summarize(dists).std;
        total += sd * sd;
    }
    return total;
}

Stats summarize(const std::vector<double>& values) {
    Stats s;
    s.count = static_cast<int>(values.size());
    if (values.empty()) {
        return s;
    }
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    s.mean = sum / s.count;
    double sq = 0.0;
    for (double v : values) {
        sq += (v - s.mean) * (v - s.mean);
    }
    s.std = std::sqrt(sq / s.count);
    return s;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

std::string to_string(PlannerKind kind) {
    switch (kind) {
        case PlannerKind::DiffusionPrior:
            return "diffusion-prior";
        case PlannerKind::Mpd:
            return "mpd";
        case PlannerKind::Gpmp:
            return "gpmp";
        case PlannerKind::Rrt:
            return "rrt";
        case PlannerKind::PrimedGpmp:
            return "primed-gpmp";
    }
    return "unknown";
}

PlannerKind planner_kind_from_string(const std::string& s) {
    for (auto k : {PlannerKind::DiffusionPrior, PlannerKind::Mpd, PlannerKind::Gpmp, PlannerKind::Rrt,
                   PlannerKind::PrimedGpmp}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    throw ConfigError("unknown planner '" + s + "'");
}

GuidanceConfig guidance_config_from_json(const json& j) {
    GuidanceConfig g;
    try {
        g.drop_sigma_scaling = j.value("drop_sigma_scaling", g.drop_sigma_scaling);
        g.step_weights = j.value("step_weights", g.step_weights);
        g.guide_steps_per_denoise = j.value("guide_steps_per_denoise", g.guide_steps_per_denoise);
        g.clip_denoised = j.value("clip_denoised", g.clip_denoised);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad guidance config: ") + e.what());
    }
    if (g.guide_steps_per_denoise < 1) {
        throw ConfigError("guide_steps_per_denoise must be >= 1");
    }
    return g;
}

bool RunConfig::needs_model() const {
    return planner == PlannerKind::DiffusionPrior || planner == PlannerKind::Mpd ||
           (planner == PlannerKind::PrimedGpmp && prime == "diffusion");
}

namespace {

json load_ref(const json& j, const std::filesystem::path& base, const char* what) {
    if (j.is_string()) {
        const auto path = base / j.get<std::string>();
        if (!std::filesystem::exists(path)) {
            throw ConfigError(std::string(what) + " file not found: " + path.string());
        }
        try {
            return json::parse(detail::read_file(path));
        } catch (const json::exception& e) {
            throw ConfigError(std::string("cannot parse ") + what + " file: " + e.what());
        }
    }
    return j;
}

}  // namespace

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base) {
    RunConfig c;
    try {
        if (!j.contains("environment") || !j.contains("robot") || !j.contains("planner")) {
            throw ConfigError("run config needs 'environment', 'robot' and 'planner'");
        }
        c.env = environment_from_json(load_ref(j.at("environment"), base, "environment"));
        c.robot = robot_from_json(load_ref(j.at("robot"), base, "robot"));
        c.planner = planner_kind_from_string(j.at("planner").get<std::string>());
        c.prime = j.value("prime", c.prime);
        if (c.prime != "diffusion" && c.prime != "rrt") {
            throw ConfigError("prime must be 'diffusion' or 'rrt'");
        }
        if (j.contains("model")) {
            c.model_path = base / j.at("model").get<std::string>();
        }
        if (j.contains("schedule")) {
            const json& s = j.at("schedule");
            ScheduleSpec spec;
            spec.kind = schedule_kind_from_string(s.value("kind", to_string(spec.kind)));
            spec.steps = s.value("steps", spec.steps);
            spec.beta_min = s.value("beta_min", spec.beta_min);
            spec.beta_max = s.value("beta_max", spec.beta_max);
            c.schedule = spec;
        }
        if (j.contains("guidance")) {
            c.guidance = guidance_config_from_json(j.at("guidance"));
        }
        c.cost_terms = cost_terms_from_json(j.value("costs", json::object()));
        c.gp_sigma2 = j.value("gp_sigma2", c.gp_sigma2);
        c.horizon = j.value("horizon", c.horizon);
        c.dt = j.value("dt", c.dt);
        if (j.contains("gpmp")) {
            c.gpmp = gpmp_params_from_json(j.at("gpmp"));
        }
        if (j.contains("rrt")) {
            c.rrt = rrt_params_from_json(j.at("rrt"));
        }
        c.batch = j.value("batch", c.batch);
        c.n_contexts = j.value("n_contexts", c.n_contexts);
        c.seed = j.value("seed", c.seed);
        c.endpoint_margin = j.value("endpoint_margin", c.endpoint_margin);
        c.min_separation = j.value("min_separation", c.min_separation);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad run config: ") + e.what());
    }
    if (c.batch < 1 || c.n_contexts < 1 || c.horizon < 3 || !(c.dt > 0.0) || !(c.gp_sigma2 > 0.0)) {
        throw ConfigError("run config values out of range");
    }
    if (c.needs_model() && c.model_path.empty()) {
        throw ConfigError("planner '" + to_string(c.planner) + "' needs a 'model' checkpoint");
    }
    if (c.needs_model() && !std::filesystem::exists(c.model_path)) {
        throw ConfigError("model checkpoint not found: " + c.model_path.string());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

std::vector<Query> benchmark_contexts(const RunConfig& cfg) {
    std::vector<Query> out;
    for (int i = 0; i < cfg.n_contexts; ++i) {
        Rng rng(derive_seed(cfg.seed, 0xC0000 + static_cast<std::uint64_t>(i)));
        VectorXd qs, qg;
        for (int tries = 0; tries < 1000; ++tries) {
            qs = sample_free_config(cfg.env, cfg.robot, rng, cfg.endpoint_margin);
            qg = sample_free_config(cfg.env, cfg.robot, rng, cfg.endpoint_margin);
            round_to_float(qs);
            round_to_float(qg);
            if ((qg - qs).norm() >= cfg.min_separation && config_is_free(cfg.env, cfg.robot, qs) &&
                config_is_free(cfg.env, cfg.robot, qg)) {
                break;
            }
        }
        out.emplace_back(qs, qg);
    }
    return out;
}

namespace {

// Same spline preparation as the expert pipeline.
constexpr double kRrtDensifySpacing = 0.05;

VectorXd rest_state(const VectorXd& q) {
    VectorXd s = VectorXd::Zero(2 * q.size());
    s.head(q.size()) = q;
    return s;
}

std::vector<Trajectory> rrt_batch(const RunConfig& cfg, const VectorXd& qs, const VectorXd& qg, Rng& rng) {
    std::vector<Trajectory> out;
    for (int b = 0; b < cfg.batch; ++b) {
        Rng local(derive_seed(rng(), static_cast<std::uint64_t>(b)));
        const RrtResult r = rrt_connect(cfg.env, cfg.robot, qs, qg, cfg.rrt, local);
        if (r.success) {
            const Path path = shortcut_path(cfg.env, cfg.robot, r.path, cfg.rrt.check_resolution, cfg.rrt.margin);
            out.push_back(bspline_smooth(densify_path(path, kRrtDensifySpacing), cfg.horizon, cfg.dt));
        }
    }
    if (out.empty()) {
        throw PlanningFailure("rrt found no path");
    }
    return out;
}

std::vector<Trajectory> optimized(const std::vector<GpmpOutcome>& outcomes) {
    std::vector<Trajectory> out;
    std::string first_error;
    for (const auto& o : outcomes) {
        if (o.result) {
            out.push_back(o.result->trajectory);
        } else if (first_error.empty()) {
            first_error = o.error;
        }
    }
    if (out.empty()) {
        throw PlanningFailure("every gpmp run failed: " + first_error);
    }
    return out;
}

}  // namespace

MetricReport run_benchmark(const RunConfig& cfg, const DenoiserModel* model, const std::vector<Query>& contexts) {
    if (cfg.needs_model() && model == nullptr) {
        throw ConfigError("planner '" + to_string(cfg.planner) + "' needs a trained model");
    }
    if (model != nullptr && cfg.needs_model() &&
        (model->horizon() != cfg.horizon || model->state_dim() != 2 * cfg.robot.dof())) {
        throw ConfigError("model shape does not match the run horizon / robot");
    }
    const GpParams gp = build_gp_params(cfg.dt, cfg.robot.dof(), cfg.gp_sigma2);
    const CostSuite suite(cfg.env, cfg.robot, gp, cfg.cost_terms);
    std::optional<NoiseSchedule> schedule;
    if (model != nullptr) {
        schedule = cfg.schedule ? cfg.schedule->build() : model->schedule.build();
    }
    std::optional<GpmpOptimizer> optimizer;
    if (cfg.planner == PlannerKind::Gpmp) {
        optimizer.emplace(suite, cfg.horizon, cfg.gpmp);
    }

    MetricReport report;
    report.planner = to_string(cfg.planner);
    report.seed = cfg.seed;
    report.batch = cfg.batch;
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        const auto& [qs, qg] = contexts[i];
        ContextResult row;
        row.id = static_cast<int>(i);
        row.q_start = qs;
        row.q_goal = qg;
        Rng rng(derive_seed(cfg.seed, 0x5A000 + i));
        const auto start = std::chrono::steady_clock::now();
        std::vector<Trajectory> batch;
        try {
            switch (cfg.planner) {
                case PlannerKind::DiffusionPrior:
                case PlannerKind::Mpd:
                    batch = mpd_sample(*schedule, cfg.guidance, *model, model->normalizer,
                                       cfg.planner == PlannerKind::Mpd ? &suite : nullptr, rest_state(qs),
                                       rest_state(qg), cfg.batch, cfg.dt, rng);
                    break;
                case PlannerKind::Gpmp: {
                    // Deterministic from a deterministic init: optimize once, replicate.
                    Trajectory init = straight_line_init(qs, qg, cfg.horizon, cfg.dt);
                    init.states.row(0) = rest_state(qs).transpose();
                    init.states.row(cfg.horizon - 1) = rest_state(qg).transpose();
                    const GpmpResult r = optimizer->optimize(init);
                    batch.assign(static_cast<std::size_t>(cfg.batch), r.trajectory);
                    break;
                }
                case PlannerKind::Rrt:
                    batch = rrt_batch(cfg, qs, qg, rng);
                    break;
                case PlannerKind::PrimedGpmp: {
                    const std::vector<Trajectory> priors =
                        cfg.prime == "rrt" ? rrt_batch(cfg, qs, qg, rng)
                                           : mpd_sample(*schedule, cfg.guidance, *model, model->normalizer, nullptr,
                                                        rest_state(qs), rest_state(qg), cfg.batch, cfg.dt, rng);
                    batch = optimized(primed_gpmp(priors, suite, cfg.gpmp));
                    break;
                }
            }
            row.ok = true;
        } catch (const PlanningFailure& e) {
            row.error = e.what();
        }
        row.time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (row.ok) {
            row.n_trajectories = static_cast<int>(batch.size());
            row.success = metric_success(batch, cfg.env, cfg.robot);
            row.intensity = metric_intensity(batch, cfg.env, cfg.robot);
            double pl = 0.0;
            for (const auto& t : batch) {
                pl += metric_path_length(t);
            }
            row.path_length = pl / static_cast<double>(batch.size());
            if (batch.size() >= 2) {
                row.waypoint_variance = metric_waypoint_variance(batch);
            }
            if (cfg.keep_trajectories) {
                row.trajectories = std::move(batch);
            }
        }
        report.contexts.push_back(std::move(row));
    }

    std::vector<double> success, intensity, length, variance, time;
    for (const auto& r : report.contexts) {
        success.push_back(r.success);
        time.push_back(r.time_s);
        if (!r.ok) {
            ++report.n_failed;
            continue;
        }
        intensity.push_back(r.intensity);
        length.push_back(r.path_length);
        if (r.waypoint_variance) {
            variance.push_back(*r.waypoint_variance);
        }
    }
    report.success = summarize(success);
    report.intensity = summarize(intensity);
    report.path_length = summarize(length);
    report.waypoint_variance = summarize(variance);
    report.time_s = summarize(time);
    return report;
}

MetricReport run_benchmark(const RunConfig& cfg, const DenoiserModel* model) {
    return run_benchmark(cfg, model, benchmark_contexts(cfg));
}

json to_json(const MetricReport& report, bool include_time) {
    auto stats = [](const Stats& s) { return json{{"mean", s.mean}, {"std", s.std}, {"count", s.count}}; };
    json rows = json::array();
    for (const auto& r : report.contexts) {
        json row{{"id", r.id},
                 {"q_start", std::vector<double>(r.q_start.data(), r.q_start.data() + r.q_start.size())},
                 {"q_goal", std::vector<double>(r.q_goal.data(), r.q_goal.data() + r.q_goal.size())},
                 {"ok", r.ok},
                 {"error", r.error},
                 {"n_trajectories", r.n_trajectories},
                 {"success", r.success},
                 {"intensity", r.intensity},
                 {"path_length", r.path_length},
                 {"waypoint_variance", r.waypoint_variance ? json(*r.waypoint_variance) : json(nullptr)}};
        if (include_time) {
            row["time_s"] = r.time_s;
        }
        rows.push_back(std::move(row));
    }
    json aggregate{{"success", stats(report.success)},
                   {"intensity", stats(report.intensity)},
                   {"path_length", stats(report.path_length)},
                   {"waypoint_variance", stats(report.waypoint_variance)},
                   {"n_failed", report.n_failed}};
    if (include_time) {
        aggregate["time_s"] = stats(report.time_s);
    }
    return json{{"planner", report.planner},
                {"seed", report.seed},
                {"batch", report.batch},
                {"contexts", rows},
                {"aggregate", aggregate}};
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

std::string render_svg(const std::vector<Trajectory>& batch, const Environment& env, const RobotModel& robot) {
    if (robot.kind() != RobotKind::PointMass2D) {
        throw Unsupported("render_svg only draws 2D point-mass scenes");
    }
    constexpr double kSize = 512.0;
    const Bounds2& b = env.bounds();
    const double scale = kSize / std::max(b.hi.x() - b.lo.x(), b.hi.y() - b.lo.y());
    auto px = [&](double x) { return (x - b.lo.x()) * scale; };
    auto py = [&](double y) { return (b.hi.y() - y) * scale; };
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    const double w = (b.hi.x() - b.lo.x()) * scale;
    const double h = (b.hi.y() - b.lo.y()) * scale;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
       << ' ' << h << "\">\n"
       << "<style>.base{fill:#8c8c8c}.extra{fill:#d62728}.free{stroke:#2ca02c}.colliding{stroke:#ff7f0e}"
          ".traj{fill:none;stroke-width:1.2;stroke-opacity:0.7}.start{fill:#1f77b4}.goal{fill:#9467bd}</style>\n"
       << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\" stroke=\"black\"/>\n";
    const std::size_t n_base = env.primitives().size();
    for (std::size_t i = 0; i < env.size(); ++i) {
        const SdfPrimitive& p = env.primitive(i);
        const char* cls = i < n_base ? "obstacle base" : "obstacle extra";
        if (p.kind == PrimitiveKind::Sphere) {
            os << "<circle class=\"" << cls << "\" cx=\"" << px(p.center.x()) << "\" cy=\"" << py(p.center.y())
               << "\" r=\"" << p.radius * scale << "\"/>\n";
        } else {
            os << "<rect class=\"" << cls << "\" x=\"" << px(p.center.x() - p.half_extents.x()) << "\" y=\""
               << py(p.center.y() + p.half_extents.y()) << "\" width=\"" << 2.0 * p.half_extents.x() * scale
               << "\" height=\"" << 2.0 * p.half_extents.y() * scale << "\"/>\n";
        }
    }
    for (const auto& traj : batch) {
        const bool free = colliding_waypoints(traj, env, robot) == 0;
        os << "<polyline class=\"traj " << (free ? "free" : "colliding") << "\" points=\"";
        for (Index t = 0; t < traj.horizon(); ++t) {
            os << (t == 0 ? "" : " ") << px(traj.states(t, 0)) << ',' << py(traj.states(t, 1));
        }
        os << "\"/>\n";
    }
    if (!batch.empty()) {
        const Trajectory& t = batch.front();
        os << "<circle class=\"start\" cx=\"" << px(t.states(0, 0)) << "\" cy=\"" << py(t.states(0, 1))
           << "\" r=\"5\"/>\n";
        os << "<circle class=\"goal\" cx=\"" << px(t.states(t.horizon() - 1, 0)) << "\" cy=\""
           << py(t.states(t.horizon() - 1, 1)) << "\" r=\"5\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void render_svg(const std::vector<Trajectory>& batch, const Environment& env, const RobotModel& robot,
                const std::filesystem::path& path) {
    detail::write_file(path, render_svg(batch, env, robot));
}

}  // namespace mpd
