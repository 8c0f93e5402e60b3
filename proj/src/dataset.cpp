#include "mpd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "io_util.hpp"
#include "mpd/error.hpp"

namespace mpd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

std::vector<double> to_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

VectorXd from_vec(const std::vector<double>& v) {
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

VectorXd rounded(VectorXd v) {
    round_to_float(v);
    return v;
}

std::string hex32(std::uint32_t x) {
    std::ostringstream os;
    os << std::hex << std::setw(8) << std::setfill('0') << x;
    return os.str();
}

}  // namespace

ExpertConfig expert_config_from_json(const json& j) {
    ExpertConfig c;
    try {
        c.n_contexts = j.value("n_contexts", c.n_contexts);
        c.n_per_context = j.value("n_per_context", c.n_per_context);
        c.horizon = j.value("horizon", c.horizon);
        c.dt = j.value("dt", c.dt);
        c.min_separation = j.value("min_separation", c.min_separation);
        c.endpoint_margin = j.value("endpoint_margin", c.endpoint_margin);
        c.attempts_factor = j.value("attempts_factor", c.attempts_factor);
        c.context_budget = j.value("context_budget", c.context_budget);
        c.shortcut = j.value("shortcut", c.shortcut);
        c.densify_spacing = j.value("densify_spacing", c.densify_spacing);
        c.dense_substeps = j.value("dense_substeps", c.dense_substeps);
        c.gp_sigma2 = j.value("gp_sigma2", c.gp_sigma2);
        c.gp_lambda = j.value("gp_lambda", c.gp_lambda);
        c.collision_lambda = j.value("collision_lambda", c.collision_lambda);
        c.collision_margin = j.value("collision_margin", c.collision_margin);
        c.limits_lambda = j.value("limits_lambda", c.limits_lambda);
        if (j.contains("rrt")) {
            c.rrt = rrt_params_from_json(j.at("rrt"));
        }
        if (j.contains("gpmp")) {
            c.gpmp = gpmp_params_from_json(j.at("gpmp"));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad dataset config: ") + e.what());
    }
    if (c.n_contexts < 1 || c.n_per_context < 1 || c.horizon < 3 || !(c.dt > 0.0) || c.attempts_factor < 1 ||
        c.context_budget < 1 || c.densify_spacing < 0.0 || c.dense_substeps < 0 || !(c.gp_sigma2 > 0.0) || c.gp_lambda < 0.0 ||
        c.collision_lambda < 0.0 || c.limits_lambda < 0.0 || c.min_separation < 0.0) {
        throw ConfigError("dataset settings out of range");
    }
    return c;
}

bool dense_collision_free(const Environment& env, const RobotModel& robot, const Trajectory& traj,
                          int substeps) {
    const Index n = traj.horizon();
    for (Index t = 0; t < n; ++t) {
        const VectorXd q = traj.position(t);
        if (!config_is_free(env, robot, q)) {
            return false;
        }
        if (t + 1 < n) {
            const VectorXd next = traj.position(t + 1);
            for (int i = 1; i <= substeps; ++i) {
                const double s = static_cast<double>(i) / (substeps + 1);
                if (!config_is_free(env, robot, q + s * (next - q))) {
                    return false;
                }
            }
        }
    }
    return true;
}

Dataset generate_expert(const Environment& env, const RobotModel& robot, const ExpertConfig& cfg,
                        std::uint64_t seed, std::ostream* log) {
    cfg.rrt.validate();
    cfg.gpmp.validate();
    const Index dof = robot.dof();
    const GpParams gp = build_gp_params(cfg.dt, dof, cfg.gp_sigma2);
    std::vector<CostTerm> terms{CostTerm::collision(cfg.collision_lambda, cfg.collision_margin),
                                CostTerm::gp(cfg.gp_lambda)};
    if (cfg.limits_lambda > 0.0) {
        terms.push_back(CostTerm::joint_limits(cfg.limits_lambda));
    }
    if (robot.kind() == RobotKind::PlanarArm) {
        terms.push_back(CostTerm::self_collision(cfg.collision_lambda));
    }
    const CostSuite suite(env, robot, gp, terms);
    const GpmpOptimizer optimizer(suite, cfg.horizon, cfg.gpmp);

    Dataset data;
    data.env = env;
    data.robot = robot;
    data.horizon = cfg.horizon;
    data.dt = cfg.dt;
    data.n_per_context = cfg.n_per_context;

    for (int slot = 0; slot < cfg.n_contexts; ++slot) {
        const std::uint64_t slot_seed = derive_seed(seed, static_cast<std::uint64_t>(slot));
        bool filled = false;
        for (int attempt = 0; attempt < cfg.context_budget && !filled; ++attempt) {
            PlanningContext ctx;
            ctx.id = slot;
            ctx.seed = derive_seed(slot_seed, static_cast<std::uint64_t>(attempt));
            Rng rng(ctx.seed);
            ctx.q_start = rounded(sample_free_config(env, robot, rng, cfg.endpoint_margin));
            int tries = 0;
            do {
                ctx.q_goal = rounded(sample_free_config(env, robot, rng, cfg.endpoint_margin));
            } while ((ctx.q_goal - ctx.q_start).norm() < cfg.min_separation && ++tries < 1000);
            if ((ctx.q_goal - ctx.q_start).norm() < cfg.min_separation || !config_is_free(env, robot, ctx.q_start) ||
                !config_is_free(env, robot, ctx.q_goal)) {
                continue;
            }

            std::vector<Trajectory> kept;
            std::vector<TrajectoryProvenance> prov;
            const int attempts = cfg.attempts_factor * cfg.n_per_context;
            for (int k = 0; k < attempts && static_cast<int>(kept.size()) < cfg.n_per_context; ++k) {
                TrajectoryProvenance p;
                p.context = slot;
                p.attempt = k;
                p.rrt_seed = derive_seed(ctx.seed, 1000 + static_cast<std::uint64_t>(k));
                Rng rrt_rng(p.rrt_seed);
                const RrtResult rrt = rrt_connect(env, robot, ctx.q_start, ctx.q_goal, cfg.rrt, rrt_rng);
                if (!rrt.success) {
                    continue;
                }
                p.rrt_iterations = rrt.iterations;
                const Path path = cfg.shortcut
                                      ? shortcut_path(env, robot, rrt.path, cfg.rrt.check_resolution, cfg.rrt.margin)
                                      : rrt.path;
                p.path_waypoints = static_cast<int>(path.size());
                const Trajectory init = bspline_smooth(
                    cfg.densify_spacing > 0.0 ? densify_path(path, cfg.densify_spacing) : path, cfg.horizon, cfg.dt);
                GpmpResult refined;
                try {
                    refined = optimizer.optimize(init);
                } catch (const PlanningFailure&) {
                    continue;
                }
                p.gpmp_iterations = refined.iterations;
                p.cost_before = refined.cost_trace.front();
                p.cost_after = refined.cost_trace.back();
                Trajectory traj = std::move(refined.trajectory);
                round_to_float(traj.states);
                if (!dense_collision_free(env, robot, traj, cfg.dense_substeps) ||
                    !std::isfinite(gp_cost(traj, gp))) {
                    continue;
                }
                kept.push_back(std::move(traj));
                prov.push_back(p);
            }
            if (log != nullptr) {
                *log << json{{"event", "context"}, {"slot", slot}, {"attempt", attempt}, {"kept", kept.size()}}.dump()
                     << '\n';
            }
            if (kept.empty()) {
                continue;
            }
            filled = true;
            data.contexts.push_back(ctx);
            for (std::size_t i = 0; i < kept.size(); ++i) {
                data.trajectories.push_back(std::move(kept[i]));
                data.context_of.push_back(slot);
                data.provenance.push_back(prov[i]);
            }
        }
        if (!filled) {
            throw PlanningFailure("context " + std::to_string(slot) +
                                  ": no collision-free expert trajectory within the resample budget");
        }
    }
    std::vector<MatrixXd> states;
    states.reserve(data.trajectories.size());
    for (const auto& t : data.trajectories) {
        states.push_back(t.states);
    }
    data.normalizer = Normalizer::fit(states);
    return data;
}

std::vector<std::size_t> Dataset::indices_of(const std::vector<int>& context_ids) const {
    const std::set<int> wanted(context_ids.begin(), context_ids.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < context_of.size(); ++i) {
        if (wanted.count(context_of[i]) != 0) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<MatrixXd> Dataset::normalized(const std::vector<std::size_t>& indices) const {
    std::vector<MatrixXd> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        out.push_back(normalizer.normalize(trajectories.at(i).states));
    }
    return out;
}

DatasetSplit split_dataset(const Dataset& data, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError("validation fraction must lie in (0, 1)");
    }
    const auto n = static_cast<long>(data.contexts.size());
    if (n < 2) {
        throw ConfigError("need at least two contexts to split");
    }
    std::vector<int> ids;
    for (const auto& c : data.contexts) {
        ids.push_back(c.id);
    }
    Rng rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const long n_val = std::clamp(std::lround(val_fraction * static_cast<double>(n)), 1L, n - 1);
    DatasetSplit s;
    s.val_fraction = val_fraction;
    s.seed = seed;
    s.val_contexts.assign(ids.begin(), ids.begin() + n_val);
    s.train_contexts.assign(ids.begin() + n_val, ids.end());
    std::sort(s.val_contexts.begin(), s.val_contexts.end());
    std::sort(s.train_contexts.begin(), s.train_contexts.end());
    return s;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

json provenance_json(const TrajectoryProvenance& p) {
    return json{{"context", p.context},         {"attempt", p.attempt},
                {"rrt_seed", p.rrt_seed},       {"rrt_iterations", p.rrt_iterations},
                {"path_waypoints", p.path_waypoints}, {"gpmp_iterations", p.gpmp_iterations},
                {"cost_before", p.cost_before}, {"cost_after", p.cost_after}};
}

TrajectoryProvenance provenance_from_json(const json& j) {
    TrajectoryProvenance p;
    p.context = j.at("context").get<int>();
    p.attempt = j.at("attempt").get<int>();
    p.rrt_seed = j.at("rrt_seed").get<std::uint64_t>();
    p.rrt_iterations = j.at("rrt_iterations").get<int>();
    p.path_waypoints = j.at("path_waypoints").get<int>();
    p.gpmp_iterations = j.at("gpmp_iterations").get<int>();
    p.cost_before = j.at("cost_before").get<double>();
    p.cost_after = j.at("cost_after").get<double>();
    return p;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const Index H = data.horizon;
    const Index d = data.state_dim();
    const auto m = data.trajectories.size();
    std::vector<double> flat;
    flat.reserve(m * static_cast<std::size_t>(H * d));
    for (const auto& t : data.trajectories) {
        if (t.horizon() != H || t.state_dim() != d) {
            throw DimensionError("save_dataset: trajectory shape differs from the dataset");
        }
        for (Index r = 0; r < H; ++r) {
            for (Index c = 0; c < d; ++c) {
                flat.push_back(t.states(r, c));
            }
        }
    }
    const std::string blob = detail::encode_f32(flat.data(), flat.size());

    const json env_json = to_json(data.env);
    json contexts = json::array();
    for (const auto& c : data.contexts) {
        contexts.push_back({{"id", c.id}, {"seed", c.seed}, {"q_start", to_vec(c.q_start)}, {"q_goal", to_vec(c.q_goal)}});
    }
    json manifest{{"format", "mpd-dataset"},
                  {"version", kDatasetVersion},
                  {"environment", env_json},
                  {"environment_hash", hex32(detail::crc32_of(env_json.dump()))},
                  {"robot", to_json(data.robot)},
                  {"horizon", H},
                  {"state_dim", d},
                  {"dt", data.dt},
                  {"n_contexts", data.contexts.size()},
                  {"trajectories_per_context", data.n_per_context},
                  {"n_trajectories", m},
                  {"contexts", contexts},
                  {"context_of", data.context_of},
                  {"normalizer", {{"lo", to_vec(data.normalizer.lo)}, {"hi", to_vec(data.normalizer.hi)}}},
                  {"trajectories_crc32", detail::crc32_of(blob)}};
    if (data.split) {
        manifest["split"] = {{"val_fraction", data.split->val_fraction},
                             {"seed", data.split->seed},
                             {"train", data.split->train_contexts},
                             {"val", data.split->val_contexts}};
    } else {
        manifest["split"] = nullptr;
    }
    std::string prov;
    for (const auto& p : data.provenance) {
        prov += provenance_json(p).dump();
        prov += '\n';
    }
    detail::write_file(dir / "trajectories.f32", blob);
    detail::write_file(dir / "provenance.jsonl", prov);
    detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    json manifest;
    try {
        manifest = json::parse(detail::read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("corrupt dataset manifest: ") + e.what());
    }
    try {
        if (manifest.value("format", std::string()) != "mpd-dataset") {
            throw FormatError("not a dataset manifest");
        }
        if (manifest.value("version", -1) != kDatasetVersion) {
            throw FormatError("unsupported dataset version");
        }
        Dataset data;
        const json& env_json = manifest.at("environment");
        if (hex32(detail::crc32_of(env_json.dump())) != manifest.at("environment_hash").get<std::string>()) {
            throw FormatError("environment hash mismatch");
        }
        data.env = environment_from_json(env_json);
        data.robot = robot_from_json(manifest.at("robot"));
        data.horizon = manifest.at("horizon").get<Index>();
        data.dt = manifest.at("dt").get<double>();
        data.n_per_context = manifest.at("trajectories_per_context").get<int>();
        const auto d = manifest.at("state_dim").get<Index>();
        if (d != data.state_dim()) {
            throw FormatError("state dimension does not match the robot");
        }
        for (const auto& c : manifest.at("contexts")) {
            PlanningContext ctx;
            ctx.id = c.at("id").get<int>();
            ctx.seed = c.at("seed").get<std::uint64_t>();
            ctx.q_start = from_vec(c.at("q_start").get<std::vector<double>>());
            ctx.q_goal = from_vec(c.at("q_goal").get<std::vector<double>>());
            data.contexts.push_back(std::move(ctx));
        }
        if (manifest.at("n_contexts").get<std::size_t>() != data.contexts.size()) {
            throw FormatError("context count does not match the manifest");
        }
        data.context_of = manifest.at("context_of").get<std::vector<int>>();
        const auto m = manifest.at("n_trajectories").get<std::size_t>();
        if (data.context_of.size() != m) {
            throw FormatError("context assignment length does not match the trajectory count");
        }
        const std::string blob = detail::read_file(dir / "trajectories.f32");
        const std::size_t per = static_cast<std::size_t>(data.horizon * d);
        if (blob.size() != m * per * sizeof(float)) {
            throw FormatError("trajectory blob size does not match the manifest shape");
        }
        if (detail::crc32_of(blob) != manifest.at("trajectories_crc32").get<std::uint32_t>()) {
            throw FormatError("trajectory blob checksum mismatch");
        }
        std::vector<double> flat(m * per);
        detail::decode_f32(blob, flat.data(), flat.size());
        for (std::size_t i = 0; i < m; ++i) {
            MatrixXd s(data.horizon, d);
            for (Index r = 0; r < data.horizon; ++r) {
                for (Index c = 0; c < d; ++c) {
                    s(r, c) = flat[i * per + static_cast<std::size_t>(r * d + c)];
                }
            }
            data.trajectories.emplace_back(std::move(s), data.dt);
        }
        data.normalizer.lo = from_vec(manifest.at("normalizer").at("lo").get<std::vector<double>>());
        data.normalizer.hi = from_vec(manifest.at("normalizer").at("hi").get<std::vector<double>>());
        if (data.normalizer.lo.size() != d || data.normalizer.hi.size() != d) {
            throw FormatError("normalizer dimension mismatch");
        }
        if (!manifest.at("split").is_null()) {
            const json& s = manifest.at("split");
            DatasetSplit split;
            split.val_fraction = s.at("val_fraction").get<double>();
            split.seed = s.at("seed").get<std::uint64_t>();
            split.train_contexts = s.at("train").get<std::vector<int>>();
            split.val_contexts = s.at("val").get<std::vector<int>>();
            data.split = std::move(split);
        }
        const auto prov_path = dir / "provenance.jsonl";
        if (std::filesystem::exists(prov_path)) {
            std::istringstream in(detail::read_file(prov_path));
            std::string line;
            while (std::getline(in, line)) {
                if (!line.empty()) {
                    data.provenance.push_back(provenance_from_json(json::parse(line)));
                }
            }
            if (data.provenance.size() != m) {
                throw FormatError("provenance record count does not match the trajectory count");
            }
        }
        return data;
    } catch (const json::exception& e) {
        throw FormatError(std::string("corrupt dataset manifest: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("corrupt dataset manifest: ") + e.what());
    }
}

}  // namespace mpd
