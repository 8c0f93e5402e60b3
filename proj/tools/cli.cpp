#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mpd/bench.hpp"
#include "mpd/dataset.hpp"
#include "mpd/denoiser.hpp"
#include "mpd/error.hpp"
#include "mpd/geometry.hpp"

namespace mpd::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Eigen::VectorXd;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out = ".";
};

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
}

json resolve(const json& j, const fs::path& base) {
    if (j.is_string()) {
        return read_json(base / j.get<std::string>());
    }
    return j;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

fs::path config_dir(const Common& c) { return fs::path(c.config).parent_path(); }

std::uint64_t pick_seed(const Common& c, const json& cfg) {
    return c.seed_given ? c.seed : cfg.value("seed", std::uint64_t{0});
}

VectorXd vec(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json states_json(const Trajectory& t) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < t.horizon(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(t.state_dim()));
        for (Eigen::Index c = 0; c < t.state_dim(); ++c) {
            row[static_cast<std::size_t>(c)] = t.states(r, c);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

Trajectory traj_from_json(const json& rows, double dt) {
    const auto h = static_cast<Eigen::Index>(rows.size());
    if (h < 2) {
        throw ConfigError("trajectory needs at least two rows");
    }
    const auto d = static_cast<Eigen::Index>(rows.at(0).size());
    Eigen::MatrixXd s(h, d);
    for (Eigen::Index r = 0; r < h; ++r) {
        const auto row = rows.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
        if (static_cast<Eigen::Index>(row.size()) != d) {
            throw ConfigError("ragged trajectory rows");
        }
        for (Eigen::Index c = 0; c < d; ++c) {
            s(r, c) = row[static_cast<std::size_t>(c)];
        }
    }
    return Trajectory(std::move(s), dt);
}

// ---- subcommands ----------------------------------------------------------

int gen_env(const Common& c, std::ostream& out) {
    const json cfg = read_json(c.config);
    const EnvGenConfig gen = env_gen_config_from_json(cfg);
    Rng rng(pick_seed(c, cfg));
    const Environment env = random_environment(gen, rng);
    fs::create_directories(c.out);
    write_json(fs::path(c.out) / "environment.json", to_json(env));
    out << "wrote " << (fs::path(c.out) / "environment.json").string() << " (" << env.primitives().size()
        << " obstacles + " << env.extra_primitives().size() << " extra)\n";
    return 0;
}

int gen_data(const Common& c, std::ostream& out) {
    const json cfg = read_json(c.config);
    const fs::path base = config_dir(c);
    if (!cfg.contains("environment") || !cfg.contains("robot")) {
        throw ConfigError("gen-data config needs 'environment' and 'robot'");
    }
    const Environment env = environment_from_json(resolve(cfg.at("environment"), base));
    const RobotModel robot = robot_from_json(resolve(cfg.at("robot"), base));
    const ExpertConfig expert = expert_config_from_json(cfg.value("dataset", json::object()));
    const double val_fraction = cfg.value("val_fraction", 0.05);
    const std::uint64_t seed = pick_seed(c, cfg);
    fs::create_directories(c.out);
    std::ofstream log(fs::path(c.out) / "gen-data.log.jsonl", std::ios::trunc);
    // Expert data never sees the extra (evaluation-only) obstacles.
    Dataset data = generate_expert(env.without_extra(), robot, expert, seed, &log);
    data.split = split_dataset(data, val_fraction, derive_seed(seed, 0x5b1));
    save_dataset(data, c.out);
    out << "wrote " << data.trajectories.size() << " trajectories over " << data.contexts.size() << " contexts to "
        << c.out << '\n';
    return 0;
}

int train_cmd(const Common& c, std::ostream& out) {
    const json cfg = read_json(c.config);
    const fs::path base = config_dir(c);
    if (!cfg.contains("dataset")) {
        throw ConfigError("train config needs 'dataset'");
    }
    const Dataset data = load_dataset(base / cfg.at("dataset").get<std::string>());
    DenoiserConfig dcfg = denoiser_config_from_json(cfg.value("denoiser", json::object()));
    dcfg.horizon = data.horizon;
    dcfg.state_dim = data.state_dim();
    dcfg.validate();
    TrainConfig tcfg = train_config_from_json(cfg.value("training", json::object()));
    tcfg.seed = pick_seed(c, cfg.value("training", json::object()));
    if (c.seed_given) {
        tcfg.seed = c.seed;
    }
    ScheduleSpec spec;
    if (cfg.contains("schedule")) {
        const json& s = cfg.at("schedule");
        spec.kind = schedule_kind_from_string(s.value("kind", to_string(spec.kind)));
        spec.steps = s.value("steps", spec.steps);
        spec.beta_min = s.value("beta_min", spec.beta_min);
        spec.beta_max = s.value("beta_max", spec.beta_max);
    }
    const NoiseSchedule schedule = spec.build();

    DenoiserModel model(dcfg, derive_seed(tcfg.seed, 0x1417));
    model.normalizer = data.normalizer;
    model.schedule = spec;
    std::vector<int> train_ids, val_ids;
    if (data.split) {
        train_ids = data.split->train_contexts;
        val_ids = data.split->val_contexts;
    } else {
        for (const auto& ctx : data.contexts) {
            train_ids.push_back(ctx.id);
        }
    }
    const auto train_set = data.normalized(data.indices_of(train_ids));
    const auto val_set = data.normalized(data.indices_of(val_ids));
    fs::create_directories(c.out);
    std::ofstream log(fs::path(c.out) / "train.log.jsonl", std::ios::trunc);
    const TrainResult result = train(train_set, val_set, schedule, model, tcfg, &log);
    save_model(model, fs::path(c.out) / "model.bin");
    json history = json::array();
    for (const auto& r : result.history) {
        history.push_back({{"step", r.step},
                           {"train_loss", r.train_loss},
                           {"val_loss", r.val_loss ? json(*r.val_loss) : json(nullptr)}});
    }
    write_json(fs::path(c.out) / "loss_history.json",
               {{"history", history}, {"best_step", result.best_step}, {"early_stopped", result.early_stopped}});
    out << "trained " << result.step_losses.size() << " steps, best step " << result.best_step << ", model at "
        << (fs::path(c.out) / "model.bin").string() << '\n';
    return 0;
}

RunConfig load_run_config(const Common& c, json& cfg) {
    cfg = read_json(c.config);
    RunConfig run = run_config_from_json(cfg, config_dir(c));
    if (c.seed_given) {
        run.seed = c.seed;
    }
    return run;
}

std::optional<DenoiserModel> load_if_needed(const RunConfig& run) {
    if (!run.needs_model()) {
        return std::nullopt;
    }
    DenoiserModel model = load_model(run.model_path);
    return model;
}

int plan_cmd(const Common& c, std::ostream& out) {
    json cfg;
    RunConfig run = load_run_config(c, cfg);
    run.n_contexts = 1;
    run.keep_trajectories = true;
    if (cfg.contains("q_start") != cfg.contains("q_goal")) {
        throw ConfigError("give both 'q_start' and 'q_goal' or neither");
    }
    const auto model = load_if_needed(run);
    MetricReport report;
    if (cfg.contains("q_start")) {
        const VectorXd qs = vec(cfg.at("q_start"));
        const VectorXd qg = vec(cfg.at("q_goal"));
        if (qs.size() != run.robot.dof() || qg.size() != run.robot.dof()) {
            throw ConfigError("q_start / q_goal dimension does not match the robot");
        }
        if (!config_is_free(run.env, run.robot, qs) || !config_is_free(run.env, run.robot, qg)) {
            throw PlanningFailure("start or goal configuration is in collision");
        }
        report = run_benchmark(run, model ? &*model : nullptr, {Query{qs, qg}});
    } else {
        report = run_benchmark(run, model ? &*model : nullptr);
    }
    const ContextResult& row = report.contexts.front();
    fs::create_directories(c.out);
    json trajs = json::array();
    for (const auto& t : row.trajectories) {
        trajs.push_back(states_json(t));
    }
    json result = to_json(report);
    result["dt"] = run.dt;
    result["trajectories"] = trajs;
    write_json(fs::path(c.out) / "plan.json", result);
    if (run.robot.kind() == RobotKind::PointMass2D && !row.trajectories.empty()) {
        render_svg(row.trajectories, run.env, run.robot, fs::path(c.out) / "plan.svg");
    }
    if (!row.ok) {
        throw PlanningFailure(row.error);
    }
    out << "planned " << row.n_trajectories << " trajectories, success " << row.success << ", intensity "
        << row.intensity << '\n';
    if (row.success == 0) {
        throw PlanningFailure("no collision-free trajectory in the batch");
    }
    return 0;
}

int bench_cmd(const Common& c, std::ostream& out) {
    json cfg;
    const RunConfig run = load_run_config(c, cfg);
    const auto model = load_if_needed(run);
    const MetricReport report = run_benchmark(run, model ? &*model : nullptr);
    fs::create_directories(c.out);
    write_json(fs::path(c.out) / "report.json", to_json(report));
    out << report.planner << ": success " << report.success.mean << " +- " << report.success.std << ", intensity "
        << report.intensity.mean << ", path length " << report.path_length.mean << ", failed contexts "
        << report.n_failed << '\n';
    if (report.n_failed == static_cast<int>(report.contexts.size())) {
        throw PlanningFailure("planner failed on every context");
    }
    return 0;
}

int render_cmd(const Common& c, std::ostream& out) {
    const json cfg = read_json(c.config);
    const fs::path base = config_dir(c);
    std::vector<Trajectory> batch;
    Environment env;
    RobotModel robot;
    if (cfg.contains("dataset")) {
        const Dataset data = load_dataset(base / cfg.at("dataset").get<std::string>());
        env = data.env;
        robot = data.robot;
        const int ctx = cfg.value("context", -1);
        for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
            if (ctx < 0 || data.context_of[i] == ctx) {
                batch.push_back(data.trajectories[i]);
            }
        }
    } else {
        if (!cfg.contains("environment") || !cfg.contains("robot")) {
            throw ConfigError("render config needs 'dataset' or 'environment' + 'robot'");
        }
        env = environment_from_json(resolve(cfg.at("environment"), base));
        robot = robot_from_json(resolve(cfg.at("robot"), base));
        if (cfg.contains("trajectories")) {
            const json plan = resolve(cfg.at("trajectories"), base);
            const double dt = plan.value("dt", 1.0);
            for (const auto& rows : plan.at("trajectories")) {
                batch.push_back(traj_from_json(rows, dt));
            }
        }
    }
    fs::create_directories(c.out);
    render_svg(batch, env, robot, fs::path(c.out) / "render.svg");
    out << "wrote " << (fs::path(c.out) / "render.svg").string() << '\n';
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Diffusion-based motion planning toolkit"};
    app.require_subcommand(1);
    struct Sub {
        const char* name;
        const char* help;
        int (*fn)(const Common&, std::ostream&);
    };
    const Sub subs[] = {
        {"gen-env", "Generate a random 2D obstacle environment", gen_env},
        {"gen-data", "Generate an expert trajectory dataset", gen_data},
        {"train", "Train the denoising model on a dataset", train_cmd},
        {"plan", "Plan one query with a configured planner", plan_cmd},
        {"bench", "Benchmark a planner over random contexts", bench_cmd},
        {"render", "Render trajectories and obstacles to SVG", render_cmd},
    };
    Common common;
    std::vector<std::pair<CLI::App*, const Sub*>> registered;
    for (const auto& s : subs) {
        CLI::App* sub = app.add_subcommand(s.name, s.help);
        sub->add_option("--config", common.config, "JSON configuration file")->required();
        sub->add_option("--seed", common.seed, "Random seed (overrides the config)");
        sub->add_option("--out", common.out, "Output directory");
        registered.emplace_back(sub, &s);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    for (const auto& [sub, s] : registered) {
        if (!sub->parsed()) {
            continue;
        }
        common.seed_given = sub->count("--seed") > 0;
        try {
            return s->fn(common, out);
        } catch (const PlanningFailure& e) {
            err << "planner failure: " << e.what() << '\n';
            return kExitPlannerFailure;
        } catch (const std::exception& e) {
            err << "error: " << e.what() << '\n';
            return kExitConfig;
        }
    }
    return kExitConfig;
}

}  // namespace mpd::cli
