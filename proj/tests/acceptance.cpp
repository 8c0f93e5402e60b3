// Acceptance checks. Prints one PASS/FAIL line per criterion; the exit status
// is non-zero when any requested criterion fails.
//
//   acceptance <configs-dir> [criterion ids...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "mpd/bench.hpp"
#include "mpd/costs.hpp"
#include "mpd/dataset.hpp"
#include "mpd/denoiser.hpp"
#include "mpd/diffusion.hpp"
#include "mpd/trajectory.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mpd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kPi = std::numbers::pi;

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

// Smooth at the stencil scale: two step sizes agree.
bool smooth_here(const std::function<double(const VectorXd&)>& f, const VectorXd& x) {
    return (test::fd_gradient(f, x, 1e-6) - test::fd_gradient(f, x, 1e-5)).norm() < 1e-6;
}

// Closed-form signed distance to one primitive.
double oracle_sdf(const SdfPrimitive& p, double x, double y) {
    if (p.kind == PrimitiveKind::Sphere) {
        return std::hypot(x - p.center.x(), y - p.center.y()) - p.radius;
    }
    const double qx = std::abs(x - p.center.x()) - p.half_extents.x();
    const double qy = std::abs(y - p.center.y()) - p.half_extents.y();
    return std::hypot(std::max(qx, 0.0), std::max(qy, 0.0)) + std::min(std::max(qx, qy), 0.0);
}

bool oracle_hit(const Environment& env, double radius, double x, double y) {
    for (const auto* list : {&env.primitives(), &env.extra_primitives()}) {
        for (const auto& p : *list) {
            if (oracle_sdf(p, x, y) <= radius) {
                return true;
            }
        }
    }
    return false;
}

struct Moments {
    double mean = 0.0, var = 0.0;
};

Moments moments(const std::vector<double>& v) {
    Moments m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    for (double x : v) m.var += (x - m.mean) * (x - m.mean);
    m.var /= static_cast<double>(v.size() - 1);
    return m;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return json::parse(in);
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"mpd"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    if (code != 0) {
        std::cerr << err.str();
    }
    return code;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite
// ---------------------------------------------------------------------------

Environment clutter() {
    return Environment({SdfPrimitive::sphere(Vec2(0.3, 0.2), 0.25), SdfPrimitive::box(Vec2(-0.4, -0.3), Vec2(0.2, 0.15)),
                        SdfPrimitive::sphere(Vec2(-0.2, 0.6), 0.2)},
                       Bounds2{Vec2(-2, -2), Vec2(2, 2)});
}

RobotModel arm3() {
    return RobotModel::planar_arm({0.5, 0.5, 0.5}, VectorXd::Constant(3, -kPi), VectorXd::Constant(3, kPi),
                                  VectorXd::Constant(3, 2.0));
}

// Draws points until `need` smooth, non-trivial ones were compared.
struct FdTally {
    int checked = 0;
    double worst = 0.0;
};

template <typename Draw, typename Analytic>
FdTally fd_sweep(int need, Draw draw, const std::function<double(const VectorXd&)>& f, Analytic analytic,
                 bool skip_zero) {
    FdTally t;
    for (int attempt = 0; t.checked < need && attempt < 100 * need; ++attempt) {
        const VectorXd x = draw();
        if ((skip_zero && f(x) == 0.0) || !smooth_here(f, x)) continue;
        t.worst = std::max(t.worst, test::rel_error(analytic(x), test::fd_gradient(f, x, 1e-6)));
        ++t.checked;
    }
    return t;
}

Verdict criterion_gradients() {
    constexpr int kPoints = 100;
    constexpr double kTol = 1e-4;
    Rng rng(101);
    std::uniform_real_distribution<double> ang(-kPi, kPi), pos(-1.0, 1.0), lim(-1.5 * kPi, 1.5 * kPi), vel(-3.0, 3.0);
    const auto env = clutter();
    const auto arm = arm3();
    const auto pm = RobotModel::point_mass(0.05, Bounds2{Vec2(-1, -1), Vec2(1, 1)}, 1.0);
    std::vector<std::pair<std::string, FdTally>> rows;

    auto draw_q = [&] {
        VectorXd q(3);
        q << ang(rng), ang(rng), ang(rng);
        return q;
    };
    rows.emplace_back("collision(arm)",
                      fd_sweep(kPoints, draw_q, [&](const VectorXd& q) { return collision_cost(env, arm, q, 0.05).value; },
                               [&](const VectorXd& q) { return collision_cost(env, arm, q, 0.05).grad; }, true));
    auto draw_p = [&] {
        VectorXd q(2);
        q << pos(rng), pos(rng);
        return q;
    };
    rows.emplace_back("collision(point)",
                      fd_sweep(kPoints, draw_p, [&](const VectorXd& q) { return collision_cost(env, pm, q, 0.05).value; },
                               [&](const VectorXd& q) { return collision_cost(env, pm, q, 0.05).grad; }, true));
    rows.emplace_back("self-collision",
                      fd_sweep(kPoints, draw_q, [&](const VectorXd& q) { return self_collision_cost(arm, q, 0.3).value; },
                               [&](const VectorXd& q) { return self_collision_cost(arm, q, 0.3).grad; }, true));
    auto draw_state = [&] {
        VectorXd x(6);
        x << lim(rng), lim(rng), lim(rng), vel(rng), vel(rng), vel(rng);
        return x;
    };
    rows.emplace_back(
        "joint-limits",
        fd_sweep(kPoints, draw_state,
                 [&](const VectorXd& x) { return joint_limits_cost(arm, x.head(3), x.tail(3), 0.1).value; },
                 [&](const VectorXd& x) { return joint_limits_cost(arm, x.head(3), x.tail(3), 0.1).grad; }, true));

    const Eigen::Matrix3d goal = so3_exp_map(Eigen::Vector3d(0.0, 0.0, 0.4));
    auto draw_traj = [&] { return VectorXd(standard_normal(5 * 6, 1, rng)); };
    rows.emplace_back(
        "ee-pose",
        fd_sweep(kPoints, draw_traj,
                 [&](const VectorXd& v) { return ee_trajectory_cost(arm, Trajectory(v.reshaped(5, 6), 0.1), goal).value; },
                 [&](const VectorXd& v) {
                     return VectorXd(ee_trajectory_cost(arm, Trajectory(v.reshaped(5, 6), 0.1), goal).grad.reshaped());
                 },
                 false));

    const GpParams gp = build_gp_params(0.5, 2, 1.0);
    auto draw_gp = [&] { return VectorXd(standard_normal(6 * 4, 1, rng)); };
    rows.emplace_back("gp",
                      fd_sweep(kPoints, draw_gp, [&](const VectorXd& v) { return gp_cost(Trajectory(v.reshaped(6, 4), 0.5), gp); },
                               [&](const VectorXd& v) {
                                   return VectorXd(gp_cost_grad(Trajectory(v.reshaped(6, 4), 0.5), gp).reshaped());
                               },
                               false));

    // Denoiser backprop: d <upstream, eps_theta(x, t)> / d params.
    DenoiserConfig dc;
    dc.horizon = 8;
    dc.state_dim = 2;
    dc.channels = {4, 4, 4};
    dc.time_embed_dim = 4;
    DenoiserModel model(dc, 7);
    std::uniform_int_distribution<int> step(1, 25);
    FdTally net;
    for (int i = 0; i < kPoints; ++i) {
        model.params() = 0.5 * standard_normal(model.num_params(), 1, rng);
        const MatrixXd x = standard_normal(8, 2, rng);
        const MatrixXd up = standard_normal(8, 2, rng);
        const int t = step(rng);
        const VectorXd p0 = model.params();
        auto f = [&](const VectorXd& p) {
            model.params() = p;
            const double v = (up.array() * model.predict(x, t).array()).sum();
            model.params() = p0;
            return v;
        };
        net.worst = std::max(net.worst, test::rel_error(model.backprop(x, t, up), test::fd_gradient(f, p0, 1e-6)));
        ++net.checked;
    }
    rows.emplace_back("denoiser", net);

    Verdict v{true, ""};
    for (const auto& [name, t] : rows) {
        v.pass = v.pass && t.checked >= kPoints && t.worst < kTol;
        v.detail += name + " " + std::to_string(t.checked) + "pts max " + fmt("%.1e", t.worst) + "; ";
    }
    return v;
}

// ---------------------------------------------------------------------------
// 2. Gaussian-product guidance oracle
// ---------------------------------------------------------------------------

// Mean and variance of N(x; mu, s2) * exp(a x), renormalized, by Simpson
// quadrature over mu + a s2 +- 12 sd.
Moments tilted_gaussian_quadrature(double mu, double s2, double a) {
    const double sd = std::sqrt(s2);
    const double c = mu + a * s2;
    const int n = 20000;
    const double lo = c - 12.0 * sd, hi = c + 12.0 * sd, h = (hi - lo) / n;
    double z = 0.0, m1 = 0.0, m2 = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = lo + i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        // log density shifted by its value at c for stability
        const double logp = -0.5 * (x - mu) * (x - mu) / s2 + a * x - (-0.5 * (c - mu) * (c - mu) / s2 + a * c);
        const double p = w * std::exp(logp);
        z += p;
        m1 += p * x;
        m2 += p * x * x;
    }
    Moments m;
    m.mean = m1 / z;
    m.var = m2 / z - m.mean * m.mean;
    return m;
}

Verdict criterion_gaussian_product() {
    constexpr int kSamples = 100000;
    const auto s = make_schedule(ScheduleKind::Exponential, 25);
    GuidanceConfig scaled;
    scaled.drop_sigma_scaling = false;
    Rng rng(202);
    Verdict v{true, ""};
    const double a = 1.7;  // log p(O | x) = a x + const
    for (int t : {5, 25}) {
        // mu from the model mean of a fixed noisy input.
        MatrixXd xt(1, 1), eps_hat(1, 1);
        xt << 0.4;
        eps_hat << -0.3;
        const MatrixXd mu = posterior_mean(s, xt, t, eps_hat);
        const MatrixXd g = MatrixXd::Constant(1, 1, a);
        std::vector<double> draws(kSamples);
        for (auto& d : draws) {
            d = guided_reverse_step(s, scaled, mu, g, t, standard_normal(1, 1, rng))(0, 0);
        }
        const Moments emp = moments(draws);
        const Moments ref = tilted_gaussian_quadrature(mu(0, 0), s.beta_tilde_at(t), a);
        const double se_mean = std::sqrt(ref.var / kSamples);
        const double se_var = ref.var * std::sqrt(2.0 / (kSamples - 1));
        const double zm = std::abs(emp.mean - ref.mean) / se_mean;
        const double zv = std::abs(emp.var - ref.var) / se_var;
        v.pass = v.pass && zm < 3.0 && zv < 3.0;
        v.detail += "t=" + std::to_string(t) + " mean " + fmt("%.2f", zm) + "se var " + fmt("%.2f", zv) + "se; ";
    }
    return v;
}

// ---------------------------------------------------------------------------
// 3. Forward-kernel equivalence
// ---------------------------------------------------------------------------

Verdict criterion_forward_kernel() {
    constexpr int kSamples = 100000;
    const auto s = make_schedule(ScheduleKind::Exponential, 25);
    Rng rng(303);
    std::normal_distribution<double> normal;
    const MatrixXd tau0 = MatrixXd::Constant(1, 1, 0.7);
    Verdict v{true, ""};
    for (int t : {1, 5, 25}) {
        std::vector<double> oneshot(kSamples), iterated(kSamples);
        for (int i = 0; i < kSamples; ++i) {
            oneshot[i] = forward_sample(s, tau0, t, standard_normal(1, 1, rng))(0, 0);
            // Chain of one-step kernels q(x_k | x_{k-1}) = N(sqrt(1 - beta_k) x_{k-1}, beta_k).
            double x = tau0(0, 0);
            for (int k = 1; k <= t; ++k) {
                x = std::sqrt(1.0 - s.beta_at(k)) * x + std::sqrt(s.beta_at(k)) * normal(rng);
            }
            iterated[i] = x;
        }
        const Moments a = moments(oneshot), b = moments(iterated);
        const double se_mean = std::sqrt(a.var / kSamples + b.var / kSamples);
        const double se_var = std::sqrt(2.0 * (a.var * a.var + b.var * b.var) / (kSamples - 1));
        const double zm = std::abs(a.mean - b.mean) / se_mean;
        const double zv = std::abs(a.var - b.var) / se_var;
        v.pass = v.pass && zm < 3.0 && zv < 3.0;
        v.detail += "t=" + std::to_string(t) + " mean " + fmt("%.2f", zm) + "se var " + fmt("%.2f", zv) + "se; ";
    }
    return v;
}

// ---------------------------------------------------------------------------
// 4. GP zero-cost family and the single-transition example
// ---------------------------------------------------------------------------

Verdict criterion_gp() {
    Rng rng(404);
    std::uniform_real_distribution<double> u(-1.0, 1.0), udt(0.02, 0.5);
    std::uniform_int_distribution<int> uh(2, 64), udof(1, 4);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const int H = uh(rng), dof = udof(rng);
        const double dt = udt(rng);
        VectorXd q0(dof), v(dof);
        for (int k = 0; k < dof; ++k) {
            q0[k] = u(rng);
            v[k] = u(rng);
        }
        MatrixXd s(H, 2 * dof);
        for (int t = 0; t < H; ++t) {
            s.row(t).head(dof) = (q0 + v * (t * dt)).transpose();
            s.row(t).tail(dof) = v.transpose();
        }
        worst = std::max(worst, std::abs(gp_cost(Trajectory(s, dt), build_gp_params(dt, dof, 1.0))));
    }
    // x0 = (0, 0), x1 = (1, 0), dt = Qc = 1: residual e = (1, 0),
    // Q^-1 = [[12, -6], [-6, 4]], so 0.5 e' Q^-1 e = 6.
    MatrixXd ex(2, 2);
    ex << 0, 0, 1, 0;
    const double six = gp_cost(Trajectory(ex, 1.0), build_gp_params(1.0, 1, 1.0));
    Verdict v;
    v.pass = worst <= 1e-12 && six == 6.0;
    v.detail = "max |cost| on 100 lines " + fmt("%.1e", worst) + "; example " + fmt("%.17g", six);
    return v;
}

// ---------------------------------------------------------------------------
// 5. Overfit smoke
// ---------------------------------------------------------------------------

Verdict criterion_overfit() {
    constexpr int kSteps = 2000;
    // One curved trajectory around an obstacle-like bend.
    const Path path{Eigen::Vector2d(-0.8, -0.6), Eigen::Vector2d(-0.1, 0.5), Eigen::Vector2d(0.7, 0.6)};
    const Trajectory traj = bspline_smooth(densify_path(path, 0.05), 32, 0.1);
    const Normalizer norm = Normalizer::fit({traj.states});
    const MatrixXd x0 = norm.normalize(traj.states);
    const auto schedule = make_schedule(ScheduleKind::Exponential, 25);

    DenoiserConfig dc;
    dc.horizon = 32;
    dc.state_dim = 4;
    dc.channels = {96, 96, 96, 96};
    dc.time_embed_dim = 16;
    DenoiserModel model(dc, 55);
    model.normalizer = norm;

    // Fixed evaluation draws so the before / after losses are comparable.
    Rng eval_rng(505);
    std::uniform_int_distribution<int> step(1, schedule.steps);
    std::vector<MatrixXd> inputs, targets;
    std::vector<int> ts;
    for (int i = 0; i < 512; ++i) {
        const int t = step(eval_rng);
        MatrixXd in, target;
        make_training_pair(schedule, x0, t, standard_normal(32, 4, eval_rng), true, in, target);
        inputs.push_back(std::move(in));
        targets.push_back(std::move(target));
        ts.push_back(t);
    }
    const double initial = model.mse_loss(inputs, ts, targets, false).loss;

    TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.batch_size = 32;
    tc.max_steps = kSteps;
    tc.eval_interval = 100;
    tc.ema_decay = 0.99;
    tc.condition_endpoints = true;
    tc.seed = 5;
    train({x0}, {}, schedule, model, tc);
    const double final_loss = model.mse_loss(inputs, ts, targets, false).loss;

    Rng sample_rng(506);
    const auto samples = mpd_sample(schedule, GuidanceConfig{}, model, norm, nullptr, traj.states.row(0).transpose(),
                                    traj.states.row(31).transpose(), 20, 0.1, sample_rng);
    const VectorXd range = norm.hi - norm.lo;
    double worst = 0.0;  // largest waypoint error as a fraction of the per-dimension range
    for (const auto& smp : samples) {
        for (Eigen::Index c = 0; c < 4; ++c) {
            worst = std::max(worst, (smp.states.col(c) - traj.states.col(c)).cwiseAbs().maxCoeff() / range[c]);
        }
    }
    Verdict v;
    v.pass = final_loss < 0.01 * initial && worst <= 0.05;
    v.detail = "loss " + fmt("%.3g", initial) + " -> " + fmt("%.3g", final_loss) + " (" +
               fmt("%.2f", 100.0 * final_loss / initial) + "%) in " + std::to_string(kSteps) +
               " steps; worst waypoint error " + fmt("%.2f", 100.0 * worst) + "% of range over 20 samples";
    return v;
}

// ---------------------------------------------------------------------------
// 6, 7, 9. Pipeline
// ---------------------------------------------------------------------------

struct Pipeline {
    bool ran = false;
    std::string error;
    double seconds = 0.0;
    fs::path dataset_dir, gen_config;
    std::vector<std::pair<std::string, MetricReport>> reports;
    std::string endpoint_detail;
    bool endpoints_exact = true;
};

Pipeline run_pipeline(const fs::path& configs, const fs::path& work) {
    Pipeline p;
    p.ran = true;
    const auto t0 = std::chrono::steady_clock::now();
    fs::remove_all(work);
    fs::create_directories(work);

    // Copy configs so relative references resolve inside the work directory.
    json gen = read_json(configs / "gen_data.json");
    gen["environment"] = (configs / gen.at("environment").get<std::string>()).string();
    gen["robot"] = (configs / gen.at("robot").get<std::string>()).string();
    p.gen_config = work / "gen_data.json";
    write_json(p.gen_config, gen);
    p.dataset_dir = work / "data";
    progress("gen-data");
    if (run_cli({"gen-data", "--config", p.gen_config.string(), "--out", p.dataset_dir.string()}) != 0) {
        p.error = "gen-data failed";
        return p;
    }
    progress("gen-data done after " + fmt("%.0f", seconds_since(t0)) + " s; training");
    json train = read_json(configs / "train.json");
    train["dataset"] = p.dataset_dir.string();
    write_json(work / "train.json", train);
    if (run_cli({"train", "--config", (work / "train.json").string(), "--out", (work / "model").string()}) != 0) {
        p.error = "train failed";
        return p;
    }
    progress("training done after " + fmt("%.0f", seconds_since(t0)) + " s; benchmarking");
    const DenoiserModel model = load_model(work / "model" / "model.bin");

    for (const char* name : {"bench_prior.json", "bench_mpd.json", "bench_gpmp.json", "bench_primed_gpmp.json"}) {
        json cfg = read_json(configs / name);
        if (cfg.contains("model")) {
            cfg["model"] = (work / "model" / "model.bin").string();
        }
        RunConfig run = run_config_from_json(cfg, configs);
        run.keep_trajectories = true;
        MetricReport report = run_benchmark(run, run.needs_model() ? &model : nullptr);
        progress(report.planner + ": success " + fmt("%.3f", report.success.mean) + ", intensity " +
                 fmt("%.4f", report.intensity.mean) + " after " + fmt("%.0f", seconds_since(t0)) + " s");

        // Endpoint invariant over every returned trajectory.
        long checked = 0, bad = 0;
        for (const auto& row : report.contexts) {
            VectorXd start = VectorXd::Zero(2 * run.robot.dof()), goal = start;
            start.head(run.robot.dof()) = row.q_start;
            goal.head(run.robot.dof()) = row.q_goal;
            for (const auto& tr : row.trajectories) {
                ++checked;
                const bool ok = tr.states.row(0) == start.transpose() && tr.states.row(tr.horizon() - 1) == goal.transpose();
                bad += ok ? 0 : 1;
            }
            if (!row.ok) p.endpoint_detail += report.planner + " context " + std::to_string(row.id) + " failed; ";
        }
        p.endpoints_exact = p.endpoints_exact && bad == 0 && checked > 0;
        p.endpoint_detail += report.planner + " " + std::to_string(checked - bad) + "/" + std::to_string(checked) + "; ";
        p.reports.emplace_back(report.planner, std::move(report));
    }
    p.seconds = seconds_since(t0);
    write_json(work / "summary.json", [&] {
        json j = json::object();
        for (const auto& [name, r] : p.reports) j[name] = to_json(r, false);
        return j;
    }());
    return p;
}

const MetricReport* find_report(const Pipeline& p, const std::string& name) {
    for (const auto& [n, r] : p.reports) {
        if (n == name) return &r;
    }
    return nullptr;
}

Verdict criterion_pipeline(const Pipeline& p) {
    if (!p.error.empty()) return {false, p.error};
    const auto* prior = find_report(p, "diffusion-prior");
    const auto* mpd = find_report(p, "mpd");
    const auto* gpmp = find_report(p, "gpmp");
    const auto* primed = find_report(p, "primed-gpmp");
    if (!prior || !mpd || !gpmp || !primed) return {false, "missing planner report"};
    const bool enough = prior->contexts.size() >= 20 && prior->batch >= 100 && mpd->batch >= 100;
    const bool a = mpd->success.mean >= prior->success.mean;
    const bool b = mpd->intensity.mean <= prior->intensity.mean;
    const bool c = primed->success.mean >= gpmp->success.mean;
    const bool fast = p.seconds < 30.0 * 60.0;
    Verdict v;
    v.pass = enough && a && b && c && fast;
    v.detail = "(a) success mpd " + fmt("%.3f", mpd->success.mean) + " vs prior " + fmt("%.3f", prior->success.mean) +
               "; (b) intensity mpd " + fmt("%.4f", mpd->intensity.mean) + " vs prior " +
               fmt("%.4f", prior->intensity.mean) + "; (c) success primed-gpmp " + fmt("%.3f", primed->success.mean) +
               " vs gpmp " + fmt("%.3f", gpmp->success.mean) + "; " + std::to_string(prior->contexts.size()) +
               " contexts x batch " + std::to_string(prior->batch) + "; " + fmt("%.0f", p.seconds) + " s";
    return v;
}

Verdict criterion_endpoints(const Pipeline& p) {
    if (!p.error.empty()) return {false, p.error};
    return {p.endpoints_exact, p.endpoint_detail};
}

// ---------------------------------------------------------------------------
// 8. Metric oracles
// ---------------------------------------------------------------------------

Trajectory from_positions(const MatrixXd& q) {
    MatrixXd s = MatrixXd::Zero(q.rows(), 2 * q.cols());
    s.leftCols(q.cols()) = q;
    return Trajectory(s, 0.1);
}

Verdict criterion_metrics() {
    const Bounds2 box{Vec2(-1, -1), Vec2(1, 1)};
    const auto robot = RobotModel::point_mass(0.02, box, 1.0);
    const Environment env({SdfPrimitive::sphere(Vec2(0.0, 0.0), 0.3), SdfPrimitive::box(Vec2(0.5, 0.5), Vec2(0.15, 0.1))},
                          box, {SdfPrimitive::sphere(Vec2(-0.5, 0.4), 0.12)});
    Rng rng(808);
    std::uniform_real_distribution<double> u(-1, 1);
    std::uniform_int_distribution<int> nb(2, 6), nh(2, 8);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int B = nb(rng), H = nh(rng);
        std::vector<Trajectory> batch;
        for (int b = 0; b < B; ++b) {
            MatrixXd q(H, 2);
            for (int t = 0; t < H; ++t) q.row(t) << u(rng), u(rng);
            batch.push_back(from_positions(q));
        }
        int hits = 0;
        bool any_free = false;
        for (const auto& tr : batch) {
            int h = 0;
            double len = 0.0;
            for (int t = 0; t < H; ++t) {
                h += oracle_hit(env, 0.02, tr.states(t, 0), tr.states(t, 1)) ? 1 : 0;
                if (t > 0) len += std::hypot(tr.states(t, 0) - tr.states(t - 1, 0), tr.states(t, 1) - tr.states(t - 1, 1));
            }
            hits += h;
            any_free = any_free || h == 0;
            mismatches += std::abs(metric_path_length(tr) - len) > 1e-12 * std::max(1.0, len);
        }
        mismatches += metric_success(batch, env, robot) != (any_free ? 1 : 0);
        mismatches += std::abs(metric_intensity(batch, env, robot) - static_cast<double>(hits) / (B * H)) > 1e-12;
        double var = 0.0;
        for (int t = 0; t < H; ++t) {
            std::vector<double> d;
            for (int i = 0; i < B; ++i)
                for (int j = i + 1; j < B; ++j)
                    d.push_back(std::hypot(batch[i].states(t, 0) - batch[j].states(t, 0),
                                           batch[i].states(t, 1) - batch[j].states(t, 1)));
            double m = 0.0;
            for (double x : d) m += x;
            m /= static_cast<double>(d.size());
            double s = 0.0;
            for (double x : d) s += (x - m) * (x - m);
            var += s / static_cast<double>(d.size());
        }
        mismatches += std::abs(metric_waypoint_variance(batch) - var) > 1e-12 * std::max(1.0, var);
    }
    // Distances 3, 4, 5 at the second waypoint: population variance 2/3.
    MatrixXd a = MatrixXd::Zero(2, 2), b(2, 2), c(2, 2);
    b << 0, 0, 3, 0;
    c << 0, 0, 0, 4;
    const double hand = metric_waypoint_variance({from_positions(a), from_positions(b), from_positions(c)});
    Verdict v;
    v.pass = mismatches == 0 && hand == 2.0 / 3.0;
    v.detail = std::to_string(mismatches) + " mismatches on 1000 batches; hand example " + fmt("%.17g", hand);
    return v;
}

// ---------------------------------------------------------------------------
// 9. Pipeline validity
// ---------------------------------------------------------------------------

Verdict criterion_validity(const Pipeline& p, const fs::path& configs, const fs::path& work) {
    if (!p.error.empty()) return {false, p.error};
    const Dataset data = load_dataset(p.dataset_dir);
    const double radius = data.robot.spheres().front().radius;
    constexpr int kSubsteps = 50;
    long bad = 0;
    for (const auto& tr : data.trajectories) {
        bool hit = false;
        for (Eigen::Index t = 0; t + 1 < tr.horizon() && !hit; ++t) {
            for (int k = 0; k <= kSubsteps && !hit; ++k) {
                const double s = static_cast<double>(k) / kSubsteps;
                const double x = tr.states(t, 0) + s * (tr.states(t + 1, 0) - tr.states(t, 0));
                const double y = tr.states(t, 1) + s * (tr.states(t + 1, 1) - tr.states(t, 1));
                hit = oracle_hit(data.env, radius, x, y);
            }
        }
        bad += hit ? 1 : 0;
    }

    // Reruns: gen-data again with the same config, plus short seeded training
    // and benchmark reruns.
    progress("rerunning gen-data");
    const fs::path again = work / "data_again";
    bool identical = run_cli({"gen-data", "--config", p.gen_config.string(), "--out", again.string()}) == 0;
    std::string differing;
    for (const char* f : {"manifest.json", "trajectories.f32", "provenance.jsonl", "gen-data.log.jsonl"}) {
        if (slurp(p.dataset_dir / f) != slurp(again / f) || slurp(again / f).empty()) {
            identical = false;
            differing += std::string(f) + " ";
        }
    }
    json train = read_json(configs / "train.json");
    train["dataset"] = p.dataset_dir.string();
    train["training"]["max_steps"] = 100;
    write_json(work / "train_short.json", train);
    for (const char* out : {"short_a", "short_b"}) {
        identical = identical &&
                    run_cli({"train", "--config", (work / "train_short.json").string(), "--out", (work / out).string()}) == 0;
    }
    if (slurp(work / "short_a" / "model.bin") != slurp(work / "short_b" / "model.bin")) {
        identical = false;
        differing += "model.bin ";
    }
    json bench = read_json(configs / "bench_prior.json");
    bench["model"] = (work / "short_a" / "model.bin").string();
    bench["n_contexts"] = 3;
    bench["batch"] = 10;
    const RunConfig run = run_config_from_json(bench, configs);
    const DenoiserModel m = load_model(run.model_path);
    if (to_json(run_benchmark(run, &m), false) != to_json(run_benchmark(run, &m), false)) {
        identical = false;
        differing += "benchmark ";
    }
    Verdict v;
    v.pass = bad == 0 && !data.trajectories.empty() && identical;
    v.detail = std::to_string(data.trajectories.size() - bad) + "/" + std::to_string(data.trajectories.size()) +
               " expert trajectories clear at " + std::to_string(kSubsteps) + " substeps; reruns " +
               (identical ? "byte-identical" : "differ: " + differing);
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance <configs-dir> [criterion ids...]\n";
        return 2;
    }
    const fs::path configs = fs::absolute(argv[1]);
    std::set<int> wanted;
    for (int i = 2; i < argc; ++i) wanted.insert(std::stoi(argv[i]));
    auto want = [&](int id) { return wanted.empty() || wanted.count(id) != 0; };
    const fs::path work = fs::temp_directory_path() / "mpd_acceptance";

    // Runtime limits in seconds (0 = none).
    const std::vector<std::pair<int, double>> limits{{1, 60}, {2, 30}, {3, 60}, {4, 0}, {5, 300}, {6, 0}, {7, 0}, {8, 0}, {9, 0}};
    Pipeline pipeline;
    int failures = 0;
    for (const auto& [id, limit] : limits) {
        if (!want(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            if ((id == 6 || id == 7 || id == 9) && !pipeline.ran) {
                pipeline = run_pipeline(configs, work);
            }
            switch (id) {
                case 1: v = criterion_gradients(); break;
                case 2: v = criterion_gaussian_product(); break;
                case 3: v = criterion_forward_kernel(); break;
                case 4: v = criterion_gp(); break;
                case 5: v = criterion_overfit(); break;
                case 6: v = criterion_pipeline(pipeline); break;
                case 7: v = criterion_endpoints(pipeline); break;
                case 8: v = criterion_metrics(); break;
                case 9: v = criterion_validity(pipeline, configs, work); break;
            }
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = seconds_since(t0);
        if (limit > 0 && secs >= limit) {
            v.pass = false;
            v.detail += " over the " + fmt("%.0f", limit) + " s limit";
        }
        failures += v.pass ? 0 : 1;
        std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << " (" << fmt("%.1f", secs) << " s) "
                  << v.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
