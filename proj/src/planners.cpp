#include "mpd/planners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mpd/error.hpp"

namespace mpd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// RRT-Connect
// ---------------------------------------------------------------------------

void RrtParams::validate() const {
    if (!(step_size > 0.0)) {
        throw ConfigError("rrt step size must be positive");
    }
    if (!(goal_bias >= 0.0 && goal_bias <= 1.0)) {
        throw ConfigError("rrt goal bias must lie in [0, 1]");
    }
    if (max_iterations < 1) {
        throw ConfigError("rrt needs at least one iteration");
    }
    if (!(check_resolution > 0.0)) {
        throw ConfigError("rrt check resolution must be positive");
    }
    if (!(margin >= 0.0)) {
        throw ConfigError("rrt margin must be non-negative");
    }
}

RrtParams rrt_params_from_json(const json& j) {
    RrtParams p;
    try {
        p.step_size = j.value("step_size", p.step_size);
        p.goal_bias = j.value("goal_bias", p.goal_bias);
        p.max_iterations = j.value("max_iterations", p.max_iterations);
        p.check_resolution = j.value("check_resolution", p.check_resolution);
        p.margin = j.value("margin", p.margin);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad rrt config: ") + e.what());
    }
    p.validate();
    return p;
}

bool edge_is_free(const Environment& env, const RobotModel& robot, const VectorXd& a, const VectorXd& b,
                  double resolution, double margin) {
    const double len = (b - a).norm();
    const int n = std::max(1, static_cast<int>(std::ceil(len / resolution)));
    for (int i = 0; i <= n; ++i) {
        const double s = static_cast<double>(i) / n;
        if (!config_is_free(env, robot, a + s * (b - a), margin)) {
            return false;
        }
    }
    return true;
}

namespace {

struct Tree {
    std::vector<VectorXd> nodes;
    std::vector<int> parent;

    int nearest(const VectorXd& q) const {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const double d = (nodes[i] - q).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        return best;
    }

    int add(VectorXd q, int from) {
        nodes.push_back(std::move(q));
        parent.push_back(from);
        return static_cast<int>(nodes.size()) - 1;
    }

    // Root first.
    Path branch(int leaf) const {
        Path out;
        for (int i = leaf; i >= 0; i = parent[static_cast<std::size_t>(i)]) {
            out.push_back(nodes[static_cast<std::size_t>(i)]);
        }
        std::reverse(out.begin(), out.end());
        return out;
    }
};

enum class Extend { Trapped, Advanced, Reached };

struct Grower {
    const Environment& env;
    const RobotModel& robot;
    const RrtParams& params;

    Extend extend(Tree& tree, const VectorXd& target, int& added) const {
        const int near = tree.nearest(target);
        const VectorXd& from = tree.nodes[static_cast<std::size_t>(near)];
        const VectorXd dir = target - from;
        const double dist = dir.norm();
        const bool reach = dist <= params.step_size;
        const VectorXd q_new = reach ? target : VectorXd(from + dir * (params.step_size / dist));
        if (!edge_is_free(env, robot, from, q_new, params.check_resolution, params.margin)) {
            return Extend::Trapped;
        }
        added = tree.add(q_new, near);
        return reach ? Extend::Reached : Extend::Advanced;
    }

    Extend connect(Tree& tree, const VectorXd& target, int& added) const {
        Extend status = Extend::Advanced;
        while (status == Extend::Advanced) {
            status = extend(tree, target, added);
        }
        return status;
    }
};

}  // namespace

RrtResult rrt_connect(const Environment& env, const RobotModel& robot, const VectorXd& q_start,
                      const VectorXd& q_goal, const RrtParams& params, Rng& rng) {
    params.validate();
    if (q_start.size() != robot.dof() || q_goal.size() != robot.dof()) {
        throw DimensionError("rrt_connect: endpoint dimension does not match the robot");
    }
    RrtResult result;
    if (!config_is_free(env, robot, q_start, params.margin) ||
        !config_is_free(env, robot, q_goal, params.margin)) {
        result.reason = "start or goal in collision";
        return result;
    }
    if (edge_is_free(env, robot, q_start, q_goal, params.check_resolution, params.margin)) {
        result.success = true;
        result.path = {q_start, q_goal};
        return result;
    }

    Tree start_tree, goal_tree;
    start_tree.add(q_start, -1);
    goal_tree.add(q_goal, -1);
    Tree* a = &start_tree;
    Tree* b = &goal_tree;
    const Grower grow{env, robot, params};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const VectorXd& lo = robot.q_min();
    const VectorXd& hi = robot.q_max();

    for (int it = 1; it <= params.max_iterations; ++it) {
        result.iterations = it;
        VectorXd q_rand(robot.dof());
        if (unit(rng) < params.goal_bias) {
            q_rand = b->nodes.front();
        } else {
            for (Index k = 0; k < q_rand.size(); ++k) {
                q_rand[k] = lo[k] + unit(rng) * (hi[k] - lo[k]);
            }
        }
        int new_a = -1;
        if (grow.extend(*a, q_rand, new_a) != Extend::Trapped) {
            int new_b = -1;
            const VectorXd target = a->nodes[static_cast<std::size_t>(new_a)];
            if (grow.connect(*b, target, new_b) == Extend::Reached) {
                Path from_a = a->branch(new_a);
                Path from_b = b->branch(new_b);
                // Both branches end in the shared node; drop one copy.
                from_b.pop_back();
                std::reverse(from_b.begin(), from_b.end());
                from_a.insert(from_a.end(), from_b.begin(), from_b.end());
                if (a != &start_tree) {
                    std::reverse(from_a.begin(), from_a.end());
                }
                result.success = true;
                result.path = std::move(from_a);
                return result;
            }
        }
        std::swap(a, b);
    }
    result.reason = "iteration budget exhausted";
    return result;
}

Path shortcut_path(const Environment& env, const RobotModel& robot, const Path& path, double resolution,
                   double margin) {
    if (path.size() <= 2) {
        return path;
    }
    Path out{path.front()};
    std::size_t i = 0;
    while (i + 1 < path.size()) {
        std::size_t j = path.size() - 1;
        while (j > i + 1 && !edge_is_free(env, robot, path[i], path[j], resolution, margin)) {
            --j;
        }
        out.push_back(path[j]);
        i = j;
    }
    return out;
}

Path densify_path(const Path& path, double spacing) {
    if (!(spacing > 0.0)) {
        throw std::invalid_argument("densify_path: spacing must be positive");
    }
    if (path.empty()) {
        return path;
    }
    Path out{path.front()};
    for (std::size_t i = 1; i < path.size(); ++i) {
        const VectorXd& a = path[i - 1];
        const VectorXd& b = path[i];
        const int n = std::max(1, static_cast<int>(std::ceil((b - a).norm() / spacing)));
        for (int k = 1; k < n; ++k) {
            out.push_back(a + (static_cast<double>(k) / n) * (b - a));
        }
        out.push_back(b);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spline
// ---------------------------------------------------------------------------

CubicSpline::CubicSpline(const Path& points) {
    if (points.size() < 2) {
        throw std::invalid_argument("spline needs at least two points");
    }
    const Index dim = points.front().size();
    // Drop consecutive duplicates; they would give zero-length segments.
    Path pts{points.front()};
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (points[i].size() != dim) {
            throw DimensionError("spline points differ in dimension");
        }
        if ((points[i] - pts.back()).norm() > 1e-12) {
            pts.push_back(points[i]);
        }
    }
    if (pts.size() == 1) {
        // Degenerate path: constant curve on [0, 1].
        pts.push_back(pts.front());
        knots_ = Eigen::Vector2d(0.0, 1.0);
        y_.resize(2, dim);
        y_.row(0) = pts[0].transpose();
        y_.row(1) = pts[0].transpose();
        m_ = MatrixXd::Zero(2, dim);
        return;
    }
    const Index n = static_cast<Index>(pts.size());
    knots_.resize(n);
    knots_[0] = 0.0;
    for (Index i = 1; i < n; ++i) {
        knots_[i] = knots_[i - 1] + (pts[static_cast<std::size_t>(i)] - pts[static_cast<std::size_t>(i - 1)]).norm();
    }
    knots_ /= knots_[n - 1];
    knots_[n - 1] = 1.0;
    y_.resize(n, dim);
    for (Index i = 0; i < n; ++i) {
        y_.row(i) = pts[static_cast<std::size_t>(i)].transpose();
    }

    // Tridiagonal system for the knot second derivatives, zero end slopes.
    VectorXd h(n - 1);
    for (Index i = 0; i + 1 < n; ++i) {
        h[i] = knots_[i + 1] - knots_[i];
    }
    VectorXd sub = VectorXd::Zero(n), diag(n), sup = VectorXd::Zero(n);
    MatrixXd rhs(n, dim);
    diag[0] = 2.0 * h[0];
    sup[0] = h[0];
    rhs.row(0) = 6.0 * (y_.row(1) - y_.row(0)) / h[0];
    for (Index i = 1; i + 1 < n; ++i) {
        sub[i] = h[i - 1];
        diag[i] = 2.0 * (h[i - 1] + h[i]);
        sup[i] = h[i];
        rhs.row(i) = 6.0 * ((y_.row(i + 1) - y_.row(i)) / h[i] - (y_.row(i) - y_.row(i - 1)) / h[i - 1]);
    }
    sub[n - 1] = h[n - 2];
    diag[n - 1] = 2.0 * h[n - 2];
    rhs.row(n - 1) = -6.0 * (y_.row(n - 1) - y_.row(n - 2)) / h[n - 2];

    // Thomas algorithm.
    for (Index i = 1; i < n; ++i) {
        const double w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs.row(i) -= w * rhs.row(i - 1);
    }
    m_.resize(n, dim);
    m_.row(n - 1) = rhs.row(n - 1) / diag[n - 1];
    for (Index i = n - 2; i >= 0; --i) {
        m_.row(i) = (rhs.row(i) - sup[i] * m_.row(i + 1)) / diag[i];
    }
}

Index CubicSpline::segment(double u) const {
    const Index last = knots_.size() - 2;
    const auto it = std::upper_bound(knots_.data(), knots_.data() + knots_.size(), u);
    const Index i = static_cast<Index>(it - knots_.data()) - 1;
    return std::clamp<Index>(i, 0, last);
}

VectorXd CubicSpline::value(double u) const {
    const Index i = segment(u);
    const double h = knots_[i + 1] - knots_[i];
    const double a = knots_[i + 1] - u;
    const double b = u - knots_[i];
    const Eigen::RowVectorXd v = m_.row(i) * (a * a * a / (6.0 * h)) + m_.row(i + 1) * (b * b * b / (6.0 * h)) +
                                 (y_.row(i) - m_.row(i) * (h * h / 6.0)) * (a / h) +
                                 (y_.row(i + 1) - m_.row(i + 1) * (h * h / 6.0)) * (b / h);
    return v.transpose();
}

VectorXd CubicSpline::derivative(double u) const {
    const Index i = segment(u);
    const double h = knots_[i + 1] - knots_[i];
    const double a = knots_[i + 1] - u;
    const double b = u - knots_[i];
    const Eigen::RowVectorXd v = -m_.row(i) * (a * a / (2.0 * h)) + m_.row(i + 1) * (b * b / (2.0 * h)) +
                                 (y_.row(i + 1) - y_.row(i)) / h - (m_.row(i + 1) - m_.row(i)) * (h / 6.0);
    return v.transpose();
}

Trajectory bspline_smooth(const Path& path, Index horizon, double dt) {
    if (path.size() < 2) {
        throw std::invalid_argument("bspline_smooth: path needs at least two waypoints");
    }
    if (horizon < 2 || !(dt > 0.0)) {
        throw std::invalid_argument("bspline_smooth: need H >= 2 and dt > 0");
    }
    const CubicSpline spline(path);
    const Index dof = path.front().size();
    const double duration = static_cast<double>(horizon - 1) * dt;
    MatrixXd states(horizon, 2 * dof);
    for (Index k = 0; k < horizon; ++k) {
        const double u = static_cast<double>(k) / static_cast<double>(horizon - 1);
        states.row(k).head(dof) = spline.value(u).transpose();
        states.row(k).tail(dof) = spline.derivative(u).transpose() / duration;
    }
    states.row(0).head(dof) = path.front().transpose();
    states.row(horizon - 1).head(dof) = path.back().transpose();
    states.row(0).tail(dof).setZero();
    states.row(horizon - 1).tail(dof).setZero();
    return Trajectory(std::move(states), dt);
}

// ---------------------------------------------------------------------------
// GPMP
// ---------------------------------------------------------------------------

void GpmpParams::validate() const {
    if (iterations < 1) {
        throw ConfigError("gpmp needs at least one iteration");
    }
    if (!(step_size > 0.0) || !(tolerance >= 0.0) || !(grad_tolerance >= 0.0) || !(backtrack_factor > 0.0 && backtrack_factor < 1.0) ||
        max_backtracks < 0 || !(armijo >= 0.0 && armijo < 1.0) || !(damping >= 0.0)) {
        throw ConfigError("invalid gpmp step settings");
    }
}

GpmpParams gpmp_params_from_json(const json& j) {
    GpmpParams p;
    try {
        p.iterations = j.value("iterations", p.iterations);
        p.step_size = j.value("step_size", p.step_size);
        p.tolerance = j.value("tolerance", p.tolerance);
        p.grad_tolerance = j.value("grad_tolerance", p.grad_tolerance);
        p.backtrack_factor = j.value("backtrack_factor", p.backtrack_factor);
        p.max_backtracks = j.value("max_backtracks", p.max_backtracks);
        p.armijo = j.value("armijo", p.armijo);
        p.damping = j.value("damping", p.damping);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad gpmp config: ") + e.what());
    }
    p.validate();
    return p;
}

GpmpOptimizer::GpmpOptimizer(const CostSuite& suite, Index horizon, GpmpParams params)
    : suite_(&suite), horizon_(horizon), params_(params) {
    params_.validate();
    const CostTerm* gp = suite.find(CostKind::GpSmoothness);
    if (gp == nullptr) {
        throw ConfigError("gpmp requires a GP smoothness term in the cost suite");
    }
    if (horizon < 3) {
        throw DimensionError("gpmp needs a horizon of at least 3");
    }
    // A zero-weight GP term still defines the metric of the update.
    const double weight = gp->lambda > 0.0 ? gp->lambda : 1.0;
    MatrixXd p = weight * gp_interior_hessian(horizon, suite.gp());
    const double mean_diag = p.diagonal().mean();
    p.diagonal().array() += params_.damping * mean_diag;
    precond_.compute(p);
    if (precond_.info() != Eigen::Success) {
        throw std::runtime_error("gpmp: preconditioner factorization failed");
    }
}

GpmpResult GpmpOptimizer::optimize(const Trajectory& init) const {
    if (init.horizon() != horizon_ || init.dof() != suite_->robot().dof()) {
        throw DimensionError("gpmp: initialization shape does not match the optimizer");
    }
    const Index d = init.state_dim();
    const Index m = horizon_ - 2;
    auto flat_interior = [&](const MatrixXd& x) {
        VectorXd v(m * d);
        for (Index t = 0; t < m; ++t) {
            v.segment(t * d, d) = x.row(t + 1).transpose();
        }
        return v;
    };
    auto check = [](double c, int it) {
        if (!std::isfinite(c)) {
            std::ostringstream os;
            os << "gpmp: non-finite cost at iteration " << it;
            throw PlanningFailure(os.str());
        }
    };

    GpmpResult result{init, {}, 0, false};
    SuiteEvaluation eval = total_cost_and_grad(*suite_, result.trajectory);
    check(eval.cost, 0);
    result.cost_trace.push_back(eval.cost);

    for (int it = 1; it <= params_.iterations; ++it) {
        // guidance = -grad with endpoint rows zero.
        const VectorXd grad = -flat_interior(eval.guidance);
        if (grad.lpNorm<Eigen::Infinity>() <= params_.grad_tolerance) {
            result.converged = true;
            break;
        }
        const VectorXd dir = -precond_.solve(grad);
        const double slope = grad.dot(dir);
        if (!(slope < 0.0)) {
            result.converged = true;
            break;
        }
        double step = params_.step_size;
        bool accepted = false;
        Trajectory trial = result.trajectory;
        SuiteEvaluation trial_eval;
        for (int bt = 0; bt <= params_.max_backtracks; ++bt) {
            for (Index t = 0; t < m; ++t) {
                trial.states.row(t + 1) = result.trajectory.states.row(t + 1) + step * dir.segment(t * d, d).transpose();
            }
            trial_eval = total_cost_and_grad(*suite_, trial);
            if (std::isfinite(trial_eval.cost) && trial_eval.cost < eval.cost &&
                trial_eval.cost <= eval.cost + params_.armijo * step * slope) {
                accepted = true;
                break;
            }
            step *= params_.backtrack_factor;
        }
        if (!accepted) {
            check(trial_eval.cost, it);
            result.converged = true;
            break;
        }
        const double decrease = eval.cost - trial_eval.cost;
        result.trajectory = std::move(trial);
        eval = std::move(trial_eval);
        result.cost_trace.push_back(eval.cost);
        result.iterations = it;
        if (decrease < params_.tolerance) {
            result.converged = true;
            break;
        }
    }
    return result;
}

GpmpResult gpmp_optimize(const Trajectory& init, const CostSuite& suite, const GpmpParams& params) {
    const GpmpOptimizer opt(suite, init.horizon(), params);
    return opt.optimize(init);
}

std::vector<GpmpOutcome> primed_gpmp(const std::vector<Trajectory>& priors, const CostSuite& suite,
                                     const GpmpParams& params) {
    std::vector<GpmpOutcome> out(priors.size());
    if (priors.empty()) {
        return out;
    }
    const GpmpOptimizer opt(suite, priors.front().horizon(), params);
    for (std::size_t i = 0; i < priors.size(); ++i) {
        try {
            out[i].result = opt.optimize(priors[i]);
        } catch (const std::exception& e) {
            out[i].error = e.what();
        }
    }
    return out;
}

}  // namespace mpd
