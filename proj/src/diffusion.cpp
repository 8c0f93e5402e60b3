#include "mpd/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "mpd/error.hpp"

namespace mpd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::Linear:
            return "linear";
        case ScheduleKind::Cosine:
            return "cosine";
        case ScheduleKind::Exponential:
            return "exponential";
    }
    return "unknown";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "cosine") return ScheduleKind::Cosine;
    if (s == "exponential") return ScheduleKind::Exponential;
    throw ConfigError("unknown noise schedule '" + s + "'");
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_min, double beta_max) {
    if (steps < 1) {
        throw ConfigError("noise schedule needs at least one step");
    }
    if (kind != ScheduleKind::Cosine &&
        !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
        throw ConfigError("noise schedule bounds must satisfy 0 < beta_min <= beta_max < 1");
    }
    NoiseSchedule s;
    s.kind = kind;
    s.steps = steps;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    s.beta.resize(steps);
    for (int t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 1.0 : static_cast<double>(t - 1) / (steps - 1);
        switch (kind) {
            case ScheduleKind::Linear:
                s.beta[t - 1] = beta_min + frac * (beta_max - beta_min);
                break;
            case ScheduleKind::Exponential:
                s.beta[t - 1] = beta_min * std::pow(beta_max / beta_min, frac);
                break;
            case ScheduleKind::Cosine: {
                constexpr double offset = 0.008;
                auto f = [&](int u) {
                    const double c = std::cos((static_cast<double>(u) / steps + offset) /
                                              (1.0 + offset) * M_PI / 2.0);
                    return c * c;
                };
                s.beta[t - 1] = std::clamp(1.0 - f(t) / f(t - 1), 1e-8, 0.999);
                break;
            }
        }
    }
    s.alpha = VectorXd::Ones(steps) - s.beta;
    s.alpha_bar.resize(steps);
    s.beta_tilde.resize(steps);
    double prod = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double prev = prod;
        prod *= s.alpha[t - 1];
        s.alpha_bar[t - 1] = prod;
        s.beta_tilde[t - 1] = s.beta[t - 1] * (1.0 - prev) / (1.0 - prod);
    }
    s.sigma = s.beta_tilde.cwiseSqrt();
    return s;
}

namespace {

void check_step(const NoiseSchedule& s, int t) {
    if (t < 1 || t > s.steps) {
        std::ostringstream os;
        os << "diffusion step " << t << " outside [1, " << s.steps << "]";
        throw std::out_of_range(os.str());
    }
}

void check_same_shape(const MatrixXd& a, const MatrixXd& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(what) + ": shape mismatch");
    }
}

}  // namespace

MatrixXd forward_sample(const NoiseSchedule& s, const MatrixXd& tau0, int t, const MatrixXd& eps) {
    check_step(s, t);
    check_same_shape(tau0, eps, "forward_sample");
    const double ab = s.alpha_bar_at(t);
    return std::sqrt(ab) * tau0 + std::sqrt(1.0 - ab) * eps;
}

MatrixXd posterior_mean(const NoiseSchedule& s, const MatrixXd& tau_t, int t, const MatrixXd& eps_hat) {
    check_step(s, t);
    check_same_shape(tau_t, eps_hat, "posterior_mean");
    const double a = s.alpha_at(t);
    const double coef = (1.0 - a) / std::sqrt(1.0 - s.alpha_bar_at(t));
    return (tau_t - coef * eps_hat) / std::sqrt(a);
}

MatrixXd posterior_mean_from_x0(const NoiseSchedule& s, const MatrixXd& tau_t, int t, const MatrixXd& x0) {
    check_step(s, t);
    check_same_shape(tau_t, x0, "posterior_mean_from_x0");
    const double ab = s.alpha_bar_at(t);
    const double abp = s.alpha_bar_prev(t);
    const double c0 = std::sqrt(abp) * s.beta_at(t) / (1.0 - ab);
    const double ct = std::sqrt(s.alpha_at(t)) * (1.0 - abp) / (1.0 - ab);
    return c0 * x0 + ct * tau_t;
}

MatrixXd predict_x0(const NoiseSchedule& s, const MatrixXd& tau_t, int t, const MatrixXd& eps_hat) {
    check_step(s, t);
    check_same_shape(tau_t, eps_hat, "predict_x0");
    const double ab = s.alpha_bar_at(t);
    return (tau_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

MatrixXd reverse_step(const NoiseSchedule& s, const MatrixXd& mu, int t, const MatrixXd& z) {
    check_step(s, t);
    check_same_shape(mu, z, "reverse_step");
    if (t == 1) {
        return mu;
    }
    return mu + s.sigma_at(t) * z;
}

double GuidanceConfig::weight(int t) const {
    if (step_weights.empty()) {
        return 1.0;
    }
    return step_weights.at(static_cast<std::size_t>(t - 1));
}

double GuidanceConfig::shift_scale(const NoiseSchedule& s, int t) const {
    const double w = weight(t);
    return drop_sigma_scaling ? w : w * s.beta_tilde_at(t);
}

MatrixXd guided_reverse_step(const NoiseSchedule& s, const GuidanceConfig& guidance, const MatrixXd& mu,
                             const MatrixXd& g, int t, const MatrixXd& z,
                             const std::optional<Endpoints>& endpoints) {
    check_step(s, t);
    check_same_shape(mu, g, "guided_reverse_step");
    MatrixXd out = reverse_step(s, mu + guidance.shift_scale(s, t) * g, t, z);
    if (endpoints) {
        out.row(0) = endpoints->start;
        out.row(out.rows() - 1) = endpoints->goal;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Noise model defaults
// ---------------------------------------------------------------------------

std::vector<MatrixXd> NoiseModel::predict_batch(const std::vector<MatrixXd>& xs,
                                                const std::vector<int>& ts) const {
    if (xs.size() != ts.size()) {
        throw DimensionError("predict_batch: inputs and steps differ in length");
    }
    std::vector<MatrixXd> out;
    out.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out.push_back(predict(xs[i], ts[i]));
    }
    return out;
}

LossAndGrad NoiseModel::mse_loss(const std::vector<MatrixXd>& xs, const std::vector<int>& ts,
                                 const std::vector<MatrixXd>& targets, bool /*with_grad*/) const {
    const auto pred = predict_batch(xs, ts);
    LossAndGrad out;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        out.loss += (targets[i] - pred[i]).squaredNorm();
    }
    out.loss /= static_cast<double>(std::max<std::size_t>(1, pred.size()));
    return out;
}

// ---------------------------------------------------------------------------
// Normalizer
// ---------------------------------------------------------------------------

Normalizer Normalizer::identity(Index dims) {
    return Normalizer{VectorXd::Constant(dims, -1.0), VectorXd::Constant(dims, 1.0)};
}

Normalizer Normalizer::fit(const std::vector<MatrixXd>& data) {
    if (data.empty()) {
        throw DimensionError("cannot fit a normalizer to an empty dataset");
    }
    Normalizer n;
    n.lo = data.front().colwise().minCoeff().transpose();
    n.hi = data.front().colwise().maxCoeff().transpose();
    for (const auto& m : data) {
        if (m.cols() != n.lo.size()) {
            throw DimensionError("normalizer: inconsistent state dimension");
        }
        n.lo = n.lo.cwiseMin(m.colwise().minCoeff().transpose());
        n.hi = n.hi.cwiseMax(m.colwise().maxCoeff().transpose());
    }
    return n;
}

VectorXd Normalizer::half_range() const {
    VectorXd h = 0.5 * (hi - lo);
    for (Index i = 0; i < h.size(); ++i) {
        if (!(h[i] > 1e-12)) {
            h[i] = 1.0;
        }
    }
    return h;
}

MatrixXd Normalizer::normalize(const MatrixXd& x) const {
    if (x.cols() != lo.size()) {
        throw DimensionError("normalize: state dimension mismatch");
    }
    const VectorXd c = center();
    const VectorXd h = half_range();
    return (x.rowwise() - c.transpose()).array().rowwise() / h.transpose().array();
}

MatrixXd Normalizer::denormalize(const MatrixXd& x) const {
    if (x.cols() != lo.size()) {
        throw DimensionError("denormalize: state dimension mismatch");
    }
    const VectorXd c = center();
    const VectorXd h = half_range();
    MatrixXd out = x.array().rowwise() * h.transpose().array();
    out.rowwise() += c.transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Training loss
// ---------------------------------------------------------------------------

void make_training_pair(const NoiseSchedule& s, const MatrixXd& tau0, int t, MatrixXd eps,
                        bool condition_endpoints, MatrixXd& input, MatrixXd& target) {
    input = forward_sample(s, tau0, t, eps);
    if (condition_endpoints) {
        const Index last = tau0.rows() - 1;
        input.row(0) = tau0.row(0);
        input.row(last) = tau0.row(last);
        eps.row(0).setZero();
        eps.row(last).setZero();
    }
    target = std::move(eps);
}

LossAndGrad training_loss(const NoiseSchedule& s, const NoiseModel& model,
                          const std::vector<MatrixXd>& tau0_batch, Rng& rng, bool condition_endpoints) {
    std::uniform_int_distribution<int> step(1, s.steps);
    std::vector<MatrixXd> xs(tau0_batch.size()), eps(tau0_batch.size());
    std::vector<int> ts;
    ts.reserve(tau0_batch.size());
    for (std::size_t i = 0; i < tau0_batch.size(); ++i) {
        const MatrixXd& tau0 = tau0_batch[i];
        if (tau0.rows() != model.horizon() || tau0.cols() != model.state_dim()) {
            throw DimensionError("training batch does not match the model input shape");
        }
        const int t = step(rng);
        make_training_pair(s, tau0, t, standard_normal(tau0.rows(), tau0.cols(), rng), condition_endpoints, xs[i],
                           eps[i]);
        ts.push_back(t);
    }
    return model.mse_loss(xs, ts, eps, true);
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

std::vector<Trajectory> mpd_sample(const NoiseSchedule& s, const GuidanceConfig& guidance,
                                   const NoiseModel& model, const Normalizer& normalizer,
                                   const CostSuite* suite, const VectorXd& start_state,
                                   const VectorXd& goal_state, int batch, double dt, Rng& rng,
                                   SampleTrace* trace) {
    const Index H = model.horizon();
    const Index d = model.state_dim();
    if (start_state.size() != d || goal_state.size() != d || normalizer.lo.size() != d) {
        throw DimensionError("mpd_sample: denoiser state dimension does not match the problem");
    }
    if (suite != nullptr && 2 * suite->robot().dof() != d) {
        throw DimensionError("mpd_sample: cost suite robot does not match the denoiser");
    }
    if (guidance.guide_steps_per_denoise < 1) {
        throw ConfigError("guide_steps_per_denoise must be at least 1");
    }
    if (batch < 1) {
        return {};
    }

    const Endpoints phys{start_state.transpose(), goal_state.transpose()};
    const Endpoints norm{normalizer.normalize(phys.start), normalizer.normalize(phys.goal)};
    const Eigen::RowVectorXd half = normalizer.half_range().transpose();

    std::vector<MatrixXd> taus;
    taus.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        MatrixXd tau = standard_normal(H, d, rng);
        tau.row(0) = norm.start;
        tau.row(H - 1) = norm.goal;
        taus.push_back(std::move(tau));
    }
    auto record = [&] {
        if (trace != nullptr) {
            std::vector<MatrixXd> snap;
            for (const auto& tau : taus) {
                snap.push_back(normalizer.denormalize(tau));
            }
            trace->steps.push_back(std::move(snap));
        }
    };
    record();

    // Guidance gradient w.r.t. normalized coordinates (chain rule through the
    // per-dimension affine map).
    auto guidance_at = [&](const MatrixXd& x) -> MatrixXd {
        const Trajectory traj(normalizer.denormalize(x), dt);
        MatrixXd g = total_cost_and_grad(*suite, traj).guidance;
        g.array().rowwise() *= half.array();
        return g;
    };

    for (int t = s.steps; t >= 1; --t) {
        const std::vector<int> ts(static_cast<std::size_t>(batch), t);
        const std::vector<MatrixXd> eps = model.predict_batch(taus, ts);
        for (int b = 0; b < batch; ++b) {
            auto& tau = taus[static_cast<std::size_t>(b)];
            const MatrixXd& eps_hat = eps[static_cast<std::size_t>(b)];
            const MatrixXd mu =
                guidance.clip_denoised
                    ? posterior_mean_from_x0(s, tau, t, predict_x0(s, tau, t, eps_hat).cwiseMax(-1.0).cwiseMin(1.0))
                    : posterior_mean(s, tau, t, eps_hat);
            MatrixXd g = MatrixXd::Zero(H, d);
            if (suite != nullptr) {
                const double scale = guidance.shift_scale(s, t);
                for (int k = 0; k < guidance.guide_steps_per_denoise; ++k) {
                    g += guidance_at(mu + scale * g);
                }
            }
            const MatrixXd z = t > 1 ? standard_normal(H, d, rng) : MatrixXd::Zero(H, d);
            tau = guided_reverse_step(s, guidance, mu, g, t, z, norm);
        }
        record();
    }

    std::vector<Trajectory> out;
    out.reserve(taus.size());
    for (const auto& tau : taus) {
        MatrixXd states = normalizer.denormalize(tau);
        states.row(0) = phys.start;
        states.row(H - 1) = phys.goal;
        out.emplace_back(std::move(states), dt);
    }
    return out;
}

}  // namespace mpd
