#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mpd/costs.hpp"
#include "mpd/random.hpp"
#include "mpd/trajectory.hpp"

namespace mpd {

// ---------------------------------------------------------------------------
// Noise schedules
// ---------------------------------------------------------------------------

enum class ScheduleKind { Linear, Cosine, Exponential };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& s);

inline constexpr double kDefaultBetaMin = 1e-4;
/// Upper end of the default schedule. With only 25 steps the schedule must
/// reach beta ~ 1 for the terminal marginal to be close to N(0, I).
inline constexpr double kDefaultBetaMax = 0.999;

/// Per-step tables, stored 0-based: entry [t - 1] belongs to diffusion step t.
/// alpha_bar(0) = 1 by convention, so beta_tilde(1) = sigma(1) = 0.
struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::Exponential;
    int steps = 0;
    double beta_min = kDefaultBetaMin;
    double beta_max = kDefaultBetaMax;
    Eigen::VectorXd beta, alpha, alpha_bar, beta_tilde, sigma;

    double beta_at(int t) const { return beta[t - 1]; }
    double alpha_at(int t) const { return alpha[t - 1]; }
    double alpha_bar_at(int t) const { return alpha_bar[t - 1]; }
    double alpha_bar_prev(int t) const { return t <= 1 ? 1.0 : alpha_bar[t - 2]; }
    double beta_tilde_at(int t) const { return beta_tilde[t - 1]; }
    double sigma_at(int t) const { return sigma[t - 1]; }
};

NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_min = kDefaultBetaMin,
                            double beta_max = kDefaultBetaMax);

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// tau_t = sqrt(abar_t) tau_0 + sqrt(1 - abar_t) eps
Eigen::MatrixXd forward_sample(const NoiseSchedule& s, const Eigen::MatrixXd& tau0, int t,
                               const Eigen::MatrixXd& eps);

/// mu_t = (tau_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
Eigen::MatrixXd posterior_mean(const NoiseSchedule& s, const Eigen::MatrixXd& tau_t, int t,
                               const Eigen::MatrixXd& eps_hat);

/// Mean of q(tau_{t-1} | tau_t, tau_0 = x0). Equals posterior_mean when x0 is
/// the clean estimate implied by eps_hat.
Eigen::MatrixXd posterior_mean_from_x0(const NoiseSchedule& s, const Eigen::MatrixXd& tau_t, int t,
                                       const Eigen::MatrixXd& x0);

/// Clean-trajectory estimate (tau_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
Eigen::MatrixXd predict_x0(const NoiseSchedule& s, const Eigen::MatrixXd& tau_t, int t,
                           const Eigen::MatrixXd& eps_hat);

/// tau_{t-1} = mu_t + sigma_t z (z ignored at t = 1).
Eigen::MatrixXd reverse_step(const NoiseSchedule& s, const Eigen::MatrixXd& mu, int t,
                             const Eigen::MatrixXd& z);

/// Start / goal rows written after every reverse step (row 0 and row H-1).
struct Endpoints {
    Eigen::RowVectorXd start;
    Eigen::RowVectorXd goal;
};

struct GuidanceConfig {
    /// Shift the mean by g directly instead of sigma_t^2 g.
    bool drop_sigma_scaling = true;
    /// Optional per-step multiplier on g, entry [t - 1]; empty means 1.
    std::vector<double> step_weights;
    /// Cost-gradient evaluations per denoising step; gradients are summed,
    /// each evaluated after applying the previous ones.
    int guide_steps_per_denoise = 1;
    /// Clip the clean-trajectory estimate to the normalized data range [-1, 1]
    /// before forming mu_t. Without it the first steps of a schedule ending
    /// near beta = 1 amplify noise-prediction errors by 1 / sqrt(alpha_t).
    bool clip_denoised = true;

    double weight(int t) const;
    /// Mean shift applied for guidance g at step t.
    double shift_scale(const NoiseSchedule& s, int t) const;
};

Eigen::MatrixXd guided_reverse_step(const NoiseSchedule& s, const GuidanceConfig& guidance,
                                    const Eigen::MatrixXd& mu, const Eigen::MatrixXd& g, int t,
                                    const Eigen::MatrixXd& z,
                                    const std::optional<Endpoints>& endpoints = std::nullopt);

// ---------------------------------------------------------------------------
// Noise predictors
// ---------------------------------------------------------------------------

struct LossAndGrad {
    double loss = 0.0;
    Eigen::VectorXd grad;  // empty for models without parameters
};

/// eps_theta(tau_t, t) over H x d trajectories.
class NoiseModel {
public:
    virtual ~NoiseModel() = default;

    virtual Eigen::Index horizon() const = 0;
    virtual Eigen::Index state_dim() const = 0;
    virtual Eigen::MatrixXd predict(const Eigen::MatrixXd& x, int t) const = 0;
    virtual std::vector<Eigen::MatrixXd> predict_batch(const std::vector<Eigen::MatrixXd>& xs,
                                                       const std::vector<int>& ts) const;

    virtual Eigen::Index num_params() const { return 0; }
    /// (1/B) sum_b |target_b - eps_theta(x_b, t_b)|^2 and, if requested, its
    /// gradient w.r.t. the parameters.
    virtual LossAndGrad mse_loss(const std::vector<Eigen::MatrixXd>& xs, const std::vector<int>& ts,
                                 const std::vector<Eigen::MatrixXd>& targets, bool with_grad) const;
};

/// Per-dimension affine map of the data range onto [-1, 1].
struct Normalizer {
    Eigen::VectorXd lo, hi;

    static Normalizer identity(Eigen::Index dims);
    static Normalizer fit(const std::vector<Eigen::MatrixXd>& data);

    Eigen::VectorXd center() const { return 0.5 * (lo + hi); }
    /// Half range; dimensions with (near) zero range use 1.
    Eigen::VectorXd half_range() const;
    Eigen::MatrixXd normalize(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd denormalize(const Eigen::MatrixXd& x) const;
};

/// One step of the simplified objective: t ~ U{1..N}, eps ~ N(0, I).
/// With `condition_endpoints` rows 0 and H-1 of tau_t keep their clean values
/// (as the sampler's hard-set endpoints do) and their noise target is zero.
LossAndGrad training_loss(const NoiseSchedule& s, const NoiseModel& model,
                          const std::vector<Eigen::MatrixXd>& tau0_batch, Rng& rng,
                          bool condition_endpoints = false);

/// Noised input and target for one training example (see training_loss).
void make_training_pair(const NoiseSchedule& s, const Eigen::MatrixXd& tau0, int t, Eigen::MatrixXd eps,
                        bool condition_endpoints, Eigen::MatrixXd& input, Eigen::MatrixXd& target);

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct SampleTrace {
    /// Denormalized batch after each reverse step, index 0 = pure noise.
    std::vector<std::vector<Eigen::MatrixXd>> steps;
};

/// Reverse diffusion with hard-set endpoints and optional cost guidance.
/// `suite == nullptr` gives unguided prior samples. Start and goal are full
/// states [q, qdot] in physical units; the returned trajectories are
/// denormalized with rows 0 and H-1 equal to them exactly.
std::vector<Trajectory> mpd_sample(const NoiseSchedule& s, const GuidanceConfig& guidance,
                                   const NoiseModel& model, const Normalizer& normalizer,
                                   const CostSuite* suite, const Eigen::VectorXd& start_state,
                                   const Eigen::VectorXd& goal_state, int batch, double dt,
                                   Rng& rng, SampleTrace* trace = nullptr);

}  // namespace mpd
