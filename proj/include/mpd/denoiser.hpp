#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mpd/diffusion.hpp"

namespace mpd {

enum class Activation { Silu, Tanh };

/// Residual stack of dilated 1-D convolutions along the horizon. Layer 0 maps
/// the d state channels to channels[0]; every further layer i is a residual
/// block channels[i-1] -> channels[i] with dilation dilations[i]. A final
/// zero-initialized convolution maps back to d channels. The diffusion step
/// enters through a sinusoidal embedding, a one-layer MLP, and per-layer
/// projections: a channel bias and, with `time_scale`, a channel gain
/// (conv * (1 + scale(t)) + shift(t)).
struct DenoiserConfig {
    Eigen::Index horizon = 64;
    Eigen::Index state_dim = 4;
    std::vector<int> channels{64, 64, 64, 64, 64, 64};
    /// Per-layer dilation; empty means 1, 1, 2, 4, 8, ... (layer 0 undilated).
    std::vector<int> dilations;
    int kernel = 3;
    int time_embed_dim = 32;
    Activation activation = Activation::Silu;
    /// Learned per-(time index, channel) bias after the input layer.
    bool positional_bias = true;
    /// Step-dependent channel gain on every hidden layer and the output layer.
    bool time_scale = true;

    void validate() const;
    int dilation(std::size_t layer) const;
};

nlohmann::json to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

/// Schedule settings stored with a checkpoint.
struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::Exponential;
    int steps = 25;
    double beta_min = kDefaultBetaMin;
    double beta_max = kDefaultBetaMax;

    NoiseSchedule build() const { return make_schedule(kind, steps, beta_min, beta_max); }
};

class DenoiserModel : public NoiseModel {
public:
    DenoiserModel() = default;
    /// Random initialization (uniform +-1/sqrt(fan_in), output layer zero).
    DenoiserModel(DenoiserConfig config, std::uint64_t seed);

    const DenoiserConfig& config() const { return config_; }
    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    Normalizer normalizer;
    ScheduleSpec schedule;

    Eigen::Index horizon() const override { return config_.horizon; }
    Eigen::Index state_dim() const override { return config_.state_dim; }
    Eigen::Index num_params() const override { return params_.size(); }

    Eigen::MatrixXd predict(const Eigen::MatrixXd& x, int t) const override;
    std::vector<Eigen::MatrixXd> predict_batch(const std::vector<Eigen::MatrixXd>& xs,
                                               const std::vector<int>& ts) const override;
    LossAndGrad mse_loss(const std::vector<Eigen::MatrixXd>& xs, const std::vector<int>& ts,
                         const std::vector<Eigen::MatrixXd>& targets, bool with_grad) const override;

    /// Gradient of <upstream, eps_theta(x, t)> w.r.t. all parameters.
    Eigen::VectorXd backprop(const Eigen::MatrixXd& x, int t, const Eigen::MatrixXd& upstream) const;

    /// Rounds all parameters to float32 (the checkpoint storage precision).
    void round_params();

    /// Sinusoidal embedding of step t (exposed for tests).
    Eigen::VectorXd time_features(int t) const;

private:
    struct Layout;
    struct Cache;

    DenoiserConfig config_;
    Eigen::VectorXd params_;

    Eigen::MatrixXd forward(const std::vector<Eigen::MatrixXd>& xs, const std::vector<int>& ts,
                            Cache* cache) const;
    Eigen::VectorXd backward(const Cache& cache, const Eigen::MatrixXd& upstream) const;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 3e-4;
    int batch_size = 32;
    int max_steps = 5000;
    /// Steps between validation evaluations ("epochs" of the loss history).
    int eval_interval = 100;
    /// Stop after this many evaluations without validation improvement.
    int patience = 10;
    /// (tau0, t, eps) draws used for each validation estimate.
    int val_samples = 256;
    /// Train with clean start/goal rows in the noised input, matching sampling.
    bool condition_endpoints = true;
    /// Anneal the learning rate to zero over max_steps with a half cosine.
    bool cosine_decay = false;
    /// Exponential moving average of the parameters (0 disables). The
    /// averaged parameters are validated and returned.
    double ema_decay = 0.0;
    std::uint64_t seed = 0;
};

TrainConfig train_config_from_json(const nlohmann::json& j);

struct LossRecord {
    int step = 0;
    double train_loss = 0.0;  // mean over the steps since the previous record
    std::optional<double> val_loss;
};

struct TrainResult {
    std::vector<double> step_losses;
    std::vector<LossRecord> history;
    int best_step = 0;
    bool early_stopped = false;
};

/// Adam on the simplified loss. `train_set` / `val_set` hold normalized
/// trajectories. With a validation set the best-validation parameters are
/// restored at the end. Progress records are written to `log` as JSON lines.
TrainResult train(const std::vector<Eigen::MatrixXd>& train_set,
                  const std::vector<Eigen::MatrixXd>& val_set, const NoiseSchedule& schedule,
                  DenoiserModel& model, const TrainConfig& cfg, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then little-endian float32 parameters.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

void save_model(const DenoiserModel& model, const std::filesystem::path& path);
DenoiserModel load_model(const std::filesystem::path& path);

}  // namespace mpd
