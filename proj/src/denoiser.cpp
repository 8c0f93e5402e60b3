#include "mpd/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "io_util.hpp"
#include "mpd/error.hpp"

namespace mpd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;
using ConstMap = Eigen::Map<const MatrixXd>;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void DenoiserConfig::validate() const {
    if (horizon < 2 || state_dim < 1) {
        throw ConfigError("denoiser input shape must be at least 2 x 1");
    }
    if (channels.empty()) {
        throw ConfigError("denoiser needs at least one hidden layer");
    }
    for (int c : channels) {
        if (c < 1) {
            throw ConfigError("denoiser channel counts must be positive");
        }
    }
    if (kernel < 1 || kernel % 2 == 0) {
        throw ConfigError("denoiser kernel width must be odd");
    }
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
        throw ConfigError("time embedding dimension must be even and >= 2");
    }
    if (!dilations.empty()) {
        if (dilations.size() != channels.size()) {
            throw ConfigError("dilations must list one entry per hidden layer");
        }
        for (int d : dilations) {
            if (d < 1) {
                throw ConfigError("dilations must be positive");
            }
        }
    }
}

int DenoiserConfig::dilation(std::size_t layer) const {
    if (!dilations.empty()) {
        return dilations[layer];
    }
    return layer == 0 ? 1 : 1 << std::min<std::size_t>(layer - 1, 20);
}

json to_json(const DenoiserConfig& c) {
    return json{{"horizon", c.horizon},
                {"state_dim", c.state_dim},
                {"channels", c.channels},
                {"dilations", c.dilations},
                {"kernel", c.kernel},
                {"time_embed_dim", c.time_embed_dim},
                {"activation", c.activation == Activation::Silu ? "silu" : "tanh"},
                {"positional_bias", c.positional_bias},
                {"time_scale", c.time_scale}};
}

DenoiserConfig denoiser_config_from_json(const json& j) {
    DenoiserConfig c;
    try {
        c.horizon = j.value("horizon", c.horizon);
        c.state_dim = j.value("state_dim", c.state_dim);
        c.channels = j.value("channels", c.channels);
        c.dilations = j.value("dilations", c.dilations);
        c.kernel = j.value("kernel", c.kernel);
        c.time_embed_dim = j.value("time_embed_dim", c.time_embed_dim);
        const auto act = j.value("activation", std::string("silu"));
        if (act == "silu") {
            c.activation = Activation::Silu;
        } else if (act == "tanh") {
            c.activation = Activation::Tanh;
        } else {
            throw ConfigError("unknown activation '" + act + "'");
        }
        c.positional_bias = j.value("positional_bias", c.positional_bias);
        c.time_scale = j.value("time_scale", c.time_scale);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad denoiser config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Parameter layout
// ---------------------------------------------------------------------------

struct DenoiserModel::Layout {
    struct Conv {
        Index weight = 0, bias = 0, time = 0;
        Index scale = -1;  // E x out gain projection, when enabled
        Index in = 0, out = 0;
        int dilation = 1;
        bool residual = false;
    };
    Index time_w = 0, time_b = 0;
    std::vector<Conv> layers;
    Index positional = -1;
    Conv output;
    Index total = 0;

    explicit Layout(const DenoiserConfig& c) {
        const Index e = c.time_embed_dim;
        const Index k = c.kernel;
        Index off = 0;
        auto take = [&](Index n) {
            const Index at = off;
            off += n;
            return at;
        };
        time_w = take(e * e);
        time_b = take(e);
        Index in = c.state_dim;
        for (std::size_t i = 0; i < c.channels.size(); ++i) {
            Conv l;
            l.in = in;
            l.out = c.channels[i];
            l.dilation = c.dilation(i);
            l.residual = i > 0 && l.in == l.out;
            l.weight = take(k * l.in * l.out);
            l.bias = take(l.out);
            l.time = take(e * l.out);
            if (c.time_scale) {
                l.scale = take(e * l.out);
            }
            layers.push_back(l);
            if (i == 0 && c.positional_bias) {
                positional = take(c.horizon * l.out);
            }
            in = l.out;
        }
        output.in = in;
        output.out = c.state_dim;
        output.weight = take(k * in * c.state_dim);
        output.bias = take(c.state_dim);
        if (c.time_scale) {
            output.scale = take(e * c.state_dim);
        }
        total = off;
    }
};

struct DenoiserModel::Cache {
    Index batch = 0;
    MatrixXd raw, pre_time, time;     // B x E
    std::vector<MatrixXd> cols;       // per conv layer incl. output
    std::vector<MatrixXd> hidden;     // pre-activation outputs of each hidden layer
    std::vector<MatrixXd> conv;       // conv + bias before the gain, per layer incl. output
    std::vector<MatrixXd> gain;       // B x C factors 1 + scale(t), per layer incl. output
};

namespace {

double act(Activation a, double x) {
    if (a == Activation::Tanh) {
        return std::tanh(x);
    }
    return x / (1.0 + std::exp(-x));
}

double act_grad(Activation a, double x) {
    if (a == Activation::Tanh) {
        const double y = std::tanh(x);
        return 1.0 - y * y;
    }
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

MatrixXd apply(Activation a, const MatrixXd& x) {
    return x.unaryExpr([a](double v) { return act(a, v); });
}

MatrixXd apply_grad(Activation a, const MatrixXd& x) {
    return x.unaryExpr([a](double v) { return act_grad(a, v); });
}

// Stacked (B*H x C) sequences -> (B*H x k*C) "same"-padded dilated patches.
MatrixXd im2col(const MatrixXd& a, Index batch, Index horizon, int kernel, int dilation) {
    const Index c = a.cols();
    MatrixXd col = MatrixXd::Zero(a.rows(), kernel * c);
    const int half = (kernel - 1) / 2;
    for (int m = 0; m < kernel; ++m) {
        const Index shift = static_cast<Index>(m - half) * dilation;
        const Index lo = std::max<Index>(0, -shift);
        const Index hi = std::min<Index>(horizon, horizon - shift);
        if (hi <= lo) {
            continue;
        }
        for (Index b = 0; b < batch; ++b) {
            col.block(b * horizon + lo, m * c, hi - lo, c) = a.block(b * horizon + lo + shift, 0, hi - lo, c);
        }
    }
    return col;
}

MatrixXd col2im(const MatrixXd& col, Index batch, Index horizon, int kernel, int dilation, Index c) {
    MatrixXd a = MatrixXd::Zero(col.rows(), c);
    const int half = (kernel - 1) / 2;
    for (int m = 0; m < kernel; ++m) {
        const Index shift = static_cast<Index>(m - half) * dilation;
        const Index lo = std::max<Index>(0, -shift);
        const Index hi = std::min<Index>(horizon, horizon - shift);
        if (hi <= lo) {
            continue;
        }
        for (Index b = 0; b < batch; ++b) {
            a.block(b * horizon + lo + shift, 0, hi - lo, c) += col.block(b * horizon + lo, m * c, hi - lo, c);
        }
    }
    return a;
}

// Sum of the H rows belonging to each batch element: (B*H x C) -> (B x C).
MatrixXd block_sum(const MatrixXd& x, Index batch, Index horizon) {
    MatrixXd out(batch, x.cols());
    for (Index b = 0; b < batch; ++b) {
        out.row(b) = x.middleRows(b * horizon, horizon).colwise().sum();
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

DenoiserModel::DenoiserModel(DenoiserConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    const Layout layout(config_);
    params_ = VectorXd::Zero(layout.total);
    normalizer = Normalizer::identity(config_.state_dim);
    Rng rng(seed);
    auto fill = [&](Index offset, Index count, Index fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Index i = 0; i < count; ++i) {
            params_[offset + i] = u(rng);
        }
    };
    const Index e = config_.time_embed_dim;
    fill(layout.time_w, e * e, e);
    fill(layout.time_b, e, e);
    for (const auto& l : layout.layers) {
        const Index fan_in = config_.kernel * l.in;
        fill(l.weight, fan_in * l.out, fan_in);
        fill(l.bias, l.out, fan_in);
        fill(l.time, e * l.out, e);
    }
    // Gain projections stay zero: unit gain for every step at initialization.
    round_params();
}

void DenoiserModel::round_params() { round_to_float(params_); }

VectorXd DenoiserModel::time_features(int t) const {
    const Index half = config_.time_embed_dim / 2;
    VectorXd f(config_.time_embed_dim);
    for (Index i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        f[i] = std::sin(t * freq);
        f[half + i] = std::cos(t * freq);
    }
    return f;
}

MatrixXd DenoiserModel::forward(const std::vector<MatrixXd>& xs, const std::vector<int>& ts,
                                Cache* cache) const {
    if (xs.size() != ts.size() || xs.empty()) {
        throw DimensionError("denoiser: batch inputs and steps must be non-empty and equal in length");
    }
    const Layout layout(config_);
    if (params_.size() != layout.total) {
        throw DimensionError("denoiser: parameter vector does not match the configuration");
    }
    const Index B = static_cast<Index>(xs.size());
    const Index H = config_.horizon;
    const Index E = config_.time_embed_dim;
    const Activation a = config_.activation;

    MatrixXd x(B * H, config_.state_dim);
    MatrixXd raw(B, E);
    for (Index b = 0; b < B; ++b) {
        const auto& xb = xs[static_cast<std::size_t>(b)];
        if (xb.rows() != H || xb.cols() != config_.state_dim) {
            std::ostringstream os;
            os << "denoiser expects " << H << " x " << config_.state_dim << " input, got " << xb.rows()
               << " x " << xb.cols();
            throw DimensionError(os.str());
        }
        x.middleRows(b * H, H) = xb;
        raw.row(b) = time_features(ts[static_cast<std::size_t>(b)]).transpose();
    }
    const ConstMap wt(params_.data() + layout.time_w, E, E);
    const ConstMap bt(params_.data() + layout.time_b, 1, E);
    MatrixXd pre_time = raw * wt;
    pre_time.rowwise() += bt.row(0);
    const MatrixXd temb = apply(a, pre_time);

    // Multiplies each batch element's rows by its gain row 1 + temb * proj.
    auto modulate = [&](MatrixXd& z, Index scale_at, std::vector<MatrixXd>& conv, std::vector<MatrixXd>& gain) {
        if (scale_at < 0) {
            return;
        }
        const MatrixXd g = (temb * ConstMap(params_.data() + scale_at, E, z.cols())).array() + 1.0;
        if (cache != nullptr) {
            conv.push_back(z);
            gain.push_back(g);
        }
        for (Index b = 0; b < B; ++b) {
            z.middleRows(b * H, H).array().rowwise() *= g.row(b).array();
        }
    };

    std::vector<MatrixXd> cols, hidden, convs, gains;
    MatrixXd h;
    for (std::size_t i = 0; i < layout.layers.size(); ++i) {
        const auto& l = layout.layers[i];
        const MatrixXd input = i == 0 ? x : apply(a, h);
        MatrixXd col = im2col(input, B, H, config_.kernel, l.dilation);
        const ConstMap w(params_.data() + l.weight, config_.kernel * l.in, l.out);
        const ConstMap bias(params_.data() + l.bias, 1, l.out);
        const ConstMap tp(params_.data() + l.time, E, l.out);
        MatrixXd out = col * w;
        out.rowwise() += bias.row(0);
        modulate(out, l.scale, convs, gains);
        const MatrixXd shift = temb * tp;
        for (Index b = 0; b < B; ++b) {
            out.middleRows(b * H, H).rowwise() += shift.row(b);
            if (i == 0 && layout.positional >= 0) {
                out.middleRows(b * H, H) += ConstMap(params_.data() + layout.positional, H, l.out);
            }
        }
        if (l.residual) {
            out += h;
        }
        if (cache != nullptr) {
            cols.push_back(std::move(col));
            hidden.push_back(out);
        }
        h = std::move(out);
    }
    MatrixXd col = im2col(apply(a, h), B, H, config_.kernel, 1);
    const ConstMap wo(params_.data() + layout.output.weight, config_.kernel * layout.output.in,
                      config_.state_dim);
    const ConstMap bo(params_.data() + layout.output.bias, 1, config_.state_dim);
    MatrixXd y = col * wo;
    y.rowwise() += bo.row(0);
    modulate(y, layout.output.scale, convs, gains);
    if (cache != nullptr) {
        cols.push_back(std::move(col));
        cache->batch = B;
        cache->raw = std::move(raw);
        cache->pre_time = std::move(pre_time);
        cache->time = temb;
        cache->cols = std::move(cols);
        cache->hidden = std::move(hidden);
        cache->conv = std::move(convs);
        cache->gain = std::move(gains);
    }
    return y;
}

VectorXd DenoiserModel::backward(const Cache& cache, const MatrixXd& dy) const {
    const Layout layout(config_);
    const Index B = cache.batch;
    const Index H = config_.horizon;
    const Index E = config_.time_embed_dim;
    const int k = config_.kernel;
    const Activation a = config_.activation;
    VectorXd grad = VectorXd::Zero(layout.total);
    auto view = [&](Index offset, Index rows, Index cols) {
        return Eigen::Map<MatrixXd>(grad.data() + offset, rows, cols);
    };

    MatrixXd dtime = MatrixXd::Zero(B, E);
    // Undoes the gain of conv layer `slot` (cache order): returns the gradient
    // w.r.t. the unmodulated conv output and accumulates the gain gradients.
    auto demodulate = [&](const MatrixXd& dz, Index scale_at, std::size_t slot) {
        if (scale_at < 0) {
            return dz;
        }
        const MatrixXd& g = cache.gain[slot];
        const MatrixXd dgain = block_sum(dz.cwiseProduct(cache.conv[slot]), B, H);
        view(scale_at, E, dz.cols()) = cache.time.transpose() * dgain;
        dtime += dgain * ConstMap(params_.data() + scale_at, E, dz.cols()).transpose();
        MatrixXd out = dz;
        for (Index b = 0; b < B; ++b) {
            out.middleRows(b * H, H).array().rowwise() *= g.row(b).array();
        }
        return out;
    };

    // Output convolution.
    const ConstMap wo(params_.data() + layout.output.weight, k * layout.output.in, config_.state_dim);
    const MatrixXd dyc = demodulate(dy, layout.output.scale, layout.layers.size());
    view(layout.output.weight, k * layout.output.in, config_.state_dim) = cache.cols.back().transpose() * dyc;
    view(layout.output.bias, 1, config_.state_dim) = dyc.colwise().sum();
    MatrixXd dh = col2im(dyc * wo.transpose(), B, H, k, 1, layout.output.in)
                      .cwiseProduct(apply_grad(a, cache.hidden.back()));

    for (std::size_t idx = layout.layers.size(); idx-- > 0;) {
        const auto& l = layout.layers[idx];
        const MatrixXd& col = cache.cols[idx];
        const ConstMap w(params_.data() + l.weight, k * l.in, l.out);
        const ConstMap tp(params_.data() + l.time, E, l.out);
        const MatrixXd per_sample = block_sum(dh, B, H);
        view(l.time, E, l.out) = cache.time.transpose() * per_sample;
        dtime += per_sample * tp.transpose();
        if (idx == 0 && layout.positional >= 0) {
            auto dp = view(layout.positional, H, l.out);
            for (Index b = 0; b < B; ++b) {
                dp += dh.middleRows(b * H, H);
            }
        }
        const MatrixXd dc = demodulate(dh, l.scale, idx);
        view(l.weight, k * l.in, l.out) = col.transpose() * dc;
        view(l.bias, 1, l.out) = dc.colwise().sum();
        if (idx == 0) {
            break;
        }
        MatrixXd dprev = col2im(dc * w.transpose(), B, H, k, l.dilation, l.in)
                             .cwiseProduct(apply_grad(a, cache.hidden[idx - 1]));
        if (l.residual) {
            dprev += dh;
        }
        dh = std::move(dprev);
    }

    const MatrixXd dpre = dtime.cwiseProduct(apply_grad(a, cache.pre_time));
    view(layout.time_w, E, E) = cache.raw.transpose() * dpre;
    view(layout.time_b, 1, E) = dpre.colwise().sum();
    return grad;
}

MatrixXd DenoiserModel::predict(const MatrixXd& x, int t) const {
    return forward({x}, {t}, nullptr);
}

std::vector<MatrixXd> DenoiserModel::predict_batch(const std::vector<MatrixXd>& xs,
                                                   const std::vector<int>& ts) const {
    if (xs.empty()) {
        return {};
    }
    // Chunk so im2col buffers stay cache-friendly.
    constexpr std::size_t kChunk = 32;
    std::vector<MatrixXd> out;
    out.reserve(xs.size());
    const Index H = config_.horizon;
    for (std::size_t start = 0; start < xs.size(); start += kChunk) {
        const std::size_t end = std::min(xs.size(), start + kChunk);
        const std::vector<MatrixXd> xb(xs.begin() + static_cast<std::ptrdiff_t>(start),
                                       xs.begin() + static_cast<std::ptrdiff_t>(end));
        const std::vector<int> tb(ts.begin() + static_cast<std::ptrdiff_t>(start),
                                  ts.begin() + static_cast<std::ptrdiff_t>(end));
        const MatrixXd y = forward(xb, tb, nullptr);
        for (std::size_t b = 0; b < xb.size(); ++b) {
            out.push_back(y.middleRows(static_cast<Index>(b) * H, H));
        }
    }
    return out;
}

LossAndGrad DenoiserModel::mse_loss(const std::vector<MatrixXd>& xs, const std::vector<int>& ts,
                                    const std::vector<MatrixXd>& targets, bool with_grad) const {
    if (targets.size() != xs.size()) {
        throw DimensionError("mse_loss: targets and inputs differ in length");
    }
    Cache cache;
    const MatrixXd y = forward(xs, ts, with_grad ? &cache : nullptr);
    const Index H = config_.horizon;
    const Index B = static_cast<Index>(xs.size());
    MatrixXd residual = y;
    for (Index b = 0; b < B; ++b) {
        residual.middleRows(b * H, H) -= targets[static_cast<std::size_t>(b)];
    }
    LossAndGrad out;
    out.loss = residual.squaredNorm() / static_cast<double>(B);
    if (with_grad) {
        out.grad = backward(cache, (2.0 / static_cast<double>(B)) * residual);
    }
    return out;
}

VectorXd DenoiserModel::backprop(const MatrixXd& x, int t, const MatrixXd& upstream) const {
    if (upstream.rows() != config_.horizon || upstream.cols() != config_.state_dim) {
        throw DimensionError("backprop: upstream gradient shape mismatch");
    }
    Cache cache;
    forward({x}, {t}, &cache);
    return backward(cache, upstream);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.eval_interval = j.value("eval_interval", c.eval_interval);
        c.patience = j.value("patience", c.patience);
        c.val_samples = j.value("val_samples", c.val_samples);
        c.seed = j.value("seed", c.seed);
        c.condition_endpoints = j.value("condition_endpoints", c.condition_endpoints);
        c.cosine_decay = j.value("cosine_decay", c.cosine_decay);
        c.ema_decay = j.value("ema_decay", c.ema_decay);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad training config: ") + e.what());
    }
    if (!(c.learning_rate > 0.0) || c.batch_size < 1 || c.max_steps < 1 || c.eval_interval < 1 ||
        c.patience < 1 || c.val_samples < 1 || !(c.ema_decay >= 0.0 && c.ema_decay < 1.0)) {
        throw ConfigError("training settings must be positive");
    }
    return c;
}

namespace {

double validation_loss(const std::vector<MatrixXd>& val, const NoiseSchedule& schedule,
                       const DenoiserModel& model, const TrainConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, 0x7a1));
    std::uniform_int_distribution<int> step(1, schedule.steps);
    double total = 0.0;
    constexpr int kChunk = 64;
    for (int start = 0; start < cfg.val_samples; start += kChunk) {
        const int n = std::min(kChunk, cfg.val_samples - start);
        std::vector<MatrixXd> xs, eps;
        std::vector<int> ts;
        for (int i = 0; i < n; ++i) {
            const auto& tau0 = val[static_cast<std::size_t>(start + i) % val.size()];
            const int t = step(rng);
            MatrixXd x, target;
            make_training_pair(schedule, tau0, t, standard_normal(tau0.rows(), tau0.cols(), rng),
                               cfg.condition_endpoints, x, target);
            xs.push_back(std::move(x));
            eps.push_back(std::move(target));
            ts.push_back(t);
        }
        total += model.mse_loss(xs, ts, eps, false).loss * n;
    }
    return total / cfg.val_samples;
}

}  // namespace

TrainResult train(const std::vector<MatrixXd>& train_set, const std::vector<MatrixXd>& val_set,
                  const NoiseSchedule& schedule, DenoiserModel& model, const TrainConfig& cfg,
                  std::ostream* log) {
    if (train_set.empty()) {
        throw ConfigError("training set is empty");
    }
    Rng rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    VectorXd m = VectorXd::Zero(model.num_params());
    VectorXd v = VectorXd::Zero(model.num_params());

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    VectorXd best_params = model.params();
    VectorXd raw = model.params();  // optimizer iterate; model.params() holds the EMA when enabled
    const bool ema = cfg.ema_decay > 0.0;
    int since_best = 0;
    double window = 0.0;
    int window_steps = 0;

    for (int step = 1; step <= cfg.max_steps; ++step) {
        std::vector<MatrixXd> batch;
        batch.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (int b = 0; b < cfg.batch_size; ++b) {
            batch.push_back(train_set[pick(rng)]);
        }
        if (ema) {
            model.params().swap(raw);
        }
        const LossAndGrad lg = training_loss(schedule, model, batch, rng, cfg.condition_endpoints);
        if (!std::isfinite(lg.loss)) {
            throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step));
        }
        m = beta1 * m + (1.0 - beta1) * lg.grad;
        v = beta2 * v + (1.0 - beta2) * lg.grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1, step);
        const double c2 = 1.0 - std::pow(beta2, step);
        const double lr = cfg.cosine_decay
                              ? 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * step / cfg.max_steps))
                              : cfg.learning_rate;
        model.params().array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        model.round_params();
        if (ema) {
            model.params().swap(raw);
            model.params() = cfg.ema_decay * model.params() + (1.0 - cfg.ema_decay) * raw;
            model.round_params();
        }

        result.step_losses.push_back(lg.loss);
        window += lg.loss;
        ++window_steps;

        if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
            LossRecord rec;
            rec.step = step;
            rec.train_loss = window / window_steps;
            window = 0.0;
            window_steps = 0;
            bool stop = false;
            if (!val_set.empty()) {
                rec.val_loss = validation_loss(val_set, schedule, model, cfg);
                if (*rec.val_loss < best_val) {
                    best_val = *rec.val_loss;
                    best_params = model.params();
                    result.best_step = step;
                    since_best = 0;
                } else if (++since_best >= cfg.patience) {
                    stop = true;
                }
            } else {
                result.best_step = step;
            }
            result.history.push_back(rec);
            if (log != nullptr) {
                json line{{"event", "eval"}, {"step", rec.step}, {"train_loss", rec.train_loss}};
                line["val_loss"] = rec.val_loss ? json(*rec.val_loss) : json(nullptr);
                *log << line.dump() << '\n';
                log->flush();
            }
            if (stop) {
                result.early_stopped = true;
                break;
            }
        }
    }
    if (!val_set.empty()) {
        model.params() = best_params;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------


void save_model(const DenoiserModel& model, const std::filesystem::path& path) {
    const std::string blob = detail::encode_f32(model.params().data(), static_cast<std::size_t>(model.num_params()));
    json header{{"format", "mpd-denoiser"},
                {"version", kCheckpointVersion},
                {"config", to_json(model.config())},
                {"normalizer",
                 {{"lo", std::vector<double>(model.normalizer.lo.data(),
                                             model.normalizer.lo.data() + model.normalizer.lo.size())},
                  {"hi", std::vector<double>(model.normalizer.hi.data(),
                                             model.normalizer.hi.data() + model.normalizer.hi.size())}}},
                {"schedule",
                 {{"kind", to_string(model.schedule.kind)},
                  {"steps", model.schedule.steps},
                  {"beta_min", model.schedule.beta_min},
                  {"beta_max", model.schedule.beta_max}}},
                {"param_count", model.num_params()},
                {"crc32", detail::crc32_of(blob)}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint " + path.string());
    }
    out << header.dump() << '\n';
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) {
        throw std::runtime_error("failed writing checkpoint " + path.string());
    }
}

DenoiserModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError("checkpoint header missing");
    }
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
    }
    if (header.value("format", std::string()) != "mpd-denoiser") {
        throw FormatError("not a denoiser checkpoint");
    }
    if (header.value("version", -1) != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + header.value("version", json()).dump());
    }
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        const DenoiserConfig cfg = denoiser_config_from_json(header.at("config"));
        DenoiserModel model(cfg, 0);
        const auto count = header.at("param_count").get<Index>();
        if (count != model.num_params() ||
            blob.size() != static_cast<std::size_t>(count) * sizeof(float)) {
            throw FormatError("checkpoint parameter blob is truncated or has the wrong size");
        }
        if (detail::crc32_of(blob) != header.at("crc32").get<std::uint32_t>()) {
            throw FormatError("checkpoint checksum mismatch");
        }
        detail::decode_f32(blob, model.params().data(), static_cast<std::size_t>(count));
        const auto lo = header.at("normalizer").at("lo").get<std::vector<double>>();
        const auto hi = header.at("normalizer").at("hi").get<std::vector<double>>();
        if (static_cast<Index>(lo.size()) != cfg.state_dim || hi.size() != lo.size()) {
            throw FormatError("checkpoint normalizer does not match the state dimension");
        }
        model.normalizer.lo = Eigen::Map<const VectorXd>(lo.data(), static_cast<Index>(lo.size()));
        model.normalizer.hi = Eigen::Map<const VectorXd>(hi.data(), static_cast<Index>(hi.size()));
        const auto& sj = header.at("schedule");
        model.schedule.kind = schedule_kind_from_string(sj.at("kind").get<std::string>());
        model.schedule.steps = sj.at("steps").get<int>();
        model.schedule.beta_min = sj.at("beta_min").get<double>();
        model.schedule.beta_max = sj.at("beta_max").get<double>();
        return model;
    } catch (const json::exception& e) {
        throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
    }
}

}  // namespace mpd
