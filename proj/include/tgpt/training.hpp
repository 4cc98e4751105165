#pragma once

#include "tgpt/autodiff.hpp"
#include "tgpt/error.hpp"
#include "tgpt/model.hpp"
#include "tgpt/timeseries.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace tgpt::training {

using model::Array;

enum class Loss { MAE };

struct TrainConfig {
    std::size_t steps = 1000;
    std::size_t batch_size = 256;
    double lr0 = 1e-4;
    double lr_final_fraction = 0.12;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    Loss loss = Loss::MAE;

    void validate() const {
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be a non-negative finite number");
        if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0)) throw ConfigError("lr_final_fraction must be in (0, 1]");
        if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must be in (0, 1)");
        if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must be in (0, 1)");
        if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return nlohmann::json{{"steps", c.steps},
                          {"batch_size", c.batch_size},
                          {"lr0", c.lr0},
                          {"lr_final_fraction", c.lr_final_fraction},
                          {"adam_beta1", c.adam_beta1},
                          {"adam_beta2", c.adam_beta2},
                          {"adam_eps", c.adam_eps},
                          {"seed", c.seed},
                          {"loss", "MAE"}};
}

/// Reads a training config; absent keys keep the values of @p base, unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    static const std::set<std::string> integers{"steps", "batch_size", "seed"};
    static const std::set<std::string> reals{"lr0", "lr_final_fraction", "adam_beta1", "adam_beta2", "adam_eps"};
    for (const auto& [key, value] : j.items()) {
        if (integers.count(key)) {
            if (!(value.is_number_integer() && value.get<std::int64_t>() >= 0)) throw ConfigError("train config '" + key + "' must be a non-negative integer");
        } else if (reals.count(key)) {
            if (!value.is_number()) throw ConfigError("train config '" + key + "' must be a number");
        } else if (key == "loss") {
            if (value != "MAE") throw ConfigError("train config 'loss' must be \"MAE\"");
        } else {
            throw ConfigError("unknown train config key '" + key + "'");
        }
    }
    if (j.contains("steps")) base.steps = j["steps"].get<std::size_t>();
    if (j.contains("batch_size")) base.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("lr0")) base.lr0 = j["lr0"].get<double>();
    if (j.contains("lr_final_fraction")) base.lr_final_fraction = j["lr_final_fraction"].get<double>();
    if (j.contains("adam_beta1")) base.adam_beta1 = j["adam_beta1"].get<double>();
    if (j.contains("adam_beta2")) base.adam_beta2 = j["adam_beta2"].get<double>();
    if (j.contains("adam_eps")) base.adam_eps = j["adam_eps"].get<double>();
    base.validate();
    return base;
}

/**
 * @brief Learning rate used at 0-based step k of a run of @p cfg.steps.
 *
 * Linear decay from lr0 at k = 0 to lr_final_fraction * lr0 at the final
 * step k = steps - 1 (a single-step run uses lr0).
 */
inline double learning_rate(std::size_t k, const TrainConfig& cfg) {
    if (cfg.steps <= 1) return cfg.lr0;
    const double progress = static_cast<double>(std::min(k, cfg.steps - 1)) / static_cast<double>(cfg.steps - 1);
    return cfg.lr0 * (cfg.lr_final_fraction + (1.0 - cfg.lr_final_fraction) * (1.0 - progress));
}

struct LossTrace {
    std::vector<double> loss;
    std::vector<double> learning_rate;

    [[nodiscard]] std::size_t size() const noexcept { return loss.size(); }
};

/// Windows plus B x h targets in raw units.
struct TrainingBatch {
    model::ForecastWindowBatch windows;
    Array target;
};

/// Series with at least one history point and @p horizon future points.
inline std::vector<std::size_t> usable_series(const Dataset& ds, std::size_t horizon) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds[i].size() >= horizon + 1) out.push_back(i);
    return out;
}

/**
 * @brief Draws a training batch.
 *
 * Each item picks a usable series uniformly, then a forecast origin (cut)
 * uniformly in [1, n - h]; the history is the window ending at the cut and
 * the target the following h values.
 */
inline TrainingBatch sample_batch(const Dataset& ds, std::size_t input_length, std::size_t horizon, std::size_t batch_size,
                                  std::size_t n_exo, std::mt19937_64& rng) {
    const auto usable = usable_series(ds, horizon);
    if (usable.empty())
        throw DataError("no series has the " + std::to_string(horizon + 1) + " observations needed for a training window");
    std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
    std::vector<model::ModelWindow> windows;
    Array target({batch_size, horizon});
    for (std::size_t b = 0; b < batch_size; ++b) {
        const TimeSeries& s = ds[usable[pick(rng)]];
        std::uniform_int_distribution<std::size_t> origin(1, s.size() - horizon);
        const std::size_t cut = origin(rng);
        windows.push_back(model::extract_window(s, cut, input_length, horizon, n_exo));
        for (std::size_t j = 0; j < horizon; ++j) target[b * horizon + j] = s.values()[cut + j];
    }
    return {model::make_batch(windows, horizon), std::move(target)};
}

/// MAE between the normalised forecast and the target normalised with each window's scale.
inline ad::Tensor normalized_mae(ad::Tape& tape, const ad::Tensor& prediction, const TrainingBatch& batch) {
    Array target = batch.target;
    const std::size_t h = target.dim(1);
    for (std::size_t b = 0; b < target.dim(0); ++b)
        for (std::size_t j = 0; j < h; ++j) target[b * h + j] = batch.windows.scale[b].normalize(target[b * h + j]);
    return ad::mean_all(ad::abs(ad::sub(prediction, tape.constant(std::move(target)))));
}

struct AdamState {
    std::map<std::string, Array> m;
    std::map<std::string, Array> v;
};

/// One bias-corrected Adam update at 0-based step @p step_index with the scheduled learning rate.
inline void adam_step(model::WeightStore& weights, const std::map<std::string, Array>& grads, AdamState& state,
                      std::size_t step_index, const TrainConfig& cfg) {
    if (grads.size() != weights.params.size())
        throw ShapeError("gradient set covers " + std::to_string(grads.size()) + " of " + std::to_string(weights.params.size()) +
                         " parameters");
    for (const auto& [name, g] : grads) {
        const auto it = weights.params.find(name);
        if (it == weights.params.end()) throw ShapeError("gradient for unknown parameter '" + name + "'");
        if (g.shape() != it->second.shape()) throw ShapeError("gradient for '" + name + "' has the wrong shape");
        for (double x : g.data())
            if (std::isnan(x) || std::isinf(x))
                throw NumericError("non-finite gradient for parameter '" + name + "' at step " + std::to_string(step_index));
    }
    const double lr = learning_rate(step_index, cfg);
    const double t = static_cast<double>(step_index + 1);
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
    for (const auto& [name, g] : grads) {
        Array& w = weights.params.at(name);
        auto [mit, m_new] = state.m.try_emplace(name, g.shape(), 0.0);
        auto [vit, v_new] = state.v.try_emplace(name, g.shape(), 0.0);
        Array& m = mit->second;
        Array& v = vit->second;
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            w[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
        }
        if (!w.all_finite()) throw NumericError("parameter '" + name + "' became non-finite at step " + std::to_string(step_index));
    }
}

/// Observer invoked with the number of completed steps and the current weights.
using StepObserver = std::function<void(std::size_t steps_done, const model::WeightStore&)>;

struct TrainResult {
    model::WeightStore weights;
    LossTrace trace;
};

/// Loss and gradients of one batch.
inline std::pair<double, std::map<std::string, Array>> loss_and_gradients(const model::WeightStore& weights,
                                                                          const model::ModelConfig& config,
                                                                          const TrainingBatch& batch, std::size_t horizon,
                                                                          model::Mode mode, std::uint64_t dropout_seed) {
    ad::Tape tape;
    const model::BoundParameters params(tape, weights, true);
    const auto prediction = model::forward_normalized(tape, params, config, batch.windows, horizon, mode, dropout_seed);
    const auto loss = normalized_mae(tape, prediction, batch);
    const double value = loss.value().item();
    const ad::Gradients grads = tape.backward(loss);
    std::map<std::string, Array> out;
    for (const auto& [name, a] : weights.params) {
        const Array* g = grads.find(params[name]);
        out.emplace(name, g ? *g : Array(a.shape(), 0.0));
    }
    return {value, std::move(out)};
}

/**
 * @brief Shared loop of pretrain and finetune.
 *
 * Step k draws its batch and dropout masks from an mt19937_64 seeded with
 * (seed, k), so runs are reproducible and independent of earlier steps.
 * The observer, when given, sees the weights after every step in
 * @p observe_at (0 means before the first step).
 */
inline TrainResult train_loop(model::WeightStore weights, const model::ModelConfig& config, const Dataset& ds,
                              const TrainConfig& cfg, const std::set<std::size_t>& observe_at = {},
                              const StepObserver& observer = {}) {
    cfg.validate();
    config.validate();
    if (ds.empty()) throw DataError("training dataset is empty");
    if (const auto problem = model::check_weights(weights, config)) throw ConfigError("weights do not match config: " + *problem);
    const std::size_t horizon = config.max_horizon;
    if (cfg.steps > 0 && usable_series(ds, horizon).empty())
        throw DataError("no series has the " + std::to_string(horizon + 1) + " observations needed for a training window");
    TrainResult result;
    AdamState state;
    if (observer && observe_at.count(0)) observer(0, weights);
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                          static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(static_cast<std::uint64_t>(k) >> 32)};
        std::mt19937_64 rng(seq);
        const TrainingBatch batch = sample_batch(ds, config.input_length, horizon, cfg.batch_size, config.n_exo_channels, rng);
        const auto [loss, grads] = loss_and_gradients(weights, config, batch, horizon, model::Mode::Train, rng());
        result.trace.loss.push_back(loss);
        result.trace.learning_rate.push_back(learning_rate(k, cfg));
        adam_step(weights, grads, state, k, cfg);
        if (observer && observe_at.count(k + 1)) observer(k + 1, weights);
    }
    result.weights = std::move(weights);
    return result;
}

/// Trains a fresh model (weights initialised from cfg.seed) on the source dataset.
inline TrainResult pretrain(const Dataset& source, const model::ModelConfig& config, const TrainConfig& cfg,
                            const std::set<std::size_t>& observe_at = {}, const StepObserver& observer = {}) {
    return train_loop(model::init_weights(config, cfg.seed), config, source, cfg, observe_at, observer);
}

/// Continues training from pretrained weights on the target dataset.
inline TrainResult finetune(const model::WeightStore& weights, const model::ModelConfig& config, const Dataset& target,
                            const TrainConfig& cfg, const std::set<std::size_t>& observe_at = {},
                            const StepObserver& observer = {}) {
    return train_loop(weights, config, target, cfg, observe_at, observer);
}

}  // namespace tgpt::training
