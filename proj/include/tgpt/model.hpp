#pragma once

#include "tgpt/autodiff.hpp"
#include "tgpt/error.hpp"
#include "tgpt/forecast.hpp"
#include "tgpt/timeseries.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace tgpt::model {

using ad::Array;
using ad::Shape;
using ad::Tape;
using ad::Tensor;

/// Architecture hyperparameters of the encoder-decoder forecaster.
struct ModelConfig {
    std::size_t input_length = 24;   ///< L, history window fed to the encoder
    std::size_t max_horizon = 12;    ///< H, number of decoder positions
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_encoder_layers = 2;
    std::size_t n_decoder_layers = 2;
    std::size_t ff_dim = 128;
    double dropout = 0.1;
    std::size_t n_exo_channels = 0;

    void validate() const {
        if (input_length < 2) throw ConfigError("input_length must be at least 2");
        if (max_horizon < 1) throw ConfigError("max_horizon must be positive");
        if (d_model == 0 || n_heads == 0 || ff_dim == 0) throw ConfigError("d_model, n_heads and ff_dim must be positive");
        if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
        if (n_encoder_layers == 0 || n_decoder_layers == 0) throw ConfigError("layer counts must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    }

    /// Default desk-scale configuration for a frequency.
    static ModelConfig defaults_for(const Frequency& freq) {
        ModelConfig c;
        c.input_length = 2 * std::max(freq.season_length(), freq.default_horizon());
        c.max_horizon = freq.default_horizon();
        return c;
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return nlohmann::json{{"input_length", c.input_length}, {"max_horizon", c.max_horizon},   {"d_model", c.d_model},
                          {"n_heads", c.n_heads},           {"n_encoder_layers", c.n_encoder_layers},
                          {"n_decoder_layers", c.n_decoder_layers}, {"ff_dim", c.ff_dim}, {"dropout", c.dropout},
                          {"n_exo_channels", c.n_exo_channels}};
}

/// Reads a config object; missing keys keep the values of @p base, unknown keys are rejected.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    static const std::set<std::string> known{"input_length", "max_horizon",    "d_model", "n_heads",       "n_encoder_layers",
                                             "n_decoder_layers", "ff_dim",     "dropout", "n_exo_channels"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown model config key '" + key + "'");
        if (key == "dropout") {
            if (!value.is_number()) throw ConfigError("model config 'dropout' must be a number");
        } else if (!(value.is_number_integer() && value.get<std::int64_t>() >= 0)) {
            throw ConfigError("model config '" + key + "' must be a non-negative integer");
        }
    }
    auto get = [&](const char* key, std::size_t& dst) {
        if (j.contains(key)) dst = j.at(key).get<std::size_t>();
    };
    get("input_length", base.input_length);
    get("max_horizon", base.max_horizon);
    get("d_model", base.d_model);
    get("n_heads", base.n_heads);
    get("n_encoder_layers", base.n_encoder_layers);
    get("n_decoder_layers", base.n_decoder_layers);
    get("ff_dim", base.ff_dim);
    get("n_exo_channels", base.n_exo_channels);
    if (j.contains("dropout")) base.dropout = j.at("dropout").get<double>();
    base.validate();
    return base;
}

/// Learnable parameters plus the fixed positional tables.
struct WeightStore {
    std::map<std::string, Array> params;
    std::map<std::string, Array> buffers;

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, a] : params) n += a.size();
        return n;
    }

    friend bool operator==(const WeightStore&, const WeightStore&) = default;
};

enum class Init { Xavier, Zeros, Ones };

struct ParameterSpec {
    std::string name;
    Shape shape;
    Init init;
};

/// Every learnable tensor in creation order.
inline std::vector<ParameterSpec> parameter_layout(const ModelConfig& c) {
    const std::size_t d = c.d_model;
    std::vector<ParameterSpec> out;
    auto linear = [&](const std::string& name, std::size_t in, std::size_t outd) {
        out.push_back({name + ".weight", {in, outd}, Init::Xavier});
        out.push_back({name + ".bias", {outd}, Init::Zeros});
    };
    auto norm = [&](const std::string& name) {
        out.push_back({name + ".gain", {d}, Init::Ones});
        out.push_back({name + ".bias", {d}, Init::Zeros});
    };
    auto attention = [&](const std::string& name) {
        for (const char* p : {"q", "k", "v", "o"}) linear(name + "." + p, d, d);
    };
    linear("input_proj", 1 + c.n_exo_channels, d);
    if (c.n_exo_channels > 0) linear("future_exo_proj", c.n_exo_channels, d);
    out.push_back({"decoder.start_token", {d}, Init::Xavier});
    for (std::size_t i = 0; i < c.n_encoder_layers; ++i) {
        const std::string p = "encoder." + std::to_string(i);
        attention(p + ".self_attn");
        norm(p + ".ln1");
        linear(p + ".ff1", d, c.ff_dim);
        linear(p + ".ff2", c.ff_dim, d);
        norm(p + ".ln2");
    }
    for (std::size_t i = 0; i < c.n_decoder_layers; ++i) {
        const std::string p = "decoder." + std::to_string(i);
        attention(p + ".self_attn");
        norm(p + ".ln1");
        attention(p + ".cross_attn");
        norm(p + ".ln2");
        linear(p + ".ff1", d, c.ff_dim);
        linear(p + ".ff2", c.ff_dim, d);
        norm(p + ".ln3");
    }
    linear("head", d, 1);
    return out;
}

/// Fixed sinusoidal encodings for window positions 0..rows-1.
inline Array sinusoidal_table(std::size_t rows, std::size_t d) {
    Array t({rows, d});
    for (std::size_t pos = 0; pos < rows; ++pos) {
        for (std::size_t i = 0; i < d; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
            t[pos * d + i] = i % 2 == 0 ? std::sin(static_cast<double>(pos) * freq) : std::cos(static_cast<double>(pos) * freq);
        }
    }
    return t;
}

inline std::map<std::string, Shape> buffer_layout(const ModelConfig& c) {
    return {{"pos_enc.encoder", {c.input_length, c.d_model}}, {"pos_enc.decoder", {c.max_horizon, c.d_model}}};
}

/// Describes the first disagreement between @p w and the layout implied by @p c, if any.
inline std::optional<std::string> check_weights(const WeightStore& w, const ModelConfig& c) {
    const auto layout = parameter_layout(c);
    if (layout.size() != w.params.size())
        return "expected " + std::to_string(layout.size()) + " parameters, found " + std::to_string(w.params.size());
    for (const auto& spec : layout) {
        const auto it = w.params.find(spec.name);
        if (it == w.params.end()) return "missing parameter '" + spec.name + "'";
        if (it->second.shape() != spec.shape)
            return "parameter '" + spec.name + "' has shape " + ad::shape_str(it->second.shape()) + ", config implies " +
                   ad::shape_str(spec.shape);
        if (!it->second.all_finite()) return "parameter '" + spec.name + "' has non-finite entries";
    }
    const auto buffers = buffer_layout(c);
    if (buffers.size() != w.buffers.size()) return "unexpected buffer count";
    for (const auto& [name, shape] : buffers) {
        const auto it = w.buffers.find(name);
        if (it == w.buffers.end()) return "missing buffer '" + name + "'";
        if (it->second.shape() != shape) return "buffer '" + name + "' has shape " + ad::shape_str(it->second.shape());
    }
    return std::nullopt;
}

/**
 * @brief Deterministic initial weights.
 *
 * Linear weights are uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero,
 * layer-norm gains one; positional tables are sinusoidal and never trained.
 */
inline WeightStore init_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    WeightStore w;
    for (const auto& spec : parameter_layout(config)) {
        Array a(spec.shape, spec.init == Init::Ones ? 1.0 : 0.0);
        if (spec.init == Init::Xavier) {
            const double fan_in = spec.shape.size() == 2 ? static_cast<double>(spec.shape[0]) : 1.0;
            const double fan_out = static_cast<double>(spec.shape.back());
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            std::uniform_real_distribution<double> dist(-limit, limit);
            for (double& v : a.data()) v = dist(rng);
        }
        w.params.emplace(spec.name, std::move(a));
    }
    w.buffers.emplace("pos_enc.encoder", sinusoidal_table(config.input_length, config.d_model));
    w.buffers.emplace("pos_enc.decoder", sinusoidal_table(config.max_horizon, config.d_model));
    return w;
}

// ---------------------------------------------------------------------------
// Input windows

struct WindowScale {
    double mean = 0.0;
    double std = 1.0;

    [[nodiscard]] double normalize(double v) const { return (v - mean) / std; }
    [[nodiscard]] double denormalize(double v) const { return mean + std * v; }
};

/// Mean and population standard deviation; degenerate (near-constant) windows use std 1.
inline WindowScale window_scale(std::span<const double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(v.size()));
    if (!(sd > 1e-10 * std::abs(mean)) || sd == 0.0) return {mean, 1.0};
    return {mean, sd};
}

/// One forecast origin: the last L history entries per channel and the known future covariates.
struct ModelWindow {
    std::vector<double> history;                     ///< L target values, left-padded
    std::vector<std::vector<double>> exo_history;    ///< n_exo x L
    std::vector<std::vector<double>> future_exo;     ///< n_exo x h
};

/**
 * @brief Window ending just before index @p cut of @p series.
 *
 * Histories shorter than L are left-padded with the earliest value in the
 * window (the same rule applies to exogenous channels).
 */
inline ModelWindow extract_window(const TimeSeries& series, std::size_t cut, std::size_t input_length, std::size_t horizon,
                                  std::size_t n_exo) {
    if (cut == 0 || cut > series.size()) throw DataError("series '" + series.id() + "': invalid forecast origin");
    if (series.exogenous().size() != n_exo)
        throw DataError("series '" + series.id() + "' has " + std::to_string(series.exogenous().size()) +
                        " exogenous channels, model expects " + std::to_string(n_exo));
    auto take = [&](std::span<const double> src) {
        std::vector<double> out(input_length);
        const std::size_t avail = std::min(cut, input_length);
        const std::size_t first = cut - avail;
        const std::size_t pad = input_length - avail;
        for (std::size_t i = 0; i < pad; ++i) out[i] = src[first];
        for (std::size_t i = 0; i < avail; ++i) out[pad + i] = src[first + i];
        return out;
    };
    ModelWindow w;
    w.history = take(series.values());
    for (const auto& ch : series.exogenous()) {
        if (ch.values.size() < cut + horizon)
            throw DataError("series '" + series.id() + "': exogenous channel '" + ch.name + "' does not cover the " +
                            std::to_string(horizon) + "-step forecast window");
        w.exo_history.push_back(take(ch.values));
        w.future_exo.emplace_back(ch.values.begin() + static_cast<std::ptrdiff_t>(cut),
                                  ch.values.begin() + static_cast<std::ptrdiff_t>(cut + horizon));
    }
    return w;
}

/// Batched model inputs in raw units together with their per-item normalisation.
struct ForecastWindowBatch {
    Array history;                     ///< B x L x (1 + n_exo)
    std::optional<Array> future_exo;   ///< B x h x n_exo
    std::vector<WindowScale> scale;    ///< target scale per item
    std::vector<std::vector<WindowScale>> exo_scale;  ///< per item, per channel

    [[nodiscard]] std::size_t size() const noexcept { return scale.size(); }
};

inline ForecastWindowBatch make_batch(const std::vector<ModelWindow>& windows, std::size_t horizon) {
    if (windows.empty()) throw DataError("empty window batch");
    const std::size_t L = windows.front().history.size();
    const std::size_t n_exo = windows.front().exo_history.size();
    const std::size_t B = windows.size();
    ForecastWindowBatch batch;
    batch.history = Array({B, L, 1 + n_exo});
    if (n_exo > 0) batch.future_exo = Array({B, horizon, n_exo});
    for (std::size_t b = 0; b < B; ++b) {
        const auto& w = windows[b];
        if (w.history.size() != L || w.exo_history.size() != n_exo) throw ShapeError("inconsistent windows in batch");
        batch.scale.push_back(window_scale(w.history));
        std::vector<WindowScale> exo_scales;
        for (std::size_t c = 0; c < n_exo; ++c) exo_scales.push_back(window_scale(w.exo_history[c]));
        batch.exo_scale.push_back(std::move(exo_scales));
        for (std::size_t t = 0; t < L; ++t) {
            batch.history[(b * L + t) * (1 + n_exo)] = w.history[t];
            for (std::size_t c = 0; c < n_exo; ++c) batch.history[(b * L + t) * (1 + n_exo) + 1 + c] = w.exo_history[c][t];
        }
        for (std::size_t t = 0; t < horizon && n_exo > 0; ++t)
            for (std::size_t c = 0; c < n_exo; ++c) (*batch.future_exo)[(b * horizon + t) * n_exo + c] = w.future_exo[c].at(t);
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Network

enum class Mode { Train, Infer };

/// Parameters of one forward pass, bound as tape leaves.
class BoundParameters {
public:
    BoundParameters(Tape& tape, const WeightStore& w, bool requires_grad) {
        for (const auto& [name, a] : w.params) tensors_.emplace(name, tape.leaf(a, requires_grad));
        for (const auto& [name, a] : w.buffers) tensors_.emplace(name, tape.constant(a));
    }

    [[nodiscard]] const Tensor& operator[](const std::string& name) const {
        const auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("weight store has no tensor '" + name + "'");
        return it->second;
    }

    [[nodiscard]] const std::map<std::string, Tensor>& all() const noexcept { return tensors_; }

private:
    std::map<std::string, Tensor> tensors_;
};

namespace detail {

constexpr double kMaskedScore = -1e9;
constexpr double kLayerNormEps = 1e-5;

class Network {
public:
    Network(Tape& tape, const BoundParameters& p, const ModelConfig& c, Mode mode, std::uint64_t seed)
        : tape_(tape), p_(p), c_(c), train_(mode == Mode::Train && c.dropout > 0.0), rng_(seed) {}

    Tensor linear(const Tensor& x, const std::string& name) {
        return ad::add(ad::matmul(x, p_[name + ".weight"]), p_[name + ".bias"]);
    }

    Tensor norm(const Tensor& x, const std::string& name) {
        return ad::layer_norm(x, p_[name + ".gain"], p_[name + ".bias"], kLayerNormEps);
    }

    Tensor dropout(const Tensor& x) {
        if (!train_) return x;
        std::bernoulli_distribution keep(1.0 - c_.dropout);
        Array mask(x.shape());
        const double s = 1.0 / (1.0 - c_.dropout);
        for (double& m : mask.data()) m = keep(rng_) ? s : 0.0;
        return ad::mul(x, tape_.constant(std::move(mask)));
    }

    Tensor attention(const Tensor& query, const Tensor& memory, const std::string& name, const Tensor* mask) {
        const Tensor q = linear(query, name + ".q");
        const Tensor k = linear(memory, name + ".k");
        const Tensor v = linear(memory, name + ".v");
        const std::size_t dh = c_.d_model / c_.n_heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<Tensor> heads;
        for (std::size_t h = 0; h < c_.n_heads; ++h) {
            const Tensor qh = c_.n_heads == 1 ? q : ad::slice(q, 2, h * dh, (h + 1) * dh);
            const Tensor kh = c_.n_heads == 1 ? k : ad::slice(k, 2, h * dh, (h + 1) * dh);
            const Tensor vh = c_.n_heads == 1 ? v : ad::slice(v, 2, h * dh, (h + 1) * dh);
            Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
            if (mask) scores = ad::add(scores, *mask);
            heads.push_back(ad::matmul(ad::softmax(scores), vh));
        }
        const Tensor merged = heads.size() == 1 ? heads.front() : ad::concat(heads, 2);
        return linear(merged, name + ".o");
    }

    Tensor feed_forward(const Tensor& x, const std::string& name) {
        return linear(ad::gelu(linear(x, name + ".ff1")), name + ".ff2");
    }

    Tensor encoder_layer(Tensor x, std::size_t i) {
        const std::string p = "encoder." + std::to_string(i);
        x = norm(ad::add(x, dropout(attention(x, x, p + ".self_attn", nullptr))), p + ".ln1");
        return norm(ad::add(x, dropout(feed_forward(x, p))), p + ".ln2");
    }

    Tensor decoder_layer(Tensor y, const Tensor& memory, const Tensor& causal, std::size_t i) {
        const std::string p = "decoder." + std::to_string(i);
        y = norm(ad::add(y, dropout(attention(y, y, p + ".self_attn", &causal))), p + ".ln1");
        y = norm(ad::add(y, dropout(attention(y, memory, p + ".cross_attn", nullptr))), p + ".ln2");
        return norm(ad::add(y, dropout(feed_forward(y, p))), p + ".ln3");
    }

private:
    Tape& tape_;
    const BoundParameters& p_;
    const ModelConfig& c_;
    bool train_;
    std::mt19937_64 rng_;
};

}  // namespace detail

/**
 * @brief Forward pass returning the B x h forecast in normalised units.
 *
 * Each history window is standardised with its own mean and deviation,
 * projected to d_model with the exogenous channels, offset by the encoder
 * positional table and encoded. The decoder starts from h copies of a
 * learned start token plus positional rows 0..h-1 (and the projected future
 * covariates), applies causally masked self-attention, cross-attention over
 * the encoder output and a feed-forward block per layer, and a linear head
 * maps every position to one value. Dropout is only active in Train mode.
 */
inline Tensor forward_normalized(Tape& tape, const BoundParameters& params, const ModelConfig& config,
                                 const ForecastWindowBatch& batch, std::size_t horizon, Mode mode, std::uint64_t seed) {
    if (horizon == 0 || horizon > config.max_horizon)
        throw ConfigError("horizon " + std::to_string(horizon) + " exceeds the model maximum " + std::to_string(config.max_horizon));
    const std::size_t B = batch.size();
    const std::size_t L = config.input_length;
    const std::size_t C = 1 + config.n_exo_channels;
    const std::size_t d = config.d_model;
    if (batch.history.shape() != Shape{B, L, C})
        throw ShapeError("history batch has shape " + ad::shape_str(batch.history.shape()) + ", expected " +
                         ad::shape_str(Shape{B, L, C}));
    if (config.n_exo_channels > 0 && (!batch.future_exo || batch.future_exo->shape() != Shape{B, horizon, config.n_exo_channels}))
        throw ShapeError("future covariates missing or mis-shaped");

    Array normalized(batch.history.shape());
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < L; ++t) {
            const std::size_t base = (b * L + t) * C;
            normalized[base] = batch.scale[b].normalize(batch.history[base]);
            for (std::size_t c = 1; c < C; ++c) normalized[base + c] = batch.exo_scale[b][c - 1].normalize(batch.history[base + c]);
        }
    }

    detail::Network net(tape, params, config, mode, seed);
    Tensor x = net.linear(tape.constant(std::move(normalized)), "input_proj");
    x = ad::add(x, params["pos_enc.encoder"]);
    x = net.dropout(x);
    for (std::size_t i = 0; i < config.n_encoder_layers; ++i) x = net.encoder_layer(x, i);

    const Tensor positions = ad::slice(params["pos_enc.decoder"], 0, 0, horizon);
    const Tensor tokens = ad::add(positions, params["decoder.start_token"]);  // h x d
    Tensor y;
    if (config.n_exo_channels > 0) {
        Array fx(batch.future_exo->shape());
        const std::size_t E = config.n_exo_channels;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < horizon; ++t)
                for (std::size_t c = 0; c < E; ++c)
                    fx[(b * horizon + t) * E + c] = batch.exo_scale[b][c].normalize((*batch.future_exo)[(b * horizon + t) * E + c]);
        y = ad::add(net.linear(tape.constant(std::move(fx)), "future_exo_proj"), tokens);
    } else {
        y = ad::add(tape.constant(Array({B, horizon, d}, 0.0)), tokens);
    }
    Array causal({horizon, horizon}, 0.0);
    for (std::size_t i = 0; i < horizon; ++i)
        for (std::size_t j = i + 1; j < horizon; ++j) causal[i * horizon + j] = detail::kMaskedScore;
    const Tensor mask = tape.constant(std::move(causal));
    for (std::size_t i = 0; i < config.n_decoder_layers; ++i) y = net.decoder_layer(y, x, mask, i);

    return ad::reshape(net.linear(y, "head"), {B, horizon});
}

/// Forward pass in raw units (normalised output mapped back through each window's scale).
inline Array forward(const WeightStore& weights, const ModelConfig& config, const ForecastWindowBatch& batch, std::size_t horizon,
                     Mode mode = Mode::Infer, std::uint64_t seed = 0) {
    Tape tape;
    const BoundParameters params(tape, weights, false);
    const Tensor out = forward_normalized(tape, params, config, batch, horizon, mode, seed);
    Array result = out.value();
    for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t t = 0; t < horizon; ++t) result[b * horizon + t] = batch.scale[b].denormalize(result[b * horizon + t]);
    return result;
}

/// Forecasts the steps after the end of each series, @p batch_size windows per pass.
inline std::vector<PointForecast> predict_many(const WeightStore& weights, const ModelConfig& config,
                                               std::span<const TimeSeries> series, std::size_t horizon,
                                               std::size_t batch_size = 256) {
    if (horizon == 0 || horizon > config.max_horizon)
        throw ConfigError("horizon " + std::to_string(horizon) + " exceeds the model maximum " + std::to_string(config.max_horizon));
    std::vector<PointForecast> out;
    out.reserve(series.size());
    for (std::size_t start = 0; start < series.size(); start += batch_size) {
        const std::size_t end = std::min(series.size(), start + batch_size);
        std::vector<ModelWindow> windows;
        for (std::size_t i = start; i < end; ++i)
            windows.push_back(extract_window(series[i], series[i].size(), config.input_length, horizon, config.n_exo_channels));
        const Array y = forward(weights, config, make_batch(windows, horizon), horizon);
        for (std::size_t i = start; i < end; ++i) {
            const std::size_t b = i - start;
            out.emplace_back(series[i].id(), std::vector<double>(y.data().begin() + static_cast<std::ptrdiff_t>(b * horizon),
                                                                 y.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * horizon)));
        }
    }
    return out;
}

inline PointForecast predict_series(const WeightStore& weights, const ModelConfig& config, const TimeSeries& series,
                                    std::size_t horizon) {
    return predict_many(weights, config, std::span<const TimeSeries>(&series, 1), horizon).front();
}

/// Adapter exposing a loaded model through the per-series Forecaster interface.
inline Forecaster as_forecaster(const WeightStore& weights, const ModelConfig& config) {
    return [&weights, &config](const TimeSeries& history, std::size_t horizon) {
        return predict_series(weights, config, history, horizon);
    };
}

}  // namespace tgpt::model
