#include "tgpt/model.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

using namespace tgpt;
using namespace tgpt::model;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelConfig tiny_config(std::size_t n_exo = 0) {
    ModelConfig c;
    c.input_length = 8;
    c.max_horizon = 4;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_encoder_layers = 1;
    c.n_decoder_layers = 1;
    c.ff_dim = 16;
    c.dropout = 0.0;
    c.n_exo_channels = n_exo;
    return c;
}

// Initial biases are zero; jitter every parameter so each one carries signal.
WeightStore random_weights(const ModelConfig& c, std::uint64_t seed, double jitter = 0.2) {
    auto w = init_weights(c, seed);
    std::mt19937_64 rng(seed + 1000);
    std::normal_distribution<double> n(0.0, jitter);
    for (auto& [name, a] : w.params)
        for (double& v : a.storage()) v += n(rng);
    return w;
}

TimeSeries random_series(std::mt19937_64& rng, std::string id, std::size_t n, std::size_t n_exo = 0, std::size_t future = 0) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> v(n);
    for (std::size_t t = 0; t < n; ++t) v[t] = 10.0 + 3.0 * std::sin(0.7 * t) + noise(rng);
    std::vector<ExogenousChannel> exo;
    for (std::size_t c = 0; c < n_exo; ++c) {
        std::vector<double> x(n + future);
        for (double& e : x) e = noise(rng);
        exo.push_back({"x" + std::to_string(c), std::move(x)});
    }
    return TimeSeries(std::move(id), 0, Frequency::monthly(), std::move(v), std::move(exo));
}

ForecastWindowBatch batch_of(const std::vector<TimeSeries>& series, const ModelConfig& c, std::size_t h) {
    std::vector<ModelWindow> windows;
    for (const auto& s : series) windows.push_back(extract_window(s, s.size() - s.future_steps(), c.input_length, h, c.n_exo_channels));
    return make_batch(windows, h);
}

}  // namespace

TEST_CASE("ModelConfig", "[model][config]") {
    CHECK_NOTHROW(ModelConfig{}.validate());
    auto bad = ModelConfig{};
    bad.n_heads = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig{};
    bad.input_length = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig{};
    bad.dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    const auto m = ModelConfig::defaults_for(Frequency::monthly());
    CHECK(m.input_length == 24);
    CHECK(m.max_horizon == 12);
    CHECK(ModelConfig::defaults_for(Frequency::hourly()).input_length == 48);
    CHECK(ModelConfig::defaults_for(Frequency::weekly()).input_length == 104);
    CHECK(ModelConfig::defaults_for(Frequency::weekly()).max_horizon == 1);

    CHECK(model_config_from_json(to_json(tiny_config(2))) == tiny_config(2));
    CHECK(model_config_from_json(nlohmann::json{{"d_model", 16}}).d_model == 16);
    CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"d_modl", 16}}), ConfigError);
    CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"d_model", -4}}), ConfigError);
    CHECK_THROWS_AS(model_config_from_json(nlohmann::json::array()), ConfigError);
}

TEST_CASE("init_weights", "[model][init]") {
    const auto c = tiny_config(1);
    const auto a = init_weights(c, 7);
    CHECK(a == init_weights(c, 7));
    CHECK_FALSE(a == init_weights(c, 8));
    CHECK_FALSE(check_weights(a, c).has_value());
    for (const auto& spec : parameter_layout(c)) {
        const auto& t = a.params.at(spec.name);
        CAPTURE(spec.name);
        if (spec.init == Init::Ones) CHECK(t == Array(spec.shape, 1.0));
        if (spec.init == Init::Zeros) CHECK(t == Array(spec.shape, 0.0));
        if (spec.init == Init::Xavier) {
            const double fan_in = spec.shape.size() == 2 ? double(spec.shape[0]) : 1.0;
            const double limit = std::sqrt(6.0 / (fan_in + double(spec.shape.back())));
            for (double v : t.data()) CHECK(std::abs(v) <= limit);
        }
    }
    CHECK(a.params.at("encoder.0.ln1.gain") == Array({8}, 1.0));
    CHECK(a.params.count("future_exo_proj.weight") == 1);
    CHECK(init_weights(tiny_config(0), 7).params.count("future_exo_proj.weight") == 0);
    const auto& pe = a.buffers.at("pos_enc.encoder");
    CHECK(pe.shape() == Shape{8, 8});
    CHECK_THAT(pe[1 * 8 + 0], WithinAbs(std::sin(1.0), 1e-15));
    CHECK_THAT(pe[3 * 8 + 3], WithinAbs(std::cos(3.0 * std::pow(10000.0, -2.0 / 8.0)), 1e-15));
}

TEST_CASE("Window extraction and scaling", "[model][window]") {
    const TimeSeries s("a", 0, Frequency::monthly(), {5, 6, 7}, {{"x", {1, 2, 3, 4, 5}}});
    const auto w = extract_window(s, 3, 5, 2, 1);
    CHECK(w.history == std::vector<double>{5, 5, 5, 6, 7});
    CHECK(w.exo_history[0] == std::vector<double>{1, 1, 1, 2, 3});
    CHECK(w.future_exo[0] == std::vector<double>{4, 5});
    CHECK(extract_window(s, 2, 1, 1, 1).history == std::vector<double>{6});
    CHECK_THROWS_AS(extract_window(s, 3, 5, 3, 1), DataError);
    CHECK_THROWS_AS(extract_window(s, 3, 5, 2, 0), DataError);
    CHECK_THROWS_AS(extract_window(s, 0, 5, 2, 1), DataError);

    const auto sc = window_scale(std::vector<double>{1, 2, 3, 4});
    CHECK(sc.mean == 2.5);
    CHECK_THAT(sc.std, WithinRel(std::sqrt(1.25), 1e-15));
    CHECK(window_scale(std::vector<double>(6, 42.0)).std == 1.0);
    CHECK(window_scale(std::vector<double>{0.0, 0.0}).std == 1.0);
    CHECK(window_scale(std::vector<double>{1e12, 1e12 + 1e-6}).std == 1.0);
}

TEST_CASE("forward", "[model][forward]") {
    std::mt19937_64 rng(5);
    const auto c = tiny_config();
    const auto w = random_weights(c, 3);
    std::vector<TimeSeries> series;
    for (int i = 0; i < 3; ++i) series.push_back(random_series(rng, "s" + std::to_string(i), 6 + 4 * i));

    SECTION("shape and determinism") {
        const auto batch = batch_of(series, c, 3);
        const auto y = forward(w, c, batch, 3);
        CHECK(y.shape() == Shape{3, 3});
        CHECK(y.all_finite());
        CHECK(y == forward(w, c, batch, 3));
        CHECK_THROWS_AS(forward(w, c, batch, 5), ConfigError);
    }

    SECTION("batch items are independent") {
        const auto y = forward(w, c, batch_of(series, c, 4), 4);
        const std::vector<TimeSeries> permuted{series[2], series[0], series[1]};
        const auto yp = forward(w, c, batch_of(permuted, c, 4), 4);
        const std::size_t order[3] = {2, 0, 1};
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t t = 0; t < 4; ++t) CHECK(yp[b * 4 + t] == y[order[b] * 4 + t]);
        const auto single = forward(w, c, batch_of({series[1]}, c, 4), 4);
        for (std::size_t t = 0; t < 4; ++t) CHECK_THAT(single[t], WithinAbs(y[4 + t], 1e-12));
    }

    SECTION("affine equivariance") {
        for (const auto& [a, b] : std::vector<std::pair<double, double>>{{2.0, 0.0}, {0.001, 5.0}, {37.5, -1200.0}, {1.0, 1e6}}) {
            const auto base = predict_series(w, c, series[2], 4).values;
            const auto moved = predict_series(w, c, series[2].affine(a, b), 4).values;
            for (std::size_t t = 0; t < 4; ++t) CHECK_THAT(moved[t], WithinRel(a * base[t] + b, 1e-9));
        }
    }

    SECTION("encoder is sensitive to the order of timesteps") {
        const auto original = batch_of({series[2]}, c, 2);
        auto shuffled = original;
        std::swap(shuffled.history[1], shuffled.history[6]);
        CHECK_FALSE(forward(w, c, original, 2) == forward(w, c, shuffled, 2));
    }

    SECTION("dropout only in training mode") {
        auto cd = c;
        cd.dropout = 0.3;
        const auto batch = batch_of(series, cd, 4);
        CHECK(forward(w, cd, batch, 4, Mode::Infer, 1) == forward(w, cd, batch, 4, Mode::Infer, 2));
        CHECK(forward(w, cd, batch, 4, Mode::Infer, 1) == forward(w, c, batch, 4));
        CHECK(forward(w, cd, batch, 4, Mode::Train, 1) == forward(w, cd, batch, 4, Mode::Train, 1));
        CHECK_FALSE(forward(w, cd, batch, 4, Mode::Train, 1) == forward(w, cd, batch, 4, Mode::Train, 2));
    }
}

TEST_CASE("Decoder causality", "[model][causal]") {
    std::mt19937_64 rng(8);
    const auto c = tiny_config(1);
    const auto w = random_weights(c, 4);
    const auto s = random_series(rng, "a", 12, 1, 4);
    const auto base_batch = batch_of({s}, c, 4);
    const auto base = forward(w, c, base_batch, 4);
    for (std::size_t j = 0; j < 4; ++j) {
        auto batch = base_batch;
        (*batch.future_exo)[j] += 3.0;
        const auto y = forward(w, c, batch, 4);
        for (std::size_t t = 0; t < j; ++t) CHECK(y[t] == base[t]);
        CHECK(y[j] != base[j]);
    }
}

TEST_CASE("predict_series", "[model][predict]") {
    std::mt19937_64 rng(9);
    const auto c = tiny_config();
    const auto w = random_weights(c, 5);
    const auto s = random_series(rng, "a", 3);
    const auto f = predict_series(w, c, s, 4);
    CHECK(f.values.size() == 4);
    CHECK(f.series_id == "a");
    for (double v : f.values) CHECK(std::isfinite(v));
    const TimeSeries renamed("b", s.start(), s.freq(), {s.values().begin(), s.values().end()});
    CHECK(predict_series(w, c, renamed, 4).values == f.values);
    CHECK(predict_series(w, c, TimeSeries("one", 0, Frequency::monthly(), {3.5}), 2).values.size() == 2);
    CHECK_THROWS_AS(predict_series(w, c, s, 5), ConfigError);

    std::vector<TimeSeries> many;
    for (int i = 0; i < 7; ++i) many.push_back(random_series(rng, "m" + std::to_string(i), 5 + i));
    const auto one_pass = predict_many(w, c, many, 3, 256);
    const auto small_batches = predict_many(w, c, many, 3, 2);
    for (std::size_t i = 0; i < many.size(); ++i)
        for (std::size_t t = 0; t < 3; ++t) CHECK_THAT(small_batches[i].values[t], WithinAbs(one_pass[i].values[t], 1e-12));

    const auto forecaster = as_forecaster(w, c);
    CHECK(forecaster(s, 4).values == f.values);
}

TEST_CASE("End-to-end gradient", "[model][gradcheck]") {
    std::mt19937_64 rng(10);
    auto c = tiny_config(1);
    c.max_horizon = 2;
    const std::size_t h = 2;
    const auto weights = random_weights(c, 6);
    std::vector<TimeSeries> series;
    for (int i = 0; i < 2; ++i) series.push_back(random_series(rng, "g" + std::to_string(i), 9 + i, 1, h));
    const auto batch = batch_of(series, c, h);
    std::normal_distribution<double> n(0.0, 1.0);
    Array target({2, h});
    for (double& v : target.storage()) v = n(rng);

    auto loss_at = [&](const WeightStore& w) {
        ad::Tape tape;
        const BoundParameters p(tape, w, false);
        const auto out = forward_normalized(tape, p, c, batch, h, Mode::Infer, 0);
        return ad::mean_all(ad::abs(ad::sub(out, tape.constant(target)))).value().item();
    };

    ad::Tape tape;
    const BoundParameters p(tape, weights, true);
    const auto out = forward_normalized(tape, p, c, batch, h, Mode::Infer, 0);
    const auto grads = tape.backward(ad::mean_all(ad::abs(ad::sub(out, tape.constant(target)))));

    const double step = 1e-5;
    double worst = 0.0;
    std::size_t checked = 0;
    auto probe = weights;
    for (auto& [name, a] : probe.params) {
        const auto& g = grads.at(p[name]);
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double x0 = a[i];
            a[i] = x0 + step;
            const double up = loss_at(probe);
            a[i] = x0 - step;
            const double down = loss_at(probe);
            a[i] = x0;
            const double numeric = (up - down) / (2 * step);
            const double rel = std::abs(g[i] - numeric) / std::max({1.0, std::abs(g[i]), std::abs(numeric)});
            if (rel > worst) worst = rel;
            ++checked;
        }
    }
    INFO("checked " << checked << " coordinates");
    CHECK(checked == weights.parameter_count());
    CHECK(worst < 1e-4);
}
