#include "tgpt/baselines.hpp"
#include "tgpt/conformal.hpp"
#include "tgpt/synthetic.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace tgpt;
using namespace tgpt::conformal;
using Catch::Matchers::WithinAbs;

namespace {

TimeSeries series_of(std::vector<double> v, std::string id = "s") { return TimeSeries(std::move(id), 0, Frequency::monthly(), std::move(v)); }

std::vector<double> periodic(std::size_t n, std::size_t s) {
    std::vector<double> y(n);
    for (std::size_t t = 0; t < n; ++t) y[t] = 20.0 + double((t * 7) % s) - 0.5 * double(t % 2);
    return y;
}

Forecaster constant_forecaster(double c) {
    return [c](const TimeSeries& s, std::size_t h) { return PointForecast(s.id(), std::vector<double>(h, c)); };
}

}  // namespace

TEST_CASE("conformal_quantile", "[conformal][quantile]") {
    const std::vector<double> r{1, 2, 3, 4, 5, 6, 7, 8, 9};
    CHECK(conformal_quantile(r, 90) == 9);
    CHECK(conformal_quantile(r, 80) == 8);
    CHECK(conformal_quantile(r, 50) == 5);
    CHECK(conformal_quantile(r, 99) == 9);
    CHECK(conformal_quantile(r, 1) == 1);
    CHECK(conformal_quantile({4.0}, 80) == 4.0);
    CHECK_THROWS_AS(conformal_quantile({}, 80), DataError);

    SECTION("converges to the empirical quantile") {
        // |N(0,1)| has 90% quantile 1.6448536...
        std::mt19937_64 rng(17);
        std::normal_distribution<double> n(0.0, 1.0);
        double previous = INFINITY;
        for (std::size_t m : {10u, 100u, 1000u}) {
            double err = 0.0;
            for (int rep = 0; rep < 400; ++rep) {
                std::vector<double> r(m);
                for (double& v : r) v = std::abs(n(rng));
                std::sort(r.begin(), r.end());
                err += std::abs(conformal_quantile(r, 90) - 1.6448536269514722);
            }
            CHECK(err < previous);
            previous = err;
        }
    }
}

TEST_CASE("calibrate", "[conformal][calibrate]") {
    const auto y = periodic(40, 6);
    SECTION("perfect forecaster") {
        const Forecaster oracle = [&y](const TimeSeries& history, std::size_t h) {
            return PointForecast(history.id(), std::vector<double>(y.begin() + long(history.size()), y.begin() + long(history.size() + h)));
        };
        const auto cal = calibrate(oracle, series_of(y), 3, 6);
        CHECK(cal.residuals.size() == 3);
        for (const auto& r : cal.residuals) CHECK(r == std::vector<double>(6, 0.0));
    }
    SECTION("counting and pooling") {
        const auto pooled = calibrate(constant_forecaster(0), series_of(y), 2, 2);
        CHECK(pooled.pooled());
        CHECK(pooled.residuals.front().size() == 4);
        CHECK(std::is_sorted(pooled.residuals.front().begin(), pooled.residuals.front().end()));
        const auto per_step = calibrate(constant_forecaster(0), series_of(y), 2, 5);
        CHECK_FALSE(per_step.pooled());
        CHECK(per_step.residuals.size() == 2);
        CHECK(per_step.residuals[1].size() == 5);
    }
    SECTION("residuals use only pre-cut history") {
        std::vector<std::size_t> seen;
        const Forecaster spy = [&seen](const TimeSeries& history, std::size_t h) {
            seen.push_back(history.size());
            return PointForecast(history.id(), std::vector<double>(h, 0.0));
        };
        (void)calibrate(spy, series_of(y), 4, 3);
        CHECK(seen == std::vector<std::size_t>{28, 32, 36});
    }
    SECTION("seasonal naive on a periodic series") {
        const Forecaster snaive = [](const TimeSeries& s, std::size_t h) { return baselines::seasonal_naive(s, h, 6); };
        const auto cal = calibrate(snaive, series_of(y), 6, 5);
        for (const auto& r : cal.residuals)
            for (double v : r) CHECK(v == 0.0);
        const auto iv = forecast_with_intervals(snaive, series_of(y), 6, {80, 95}, 5);
        CHECK(iv.lo[1] == iv.point.values);
        CHECK(iv.hi[0] == iv.point.values);
    }
    SECTION("insufficient history") {
        CHECK_THROWS_AS(calibrate(constant_forecaster(0), series_of(y), 10, 4), DataError);
    }
    SECTION("default window count") {
        CHECK(default_window_count(200, 12) == 10);
        CHECK(default_window_count(40, 12) == 3);
        CHECK(default_window_count(13, 12) == 1);
        CHECK(default_window_count(12, 12) == 0);
    }
}

TEST_CASE("interval", "[conformal][interval]") {
    std::mt19937_64 rng(3);
    std::exponential_distribution<double> e(1.0);
    std::vector<std::vector<double>> by_window(12, std::vector<double>(3));
    for (auto& w : by_window)
        for (double& v : w) v = e(rng);
    const auto cal = store_from_residuals(by_window, 3);
    const PointForecast point("a", {1.0, -2.0, 3.5});
    const auto iv = interval(point, cal, {50, 80, 90, 99});
    for (std::size_t l = 0; l < 4; ++l)
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(iv.lo[l][j] <= point.values[j]);
            CHECK(iv.hi[l][j] >= point.values[j]);
            if (l > 0) {
                CHECK(iv.lo[l][j] <= iv.lo[l - 1][j]);
                CHECK(iv.hi[l][j] >= iv.hi[l - 1][j]);
            }
        }
    SECTION("a new largest residual never shrinks an interval") {
        auto grown = by_window;
        grown.push_back({100.0, 100.0, 100.0});
        const auto wider = interval(point, store_from_residuals(grown, 3), {50, 80, 90, 99});
        for (std::size_t l = 0; l < 4; ++l)
            for (std::size_t j = 0; j < 3; ++j) CHECK(wider.hi[l][j] >= iv.hi[l][j]);
    }
    SECTION("zero residuals give zero width") {
        const auto zero = interval(point, store_from_residuals(std::vector<std::vector<double>>(7, std::vector<double>(3, 0.0)), 3), {90});
        CHECK(zero.lo[0] == point.values);
        CHECK(zero.hi[0] == point.values);
    }
    CHECK_THROWS_AS(interval(point, cal, {100}), ConfigError);
    CHECK_THROWS_AS(interval(point, cal, {0}), ConfigError);
    CHECK_THROWS_AS(interval(point, CalibrationStore{}, {80}), DataError);
}

TEST_CASE("Coverage on exchangeable data", "[conformal][coverage]") {
    const auto ds = synthetic::gaussian_noise_dataset(1000, 11, 5.0, 2.0, 21);
    const auto forecaster = constant_forecaster(5.0);
    std::size_t in80 = 0, in90 = 0;
    for (const auto& s : ds.series()) {
        const auto history = s.head(10);
        const auto iv = forecast_with_intervals(forecaster, history, 1, {80, 90}, 9);
        const double y = s.values()[10];
        in80 += iv.lo[0][0] <= y && y <= iv.hi[0][0];
        in90 += iv.lo[1][0] <= y && y <= iv.hi[1][0];
    }
    CHECK(in80 / 10.0 >= 77.0);
    CHECK(in80 / 10.0 <= 83.0);
    CHECK(in90 / 10.0 >= 87.0);
    CHECK(in90 / 10.0 <= 93.0);
}

TEST_CASE("detect_anomalies", "[conformal][anomaly]") {
    const Forecaster snaive = [](const TimeSeries& s, std::size_t h) { return baselines::seasonal_naive(s, h, 6); };
    SECTION("periodic series has no anomalies") {
        const auto report = detect_anomalies(snaive, series_of(periodic(60, 6)), 2, 99, 10);
        CHECK(report.flags.size() == 20);
        CHECK(report.first_index == 40);
        CHECK(report.flag_count() == 0);
    }
    SECTION("an injected spike is flagged") {
        std::mt19937_64 rng(4);
        std::normal_distribution<double> n(0.0, 1.0);
        auto y = periodic(200, 6);
        for (double& v : y) v += n(rng);
        const std::size_t spike = 170;
        y[spike] += 100.0;
        const auto report = detect_anomalies(snaive, series_of(y), 1, 99, 100);
        REQUIRE(report.first_index == 100);
        CHECK(report.flags[spike - 100]);
        CHECK(report.actual[spike - 100] == y[spike]);
        CHECK(report.flag_count() <= 4);
    }
    SECTION("spike in the newest window") {
        auto y = periodic(60, 6);
        y.back() += 50.0;
        const auto report = detect_anomalies(snaive, series_of(y), 1, 99, 12);
        CHECK(report.flags.back());
        CHECK(report.flag_count() == 1);
    }
    SECTION("flag rate on i.i.d. noise") {
        const auto ds = synthetic::gaussian_noise_dataset(1000, 101, 0.0, 1.0, 8);
        const auto mean = constant_forecaster(0.0);
        std::size_t flags = 0, scored = 0;
        for (const auto& s : ds.series()) {
            const auto report = detect_anomalies(mean, s, 1, 99, 100);
            flags += report.flag_count();
            scored += report.flags.size();
        }
        INFO("flag rate " << double(flags) / double(scored));
        CHECK(double(flags) / double(scored) < 0.02);
    }
    SECTION("errors") {
        CHECK_THROWS_AS(detect_anomalies(snaive, series_of(periodic(60, 6)), 2, 99, 1), ConfigError);
        CHECK_THROWS_AS(detect_anomalies(snaive, series_of(periodic(60, 6)), 2, 99, 40), DataError);
    }
}
