#pragma once

#include "tgpt/error.hpp"
#include "tgpt/forecast.hpp"
#include "tgpt/timeseries.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace tgpt::baselines {

inline PointForecast zero_model(const TimeSeries& series, std::size_t horizon) {
    if (horizon == 0) throw ConfigError("horizon must be positive");
    return {series.id(), std::vector<double>(horizon, 0.0)};
}

inline PointForecast historic_average(const TimeSeries& series, std::size_t horizon) {
    if (horizon == 0) throw ConfigError("horizon must be positive");
    const auto v = series.values();
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    return {series.id(), std::vector<double>(horizon, mean)};
}

/// Repeats the last observed season: step j takes the value s*ceil(j/s) steps back.
inline PointForecast seasonal_naive(const TimeSeries& series, std::size_t horizon, std::size_t season_length) {
    if (horizon == 0) throw ConfigError("horizon must be positive");
    if (season_length == 0) throw ConfigError("season_length must be positive");
    const auto v = series.values();
    if (v.size() < season_length)
        throw DataError("seasonal naive: series '" + series.id() + "' is shorter than one season (" +
                        std::to_string(season_length) + ")");
    std::vector<double> out(horizon);
    const std::size_t base = v.size() - season_length;
    for (std::size_t j = 0; j < horizon; ++j) out[j] = v[base + j % season_length];
    return {series.id(), std::move(out)};
}

// ---------------------------------------------------------------------------
// Theta

/// Two-sided 90% critical value of the standard normal.
inline constexpr double kThetaSeasonalityCritical = 1.6448536269514722;

inline std::vector<double> autocorrelations(std::span<const double> x, std::size_t max_lag) {
    const auto n = x.size();
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    double denom = 0.0;
    for (double v : x) denom += (v - mean) * (v - mean);
    std::vector<double> acf(max_lag + 1, 0.0);
    if (denom == 0.0) return acf;
    for (std::size_t k = 1; k <= max_lag && k < n; ++k) {
        double num = 0.0;
        for (std::size_t t = k; t < n; ++t) num += (x[t] - mean) * (x[t - k] - mean);
        acf[k] = num / denom;
    }
    return acf;
}

/// Autocorrelation at lag s exceeds the 90% band built from lags 1..s-1.
inline bool seasonality_test(std::span<const double> x, std::size_t season_length) {
    const auto n = x.size();
    if (season_length <= 1 || n < std::max<std::size_t>(3, 2 * season_length)) return false;
    const auto acf = autocorrelations(x, season_length);
    double sum_sq = 0.0;
    for (std::size_t k = 1; k < season_length; ++k) sum_sq += acf[k] * acf[k];
    const double limit = kThetaSeasonalityCritical * std::sqrt((1.0 + 2.0 * sum_sq) / static_cast<double>(n));
    return std::abs(acf[season_length]) > limit;
}

/**
 * @brief Classical multiplicative seasonal indices (centred moving average).
 *
 * Returns an empty vector when the decomposition is not usable: the centred
 * trend or any index is non-positive, which covers zero and constant data.
 */
inline std::vector<double> multiplicative_seasonal_indices(std::span<const double> x, std::size_t s) {
    const auto n = x.size();
    if (s <= 1 || n < 2 * s) return {};
    const std::size_t half = s / 2;
    const bool even = s % 2 == 0;
    std::vector<double> ratio_sum(s, 0.0);
    std::vector<std::size_t> ratio_count(s, 0);
    for (std::size_t t = half; t + half < n; ++t) {
        double trend = 0.0;
        if (even) {
            trend = 0.5 * x[t - half] + 0.5 * x[t + half];
            for (std::size_t k = t - half + 1; k < t + half; ++k) trend += x[k];
        } else {
            for (std::size_t k = t - half; k <= t + half; ++k) trend += x[k];
        }
        trend /= static_cast<double>(s);
        if (!(trend > 0.0)) return {};
        ratio_sum[t % s] += x[t] / trend;
        ++ratio_count[t % s];
    }
    std::vector<double> idx(s);
    for (std::size_t k = 0; k < s; ++k) {
        if (ratio_count[k] == 0) return {};
        idx[k] = ratio_sum[k] / static_cast<double>(ratio_count[k]);
    }
    const double mean = std::accumulate(idx.begin(), idx.end(), 0.0) / static_cast<double>(s);
    for (double& v : idx) {
        v /= mean;
        if (!(v > 0.0) || !std::isfinite(v)) return {};
    }
    return idx;
}

struct ThetaFit {
    double intercept = 0.0;   ///< theta=0 line at t = 0
    double slope = 0.0;       ///< theta=0 line slope per step
    double level = 0.0;       ///< final SES level of the theta=2 line
    double alpha = 0.0;       ///< chosen SES smoothing parameter
    std::size_t n = 0;        ///< history length
    std::vector<double> seasonal_indices;  ///< empty when no seasonal adjustment

    [[nodiscard]] std::vector<double> predict(std::size_t horizon) const {
        std::vector<double> out(horizon);
        for (std::size_t j = 1; j <= horizon; ++j) {
            const double trend_line = intercept + slope * static_cast<double>(n - 1 + j);
            double f = 0.5 * trend_line + 0.5 * level;
            if (!seasonal_indices.empty()) f *= seasonal_indices[(n - 1 + j) % seasonal_indices.size()];
            out[j - 1] = f;
        }
        return out;
    }
};

/// Simple exponential smoothing from the first value; returns (sse of one-step errors, final level).
inline std::pair<double, double> ses_pass(std::span<const double> z, double alpha) {
    double level = z[0];
    double sse = 0.0;
    for (std::size_t t = 1; t < z.size(); ++t) {
        const double e = z[t] - level;
        sse += e * e;
        level += alpha * e;
    }
    return {sse, level};
}

/**
 * @brief Standard Theta method.
 *
 * The (optionally deseasonalised) series is split into the theta=0 line, a
 * least-squares linear trend, and the theta=2 line 2x - trend. The theta=2
 * line is extrapolated with SES whose alpha minimises the in-sample one-step
 * squared error over the grid 0.01..0.99; the forecast is the average of the
 * two extrapolations.
 */
inline ThetaFit fit_theta(std::span<const double> y, std::size_t season_length) {
    const auto n = y.size();
    if (n == 0) throw DataError("theta: empty history");
    ThetaFit fit;
    fit.n = n;
    std::vector<double> x(y.begin(), y.end());
    if (seasonality_test(y, season_length)) {
        fit.seasonal_indices = multiplicative_seasonal_indices(y, season_length);
        for (std::size_t t = 0; t < n && !fit.seasonal_indices.empty(); ++t) x[t] = y[t] / fit.seasonal_indices[t % season_length];
    }

    const double t_mean = static_cast<double>(n - 1) / 2.0;
    const double x_mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double dt = static_cast<double>(t) - t_mean;
        sxy += dt * (x[t] - x_mean);
        sxx += dt * dt;
    }
    fit.slope = sxx > 0.0 ? sxy / sxx : 0.0;
    fit.intercept = x_mean - fit.slope * t_mean;

    std::vector<double> z(n);
    for (std::size_t t = 0; t < n; ++t) z[t] = 2.0 * x[t] - (fit.intercept + fit.slope * static_cast<double>(t));

    double best_sse = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 99; ++k) {
        const double alpha = k / 100.0;
        const auto [sse, level] = ses_pass(z, alpha);
        if (sse < best_sse) {
            best_sse = sse;
            fit.alpha = alpha;
            fit.level = level;
        }
    }
    return fit;
}

inline PointForecast theta(const TimeSeries& series, std::size_t horizon, std::size_t season_length) {
    if (horizon == 0) throw ConfigError("horizon must be positive");
    return {series.id(), fit_theta(series.values(), season_length).predict(horizon)};
}

// ---------------------------------------------------------------------------
// Croston

inline constexpr double kCrostonAlpha = 0.1;

struct CrostonFit {
    double size_level = 0.0;
    double interval_level = 0.0;

    [[nodiscard]] std::vector<double> predict(std::size_t horizon) const {
        return std::vector<double>(horizon, size_level / interval_level);
    }
};

/// Croston's method: SES (alpha 0.1) over nonzero demand sizes and over the gaps between them.
inline CrostonFit fit_croston(std::span<const double> y) {
    std::vector<double> sizes, intervals;
    std::size_t previous = 0;  // 1-based position of the previous demand, 0 before the first
    for (std::size_t t = 0; t < y.size(); ++t) {
        if (y[t] != 0.0) {
            sizes.push_back(y[t]);
            intervals.push_back(static_cast<double>(t + 1 - previous));
            previous = t + 1;
        }
    }
    if (sizes.empty()) throw DataError("croston: history contains no nonzero demand");
    auto smooth = [](const std::vector<double>& v) {
        double level = v[0];
        for (std::size_t i = 1; i < v.size(); ++i) level += kCrostonAlpha * (v[i] - level);
        return level;
    };
    return {smooth(sizes), smooth(intervals)};
}

inline PointForecast croston_classic(const TimeSeries& series, std::size_t horizon) {
    if (horizon == 0) throw ConfigError("horizon must be positive");
    try {
        return {series.id(), fit_croston(series.values()).predict(horizon)};
    } catch (const DataError& e) {
        throw DataError(std::string(e.what()) + " (series '" + series.id() + "')");
    }
}

/// Names accepted by make_baseline: zero, histavg, snaive, theta, croston.
inline Forecaster make_baseline(const std::string& name, std::size_t season_length) {
    if (name == "zero") return zero_model;
    if (name == "histavg") return historic_average;
    if (name == "snaive")
        return [season_length](const TimeSeries& s, std::size_t h) { return seasonal_naive(s, h, season_length); };
    if (name == "theta") return [season_length](const TimeSeries& s, std::size_t h) { return theta(s, h, season_length); };
    if (name == "croston") return croston_classic;
    throw ConfigError("unknown baseline '" + name + "'");
}

}  // namespace tgpt::baselines
