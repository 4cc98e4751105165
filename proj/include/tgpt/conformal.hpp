#pragma once

#include "tgpt/error.hpp"
#include "tgpt/forecast.hpp"
#include "tgpt/timeseries.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace tgpt::conformal {

/// Below this many windows residuals are pooled across horizon steps.
inline constexpr std::size_t kMinPerStepWindows = 5;
inline constexpr std::size_t kDefaultWindows = 10;

/// Sorted absolute residuals, one sequence per horizon step or a single pooled one.
struct CalibrationStore {
    std::vector<std::vector<double>> residuals;
    std::size_t n_windows = 0;
    std::size_t horizon = 0;

    [[nodiscard]] bool pooled() const noexcept { return residuals.size() == 1 && horizon > 1; }

    [[nodiscard]] const std::vector<double>& for_step(std::size_t j) const {
        return residuals.size() == 1 ? residuals.front() : residuals.at(j);
    }
};

/// Largest feasible window count up to the default: every cut keeps at least one history point.
inline std::size_t default_window_count(std::size_t series_length, std::size_t horizon) {
    if (horizon == 0 || series_length <= horizon) return 0;
    return std::min(kDefaultWindows, (series_length - 1) / horizon);
}

/// Builds a store from per-window absolute residuals (window-major).
inline CalibrationStore store_from_residuals(const std::vector<std::vector<double>>& by_window, std::size_t horizon) {
    CalibrationStore cal;
    cal.n_windows = by_window.size();
    cal.horizon = horizon;
    if (cal.n_windows == 0) throw DataError("calibration needs at least one window");
    if (cal.n_windows < kMinPerStepWindows) {
        std::vector<double> pooled;
        for (const auto& w : by_window) pooled.insert(pooled.end(), w.begin(), w.end());
        cal.residuals.push_back(std::move(pooled));
    } else {
        cal.residuals.assign(horizon, {});
        for (const auto& w : by_window)
            for (std::size_t j = 0; j < horizon; ++j) cal.residuals[j].push_back(w[j]);
    }
    for (auto& r : cal.residuals) std::sort(r.begin(), r.end());
    return cal;
}

/// Absolute residuals of @p forecaster over the rolling windows of @p series, oldest window first.
inline std::vector<std::vector<double>> rolling_residuals(const Forecaster& forecaster, const TimeSeries& series,
                                                          std::size_t horizon, std::size_t n_windows) {
    std::vector<std::vector<double>> out;
    for (const auto& w : rolling_origins(series, horizon, n_windows)) {
        const PointForecast f = forecaster(series.head(w.cut, horizon), horizon);
        if (f.horizon() != horizon) throw ShapeError("forecaster returned the wrong horizon");
        std::vector<double> r(horizon);
        for (std::size_t j = 0; j < horizon; ++j) r[j] = std::abs(w.actuals[j] - f.values[j]);
        out.push_back(std::move(r));
    }
    return out;
}

/**
 * @brief Rolling-origin calibration.
 *
 * Each window is forecast from the history before its cut and the absolute
 * errors are stored per horizon step (pooled when fewer than five windows).
 */
inline CalibrationStore calibrate(const Forecaster& forecaster, const TimeSeries& series, std::size_t horizon,
                                  std::size_t n_windows) {
    return store_from_residuals(rolling_residuals(forecaster, series, horizon, n_windows), horizon);
}

/// The ceil((m+1) * level / 100)-th smallest of m sorted residuals, clamped to the largest.
inline double conformal_quantile(const std::vector<double>& sorted, double level) {
    if (sorted.empty()) throw DataError("empty calibration residuals");
    const auto m = static_cast<double>(sorted.size());
    auto k = static_cast<std::size_t>(std::ceil((m + 1.0) * level / 100.0));
    k = std::clamp<std::size_t>(k, 1, sorted.size());
    return sorted[k - 1];
}

inline void validate_levels(const std::vector<double>& levels) {
    for (double l : levels)
        if (!(l > 0.0 && l < 100.0)) throw ConfigError("interval level must lie strictly between 0 and 100");
}

struct IntervalForecast {
    PointForecast point;
    std::vector<double> levels;
    std::vector<std::vector<double>> lo;  ///< per level, aligned with point.values
    std::vector<std::vector<double>> hi;
};

inline IntervalForecast interval(const PointForecast& point, const CalibrationStore& cal, const std::vector<double>& levels) {
    validate_levels(levels);
    if (cal.residuals.empty()) throw DataError("empty calibration store");
    if (cal.residuals.size() != 1 && cal.residuals.size() < point.horizon())
        throw ShapeError("calibration covers " + std::to_string(cal.residuals.size()) + " steps, forecast has " +
                         std::to_string(point.horizon()));
    IntervalForecast out{point, levels, {}, {}};
    for (double level : levels) {
        std::vector<double> lo(point.horizon()), hi(point.horizon());
        for (std::size_t j = 0; j < point.horizon(); ++j) {
            const double q = conformal_quantile(cal.for_step(j), level);
            lo[j] = point.values[j] - q;
            hi[j] = point.values[j] + q;
        }
        out.lo.push_back(std::move(lo));
        out.hi.push_back(std::move(hi));
    }
    return out;
}

/// Point forecast plus intervals calibrated on @p n_windows rolling windows of the same series.
inline IntervalForecast forecast_with_intervals(const Forecaster& forecaster, const TimeSeries& series, std::size_t horizon,
                                                const std::vector<double>& levels, std::size_t n_windows) {
    validate_levels(levels);
    const auto cal = calibrate(forecaster, series, horizon, n_windows);
    return interval(forecaster(series, horizon), cal, levels);
}

struct AnomalyReport {
    std::string series_id;
    std::size_t first_index = 0;  ///< position of the first scored observation
    std::vector<double> actual;
    std::vector<double> yhat;
    std::vector<double> lo;
    std::vector<double> hi;
    std::vector<bool> flags;

    [[nodiscard]] std::size_t flag_count() const { return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true)); }
};

/**
 * @brief Flags observations of the last horizon * n_windows steps lying outside their interval.
 *
 * Every window is scored with an interval calibrated on the residuals of all
 * other windows, so a point never contributes to its own threshold.
 */
inline AnomalyReport detect_anomalies(const Forecaster& forecaster, const TimeSeries& series, std::size_t horizon, double level,
                                      std::size_t n_windows) {
    validate_levels({level});
    if (n_windows < 2) throw ConfigError("anomaly detection needs at least two windows");
    const auto windows = rolling_origins(series, horizon, n_windows);
    std::vector<PointForecast> forecasts;
    std::vector<std::vector<double>> residuals;
    for (const auto& w : windows) {
        forecasts.push_back(forecaster(series.head(w.cut, horizon), horizon));
        std::vector<double> r(horizon);
        for (std::size_t j = 0; j < horizon; ++j) r[j] = std::abs(w.actuals[j] - forecasts.back().values[j]);
        residuals.push_back(std::move(r));
    }
    AnomalyReport out;
    out.series_id = series.id();
    out.first_index = windows.front().cut;
    for (std::size_t k = 0; k < windows.size(); ++k) {
        std::vector<std::vector<double>> others;
        for (std::size_t i = 0; i < windows.size(); ++i)
            if (i != k) others.push_back(residuals[i]);
        const auto cal = store_from_residuals(others, horizon);
        const auto iv = interval(forecasts[k], cal, {level});
        for (std::size_t j = 0; j < horizon; ++j) {
            const double y = windows[k].actuals[j];
            out.actual.push_back(y);
            out.yhat.push_back(forecasts[k].values[j]);
            out.lo.push_back(iv.lo[0][j]);
            out.hi.push_back(iv.hi[0][j]);
            out.flags.push_back(y < iv.lo[0][j] || y > iv.hi[0][j]);
        }
    }
    return out;
}

}  // namespace tgpt::conformal
