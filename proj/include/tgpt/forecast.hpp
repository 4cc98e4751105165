#pragma once

#include "tgpt/error.hpp"
#include "tgpt/timeseries.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace tgpt {

/// Point forecast for the steps following the last observation of one series.
struct PointForecast {
    std::string series_id;
    std::vector<double> values;

    PointForecast() = default;
    PointForecast(std::string id, std::vector<double> v) : series_id(std::move(id)), values(std::move(v)) {
        for (double x : values) {
            if (!std::isfinite(x)) throw NumericError("forecast for '" + series_id + "' contains a non-finite value");
        }
    }

    [[nodiscard]] std::size_t horizon() const noexcept { return values.size(); }

    friend bool operator==(const PointForecast&, const PointForecast&) = default;
};

/// Any per-series forecasting routine: history in, `horizon` future values out.
using Forecaster = std::function<PointForecast(const TimeSeries& history, std::size_t horizon)>;

}  // namespace tgpt
