#pragma once

#include "tgpt/baselines.hpp"
#include "tgpt/detail/text.hpp"
#include "tgpt/error.hpp"
#include "tgpt/forecast.hpp"
#include "tgpt/model.hpp"
#include "tgpt/timeseries.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace tgpt::eval {

/// n series x h steps.
using Matrix = std::vector<std::vector<double>>;

namespace detail {

inline void check_aligned(const Matrix& y, const Matrix& f, const Matrix& base) {
    if (y.size() != f.size() || y.size() != base.size()) throw ShapeError("metric inputs have different series counts");
    for (std::size_t i = 0; i < y.size(); ++i)
        if (f[i].size() != y[i].size() || base[i].size() != y[i].size())
            throw ShapeError("metric inputs for series " + std::to_string(i) + " have different lengths");
}

}  // namespace detail

/// Sum of absolute errors over all series and steps, relative to the base. Empty when the base is perfect.
inline std::optional<double> rmae(const Matrix& actuals, const Matrix& forecasts, const Matrix& base) {
    detail::check_aligned(actuals, forecasts, base);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < actuals.size(); ++i) {
        for (std::size_t t = 0; t < actuals[i].size(); ++t) {
            num += std::abs(actuals[i][t] - forecasts[i][t]);
            den += std::abs(actuals[i][t] - base[i][t]);
        }
    }
    if (den == 0.0) return std::nullopt;
    return num / den;
}

/// Sum over series of the root of summed squared errors, relative to the base. Empty when the base is perfect.
inline std::optional<double> rrmse(const Matrix& actuals, const Matrix& forecasts, const Matrix& base) {
    detail::check_aligned(actuals, forecasts, base);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < actuals.size(); ++i) {
        double sn = 0.0, sd = 0.0;
        for (std::size_t t = 0; t < actuals[i].size(); ++t) {
            const double e = actuals[i][t] - forecasts[i][t];
            const double eb = actuals[i][t] - base[i][t];
            sn += e * e;
            sd += eb * eb;
        }
        num += std::sqrt(sn);
        den += std::sqrt(sd);
    }
    if (den == 0.0) return std::nullopt;
    return num / den;
}

inline Matrix values_of(const std::vector<PointForecast>& forecasts) {
    Matrix out;
    out.reserve(forecasts.size());
    for (const auto& f : forecasts) out.push_back(f.values);
    return out;
}

inline Matrix values_of(const Dataset& ds) {
    Matrix out;
    out.reserve(ds.size());
    for (const auto& s : ds.series()) out.emplace_back(s.values().begin(), s.values().end());
    return out;
}

/// A model after its fit phase; calling it runs the predict phase.
using FittedModel = std::function<std::vector<PointForecast>()>;

/// Benchmark entry: the fit phase receives the training windows and the horizon.
struct BenchmarkModel {
    std::string name;
    std::function<FittedModel(const Dataset& train, std::size_t horizon)> fit;
};

/// Wraps a per-series forecaster; all of its work counts as predict time.
inline BenchmarkModel per_series_model(std::string name, Forecaster forecaster) {
    return {std::move(name), [forecaster](const Dataset& train, std::size_t h) -> FittedModel {
                return [forecaster, &train, h] {
                    std::vector<PointForecast> out;
                    out.reserve(train.size());
                    for (const auto& s : train.series()) out.push_back(forecaster(s, h));
                    return out;
                };
            }};
}

/// Registered baseline by CLI name; Theta and Croston split their work into fit and predict phases.
inline BenchmarkModel baseline_model(const std::string& name, std::size_t season_length) {
    if (name == "theta") {
        return {name, [season_length](const Dataset& train, std::size_t h) -> FittedModel {
                    std::vector<baselines::ThetaFit> fits;
                    fits.reserve(train.size());
                    for (const auto& s : train.series()) fits.push_back(baselines::fit_theta(s.values(), season_length));
                    return [fits = std::move(fits), &train, h] {
                        std::vector<PointForecast> out;
                        for (std::size_t i = 0; i < fits.size(); ++i) out.emplace_back(train[i].id(), fits[i].predict(h));
                        return out;
                    };
                }};
    }
    if (name == "croston") {
        return {name, [](const Dataset& train, std::size_t h) -> FittedModel {
                    std::vector<baselines::CrostonFit> fits;
                    for (const auto& s : train.series()) {
                        try {
                            fits.push_back(baselines::fit_croston(s.values()));
                        } catch (const DataError& e) {
                            throw DataError(std::string(e.what()) + " (series '" + s.id() + "')");
                        }
                    }
                    return [fits = std::move(fits), &train, h] {
                        std::vector<PointForecast> out;
                        for (std::size_t i = 0; i < fits.size(); ++i) out.emplace_back(train[i].id(), fits[i].predict(h));
                        return out;
                    };
                }};
    }
    return per_series_model(name, baselines::make_baseline(name, season_length));
}

/// The global model: an optional fine-tune hook forms the fit phase, batched inference the predict phase.
inline BenchmarkModel tgpt_model(const model::WeightStore& weights, const model::ModelConfig& config,
                                 std::function<model::WeightStore(const Dataset& train)> finetune = {},
                                 std::size_t batch_size = 256) {
    return {"tgpt", [&weights, &config, finetune, batch_size](const Dataset& train, std::size_t h) -> FittedModel {
                auto tuned = finetune ? std::make_shared<const model::WeightStore>(finetune(train))
                                      : std::shared_ptr<const model::WeightStore>(&weights, [](const model::WeightStore*) {});
                return [tuned, &config, &train, h, batch_size] {
                    return model::predict_many(*tuned, config, train.series(), h, batch_size);
                };
            }};
}

struct ModelScore {
    std::string model;
    std::optional<double> rmae;
    std::optional<double> rrmse;
    double fit_ms = 0.0;
    double predict_ms = 0.0;

    [[nodiscard]] double total_ms() const noexcept { return fit_ms + predict_ms; }
};

struct EvalReport {
    std::string frequency;
    std::size_t horizon = 0;
    std::size_t n_series = 0;
    std::size_t n_excluded = 0;
    std::vector<std::string> excluded;
    std::vector<ModelScore> scores;

    [[nodiscard]] const ModelScore* find(const std::string& model) const {
        for (const auto& s : scores)
            if (s.model == model) return &s;
        return nullptr;
    }
};

struct BenchmarkOptions {
    std::optional<std::size_t> horizon;  ///< defaults to the frequency's horizon
    std::size_t timing_runs = 3;         ///< wall-clock figures are the median over runs
};

/**
 * @brief Last-window benchmark against the seasonal naive base.
 *
 * Series too short to hold out the horizon and still give the base one full
 * season of history are excluded and listed in the report. Each model is fit
 * and predicted timing_runs times; the forecasts of the first run are scored.
 */
inline EvalReport run_benchmark(const Dataset& ds, const std::vector<BenchmarkModel>& models, const BenchmarkOptions& opts = {}) {
    const std::size_t h = opts.horizon.value_or(ds.freq().default_horizon());
    if (h == 0) throw ConfigError("horizon must be positive");
    const std::size_t s = ds.freq().season_length();
    EvalReport report;
    report.frequency = ds.freq().name();
    report.horizon = h;
    std::vector<TimeSeries> kept;
    for (const auto& series : ds.series()) {
        if (series.size() < h + std::max<std::size_t>(s, 1)) {
            report.excluded.push_back(series.id());
        } else {
            kept.push_back(series);
        }
    }
    report.n_excluded = report.excluded.size();
    report.n_series = kept.size();
    if (kept.empty()) throw DataError("no series is long enough for a " + std::to_string(h) + "-step evaluation");
    const auto split = last_window_split(Dataset(ds.freq(), std::move(kept), ds.role()), h);
    const Matrix actuals = values_of(split.test);
    std::vector<PointForecast> base;
    for (const auto& series : split.train.series()) base.push_back(baselines::seasonal_naive(series, h, s));
    const Matrix base_values = values_of(base);

    using clock = std::chrono::steady_clock;
    const std::size_t runs = std::max<std::size_t>(1, opts.timing_runs);
    for (const auto& m : models) {
        std::vector<double> fit_ms, predict_ms;
        std::vector<PointForecast> forecasts;
        for (std::size_t r = 0; r < runs; ++r) {
            const auto t0 = clock::now();
            const FittedModel fitted = m.fit(split.train, h);
            const auto t1 = clock::now();
            auto out = fitted();
            const auto t2 = clock::now();
            fit_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            predict_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
            if (r == 0) forecasts = std::move(out);
        }
        auto median = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
        };
        const Matrix f = values_of(forecasts);
        report.scores.push_back({m.name, rmae(actuals, f, base_values), rrmse(actuals, f, base_values), median(fit_ms),
                                 median(predict_ms)});
    }
    return report;
}

enum class ReportFormat { Text, CSV, JSON };

inline ReportFormat parse_report_format(const std::string& s) {
    if (s == "text") return ReportFormat::Text;
    if (s == "csv") return ReportFormat::CSV;
    if (s == "json") return ReportFormat::JSON;
    throw ConfigError("unknown report format '" + s + "' (expected text, csv or json)");
}

/// Index of the best (lowest) score per metric; ties go to the lexicographically smallest model name.
inline std::optional<std::size_t> best_index(const EvalReport& r, std::optional<double> ModelScore::*metric) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < r.scores.size(); ++i) {
        const auto& v = r.scores[i].*metric;
        if (!v) continue;
        if (!best) {
            best = i;
            continue;
        }
        const auto& b = r.scores[*best].*metric;
        if (*v < *b || (*v == *b && r.scores[i].model < r.scores[*best].model)) best = i;
    }
    return best;
}

/**
 * @brief Renders a report.
 *
 * Columns are model, rmae, rrmse, fit_ms, predict_ms in every format; an
 * undefined score is empty in CSV, null in JSON and "undefined" in text.
 * Text mode marks the best score of each metric column with '*'.
 */
inline std::string render_report(const EvalReport& r, ReportFormat format) {
    using tgpt::detail::format_double;
    std::ostringstream out;
    if (format == ReportFormat::CSV) {
        out << "model,rmae,rrmse,fit_ms,predict_ms\n";
        for (const auto& s : r.scores) {
            out << tgpt::detail::quote_csv_field(s.model) << ',' << (s.rmae ? format_double(*s.rmae) : "") << ','
                << (s.rrmse ? format_double(*s.rrmse) : "") << ',' << format_double(s.fit_ms) << ','
                << format_double(s.predict_ms) << '\n';
        }
        return out.str();
    }
    if (format == ReportFormat::JSON) {
        nlohmann::json j;
        j["frequency"] = r.frequency;
        j["horizon"] = r.horizon;
        j["n_series"] = r.n_series;
        j["n_excluded"] = r.n_excluded;
        j["excluded"] = r.excluded;
        j["scores"] = nlohmann::json::array();
        for (const auto& s : r.scores) {
            nlohmann::json row;
            row["model"] = s.model;
            row["rmae"] = s.rmae ? nlohmann::json(*s.rmae) : nlohmann::json(nullptr);
            row["rrmse"] = s.rrmse ? nlohmann::json(*s.rrmse) : nlohmann::json(nullptr);
            row["fit_ms"] = s.fit_ms;
            row["predict_ms"] = s.predict_ms;
            j["scores"].push_back(std::move(row));
        }
        return j.dump(2) + "\n";
    }
    const auto best_mae = best_index(r, &ModelScore::rmae);
    const auto best_rmse = best_index(r, &ModelScore::rrmse);
    auto cell = [](const std::optional<double>& v, bool best) {
        char buf[32];
        if (!v) return std::string("undefined");
        std::snprintf(buf, sizeof buf, "%.3f%s", *v, best ? "*" : " ");
        return std::string(buf);
    };
    std::size_t width = 5;
    for (const auto& s : r.scores) width = std::max(width, s.model.size());
    char line[256];
    out << "frequency " << r.frequency << ", horizon " << r.horizon << ", " << r.n_series << " series";
    if (r.n_excluded) out << " (" << r.n_excluded << " excluded as too short)";
    out << '\n';
    std::snprintf(line, sizeof line, "%-*s  %10s  %10s  %12s  %12s\n", static_cast<int>(width), "model", "rmae", "rrmse", "fit_ms",
                  "predict_ms");
    out << line;
    for (std::size_t i = 0; i < r.scores.size(); ++i) {
        const auto& s = r.scores[i];
        std::snprintf(line, sizeof line, "%-*s  %10s  %10s  %12.3f  %12.3f\n", static_cast<int>(width), s.model.c_str(),
                      cell(s.rmae, best_mae == i).c_str(), cell(s.rrmse, best_rmse == i).c_str(), s.fit_ms, s.predict_ms);
        out << line;
    }
    return out.str();
}

}  // namespace tgpt::eval
