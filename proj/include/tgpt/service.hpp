#pragma once

#include "tgpt/checkpoint.hpp"
#include "tgpt/conformal.hpp"
#include "tgpt/detail/text.hpp"
#include "tgpt/error.hpp"
#include "tgpt/model.hpp"
#include "tgpt/timeseries.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace tgpt::service {

using nlohmann::json;

struct ServiceConfig {
    std::string token;
    std::size_t max_series = 1000;
    std::size_t max_points = 10000;
};

struct Response {
    int status = 200;
    std::string body;
};

namespace detail {

/// Request rejection carrying its HTTP status.
struct Rejection {
    int status;
    std::string message;
};

inline Response error_response(int status, const std::string& message) {
    return {status, json{{"error", message}}.dump(-1, ' ', false, json::error_handler_t::replace)};
}

inline const json& field(const json& obj, const char* name, const std::string& path) {
    const auto it = obj.find(name);
    if (it == obj.end()) throw Rejection{400, path + name + ": required field is missing"};
    return *it;
}

inline void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& path) {
    for (const auto& [key, value] : obj.items())
        if (!known.count(key)) throw Rejection{400, path + key + ": unknown field"};
}

inline std::vector<double> number_array(const json& v, const std::string& path) {
    if (!v.is_array()) throw Rejection{400, path + ": expected an array of numbers"};
    std::vector<double> out;
    out.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw Rejection{400, path + "[" + std::to_string(i) + "]: expected a number"};
        const double x = v[i].get<double>();
        if (!std::isfinite(x)) throw Rejection{400, path + "[" + std::to_string(i) + "]: expected a finite number"};
        out.push_back(x);
    }
    return out;
}

inline std::size_t positive_integer(const json& v, const std::string& path) {
    if (!v.is_number_integer() || v.get<long long>() <= 0) throw Rejection{400, path + ": expected a positive integer"};
    return v.get<std::size_t>();
}

/// Shared "freq" and "series" parsing of both endpoints.
inline std::pair<Frequency, std::vector<TimeSeries>> parse_series_list(const json& body, std::size_t horizon,
                                                                      const ServiceConfig& cfg,
                                                                      const model::ModelConfig& model_cfg) {
    const json& freq_v = field(body, "freq", "");
    if (!freq_v.is_string()) throw Rejection{400, "freq: expected a string"};
    const std::string freq_name = freq_v.get<std::string>();
    static const std::set<std::string> freqs{"hourly", "daily", "weekly", "monthly"};
    if (!freqs.count(freq_name)) throw Rejection{400, "freq: expected one of hourly, daily, weekly, monthly"};
    const Frequency freq = Frequency::parse(freq_name);

    const json& list = field(body, "series", "");
    if (!list.is_array()) throw Rejection{400, "series: expected an array"};
    if (list.empty()) throw Rejection{422, "series: at least one series is required"};
    if (list.size() > cfg.max_series)
        throw Rejection{422, "series: " + std::to_string(list.size()) + " series exceed the limit of " +
                                 std::to_string(cfg.max_series)};
    std::vector<TimeSeries> out;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string p = "series[" + std::to_string(i) + "].";
        const json& s = list[i];
        if (!s.is_object()) throw Rejection{400, "series[" + std::to_string(i) + "]: expected an object"};
        reject_unknown(s, {"id", "start", "y", "x"}, p);
        const json& id = field(s, "id", p);
        if (!id.is_string()) throw Rejection{400, p + "id: expected a string"};
        const json& start = field(s, "start", p);
        if (!start.is_string()) throw Rejection{400, p + "start: expected a timestamp string"};
        const auto start_ordinal = parse_timestamp(start.get<std::string>(), freq.kind());
        if (!start_ordinal) throw Rejection{400, p + "start: not a valid " + freq_name + " timestamp"};
        std::vector<double> y = number_array(field(s, "y", p), p + "y");
        if (y.size() > cfg.max_points)
            throw Rejection{422, p + "y: " + std::to_string(y.size()) + " points exceed the limit of " +
                                     std::to_string(cfg.max_points)};
        if (y.empty()) throw Rejection{422, p + "y: series is too short for any forecast"};
        std::vector<ExogenousChannel> exo;
        if (const auto x = s.find("x"); x != s.end()) {
            if (!x->is_object()) throw Rejection{400, p + "x: expected an object of named channels"};
            for (const auto& [name, values] : x->items()) {
                auto v = number_array(values, p + "x." + name);
                if (v.size() != y.size() + horizon)
                    throw Rejection{422, p + "x." + name + ": channel must hold " + std::to_string(y.size() + horizon) +
                                             " values (history plus horizon)"};
                exo.push_back({name, std::move(v)});
            }
        }
        if (exo.size() != model_cfg.n_exo_channels)
            throw Rejection{422, p + "x: the served model expects " + std::to_string(model_cfg.n_exo_channels) +
                                     " exogenous channels, got " + std::to_string(exo.size())};
        if (!ids.insert(id.get<std::string>()).second) throw Rejection{422, p + "id: duplicate series id"};
        out.emplace_back(id.get<std::string>(), *start_ordinal, freq, std::move(y), std::move(exo));
    }
    return {freq, std::move(out)};
}

inline std::string level_key(double level) { return tgpt::detail::format_double(level); }

}  // namespace detail

/**
 * @brief Request handling independent of the HTTP transport.
 *
 * Routes: GET /health, POST /v1/forecast, POST /v1/anomalies. Checks run in
 * the order token (401), model availability (503), body schema (400) and
 * request semantics (422). The model is read-only for the service lifetime.
 */
class ForecastService {
public:
    ForecastService(std::optional<checkpoint::LoadedModel> model, ServiceConfig cfg)
        : model_(std::move(model)), cfg_(std::move(cfg)), started_(std::chrono::steady_clock::now()) {
        if (model_) forecaster_ = model::as_forecaster(model_->weights, model_->config);
    }

    ForecastService(const ForecastService&) = delete;
    ForecastService& operator=(const ForecastService&) = delete;

    /// Loads TGPT_MODEL_PATH (a missing or invalid file leaves the service unavailable) and TGPT_TOKEN.
    static std::unique_ptr<ForecastService> from_environment(std::string* load_error = nullptr) {
        ServiceConfig cfg;
        if (const char* t = std::getenv("TGPT_TOKEN")) cfg.token = t;
        std::optional<checkpoint::LoadedModel> model;
        const char* path = std::getenv("TGPT_MODEL_PATH");
        try {
            if (!path) throw DataError("TGPT_MODEL_PATH is not set");
            model = checkpoint::load(path);
        } catch (const Error& e) {
            if (load_error) *load_error = e.what();
        }
        return std::make_unique<ForecastService>(std::move(model), std::move(cfg));
    }

    [[nodiscard]] bool ready() const noexcept { return model_.has_value(); }
    [[nodiscard]] const ServiceConfig& config() const noexcept { return cfg_; }

    Response handle(std::string_view method, std::string_view path, std::string_view authorization,
                    std::string_view body) const {
        if (path == "/health") {
            if (method != "GET") return detail::error_response(405, "method not allowed");
            return health();
        }
        if (path != "/v1/forecast" && path != "/v1/anomalies") return detail::error_response(404, "not found");
        if (method != "POST") return detail::error_response(405, "method not allowed");
        if (cfg_.token.empty() || authorization != "Bearer " + cfg_.token) return detail::error_response(401, "unauthorized");
        if (!model_) return detail::error_response(503, "model not loaded");
        const auto t0 = std::chrono::steady_clock::now();
        try {
            json request = json::parse(body.begin(), body.end(), nullptr, false);
            if (request.is_discarded()) return detail::error_response(400, "body: malformed JSON");
            if (!request.is_object()) return detail::error_response(400, "body: expected a JSON object");
            json out = path == "/v1/forecast" ? forecast(request) : anomalies(request);
            out["model_version"] = model_->model_version;
            out["timing_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            return {200, out.dump(-1, ' ', false, json::error_handler_t::replace)};
        } catch (const detail::Rejection& r) {
            return detail::error_response(r.status, r.message);
        } catch (const DataError& e) {
            return detail::error_response(422, e.what());
        } catch (const ConfigError& e) {
            return detail::error_response(422, e.what());
        } catch (const std::exception& e) {
            return detail::error_response(500, std::string("internal error: ") + e.what());
        }
    }

private:
    [[nodiscard]] Response health() const {
        const double uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
        json j{{"status", model_ ? "ok" : "unavailable"},
               {"model_version", model_ ? json(model_->model_version) : json(nullptr)},
               {"uptime_s", uptime}};
        return {model_ ? 200 : 503, j.dump()};
    }

    [[nodiscard]] json forecast(const json& req) const {
        detail::reject_unknown(req, {"freq", "horizon", "levels", "series"}, "");
        const std::size_t h = detail::positive_integer(detail::field(req, "horizon", ""), "horizon");
        std::vector<double> levels;
        if (const auto it = req.find("levels"); it != req.end() && !it->is_null()) {
            levels = detail::number_array(*it, "levels");
            for (std::size_t i = 0; i < levels.size(); ++i)
                if (!(levels[i] > 0.0 && levels[i] < 100.0))
                    throw detail::Rejection{400, "levels[" + std::to_string(i) + "]: expected a percentage in (0, 100)"};
        }
        const auto series = detail::parse_series_list(req, h, cfg_, model_->config).second;
        if (h > model_->config.max_horizon)
            throw detail::Rejection{422, "horizon: " + std::to_string(h) + " exceeds the served model's maximum of " +
                                             std::to_string(model_->config.max_horizon)};
        if (!levels.empty()) {
            for (std::size_t i = 0; i < series.size(); ++i)
                if (conformal::default_window_count(series[i].size(), h) == 0)
                    throw detail::Rejection{422, "series[" + std::to_string(i) + "].y: too short to calibrate intervals at horizon " +
                                                     std::to_string(h)};
        }
        const auto points = model::predict_many(model_->weights, model_->config, series, h);
        json forecasts = json::array();
        for (std::size_t i = 0; i < series.size(); ++i) {
            const auto& s = series[i];
            json f;
            f["id"] = s.id();
            json ds = json::array();
            for (std::size_t j = 0; j < h; ++j) ds.push_back(s.timestamp_at(static_cast<std::int64_t>(s.size() + j)));
            f["ds"] = std::move(ds);
            f["yhat"] = points[i].values;
            if (!levels.empty()) {
                const auto cal = conformal::calibrate(forecaster_, s, h, conformal::default_window_count(s.size(), h));
                const auto iv = conformal::interval(points[i], cal, levels);
                json lo = json::object(), hi = json::object();
                for (std::size_t l = 0; l < levels.size(); ++l) {
                    lo[detail::level_key(levels[l])] = iv.lo[l];
                    hi[detail::level_key(levels[l])] = iv.hi[l];
                }
                f["lo"] = std::move(lo);
                f["hi"] = std::move(hi);
            }
            forecasts.push_back(std::move(f));
        }
        return json{{"forecasts", std::move(forecasts)}};
    }

    [[nodiscard]] json anomalies(const json& req) const {
        detail::reject_unknown(req, {"freq", "horizon", "level", "n_windows", "series"}, "");
        std::size_t h = 1;
        if (const auto it = req.find("horizon"); it != req.end()) h = detail::positive_integer(*it, "horizon");
        double level = 99.0;
        if (const auto it = req.find("level"); it != req.end()) {
            if (!it->is_number() || !(it->get<double>() > 0.0 && it->get<double>() < 100.0))
                throw detail::Rejection{400, "level: expected a percentage in (0, 100)"};
            level = it->get<double>();
        }
        std::optional<std::size_t> n_windows;
        if (const auto it = req.find("n_windows"); it != req.end()) n_windows = detail::positive_integer(*it, "n_windows");
        const auto series = detail::parse_series_list(req, h, cfg_, model_->config).second;
        if (h > model_->config.max_horizon)
            throw detail::Rejection{422, "horizon: " + std::to_string(h) + " exceeds the served model's maximum of " +
                                             std::to_string(model_->config.max_horizon)};
        json results = json::array();
        for (std::size_t i = 0; i < series.size(); ++i) {
            const auto& s = series[i];
            const std::size_t k = n_windows.value_or(conformal::default_window_count(s.size(), h));
            if (k < 2 || s.size() <= k * h)
                throw detail::Rejection{422, "series[" + std::to_string(i) + "].y: too short for anomaly detection"};
            const auto report = conformal::detect_anomalies(forecaster_, s, h, level, k);
            json r;
            r["id"] = s.id();
            json ds = json::array();
            for (std::size_t j = 0; j < report.flags.size(); ++j)
                ds.push_back(s.timestamp_at(static_cast<std::int64_t>(report.first_index + j)));
            r["ds"] = std::move(ds);
            r["y"] = report.actual;
            r["yhat"] = report.yhat;
            r["lo"] = report.lo;
            r["hi"] = report.hi;
            r["anomaly"] = report.flags;
            results.push_back(std::move(r));
        }
        return json{{"anomalies", std::move(results)}};
    }

    std::optional<checkpoint::LoadedModel> model_;
    Forecaster forecaster_;
    ServiceConfig cfg_;
    std::chrono::steady_clock::time_point started_;
};

/// Splits "host:port"; a missing port means 0 (ephemeral).
inline std::pair<std::string, int> parse_bind(const std::string& bind) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) return {bind.empty() ? "127.0.0.1" : bind, 0};
    const auto port = tgpt::detail::parse_int(std::string_view(bind).substr(colon + 1));
    if (!port || *port < 0 || *port > 65535) throw ConfigError("invalid bind address '" + bind + "'");
    return {bind.substr(0, colon), static_cast<int>(*port)};
}

/// HTTP transport over a ForecastService.
class HttpServer {
public:
    explicit HttpServer(const ForecastService& service) : service_(service) {
        auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
            const auto r = service_.handle(req.method, req.path, req.get_header_value("Authorization"), req.body);
            res.status = r.status;
            res.set_content(r.body, "application/json");
        };
        server_.Get(".*", dispatch);
        server_.Post(".*", dispatch);
        server_.Put(".*", dispatch);
        server_.Delete(".*", dispatch);
        server_.set_payload_max_length(64u << 20);
    }

    /// Binds and returns the bound port (useful with port 0).
    int bind(const std::string& host, int port) {
        const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
        return bound;
    }

    /// Blocks serving requests until stop().
    void run() { server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() const { server_.wait_until_ready(); }

private:
    const ForecastService& service_;
    httplib::Server server_;
};

}  // namespace tgpt::service
